use std::path::Path;

use crate::env::init_population;
use crate::episode::{EpisodeLogWriter, EpisodeRecord};
use crate::learner::QNetwork;
use crate::policy::explore;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

use super::ExperimentConfig;

/// Runs the collection population for `collection_days` under the explore
/// policy and returns its complete episodes.
///
/// With probability `1 - explore_prob` a decision is greedy on `behavior`
/// (or the lowest frequency when there is none). Each user's days are cut
/// into `episode_length` chunks; a trailing partial chunk is dropped. Records
/// are ordered by user, then episode, then step.
pub fn collect(
    cfg: &ExperimentConfig,
    seed: u64,
    behavior: Option<&QNetwork>,
) -> Result<Vec<EpisodeRecord>> {
    cfg.validate()?;
    let env = cfg.collection_env(seed);
    let mut pop = init_population(&env, &cfg.actions)?;
    let len = cfg.episode_length;
    let days = cfg.collection_days / len * len;
    if days == 0 {
        return Err(Error::contract(format!(
            "collection_days {} is shorter than one episode ({len} steps)",
            cfg.collection_days
        )));
    }

    let zeros = vec![0.0; cfg.actions.len()];
    let mut per_user: Vec<Vec<EpisodeRecord>> = vec![Vec::with_capacity(days as usize); pop.len()];
    for day in 0..days {
        let mut failure = None;
        let result = pop.run_day(
            |u, x| {
                let mut rng = substream(
                    env.seed,
                    Stream::Explore,
                    &[u64::from(u.id), u64::from(day)],
                );
                let q = match behavior.map(|net| net.forward(x)) {
                    Some(Ok(q)) => q,
                    Some(Err(e)) => {
                        failure.get_or_insert(e);
                        zeros.clone()
                    }
                    None => zeros.clone(),
                };
                explore(&q, cfg.explore_prob, &mut rng).unwrap_or(0)
            },
            &cfg.drift,
            &cfg.reward,
            day,
            true,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        for step in result.steps {
            let (state_features, next_state_features) =
                step.transition.expect("collection records transitions");
            per_user[step.user as usize].push(EpisodeRecord {
                user_id: format!("u{}-e{}", step.user, day / len),
                step: day % len,
                state_features,
                action_index: step.action.index,
                reward: step.reward,
                next_state_features,
                terminal: day % len == len - 1,
            });
        }
    }
    Ok(per_user.into_iter().flatten().collect())
}

/// Writes `records` as a fresh log at `path`, replacing any existing file.
pub fn write_log(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    let mut w = EpisodeLogWriter::open(path)?;
    w.append_all(records)?;
    w.finish()
}
