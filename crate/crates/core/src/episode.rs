//! Logged transitions and the newline-delimited JSON episode log.
//!
//! A log file starts with a header line `{"format_version":1}` followed by one
//! [`EpisodeRecord`] object per line. Files are only ever appended to.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_FORMAT_VERSION: u32 = 1;

/// Default number of logged steps per user history.
pub const DEFAULT_EPISODE_LENGTH: u32 = 30;

/// One transition `(s_t, f_t, R, s_{t+1})` of a user's scheduling history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub user_id: String,
    pub step: u32,
    pub state_features: Vec<f64>,
    pub action_index: usize,
    pub reward: f64,
    pub next_state_features: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    NonContiguousSteps {
        position: usize,
        expected: u32,
        found: u32,
    },
    MultipleTerminals {
        count: usize,
    },
    MissingTerminal,
    TerminalNotLast {
        step: u32,
    },
    BrokenChain {
        step: u32,
    },
    MixedUsers,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty episode"),
            Violation::NonContiguousSteps {
                position,
                expected,
                found,
            } => write!(
                f,
                "non-contiguous steps (record {position}: expected step {expected}, found {found})"
            ),
            Violation::MultipleTerminals { count } => {
                write!(f, "multiple terminals ({count} terminal records)")
            }
            Violation::MissingTerminal => write!(f, "missing terminal record"),
            Violation::TerminalNotLast { step } => {
                write!(f, "terminal record at step {step} is not the last record")
            }
            Violation::BrokenChain { step } => write!(
                f,
                "next_state_features of step {step} do not match the following state"
            ),
            Violation::MixedUsers => write!(f, "records belong to more than one user"),
        }
    }
}

/// Checks one user's episode: steps contiguous from 0, exactly one terminal
/// record at the end, and each record's next state equal to the following
/// record's state.
pub fn validate_episode(records: &[EpisodeRecord]) -> std::result::Result<(), Vec<Violation>> {
    let Some(first) = records.first() else {
        return Err(vec![Violation::Empty]);
    };
    let mut violations = Vec::new();

    if records.iter().any(|r| r.user_id != first.user_id) {
        violations.push(Violation::MixedUsers);
    }
    for (position, r) in records.iter().enumerate() {
        let expected = position as u32;
        if r.step != expected {
            violations.push(Violation::NonContiguousSteps {
                position,
                expected,
                found: r.step,
            });
            break;
        }
    }

    let terminals = records.iter().filter(|r| r.terminal).count();
    match terminals {
        0 => violations.push(Violation::MissingTerminal),
        1 => {}
        count => violations.push(Violation::MultipleTerminals { count }),
    }
    if let Some(r) = records[..records.len() - 1].iter().find(|r| r.terminal) {
        if terminals == 1 {
            violations.push(Violation::TerminalNotLast { step: r.step });
        }
    }

    for pair in records.windows(2) {
        if pair[0].next_state_features != pair[1].state_features {
            violations.push(Violation::BrokenChain { step: pair[0].step });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Groups records by `user_id`, keeping each user's records in log order.
pub fn group_by_user(records: &[EpisodeRecord]) -> BTreeMap<&str, Vec<&EpisodeRecord>> {
    let mut groups: BTreeMap<&str, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.user_id.as_str()).or_default().push(r);
    }
    groups
}

/// Validates every episode in a log; an empty log is rejected.
pub fn validate_log(records: &[EpisodeRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidLog(vec![(String::new(), Violation::Empty)]));
    }
    let mut all = Vec::new();
    for (user, group) in group_by_user(records) {
        let owned: Vec<EpisodeRecord> = group.into_iter().cloned().collect();
        if let Err(vs) = validate_episode(&owned) {
            all.extend(vs.into_iter().map(|v| (user.to_string(), v)));
        }
    }
    if all.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidLog(all))
    }
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    format_version: u32,
}

/// Append-only writer for episode logs.
pub struct EpisodeLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EpisodeLogWriter {
    /// Opens `path` for appending, writing the header if the file is new or empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(&path, e))?.len() == 0;
        let mut writer = Self {
            out: BufWriter::new(file),
            path,
        };
        if empty {
            let header = LogHeader {
                format_version: LOG_FORMAT_VERSION,
            };
            writer.write_line(&header)?;
        }
        Ok(writer)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value).map_err(|e| Error::json(&self.path, e))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.write_line(record)
    }

    pub fn append_all<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a EpisodeRecord>,
    ) -> Result<()> {
        for r in records {
            self.append(r)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::contract(format!(
                "{}: empty log file",
                path.display()
            )))
        }
    };
    let header: LogHeader = serde_json::from_str(&header_line).map_err(|e| Error::json(path, e))?;
    if header.format_version != LOG_FORMAT_VERSION {
        return Err(Error::contract(format!(
            "{}: unsupported log format_version {}",
            path.display(),
            header.format_version
        )));
    }

    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(records)
}

#[cfg(test)]
pub(crate) fn synthetic_episode(user: &str, len: u32) -> Vec<EpisodeRecord> {
    (0..len)
        .map(|step| EpisodeRecord {
            user_id: user.to_string(),
            step,
            state_features: vec![f64::from(step), 1.0],
            action_index: (step % 3) as usize,
            reward: 0.5,
            next_state_features: vec![f64::from(step + 1), 1.0],
            terminal: step + 1 == len,
        })
        .collect()
}
