//! Delivery-volume monitoring and the PID loop that steers EF toward a
//! volume target.
//!
//! The controller works in incremental form: each step adds the P, I and D
//! contributions to the previous EF and clamps the result to [0, 1]. The
//! tracking error is normalized by the target, so gains carry over across
//! population sizes.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::Cohort;
use crate::policy::EfConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the accumulated error.
    pub integral_limit: f64,
    /// Monitor ticks per controller update.
    pub control_interval: usize,
}

impl Default for PidParams {
    fn default() -> Self {
        Self {
            kp: 0.2,
            ki: 0.05,
            kd: 0.0,
            integral_limit: 1.0,
            control_interval: 1,
        }
    }
}

impl PidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.integral_limit > 0.0) {
            return Err(Error::contract("integral_limit must be > 0"));
        }
        if self.control_interval == 0 {
            return Err(Error::contract("control_interval must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub last_error: f64,
    pub last_ef: f64,
}

impl PidState {
    pub fn new(initial_ef: f64) -> Self {
        Self {
            integral: 0.0,
            last_error: 0.0,
            last_ef: initial_ef.clamp(0.0, 1.0),
        }
    }
}

/// One controller update. Volume above target yields a negative error and
/// lowers EF; volume below target raises it.
pub fn pid_step(st: &PidState, p: &PidParams, target: f64, actual: f64) -> Result<(PidState, f64)> {
    if !(target > 0.0) {
        return Err(Error::contract(format!(
            "target volume must be > 0, got {target}"
        )));
    }
    let error = (target - actual) / target;
    let integral = (st.integral + error).clamp(-p.integral_limit, p.integral_limit);
    let ef = (st.last_ef + p.kp * error + p.ki * integral + p.kd * (error - st.last_error))
        .clamp(0.0, 1.0);
    let next = PidState {
        integral,
        last_error: error,
        last_ef: ef,
    };
    Ok((next, ef))
}

/// Recent `(tick, volume)` observations with a volume target per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMonitor {
    capacity: usize,
    entries: VecDeque<(u64, f64)>,
    pub target_volume: f64,
}

impl VolumeMonitor {
    pub fn new(capacity: usize, target_volume: f64) -> Self {
        assert!(capacity >= 1, "monitor capacity must be >= 1");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            target_volume,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &(u64, f64)> {
        self.entries.iter()
    }

    pub fn latest(&self) -> Option<(u64, f64)> {
        self.entries.back().copied()
    }

    /// Mean volume over the newest `n` entries (fewer if not yet recorded).
    pub fn recent_mean(&self, n: usize) -> Option<f64> {
        let take = n.min(self.entries.len());
        if take == 0 {
            return None;
        }
        let sum: f64 = self.entries.iter().rev().take(take).map(|e| e.1).sum();
        Some(sum / take as f64)
    }

    pub fn record_volume(&mut self, tick: u64, volume: f64) -> Result<()> {
        if let Some((last, _)) = self.latest() {
            if tick <= last {
                return Err(Error::contract(format!(
                    "tick {tick} does not follow last recorded tick {last}"
                )));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((tick, volume));
        Ok(())
    }
}

/// One row of the controller trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub tick: u64,
    pub target: f64,
    pub actual: f64,
    pub error: f64,
    pub ef: f64,
}

fn tick_once(mon: &VolumeMonitor, st: &PidState, p: &PidParams) -> Result<(PidState, ControlRow)> {
    let (tick, _) = mon
        .latest()
        .ok_or_else(|| Error::contract("control tick on an empty volume monitor"))?;
    let actual = mon
        .recent_mean(p.control_interval)
        .expect("monitor is non-empty");
    let (next, ef) = pid_step(st, p, mon.target_volume, actual)?;
    Ok((
        next,
        ControlRow {
            tick,
            target: mon.target_volume,
            actual,
            error: next.last_error,
            ef,
        },
    ))
}

/// Runs the PID on the monitor's latest volume (averaged over the control
/// interval) and writes the new global EF into `cfg`.
pub fn control_loop_tick(
    mon: &VolumeMonitor,
    st: &PidState,
    p: &PidParams,
    cfg: &EfConfig,
) -> Result<(PidState, EfConfig)> {
    let (next, row) = tick_once(mon, st, p)?;
    let mut cfg = cfg.clone();
    cfg.ef = row.ef;
    Ok((next, cfg))
}

/// Independent monitor and PID state per cohort, each writing its cohort's
/// EF override.
pub fn cohort_control_tick(
    loops: &BTreeMap<Cohort, (VolumeMonitor, PidState)>,
    p: &PidParams,
    cfg: &EfConfig,
) -> Result<(BTreeMap<Cohort, PidState>, EfConfig)> {
    let mut cfg = cfg.clone();
    let mut states = BTreeMap::new();
    for (&cohort, (mon, st)) in loops {
        let (next, row) = tick_once(mon, st, p)?;
        cfg.per_cohort.insert(cohort, row.ef);
        states.insert(cohort, next);
    }
    Ok((states, cfg))
}

/// Monitor plus PID state, stepped once per observed tick.
#[derive(Debug, Clone)]
pub struct VolumeController {
    params: PidParams,
    monitor: VolumeMonitor,
    state: PidState,
    trace: Vec<ControlRow>,
    observed: usize,
    cohort: Option<Cohort>,
}

impl VolumeController {
    pub fn new(params: PidParams, target_per_tick: f64, initial_ef: f64) -> Result<Self> {
        params.validate()?;
        if !(target_per_tick > 0.0) {
            return Err(Error::contract(format!(
                "target volume must be > 0, got {target_per_tick}"
            )));
        }
        Ok(Self {
            monitor: VolumeMonitor::new(params.control_interval.max(64), target_per_tick),
            params,
            state: PidState::new(initial_ef),
            trace: Vec::new(),
            observed: 0,
            cohort: None,
        })
    }

    /// A controller that writes the EF override of `cohort` instead of the
    /// global EF.
    pub fn for_cohort(
        params: PidParams,
        cohort: Cohort,
        target_per_tick: f64,
        initial_ef: f64,
    ) -> Result<Self> {
        let mut ctl = Self::new(params, target_per_tick, initial_ef)?;
        ctl.cohort = Some(cohort);
        Ok(ctl)
    }

    pub fn cohort(&self) -> Option<Cohort> {
        self.cohort
    }

    pub fn ef(&self) -> f64 {
        self.state.last_ef
    }

    pub fn trace(&self) -> &[ControlRow] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<ControlRow> {
        self.trace
    }

    /// Records the volume of `tick` and, at interval boundaries, updates the
    /// controlled EF in `cfg`.
    pub fn observe(&mut self, tick: u64, volume: f64, cfg: &mut EfConfig) -> Result<()> {
        self.monitor.record_volume(tick, volume)?;
        self.observed += 1;
        if self.observed.is_multiple_of(self.params.control_interval) {
            let (next, row) = tick_once(&self.monitor, &self.state, &self.params)?;
            self.state = next;
            match self.cohort {
                Some(c) => {
                    cfg.per_cohort.insert(c, row.ef);
                }
                None => cfg.ef = row.ef,
            }
            self.trace.push(row);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p_only(kp: f64) -> PidParams {
        PidParams {
            kp,
            ki: 0.0,
            kd: 0.0,
            ..PidParams::default()
        }
    }

    #[test]
    fn on_target_leaves_ef_unchanged() {
        let st = PidState::new(0.7);
        let (next, ef) = pid_step(&st, &PidParams::default(), 100.0, 100.0).unwrap();
        assert_eq!(ef, 0.7);
        assert_eq!(next.integral, 0.0);
    }

    #[test]
    fn excess_volume_lowers_ef() {
        let st = PidState::new(0.9);
        let (next, ef) = pid_step(&st, &p_only(0.1), 100.0, 120.0).unwrap();
        assert!((next.last_error + 0.2).abs() < 1e-12);
        assert!((ef - 0.88).abs() < 1e-12);
    }

    #[test]
    fn ef_clamped_at_bounds() {
        let (_, ef) = pid_step(&PidState::new(0.05), &p_only(1.0), 100.0, 500.0).unwrap();
        assert_eq!(ef, 0.0);
        let (_, ef) = pid_step(&PidState::new(0.95), &p_only(1.0), 100.0, 0.0).unwrap();
        assert_eq!(ef, 1.0);
        assert!(pid_step(&PidState::new(0.5), &p_only(1.0), 0.0, 1.0).is_err());
    }

    #[test]
    fn derivative_acts_on_error_change() {
        let p = PidParams {
            kp: 0.0,
            ki: 0.0,
            kd: 0.5,
            ..PidParams::default()
        };
        let st = PidState {
            integral: 0.0,
            last_error: 0.1,
            last_ef: 0.5,
        };
        let (_, ef) = pid_step(&st, &p, 100.0, 70.0).unwrap();
        assert!((ef - (0.5 + 0.5 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn monitor_examples() {
        let mut mon = VolumeMonitor::new(2, 100.0);
        mon.record_volume(1, 100.0).unwrap();
        assert_eq!(mon.len(), 1);
        mon.record_volume(2, 90.0).unwrap();
        mon.record_volume(3, 80.0).unwrap();
        assert_eq!(mon.entries().map(|e| e.0).collect::<Vec<_>>(), vec![2, 3]);
        assert!(mon.record_volume(3, 10.0).is_err());
        assert!(mon.record_volume(1, 10.0).is_err());
        assert_eq!(mon.recent_mean(5), Some(85.0));
    }

    #[test]
    fn empty_monitor_rejected() {
        let mon = VolumeMonitor::new(4, 100.0);
        let r = control_loop_tick(
            &mon,
            &PidState::new(0.5),
            &PidParams::default(),
            &EfConfig::default(),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn steady_volume_keeps_config() {
        let mut mon = VolumeMonitor::new(16, 100.0);
        let mut st = PidState::new(0.8);
        let mut cfg = EfConfig::global(0.8);
        for tick in 0..10 {
            mon.record_volume(tick, 100.0).unwrap();
            let (s, c) = control_loop_tick(&mon, &st, &PidParams::default(), &cfg).unwrap();
            st = s;
            cfg = c;
        }
        assert_eq!(cfg, EfConfig::global(0.8));
    }

    #[test]
    fn step_disturbance_moves_ef_against_error() {
        let mut mon = VolumeMonitor::new(16, 100.0);
        let cfg = EfConfig::global(0.8);
        mon.record_volume(0, 100.0).unwrap();
        let (st, cfg) =
            control_loop_tick(&mon, &PidState::new(0.8), &PidParams::default(), &cfg).unwrap();
        mon.record_volume(1, 130.0).unwrap();
        let (_, up) = control_loop_tick(&mon, &st, &PidParams::default(), &cfg).unwrap();
        assert!(up.ef < 0.8);
        mon.record_volume(2, 60.0).unwrap();
        let (_, down) = control_loop_tick(&mon, &st, &PidParams::default(), &cfg).unwrap();
        assert!(down.ef > 0.8);
    }

    #[test]
    fn cohorts_controlled_independently() {
        let mut high = VolumeMonitor::new(8, 100.0);
        let mut low = VolumeMonitor::new(8, 50.0);
        high.record_volume(0, 150.0).unwrap();
        low.record_volume(0, 25.0).unwrap();
        let loops = BTreeMap::from([
            (Cohort::High, (high, PidState::new(0.5))),
            (Cohort::Low, (low, PidState::new(0.5))),
        ]);
        let (states, cfg) =
            cohort_control_tick(&loops, &p_only(0.2), &EfConfig::global(0.5)).unwrap();
        assert!((cfg.per_cohort[&Cohort::High] - 0.4).abs() < 1e-12);
        assert!((cfg.per_cohort[&Cohort::Low] - 0.6).abs() < 1e-12);
        assert_eq!(cfg.ef, 0.5);
        assert_eq!(cfg.resolve(Cohort::Medium), 0.5);
        assert_eq!(states.len(), 2);
    }

    #[test]
    fn controller_honours_interval() {
        let params = PidParams {
            control_interval: 3,
            ..p_only(0.5)
        };
        let mut ctl = VolumeController::new(params, 100.0, 0.5).unwrap();
        let mut cfg = EfConfig::global(0.5);
        for (tick, v) in [(0, 200.0), (1, 200.0)] {
            ctl.observe(tick, v, &mut cfg).unwrap();
        }
        assert_eq!(cfg.ef, 0.5);
        ctl.observe(2, 50.0, &mut cfg).unwrap();
        // Mean over the interval is 150: error -0.5, EF 0.5 - 0.25.
        assert!((cfg.ef - 0.25).abs() < 1e-12);
        assert_eq!(ctl.trace().len(), 1);
        assert_eq!(ctl.trace()[0].tick, 2);
    }

    #[test]
    fn anti_windup_under_saturation() {
        let p = PidParams {
            kp: 0.2,
            ki: 0.05,
            kd: 0.01,
            integral_limit: 0.5,
            control_interval: 1,
        };
        let mut st = PidState::new(0.5);
        for _ in 0..1000 {
            let (next, ef) = pid_step(&st, &p, 100.0, 10_000.0).unwrap();
            assert!(next.integral.abs() <= p.integral_limit);
            assert!((0.0..=1.0).contains(&ef));
            st = next;
        }
        assert_eq!(st.last_ef, 0.0);
    }

    proptest! {
        #[test]
        fn proportional_sign(target in 1.0..1e6f64, ratio in 0.0..3.0f64, ef in 0.0..=1.0f64, kp in 1e-3..1.0f64) {
            let actual = target * ratio;
            let (_, next) = pid_step(&PidState::new(ef), &p_only(kp), target, actual).unwrap();
            prop_assert!((0.0..=1.0).contains(&next));
            if actual > target {
                prop_assert!(next <= ef);
            } else if actual < target {
                prop_assert!(next >= ef);
            }
        }
    }
}
