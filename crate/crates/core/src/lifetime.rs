//! Remaining-life prediction across multi-level loading.
//!
//! Each load jump is corrected against the Palmgren-Miner baseline with a
//! predictor of the two-stage accumulated life `sum_eta`:
//! `d_eta_i = 1 - eta_out_i`, the running sum
//! `S_i = S_{i-1} + eta_i + d_eta_i`, and the consumed life entering the next
//! level `eta_new_{i+1} = S_i + eta_{i+1}`. The remaining life at the last
//! level is `1 - S_{n-1}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::MaterialParameters;
use crate::nn::SurrogateModel;
use crate::protocol::{LoadBlock, LoadScenario};
use crate::simulator::{run_scenario_with, SimError, SimulationSettings, SnTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LifetimeError {
    #[error("invalid multi-level scenario: {0}")]
    InvalidScenario(String),
    #[error("predictor returned {value} at jump {jump}, outside [{lo}, {hi}]")]
    PredictorOutOfRange { jump: usize, value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Anything that maps `(S_i, dS_i, eta_new_i)` to the accumulated life of
/// the corresponding two-stage scenario.
pub trait RemainingLifePredictor {
    fn eta_out(&self, s_max: f64, delta_s_max: f64, eta_new: f64) -> f64;
}

impl RemainingLifePredictor for SurrogateModel {
    fn eta_out(&self, s_max: f64, delta_s_max: f64, eta_new: f64) -> f64 {
        self.predict(s_max, delta_s_max, eta_new)
    }
}

/// Linear damage accumulation: every jump is neutral.
#[derive(Debug, Clone, Copy, Default)]
pub struct PalmgrenMiner;

impl RemainingLifePredictor for PalmgrenMiner {
    fn eta_out(&self, _: f64, _: f64, _: f64) -> f64 {
        1.0
    }
}

/// Adapter for plain functions and closures.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(f64, f64, f64) -> f64> RemainingLifePredictor for FnPredictor<F> {
    fn eta_out(&self, s_max: f64, delta_s_max: f64, eta_new: f64) -> f64 {
        (self.0)(s_max, delta_s_max, eta_new)
    }
}

impl<P: RemainingLifePredictor + ?Sized> RemainingLifePredictor for &P {
    fn eta_out(&self, s_max: f64, delta_s_max: f64, eta_new: f64) -> f64 {
        (**self).eta_out(s_max, delta_s_max, eta_new)
    }
}

/// `n` upper load levels and the consumed fractions of the first `n - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelScenario {
    pub s_max: Vec<f64>,
    pub eta: Vec<f64>,
    pub s_min: f64,
}

impl MultiLevelScenario {
    pub fn new(s_max: Vec<f64>, eta: Vec<f64>, s_min: f64) -> Result<Self, LifetimeError> {
        let s = Self { s_max, eta, s_min };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), LifetimeError> {
        let bad = |m: String| Err(LifetimeError::InvalidScenario(m));
        if self.s_max.len() < 2 {
            return bad(format!("need at least 2 levels, got {}", self.s_max.len()));
        }
        if self.eta.len() + 1 != self.s_max.len() {
            return bad(format!(
                "{} levels need {} consumed fractions, got {}",
                self.s_max.len(),
                self.s_max.len() - 1,
                self.eta.len()
            ));
        }
        if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return bad(format!("consumed fraction {e} outside (0, 1]"));
        }
        if let Some(s) = self.s_max.iter().find(|s| !(**s > self.s_min && **s <= 1.0)) {
            return bad(format!("level {s} outside (s_min, 1]"));
        }
        Ok(())
    }

    pub fn n_levels(&self) -> usize {
        self.s_max.len()
    }

    /// The equivalent simulator scenario, with the last level run to failure.
    pub fn to_load_scenario(&self, fc: f64) -> Result<LoadScenario, LifetimeError> {
        let mut blocks: Vec<LoadBlock> = self
            .s_max
            .iter()
            .zip(&self.eta)
            .map(|(&s, &e)| LoadBlock::fraction(s, e))
            .collect();
        blocks.push(LoadBlock::to_failure(*self.s_max.last().unwrap()));
        LoadScenario::new(self.s_min, fc, blocks)
            .map_err(|e| LifetimeError::Simulation(SimError::Protocol(e)))
    }
}

/// Bookkeeping of one load jump (1-based `i`, from level `i` to `i + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub i: usize,
    pub delta_s_max: f64,
    pub eta_new: f64,
    pub eta_out: f64,
    pub delta_eta: f64,
    pub sum_eta: f64,
    pub eta_rem_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LifetimeOutcome {
    /// Remaining fraction at the last level, clamped to [0, 1], and the raw
    /// value `1 - sum_eta_{n-1}`.
    RemainingLife { clamped: f64, raw: f64 },
    /// The consumed life entering this (1-based) level reached 1.
    FailureAtLevel { level: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeTrace {
    pub jumps: Vec<JumpRecord>,
    pub outcome: LifetimeOutcome,
    /// `1 - sum(d_eta)` over the evaluated jumps: the accumulated life at
    /// failure implied by the corrections.
    pub accumulated_life: f64,
}

impl LifetimeTrace {
    /// Clamped remaining fraction; zero when failure occurred earlier.
    pub fn remaining(&self) -> f64 {
        match self.outcome {
            LifetimeOutcome::RemainingLife { clamped, .. } => clamped,
            LifetimeOutcome::FailureAtLevel { .. } => 0.0,
        }
    }

    pub fn failed_early(&self) -> bool {
        matches!(self.outcome, LifetimeOutcome::FailureAtLevel { .. })
    }

    pub const CSV_HEADER: &'static str =
        "n_levels,outcome,failure_level,remaining,raw_remaining,accumulated_life";

    /// One CSV row matching [`CSV_HEADER`](Self::CSV_HEADER).
    pub fn csv_row(&self, n_levels: usize) -> String {
        let raw = self.jumps.last().map_or(1.0, |j| j.eta_rem_next);
        match self.outcome {
            LifetimeOutcome::RemainingLife { clamped, raw } => format!(
                "{n_levels},remaining,,{clamped},{raw},{}",
                self.accumulated_life
            ),
            LifetimeOutcome::FailureAtLevel { level } => format!(
                "{n_levels},failure,{level},0,{raw},{}",
                self.accumulated_life
            ),
        }
    }
}

/// Options for [`predict_remaining`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmOptions {
    /// Reject predictor outputs outside this range.
    pub out_range: Option<(f64, f64)>,
    /// Jumps larger than this are logged as extrapolation.
    pub trained_jump: f64,
}

impl Default for AlgorithmOptions {
    fn default() -> Self {
        Self {
            out_range: Some((0.0, 2.0)),
            trained_jump: 0.25,
        }
    }
}

/// Palmgren-Miner damage sum.
pub fn pm_sum(etas: &[f64]) -> f64 {
    etas.iter().fold(0.0, |acc, e| acc + e)
}

/// Iterative remaining-life prediction.
pub fn predict_remaining<P: RemainingLifePredictor + ?Sized>(
    predictor: &P,
    scenario: &MultiLevelScenario,
    opts: &AlgorithmOptions,
) -> Result<LifetimeTrace, LifetimeError> {
    scenario.validate()?;
    let n = scenario.n_levels();
    let s = &scenario.s_max;
    // eta_n starts at zero
    let eta = |i: usize| if i < n - 1 { scenario.eta[i] } else { 0.0 };
    let mut jumps = Vec::with_capacity(n - 1);
    let mut eta_new = eta(0);
    let mut sum_eta = 0.0;
    let mut corrections = 0.0;
    for i in 0..n - 1 {
        let delta_s = s[i] - s[i + 1];
        if delta_s.abs() > opts.trained_jump + 1e-9 {
            log::warn!("load jump {delta_s} at jump {} exceeds the trained range", i + 1);
        }
        let eta_in = eta_new;
        let eta_out = predictor.eta_out(s[i], delta_s, eta_in);
        if let Some((lo, hi)) = opts.out_range {
            if !(eta_out >= lo && eta_out <= hi) {
                return Err(LifetimeError::PredictorOutOfRange {
                    jump: i + 1,
                    value: eta_out,
                    lo,
                    hi,
                });
            }
        }
        let delta_eta = 1.0 - eta_out;
        sum_eta = if i == 0 {
            eta(i) + delta_eta
        } else {
            sum_eta + eta(i) + delta_eta
        };
        corrections += delta_eta;
        let eta_rem_next = 1.0 - sum_eta;
        eta_new = sum_eta + eta(i + 1);
        jumps.push(JumpRecord {
            i: i + 1,
            delta_s_max: delta_s,
            eta_new: eta_in,
            eta_out,
            delta_eta,
            sum_eta,
            eta_rem_next,
        });
        if eta_new >= 1.0 {
            return Ok(LifetimeTrace {
                jumps,
                outcome: LifetimeOutcome::FailureAtLevel { level: i + 2 },
                accumulated_life: 1.0 - corrections,
            });
        }
    }
    let raw = 1.0 - sum_eta;
    Ok(LifetimeTrace {
        jumps,
        outcome: LifetimeOutcome::RemainingLife {
            clamped: raw.clamp(0.0, 1.0),
            raw,
        },
        accumulated_life: 1.0 - corrections,
    })
}

/// Simulator reference for a multi-level scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleOutcome {
    /// `N_n / N_n^f` at the last level.
    Remaining { eta_rem: f64, cycles: u64 },
    /// The specimen failed during an earlier (1-based) level.
    FailedBefore { level: usize },
}

impl OracleOutcome {
    pub fn remaining(&self) -> Option<f64> {
        match self {
            OracleOutcome::Remaining { eta_rem, .. } => Some(*eta_rem),
            OracleOutcome::FailedBefore { .. } => None,
        }
    }
}

/// Run the whole scenario in the simulator.
pub fn oracle_remaining(
    p: &MaterialParameters,
    sn: &SnTable,
    scenario: &MultiLevelScenario,
    settings: &SimulationSettings,
) -> Result<OracleOutcome, LifetimeError> {
    scenario.validate()?;
    let resolved = scenario
        .to_load_scenario(p.fc)?
        .resolve_durations(sn)
        .map_err(SimError::from)?;
    let n = scenario.n_levels();
    let last = scenario.s_max[n - 1];
    let n_f = sn.get(last).ok_or(SimError::Protocol(
        crate::protocol::ProtocolError::MissingSnEntry {
            s_max: last,
            s_min: scenario.s_min,
        },
    ))?;
    let r = run_scenario_with(p, &resolved, settings, false)?;
    if r.runout {
        return Err(SimError::Runout {
            s_max: last,
            max_cycles: settings.max_cycles,
        }
        .into());
    }
    match r.failure_block {
        Some(b) if b + 1 < n => Ok(OracleOutcome::FailedBefore { level: b + 1 }),
        _ => {
            let cycles = r.cycles_per_block[n - 1];
            Ok(OracleOutcome::Remaining {
                eta_rem: cycles as f64 / n_f as f64,
                cycles,
            })
        }
    }
}

/// Simulated accumulated life: the applied fractions of the levels before
/// failure plus the fraction survived in the level where failure occurred.
/// Also returns the 1-based failure level.
pub fn oracle_accumulated_life(
    p: &MaterialParameters,
    sn: &SnTable,
    scenario: &MultiLevelScenario,
    settings: &SimulationSettings,
) -> Result<(f64, usize), LifetimeError> {
    scenario.validate()?;
    let resolved = scenario
        .to_load_scenario(p.fc)?
        .resolve_durations(sn)
        .map_err(SimError::from)?;
    let r = run_scenario_with(p, &resolved, settings, false)?;
    let b = match r.failure_block {
        Some(b) if !r.runout => b,
        _ => {
            return Err(SimError::Runout {
                s_max: *scenario.s_max.last().unwrap(),
                max_cycles: settings.max_cycles,
            }
            .into())
        }
    };
    let mut total = 0.0;
    for i in 0..=b {
        let s = scenario.s_max[i];
        let n_f = sn.get(s).ok_or(SimError::Protocol(
            crate::protocol::ProtocolError::MissingSnEntry {
                s_max: s,
                s_min: scenario.s_min,
            },
        ))?;
        total += r.cycles_per_block[i] as f64 / n_f as f64;
    }
    Ok((total, b + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn opts() -> AlgorithmOptions {
        AlgorithmOptions::default()
    }

    #[test]
    fn pm_sum_examples() {
        assert_relative_eq!(pm_sum(&[0.3, 0.4]), 0.7, max_relative = 1e-15);
        assert_eq!(pm_sum(&[]), 0.0);
        assert_eq!(pm_sum(&[1.0]), 1.0);
    }

    #[test]
    fn pm_stub_three_levels() {
        let sc = MultiLevelScenario::new(vec![0.9, 0.7, 0.8], vec![0.3, 0.4], 0.2).unwrap();
        let t = predict_remaining(&PalmgrenMiner, &sc, &opts()).unwrap();
        assert!(t.jumps.iter().all(|j| j.delta_eta == 0.0));
        assert_relative_eq!(t.jumps[1].sum_eta, 0.7, max_relative = 1e-15);
        assert_relative_eq!(t.remaining(), 0.3, max_relative = 1e-14);
        assert_eq!(t.accumulated_life, 1.0);
    }

    #[test]
    fn constant_correction_hand_trace() {
        let sc = MultiLevelScenario::new(vec![0.9, 0.7, 0.8], vec![0.3, 0.4], 0.2).unwrap();
        let t = predict_remaining(&FnPredictor(|_, _, _| 0.8), &sc, &opts()).unwrap();
        assert_relative_eq!(t.jumps[0].sum_eta, 0.5, max_relative = 1e-12);
        assert_relative_eq!(t.jumps[1].eta_new, 0.9, max_relative = 1e-12);
        assert_relative_eq!(t.jumps[1].sum_eta, 1.1, max_relative = 1e-12);
        assert_relative_eq!(t.jumps[1].eta_rem_next, -0.1, max_relative = 1e-9);
        // the initial eta_3 = 0 makes eta_new_3 = 1.1 >= 1
        assert_eq!(t.outcome, LifetimeOutcome::FailureAtLevel { level: 3 });
        assert_eq!(t.remaining(), 0.0);
    }

    #[test]
    fn early_failure_breaks_the_loop() {
        let sc = MultiLevelScenario::new(vec![0.9, 0.7, 0.8, 0.7], vec![0.6, 0.5, 0.2], 0.2).unwrap();
        let t = predict_remaining(&PalmgrenMiner, &sc, &opts()).unwrap();
        assert_eq!(t.outcome, LifetimeOutcome::FailureAtLevel { level: 2 });
        assert_eq!(t.jumps.len(), 1);
    }

    #[test]
    fn two_levels_unroll_to_a_single_call() {
        let f = |s: f64, d: f64, e: f64| 1.0 - 0.3 * d * e + 0.01 * s;
        let sc = MultiLevelScenario::new(vec![0.85, 0.7], vec![0.35], 0.2).unwrap();
        let t = predict_remaining(&FnPredictor(f), &sc, &opts()).unwrap();
        let direct = f(0.85, 0.85 - 0.7, 0.35) - 0.35;
        assert_relative_eq!(t.remaining(), direct, max_relative = 1e-12);
    }

    #[test]
    fn out_of_range_predictor_rejected() {
        let sc = MultiLevelScenario::new(vec![0.9, 0.7], vec![0.3], 0.2).unwrap();
        let r = predict_remaining(&FnPredictor(|_, _, _| 2.5), &sc, &opts());
        assert!(matches!(r, Err(LifetimeError::PredictorOutOfRange { jump: 1, .. })));
        let relaxed = AlgorithmOptions {
            out_range: None,
            ..opts()
        };
        assert!(predict_remaining(&FnPredictor(|_, _, _| 2.5), &sc, &relaxed).is_ok());
    }

    #[test]
    fn invalid_scenarios() {
        assert!(MultiLevelScenario::new(vec![0.9], vec![], 0.2).is_err());
        assert!(MultiLevelScenario::new(vec![0.9, 0.8], vec![0.3, 0.3], 0.2).is_err());
        assert!(MultiLevelScenario::new(vec![0.9, 0.8], vec![0.0], 0.2).is_err());
        assert!(MultiLevelScenario::new(vec![0.9, 0.1], vec![0.2], 0.2).is_err());
    }

    #[test]
    fn trace_serializes() {
        let sc = MultiLevelScenario::new(vec![0.9, 0.7], vec![0.3], 0.2).unwrap();
        let t = predict_remaining(&PalmgrenMiner, &sc, &opts()).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"kind\":\"remaining_life\""));
        let back: LifetimeTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.csv_row(2), "2,remaining,,0.7,0.7,1");
    }

    fn scenario_strategy() -> impl Strategy<Value = MultiLevelScenario> {
        (2usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::sample::select(vec![0.65, 0.7, 0.75, 0.8, 0.85, 0.9]), n),
                prop::collection::vec(0.01f64..0.4, n - 1),
            )
                .prop_map(|(s_max, eta)| MultiLevelScenario { s_max, eta, s_min: 0.2 })
        })
    }

    proptest! {
        #[test]
        fn pm_reduction(sc in scenario_strategy()) {
            let t = predict_remaining(&PalmgrenMiner, &sc, &opts()).unwrap();
            let expected = (1.0 - pm_sum(&sc.eta)).clamp(0.0, 1.0);
            prop_assert_eq!(t.remaining().to_bits(), expected.to_bits());
        }

        #[test]
        fn bookkeeping_identities(sc in scenario_strategy(), a in -0.2f64..0.2, b in -0.2f64..0.2) {
            let pred = FnPredictor(move |s: f64, d: f64, e: f64| 1.0 - a * d * e + b * (s - 0.8) * e);
            let t = predict_remaining(&pred, &sc, &opts()).unwrap();
            for (k, j) in t.jumps.iter().enumerate() {
                let prev = if k == 0 { 0.0 } else { t.jumps[k - 1].sum_eta };
                prop_assert!((j.sum_eta - (prev + sc.eta[k] + j.delta_eta)).abs() < 1e-12);
                prop_assert_eq!(j.eta_rem_next, 1.0 - j.sum_eta);
                prop_assert_eq!(j.delta_eta, 1.0 - j.eta_out);
            }
        }

        #[test]
        fn appending_a_block_never_increases_remaining_life(
            sc in scenario_strategy(),
            extra_level in prop::sample::select(vec![0.65, 0.7, 0.75, 0.8, 0.85, 0.9]),
            extra_eta in 0.01f64..0.4,
        ) {
            let mut longer = sc.clone();
            let last = longer.s_max.len() - 1;
            longer.s_max.insert(last, extra_level);
            longer.eta.push(extra_eta);
            let a = predict_remaining(&PalmgrenMiner, &sc, &opts()).unwrap().remaining();
            let b = predict_remaining(&PalmgrenMiner, &longer, &opts()).unwrap().remaining();
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn oracle_accumulated_life_of_a_high_low_pair() {
        let p = MaterialParameters::default();
        let settings = SimulationSettings {
            disc: crate::protocol::CycleDiscretization { substeps_per_branch: 4 },
            ..Default::default()
        };
        let sn = crate::simulator::build_sn_table(&p, &[0.65, 0.85], 0.2, &settings).unwrap();
        let sc = MultiLevelScenario::new(vec![0.85, 0.65], vec![0.4], 0.2).unwrap();
        let (acc, level) = oracle_accumulated_life(&p, &sn, &sc, &settings).unwrap();
        assert_eq!(level, 2);
        let rem = oracle_remaining(&p, &sn, &sc, &settings).unwrap().remaining().unwrap();
        let n1 = (0.4 * sn.get(0.85).unwrap() as f64).round();
        assert_relative_eq!(acc, n1 / sn.get(0.85).unwrap() as f64 + rem, max_relative = 1e-12);
        assert!(acc < 1.0);
    }
}
