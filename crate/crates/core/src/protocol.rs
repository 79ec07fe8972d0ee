//! Block loading scenarios.
//!
//! A scenario is an ordered list of blocks, each cycling between a common
//! lower load ratio `s_min` and the block's own upper ratio `s_max`. Durations
//! are given as explicit cycle counts, as consumed-life fractions (resolved
//! against an S-N table), or as "run to failure".

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::SnTable;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no S-N entry for s_max = {s_max} (s_min = {s_min})")]
    MissingSnEntry { s_max: f64, s_min: f64 },
    #[error("block {0} has an unresolved duration")]
    Unresolved(usize),
    #[error("malformed scenario file: {0}")]
    Parse(String),
}

/// How long a block lasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Duration {
    Cycles(u64),
    /// Fraction of the constant-amplitude life at this block's level.
    ConsumedFraction(f64),
    ToFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadBlock {
    pub s_max: f64,
    pub duration: Duration,
}

impl LoadBlock {
    pub fn cycles(s_max: f64, n: u64) -> Self {
        Self {
            s_max,
            duration: Duration::Cycles(n),
        }
    }

    pub fn fraction(s_max: f64, eta: f64) -> Self {
        Self {
            s_max,
            duration: Duration::ConsumedFraction(eta),
        }
    }

    pub fn to_failure(s_max: f64) -> Self {
        Self {
            s_max,
            duration: Duration::ToFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScenario {
    pub s_min: f64,
    pub fc: f64,
    pub blocks: Vec<LoadBlock>,
}

/// Number of explicit increments per loading or unloading branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleDiscretization {
    pub substeps_per_branch: usize,
}

impl Default for CycleDiscretization {
    fn default() -> Self {
        Self {
            substeps_per_branch: 20,
        }
    }
}

/// Direction of a stress ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Up,
    Down,
}

/// Cycles for a consumed fraction: nearest integer, never negative.
pub fn cycles_for_fraction(eta: f64, n_f: u64) -> u64 {
    (eta * n_f as f64).round().max(0.0) as u64
}

impl LoadScenario {
    pub fn new(s_min: f64, fc: f64, blocks: Vec<LoadBlock>) -> Result<Self, ProtocolError> {
        let s = Self { s_min, fc, blocks };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidScenario(m));
        if self.blocks.is_empty() {
            return bad("scenario has no blocks".into());
        }
        if !(self.fc.is_finite() && self.fc > 0.0) {
            return bad(format!("fc must be > 0, got {}", self.fc));
        }
        if !(self.s_min.is_finite() && self.s_min >= 0.0) {
            return bad(format!("s_min must be >= 0, got {}", self.s_min));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !(b.s_max.is_finite() && b.s_max > self.s_min && b.s_max <= 1.0) {
                return bad(format!(
                    "block {i}: s_max = {} must lie in (s_min, 1]",
                    b.s_max
                ));
            }
            match b.duration {
                Duration::ConsumedFraction(eta) if !(0.0..=1.0).contains(&eta) => {
                    return bad(format!("block {i}: eta = {eta} outside [0, 1]"));
                }
                Duration::ToFailure if i + 1 != self.blocks.len() => {
                    return bad(format!("block {i}: only the final block may run to failure"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Replace consumed fractions by cycle counts `round(eta * N_f)`.
    pub fn resolve_durations(&self, sn: &SnTable) -> Result<LoadScenario, ProtocolError> {
        let mut out = self.clone();
        for b in &mut out.blocks {
            if let Duration::ConsumedFraction(eta) = b.duration {
                let n_f = sn.get(b.s_max).ok_or(ProtocolError::MissingSnEntry {
                    s_max: b.s_max,
                    s_min: self.s_min,
                })?;
                b.duration = Duration::Cycles(cycles_for_fraction(eta, n_f));
            }
        }
        Ok(out)
    }

    pub fn is_resolved(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| !matches!(b.duration, Duration::ConsumedFraction(_)))
    }

    /// Stress reversal targets for all cycles, excluding the initial ramp from
    /// zero to the lower load. Each branch is split into `substeps` equal
    /// stress increments and every increment end is emitted.
    pub fn stress_targets(
        &self,
        disc: &CycleDiscretization,
    ) -> Result<Vec<(f64, Branch)>, ProtocolError> {
        let m = disc.substeps_per_branch.max(1);
        let lo = self.s_min * self.fc;
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let n = match b.duration {
                Duration::Cycles(n) => n,
                _ => return Err(ProtocolError::Unresolved(i)),
            };
            let hi = b.s_max * self.fc;
            for _ in 0..n {
                for k in 1..=m {
                    out.push((ramp_point(lo, hi, k, m), Branch::Up));
                }
                for k in 1..=m {
                    out.push((ramp_point(hi, lo, k, m), Branch::Down));
                }
            }
        }
        Ok(out)
    }

    /// Distinct upper load ratios appearing in the scenario, ascending.
    pub fn levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.blocks.iter().map(|b| b.s_max).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| crate::util::same_ratio(*a, *b));
        v
    }
}

fn ramp_point(from: f64, to: f64, k: usize, m: usize) -> f64 {
    if k == m {
        to
    } else {
        from + (to - from) * k as f64 / m as f64
    }
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub s_min: f64,
    pub fc: f64,
    pub levels: Vec<LevelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub s_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<u64>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Parse(e.to_string()))
    }

    pub fn to_scenario(&self) -> Result<LoadScenario, ProtocolError> {
        let last = self.levels.len().saturating_sub(1);
        let blocks = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let duration = match (l.eta, l.cycles) {
                    (Some(_), Some(_)) => {
                        return Err(ProtocolError::InvalidScenario(format!(
                            "level {i}: give either eta or cycles, not both"
                        )))
                    }
                    (Some(eta), None) => Duration::ConsumedFraction(eta),
                    (None, Some(n)) => Duration::Cycles(n),
                    (None, None) if i == last => Duration::ToFailure,
                    (None, None) => {
                        return Err(ProtocolError::InvalidScenario(format!(
                            "level {i}: only the final level may omit its duration"
                        )))
                    }
                };
                Ok(LoadBlock {
                    s_max: l.s_max,
                    duration,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        LoadScenario::new(self.s_min, self.fc, blocks)
    }

    pub fn from_scenario(s: &LoadScenario) -> Self {
        Self {
            s_min: s.s_min,
            fc: s.fc,
            levels: s
                .blocks
                .iter()
                .map(|b| LevelSpec {
                    s_max: b.s_max,
                    eta: match b.duration {
                        Duration::ConsumedFraction(e) => Some(e),
                        _ => None,
                    },
                    cycles: match b.duration {
                        Duration::Cycles(n) => Some(n),
                        _ => None,
                    },
                })
                .collect(),
        }
    }
}
