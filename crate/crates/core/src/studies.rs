//! Validation campaigns over multi-level loading: sequence studies compared
//! against the simulator, and the alternating multi-jump study.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifetime::{
    oracle_accumulated_life, oracle_remaining, predict_remaining, AlgorithmOptions, LifetimeError, MultiLevelScenario,
    OracleOutcome, RemainingLifePredictor,
};
use crate::material::MaterialParameters;
use crate::nn::r2_score;
use crate::simulator::{SimulationSettings, SnTable};
use crate::util::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid study: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Lifetime(#[from] LifetimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    HLH,
    LHL,
    Ascending,
    Descending,
    Alternating,
}

impl Family {
    pub const SEQUENCES: [Family; 4] = [Family::HLH, Family::LHL, Family::Ascending, Family::Descending];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::HLH => "H-L-H",
            Family::LHL => "L-H-L",
            Family::Ascending => "ascending",
            Family::Descending => "descending",
            Family::Alternating => "alternating",
        })
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "h-l-h" | "hlh" => Ok(Family::HLH),
            "l-h-l" | "lhl" => Ok(Family::LHL),
            "ascending" => Ok(Family::Ascending),
            "descending" => Ok(Family::Descending),
            "alternating" => Ok(Family::Alternating),
            other => Err(format!("unknown scenario family `{other}`")),
        }
    }
}

/// Upper levels used for a sequence family with 3 or 5 levels.
pub fn family_levels(family: Family, n_levels: usize) -> Result<Vec<f64>, StudyError> {
    let (hi, lo) = (0.85, 0.70);
    let levels = match (family, n_levels) {
        (Family::HLH, n) if n % 2 == 1 => (0..n).map(|i| if i % 2 == 0 { hi } else { lo }).collect(),
        (Family::LHL, n) if n % 2 == 1 => (0..n).map(|i| if i % 2 == 0 { lo } else { hi }).collect(),
        (Family::Ascending, 3) => vec![0.65, 0.75, 0.85],
        (Family::Descending, 3) => vec![0.85, 0.75, 0.65],
        (Family::Ascending, 5) => vec![0.65, 0.70, 0.75, 0.80, 0.85],
        (Family::Descending, 5) => vec![0.85, 0.80, 0.75, 0.70, 0.65],
        _ => {
            return Err(StudyError::InvalidSpec(format!(
                "no level layout for {family} with {n_levels} levels"
            )))
        }
    };
    Ok(levels)
}

/// Consumed fractions 0.05, 0.10, ..., 0.40.
pub fn sequence_eta_grid() -> Vec<f64> {
    (1..=8).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub family: Family,
    pub levels: Vec<f64>,
    /// Candidate consumed fraction for each of the first `n - 1` levels.
    pub eta_grid: Vec<f64>,
    /// Maximum number of scenarios; larger grids are subsampled (seeded).
    pub cap: Option<usize>,
    pub seed: u64,
    pub s_min: f64,
}

impl StudySpec {
    pub fn sequence(family: Family, n_levels: usize, seed: u64) -> Result<Self, StudyError> {
        Ok(Self {
            family,
            levels: family_levels(family, n_levels)?,
            eta_grid: sequence_eta_grid(),
            cap: if n_levels > 3 { Some(256) } else { None },
            seed,
            s_min: 0.2,
        })
    }

    /// All eta combinations, or a seeded subsample without replacement when
    /// the cap is smaller. Combinations are kept in lexicographic order.
    pub fn scenarios(&self) -> Result<Vec<MultiLevelScenario>, StudyError> {
        let k = self.levels.len().checked_sub(1).filter(|k| *k >= 1).ok_or_else(|| {
            StudyError::InvalidSpec("a sequence study needs at least two levels".into())
        })?;
        if self.eta_grid.is_empty() {
            return Err(StudyError::InvalidSpec("empty eta grid".into()));
        }
        let m = self.eta_grid.len();
        let total = m.checked_pow(k as u32).ok_or_else(|| StudyError::InvalidSpec("eta grid too large".into()))?;
        let name = format!("study/{}/{}", self.family, self.levels.len());
        let ids = pick(total, self.cap, self.seed, &name);
        ids.into_iter()
            .map(|id| {
                let eta = digits(id, m, k).into_iter().map(|d| self.eta_grid[d]).collect();
                MultiLevelScenario::new(self.levels.clone(), eta, self.s_min).map_err(Into::into)
            })
            .collect()
    }
}

/// `cap` distinct indices below `total` in ascending order (all of them if
/// `cap` is absent or not smaller).
fn pick(total: usize, cap: Option<usize>, seed: u64, stream: &str) -> Vec<usize> {
    match cap {
        Some(c) if c < total => {
            let mut v = index::sample(&mut stream_rng(seed, stream), total, c).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    }
}

/// Base-`m` digits of `id`, most significant first.
fn digits(mut id: usize, m: usize, k: usize) -> Vec<usize> {
    let mut d = vec![0; k];
    for slot in d.iter_mut().rev() {
        *slot = id % m;
        id /= m;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub scenario_id: usize,
    pub scenario: MultiLevelScenario,
    /// Simulator remaining life; absent when excluded.
    pub true_rem: Option<f64>,
    pub pred_rem: f64,
    pub excluded: bool,
    /// `sum(d_eta)` of the predicted trace.
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub family: Family,
    pub n_levels: usize,
    pub records: Vec<StudyRecord>,
    pub r2: f64,
    pub excluded: usize,
    pub mean_correction: f64,
}

impl StudyResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario_id,true_rem,pred_rem,excluded\n");
        for r in &self.records {
            let t = r.true_rem.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{t},{},{}\n", r.scenario_id, r.pred_rem, r.excluded));
        }
        out
    }

    /// One row per included scenario with its consumed fractions.
    pub fn plot_csv(&self) -> String {
        let k = self.n_levels - 1;
        let etas: Vec<String> = (1..=k).map(|i| format!("eta_{i}")).collect();
        let mut out = format!("scenario_id,{},true_rem,pred_rem\n", etas.join(","));
        for r in self.records.iter().filter(|r| !r.excluded) {
            let e: Vec<String> = r.scenario.eta.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.scenario_id,
                e.join(","),
                r.true_rem.unwrap_or(f64::NAN),
                r.pred_rem
            ));
        }
        out
    }
}

/// Predicted vs simulated remaining life over every scenario of a spec.
pub fn run_sequence_study<P: RemainingLifePredictor + Sync + ?Sized>(
    predictor: &P,
    p: &MaterialParameters,
    sn: &SnTable,
    settings: &SimulationSettings,
    spec: &StudySpec,
) -> Result<StudyResult, StudyError> {
    let scenarios = spec.scenarios()?;
    let opts = AlgorithmOptions::default();
    let records = scenarios
        .into_par_iter()
        .enumerate()
        .map(|(id, sc)| {
            let trace = predict_remaining(predictor, &sc, &opts)?;
            let oracle = oracle_remaining(p, sn, &sc, settings)?;
            let correction = trace.jumps.iter().map(|j| j.delta_eta).sum();
            Ok(StudyRecord {
                scenario_id: id,
                true_rem: oracle.remaining(),
                pred_rem: trace.remaining(),
                excluded: matches!(oracle, OracleOutcome::FailedBefore { .. }),
                scenario: sc,
                correction,
            })
        })
        .collect::<Result<Vec<_>, LifetimeError>>()?;
    let included: Vec<&StudyRecord> = records.iter().filter(|r| !r.excluded).collect();
    let truth: Vec<f64> = included.iter().filter_map(|r| r.true_rem).collect();
    let pred: Vec<f64> = included.iter().map(|r| r.pred_rem).collect();
    let r2 = r2_score(&pred, &truth).map_err(|_| {
        StudyError::InsufficientData(format!(
            "{} included scenarios do not determine R²",
            included.len()
        ))
    })?;
    let mean_correction = included.iter().map(|r| r.correction).sum::<f64>() / included.len() as f64;
    Ok(StudyResult {
        family: spec.family,
        n_levels: spec.levels.len(),
        excluded: records.len() - included.len(),
        records,
        r2,
        mean_correction,
    })
}

/// Alternating scenarios with a fixed jump magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpStudySpec {
    pub n_levels: usize,
    pub samples: usize,
    /// Candidate upper levels of the high blocks; low = high - jump.
    pub highs: Vec<f64>,
    pub jump: f64,
    pub eta_grid: Vec<f64>,
    pub seed: u64,
    pub s_min: f64,
}

impl JumpStudySpec {
    /// 3, 5 and 10 levels with 50, 578 and 3000 samples.
    pub fn paper_sets(seed: u64) -> Vec<JumpStudySpec> {
        [(3, 50), (5, 578), (10, 3000)]
            .into_iter()
            .map(|(n_levels, samples)| JumpStudySpec {
                n_levels,
                samples,
                highs: vec![0.85, 0.90],
                jump: 0.2,
                eta_grid: (1..=8).map(|k| k as f64 / 40.0).collect(),
                seed,
                s_min: 0.2,
            })
            .collect()
    }

    /// Seeded sample of distinct (high level, eta combination) choices,
    /// starting at the high level.
    pub fn scenarios(&self) -> Result<Vec<MultiLevelScenario>, StudyError> {
        if self.n_levels < 2 || self.highs.is_empty() || self.eta_grid.is_empty() {
            return Err(StudyError::InvalidSpec(
                "need >= 2 levels, a high level and an eta grid".into(),
            ));
        }
        let k = self.n_levels - 1;
        let m = self.eta_grid.len();
        let total = m
            .checked_pow(k as u32)
            .and_then(|t| t.checked_mul(self.highs.len()))
            .ok_or_else(|| StudyError::InvalidSpec("combination space too large".into()))?;
        if self.samples > total {
            return Err(StudyError::InvalidSpec(format!(
                "{} samples requested from {total} combinations",
                self.samples
            )));
        }
        let ids = pick(total, Some(self.samples), self.seed, &format!("jumps/{}", self.n_levels));
        ids.into_iter()
            .map(|id| {
                let hi = self.highs[id % self.highs.len()];
                let lo = crate::util::snap(hi - self.jump);
                let eta = digits(id / self.highs.len(), m, k)
                    .into_iter()
                    .map(|d| self.eta_grid[d])
                    .collect();
                let s_max = (0..self.n_levels).map(|i| if i % 2 == 0 { hi } else { lo }).collect();
                MultiLevelScenario::new(s_max, eta, self.s_min).map_err(Into::into)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpStudyResult {
    pub n_levels: usize,
    pub samples: usize,
    /// Accumulated life `1 - sum(d_eta)` of every scenario.
    pub accumulated: Vec<f64>,
    pub mean_sum_eta: f64,
    pub failed_early: usize,
}

impl JumpStudyResult {
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("scenario_id,n_levels,accumulated_life\n");
        for (i, a) in self.accumulated.iter().enumerate() {
            out.push_str(&format!("{i},{},{a}\n", self.n_levels));
        }
        out
    }
}

/// Mean accumulated life predicted by the iterative algorithm.
pub fn run_multi_jump_study<P: RemainingLifePredictor + Sync + ?Sized>(
    predictor: &P,
    spec: &JumpStudySpec,
) -> Result<JumpStudyResult, StudyError> {
    let scenarios = spec.scenarios()?;
    if scenarios.is_empty() {
        return Err(StudyError::InsufficientData("no scenarios".into()));
    }
    let opts = AlgorithmOptions::default();
    let traces = scenarios
        .par_iter()
        .map(|sc| predict_remaining(predictor, sc, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let accumulated: Vec<f64> = traces.iter().map(|t| t.accumulated_life).collect();
    Ok(JumpStudyResult {
        n_levels: spec.n_levels,
        samples: accumulated.len(),
        mean_sum_eta: accumulated.iter().sum::<f64>() / accumulated.len() as f64,
        failed_early: traces.iter().filter(|t| t.failed_early()).count(),
        accumulated,
    })
}

/// The same scenarios run through the simulator; `failed_early` counts
/// specimens that failed before the last level.
pub fn run_multi_jump_oracle(
    p: &MaterialParameters,
    sn: &SnTable,
    settings: &SimulationSettings,
    spec: &JumpStudySpec,
) -> Result<JumpStudyResult, StudyError> {
    let scenarios = spec.scenarios()?;
    if scenarios.is_empty() {
        return Err(StudyError::InsufficientData("no scenarios".into()));
    }
    let runs = scenarios
        .par_iter()
        .map(|sc| oracle_accumulated_life(p, sn, sc, settings))
        .collect::<Result<Vec<_>, _>>()?;
    let accumulated: Vec<f64> = runs.iter().map(|r| r.0).collect();
    Ok(JumpStudyResult {
        n_levels: spec.n_levels,
        samples: accumulated.len(),
        mean_sum_eta: accumulated.iter().sum::<f64>() / accumulated.len() as f64,
        failed_early: runs.iter().filter(|r| r.1 < spec.n_levels).count(),
        accumulated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetime::{FnPredictor, PalmgrenMiner};

    #[test]
    fn family_layouts() {
        assert_eq!(family_levels(Family::HLH, 3).unwrap(), vec![0.85, 0.7, 0.85]);
        assert_eq!(family_levels(Family::LHL, 5).unwrap(), vec![0.7, 0.85, 0.7, 0.85, 0.7]);
        assert!(family_levels(Family::HLH, 4).is_err());
        assert!(family_levels(Family::Alternating, 3).is_err());
        for f in Family::SEQUENCES {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
    }

    #[test]
    fn three_level_grid_is_complete() {
        let spec = StudySpec::sequence(Family::Ascending, 3, 0).unwrap();
        let sc = spec.scenarios().unwrap();
        assert_eq!(sc.len(), 64);
        assert_eq!(sc[0].eta, vec![0.05, 0.05]);
        assert_eq!(sc[63].eta, vec![0.4, 0.4]);
    }

    #[test]
    fn capped_grid_is_seeded() {
        let spec = StudySpec::sequence(Family::HLH, 5, 7).unwrap();
        let a = spec.scenarios().unwrap();
        assert_eq!(a.len(), 256);
        assert_eq!(a, spec.scenarios().unwrap());
        let other = StudySpec { seed: 8, ..spec };
        assert_ne!(a, other.scenarios().unwrap());
    }

    #[test]
    fn jump_sets() {
        let sets = JumpStudySpec::paper_sets(1);
        assert_eq!(sets.iter().map(|s| s.samples).collect::<Vec<_>>(), vec![50, 578, 3000]);
        let sc = sets[2].scenarios().unwrap();
        assert_eq!(sc.len(), 3000);
        let mut seen = std::collections::HashSet::new();
        for s in &sc {
            assert_eq!(s.n_levels(), 10);
            assert!(s.s_max[0] == 0.85 || s.s_max[0] == 0.9);
            for w in s.s_max.windows(2) {
                assert!(((w[0] - w[1]).abs() - 0.2).abs() < 1e-9);
            }
            assert!(s.eta.iter().all(|e| (0.025..=0.2).contains(e)));
            assert!(seen.insert(format!("{:?}{:?}", s.s_max, s.eta)));
        }
        let too_many = JumpStudySpec { samples: 10_000, n_levels: 3, ..sets[0].clone() };
        assert!(too_many.scenarios().is_err());
    }

    #[test]
    fn pm_multi_jump_mean_is_one() {
        let r = run_multi_jump_study(&PalmgrenMiner, &JumpStudySpec::paper_sets(3)[1]).unwrap();
        assert_eq!(r.mean_sum_eta, 1.0);
        assert_eq!(r.samples, 578);
    }

    #[test]
    fn constant_penalty_lowers_the_mean_with_more_jumps() {
        let pred = FnPredictor(|_: f64, d: f64, _: f64| if d > 0.0 { 0.95 } else { 1.02 });
        let means: Vec<f64> = JumpStudySpec::paper_sets(3)
            .iter()
            .map(|s| run_multi_jump_study(&pred, s).unwrap().mean_sum_eta)
            .collect();
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn degenerate_study_has_insufficient_data() {
        let p = MaterialParameters::default();
        let settings = SimulationSettings {
            disc: crate::protocol::CycleDiscretization { substeps_per_branch: 4 },
            ..Default::default()
        };
        let sn = crate::simulator::build_sn_table(&p, &[0.85, 0.9], 0.2, &settings).unwrap();
        let spec = StudySpec {
            family: Family::HLH,
            levels: vec![0.9, 0.85, 0.9],
            eta_grid: vec![0.2],
            cap: None,
            seed: 0,
            s_min: 0.2,
        };
        assert!(matches!(
            run_sequence_study(&PalmgrenMiner, &p, &sn, &settings, &spec),
            Err(StudyError::InsufficientData(_))
        ));
    }
}
