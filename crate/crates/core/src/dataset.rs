//! The two-stage scenario grid, its simulator labels and the train/validation/
//! test splits.
//!
//! Grid values are built from integer hundredths (levels) and twentieths
//! (consumed fractions) so that every stored float is the nearest double to
//! its decimal literal.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::MaterialParameters;
use crate::simulator::{run_two_stage, SimError, SimulationSettings, SnTable};
use crate::util::{same_ratio, stream_rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("simulation failed for s1 = {s1_max}, dS = {delta_s_max}, eta = {eta_cons}: {source}")]
    Simulation {
        s1_max: f64,
        delta_s_max: f64,
        eta_cons: f64,
        source: SimError,
    },
    #[error("dataset is not the canonical two-stage grid: {0}")]
    MissingGridEntry(String),
    #[error("invalid split fractions {0:?}")]
    InvalidFractions(Vec<f64>),
    #[error("malformed dataset file, line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Upper load levels of the grid, in hundredths.
pub const LEVELS_PCT: [i32; 6] = [65, 70, 75, 80, 85, 90];
/// Number of consumed-fraction steps (0, 0.05, ..., 1).
pub const ETA_STEPS: i32 = 20;
pub const S_MIN: f64 = 0.2;

/// Input triple of one two-stage scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub s1_max: f64,
    /// `s1_max - s2_max`; positive for high-to-low.
    pub delta_s_max: f64,
    pub eta_cons: f64,
}

impl GridPoint {
    pub fn s2_max(&self) -> f64 {
        crate::util::snap(self.s1_max - self.delta_s_max)
    }

    pub fn features(&self) -> [f64; 3] {
        [self.s1_max, self.delta_s_max, self.eta_cons]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s1_max: f64,
    pub delta_s_max: f64,
    pub eta_cons: f64,
    pub sum_eta: f64,
}

impl Sample {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            s1_max: self.s1_max,
            delta_s_max: self.delta_s_max,
            eta_cons: self.eta_cons,
        }
    }

    pub fn features(&self) -> [f64; 3] {
        [self.s1_max, self.delta_s_max, self.eta_cons]
    }

    /// Strictly inside the consumed-fraction range.
    pub fn is_interior(&self) -> bool {
        self.eta_cons > 0.0 && self.eta_cons < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// All ordered pairs of distinct grid levels as `(s1_max, delta_s_max)`, in
/// canonical order.
pub fn level_pairs() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(30);
    for &i1 in &LEVELS_PCT {
        let mut row: Vec<i32> = LEVELS_PCT.iter().filter(|&&i2| i2 != i1).map(|&i2| i1 - i2).collect();
        row.sort();
        out.extend(row.into_iter().map(|d| (i1 as f64 / 100.0, d as f64 / 100.0)));
    }
    out
}

pub fn eta_grid() -> Vec<f64> {
    (0..=ETA_STEPS).map(|k| k as f64 / ETA_STEPS as f64).collect()
}

/// The 630 grid points ordered by `s1_max`, then `delta_s_max`, then
/// `eta_cons`.
pub fn enumerate_grid() -> Vec<GridPoint> {
    let etas = eta_grid();
    level_pairs()
        .into_iter()
        .flat_map(|(s1_max, delta_s_max)| {
            etas.iter().map(move |&eta_cons| GridPoint {
                s1_max,
                delta_s_max,
                eta_cons,
            })
        })
        .collect()
}

/// Provenance written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub params: MaterialParameters,
    pub settings: SimulationSettings,
    pub sn_table: SnTable,
    pub split_fractions: Option<[f64; 3]>,
    pub small_subset: bool,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split_tags: Vec<Split>,
    pub meta: DatasetMeta,
}

/// Label every grid point with the simulator. Runs in parallel; the output is
/// in canonical order regardless of scheduling.
pub fn generate(
    p: &MaterialParameters,
    sn: &SnTable,
    settings: &SimulationSettings,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let grid = enumerate_grid();
    let samples = grid
        .par_iter()
        .map(|g| {
            run_two_stage(p, g.s1_max, g.s2_max(), S_MIN, g.eta_cons, sn, settings)
                .map(|r| Sample {
                    s1_max: g.s1_max,
                    delta_s_max: g.delta_s_max,
                    eta_cons: g.eta_cons,
                    sum_eta: r.sum_eta,
                })
                .map_err(|source| DatasetError::Simulation {
                    s1_max: g.s1_max,
                    delta_s_max: g.delta_s_max,
                    eta_cons: g.eta_cons,
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = samples.len();
    Ok(Dataset {
        samples,
        split_tags: vec![Split::Unassigned; n],
        meta: DatasetMeta {
            seed,
            params: *p,
            settings: *settings,
            sn_table: sn.clone(),
            split_fractions: None,
            small_subset: false,
            tool_version: crate::TOOL_VERSION.to_string(),
        },
    })
}

/// Largest-remainder apportionment of `n` items; ties in the fractional part
/// go to the later category.
pub fn apportion(n: usize, fractions: &[f64]) -> Result<Vec<usize>, DatasetError> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty()
        || fractions.iter().any(|f| !f.is_finite() || *f < 0.0)
        || (total - 1.0).abs() > 1e-9
    {
        return Err(DatasetError::InvalidFractions(fractions.to_vec()));
    }
    let quotas: Vec<f64> = fractions
        .iter()
        .map(|f| crate::util::snap(f * n as f64))
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

impl Dataset {
    /// Seeded shuffle, then consecutive train/validation/test partitions.
    pub fn split(&self, fractions: [f64; 3], seed: u64) -> Result<Dataset, DatasetError> {
        let counts = apportion(self.samples.len(), &fractions)?;
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut stream_rng(seed, "split"));
        let mut out = self.clone();
        let tags = [Split::Train, Split::Val, Split::Test];
        let mut pos = 0;
        for (c, tag) in counts.iter().zip(tags) {
            for &i in &idx[pos..pos + c] {
                out.split_tags[i] = tag;
            }
            pos += c;
        }
        out.meta.split_fractions = Some(fractions);
        out.meta.small_subset = false;
        Ok(out)
    }

    /// Train on the 60 samples with `s1_max` in {0.70, 0.80} and `eta_cons` in
    /// {0, 0.35, 0.55, 0.75, 0.95, 1}; test on the remaining 570.
    pub fn small_subset(&self) -> Result<Dataset, DatasetError> {
        self.check_canonical()?;
        let mut out = self.clone();
        for (s, tag) in out.samples.iter().zip(out.split_tags.iter_mut()) {
            *tag = if is_small_subset_point(&s.point()) {
                Split::Train
            } else {
                Split::Test
            };
        }
        out.meta.split_fractions = None;
        out.meta.small_subset = true;
        Ok(out)
    }

    fn check_canonical(&self) -> Result<(), DatasetError> {
        let grid = enumerate_grid();
        if grid.len() != self.samples.len() {
            return Err(DatasetError::MissingGridEntry(format!(
                "expected {} samples, found {}",
                grid.len(),
                self.samples.len()
            )));
        }
        for (i, (g, s)) in grid.iter().zip(&self.samples).enumerate() {
            if !(same_ratio(g.s1_max, s.s1_max)
                && same_ratio(g.delta_s_max, s.delta_s_max)
                && same_ratio(g.eta_cons, s.eta_cons))
            {
                return Err(DatasetError::MissingGridEntry(format!(
                    "sample {i} is {:?}, expected {:?}",
                    s.features(),
                    g.features()
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, split: Split) -> Vec<Sample> {
        self.samples
            .iter()
            .zip(&self.split_tags)
            .filter(|(_, t)| **t == split)
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_tags.iter().filter(|t| **t == split).count()
    }

    /// Indices of interior samples whose label contradicts the sequence effect
    /// (`sum_eta < 1` for high-to-low, `> 1` for low-to-high).
    pub fn sequence_violations(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_interior())
            .filter(|(_, s)| {
                let d = s.delta_s_max;
                !((d > 0.0 && s.sum_eta < 1.0) || (d < 0.0 && s.sum_eta > 1.0))
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn label_range(&self) -> (f64, f64) {
        self.samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.sum_eta), hi.max(s.sum_eta))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s1_max,delta_s_max,eta_cons,sum_eta,split\n");
        for (s, t) in self.samples.iter().zip(&self.split_tags) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.s1_max, s.delta_s_max, s.eta_cons, s.sum_eta, t
            ));
        }
        out
    }

    pub fn meta_json(&self) -> String {
        serde_json::to_string_pretty(&self.meta).expect("metadata serializes") + "\n"
    }

    pub fn from_files(csv: &str, meta_json: &str) -> Result<Dataset, DatasetError> {
        let meta: DatasetMeta = serde_json::from_str(meta_json).map_err(|e| DatasetError::Parse {
            line: 0,
            reason: format!("metadata: {e}"),
        })?;
        let (samples, split_tags) = parse_csv(csv)?;
        Ok(Dataset {
            samples,
            split_tags,
            meta,
        })
    }
}

/// Samples and split tags from the dataset CSV.
pub fn parse_csv(text: &str) -> Result<(Vec<Sample>, Vec<Split>), DatasetError> {
    // leading `#` lines are comments
    let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.starts_with('#'));
    match lines.next() {
        Some((_, "s1_max,delta_s_max,eta_cons,sum_eta,split")) => {}
        other => {
            return Err(DatasetError::Parse {
                line: other.map_or(1, |(i, _)| i + 1),
                reason: "missing or unexpected header".into(),
            })
        }
    }
    let mut samples = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| DatasetError::Parse { line: i + 1, reason };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(err(format!("expected 5 columns, found {}", cols.len())));
        }
        let num = |k: usize| {
            cols[k]
                .parse::<f64>()
                .map_err(|e| err(format!("column {}: {e}", k + 1)))
        };
        samples.push(Sample {
            s1_max: num(0)?,
            delta_s_max: num(1)?,
            eta_cons: num(2)?,
            sum_eta: num(3)?,
        });
        tags.push(cols[4].parse().map_err(err)?);
    }
    Ok((samples, tags))
}

pub fn is_small_subset_point(g: &GridPoint) -> bool {
    const ETAS: [f64; 6] = [0.0, 0.35, 0.55, 0.75, 0.95, 1.0];
    (same_ratio(g.s1_max, 0.70) || same_ratio(g.s1_max, 0.80))
        && ETAS.iter().any(|&e| same_ratio(e, g.eta_cons))
}
