//! Cycle-by-cycle fatigue driver.
//!
//! Every run starts from the pristine state, ramps once from zero to the lower
//! load and then alternates up and down branches. Damage only grows on up
//! branches, so failure is always detected there and the failing cycle is not
//! counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::{self, MaterialError, MaterialParameters, Tangent, UniaxialState};
use crate::protocol::{cycles_for_fraction, CycleDiscretization, Duration, LoadScenario, ProtocolError};
use crate::util::{fingerprint, same_ratio, snap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("runout at s_max = {s_max} (no failure within {max_cycles} cycles)")]
    Runout { s_max: f64, max_cycles: u64 },
    #[error("S-N table is not strictly decreasing: N_f({lo}) = {n_lo} <= N_f({hi}) = {n_hi}")]
    NonMonotone { lo: f64, n_lo: u64, hi: f64, n_hi: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Numerical settings shared by all runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub disc: CycleDiscretization,
    /// Damage level treated as failure.
    pub omega_crit: f64,
    /// Cycle cap for blocks that run to failure.
    pub max_cycles: u64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            disc: CycleDiscretization::default(),
            omega_crit: 10.0,
            max_cycles: 10_000_000,
        }
    }
}

/// What ended a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    SingularDenominator,
    NonPositiveKappa,
    CriticalDamage,
}

impl From<Tangent> for FailureCause {
    fn from(t: Tangent) -> Self {
        match t {
            Tangent::Denominator => FailureCause::SingularDenominator,
            Tangent::Kappa => FailureCause::NonPositiveKappa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LifeOutcome {
    Failed { cycles: u64, cause: FailureCause },
    Runout,
}

impl LifeOutcome {
    pub fn cycles(&self) -> Option<u64> {
        match self {
            LifeOutcome::Failed { cycles, .. } => Some(*cycles),
            LifeOutcome::Runout => None,
        }
    }
}

enum CycleEnd {
    Completed { unchanged: bool },
    Failed(FailureCause),
}

/// One specimen under load.
struct Specimen<'a> {
    p: &'a MaterialParameters,
    settings: &'a SimulationSettings,
    state: UniaxialState,
    eps_top: f64,
}

impl<'a> Specimen<'a> {
    fn new(
        p: &'a MaterialParameters,
        settings: &'a SimulationSettings,
        s_lo: f64,
    ) -> Result<Self, SimError> {
        let m = settings.disc.substeps_per_branch;
        let state = material::step(p, &UniaxialState::pristine(), s_lo, m)?;
        Ok(Self {
            p,
            settings,
            state,
            eps_top: state.eps1,
        })
    }

    fn cycle(&mut self, s_lo: f64, s_hi: f64) -> Result<CycleEnd, SimError> {
        let m = self.settings.disc.substeps_per_branch;
        let before = self.state.omega2;
        let top = match material::step(self.p, &self.state, s_hi, m) {
            Ok(s) => s,
            Err(MaterialError::SingularTangent { which, .. }) => {
                return Ok(CycleEnd::Failed(which.into()))
            }
            Err(e) => return Err(e.into()),
        };
        if top.omega2 >= self.settings.omega_crit {
            return Ok(CycleEnd::Failed(FailureCause::CriticalDamage));
        }
        self.eps_top = top.eps1;
        self.state = material::step(self.p, &top, s_lo, m)?;
        self.state.cycles_completed += 1;
        Ok(CycleEnd::Completed {
            unchanged: self.state.omega2 == before,
        })
    }
}

/// Number of completed cycles before failure at constant amplitude.
pub fn run_constant_amplitude(
    p: &MaterialParameters,
    s_max: f64,
    s_min: f64,
    settings: &SimulationSettings,
) -> Result<LifeOutcome, SimError> {
    if !(0.0 <= s_min && s_min <= s_max && s_max <= 1.0) {
        return Err(SimError::InvalidInput(format!(
            "need 0 <= s_min <= s_max <= 1, got s_min = {s_min}, s_max = {s_max}"
        )));
    }
    let s_lo = p.stress(s_min);
    let s_hi = p.stress(s_max);
    let mut spec = Specimen::new(p, settings, s_lo)?;
    run_to_failure(&mut spec, s_lo, s_hi, settings.max_cycles)
}

fn run_to_failure(
    spec: &mut Specimen,
    s_lo: f64,
    s_hi: f64,
    max_cycles: u64,
) -> Result<LifeOutcome, SimError> {
    let mut n = 0;
    while n < max_cycles {
        match spec.cycle(s_lo, s_hi)? {
            CycleEnd::Failed(cause) => return Ok(LifeOutcome::Failed { cycles: n, cause }),
            // a cycle that leaves the damage untouched repeats forever
            CycleEnd::Completed { unchanged: true } => return Ok(LifeOutcome::Runout),
            CycleEnd::Completed { unchanged: false } => n += 1,
        }
    }
    Ok(LifeOutcome::Runout)
}

/// Constant-amplitude outcome for each level, in the order given.
pub fn sn_curve(
    p: &MaterialParameters,
    levels: &[f64],
    s_min: f64,
    settings: &SimulationSettings,
) -> Result<Vec<(f64, LifeOutcome)>, SimError> {
    levels
        .par_iter()
        .map(|&s| run_constant_amplitude(p, s, s_min, settings).map(|o| (s, o)))
        .collect()
}

/// Constant-amplitude lives indexed by upper load ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnTable {
    pub s_min: f64,
    /// `(s_max, N_f)` sorted by ascending `s_max`.
    pub entries: Vec<(f64, u64)>,
    /// Fingerprint of the parameters and settings that produced the table.
    pub params_fingerprint: String,
}

impl SnTable {
    /// Build a table, sorting entries and checking that lives strictly
    /// decrease with the load level.
    pub fn new(
        s_min: f64,
        mut entries: Vec<(f64, u64)>,
        params_fingerprint: String,
    ) -> Result<Self, SimError> {
        if entries.is_empty() {
            return Err(SimError::InvalidInput("empty S-N table".into()));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in entries.windows(2) {
            if same_ratio(w[0].0, w[1].0) {
                return Err(SimError::InvalidInput(format!("duplicate level {}", w[0].0)));
            }
            if w[0].1 <= w[1].1 {
                return Err(SimError::NonMonotone {
                    lo: w[0].0,
                    n_lo: w[0].1,
                    hi: w[1].0,
                    n_hi: w[1].1,
                });
            }
        }
        Ok(Self {
            s_min,
            entries,
            params_fingerprint,
        })
    }

    pub fn get(&self, s_max: f64) -> Option<u64> {
        self.entries
            .iter()
            .find(|(s, _)| same_ratio(*s, s_max))
            .map(|e| e.1)
    }

    pub fn levels(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s_max,n_f\n");
        for (s, n) in &self.entries {
            out.push_str(&format!("{s},{n}\n"));
        }
        out
    }
}

/// Fingerprint of everything that determines simulator output.
pub fn settings_fingerprint(p: &MaterialParameters, settings: &SimulationSettings, s_min: f64) -> String {
    fingerprint(&(p, settings, s_min))
}

/// Run every level in parallel and assemble a validated table.
pub fn build_sn_table(
    p: &MaterialParameters,
    levels: &[f64],
    s_min: f64,
    settings: &SimulationSettings,
) -> Result<SnTable, SimError> {
    if levels.is_empty() {
        return Err(SimError::InvalidInput("no load levels given".into()));
    }
    let mut lv: Vec<f64> = levels.iter().map(|&s| snap(s)).collect();
    lv.sort_by(f64::total_cmp);
    lv.dedup();
    let entries = sn_curve(p, &lv, s_min, settings)?
        .into_iter()
        .map(|(s, o)| match o {
            LifeOutcome::Failed { cycles, .. } => Ok((s, cycles)),
            LifeOutcome::Runout => Err(SimError::Runout {
                s_max: s,
                max_cycles: settings.max_cycles,
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    SnTable::new(s_min, entries, settings_fingerprint(p, settings, s_min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub eta_cons: f64,
    pub eta_rem: f64,
    pub sum_eta: f64,
    /// Cycles applied at the first level.
    pub n1: u64,
    /// Cycles survived at the second level.
    pub n2: u64,
}

/// Consume `eta_cons` of the first level's life, then run the second level to
/// failure. `eta_cons` is reported as given, not as `n1 / N1_f`.
pub fn run_two_stage(
    p: &MaterialParameters,
    s1_max: f64,
    s2_max: f64,
    s_min: f64,
    eta_cons: f64,
    sn: &SnTable,
    settings: &SimulationSettings,
) -> Result<TwoStageResult, SimError> {
    if !(0.0..=1.0).contains(&eta_cons) {
        return Err(SimError::InvalidInput(format!("eta_cons = {eta_cons} outside [0, 1]")));
    }
    let missing = |s: f64| ProtocolError::MissingSnEntry { s_max: s, s_min };
    let n1f = sn.get(s1_max).ok_or_else(|| missing(s1_max))?;
    let n2f = sn.get(s2_max).ok_or_else(|| missing(s2_max))?;
    if eta_cons >= 1.0 {
        return Ok(TwoStageResult {
            eta_cons,
            eta_rem: 0.0,
            sum_eta: 1.0,
            n1: n1f,
            n2: 0,
        });
    }
    let n1 = cycles_for_fraction(eta_cons, n1f);
    let scenario = LoadScenario::new(
        s_min,
        p.fc,
        vec![
            crate::protocol::LoadBlock::cycles(s1_max, n1),
            crate::protocol::LoadBlock::to_failure(s2_max),
        ],
    )?;
    let r = run_scenario_with(p, &scenario, settings, false)?;
    if r.runout {
        return Err(SimError::Runout {
            s_max: s2_max,
            max_cycles: settings.max_cycles,
        });
    }
    if r.failure_block != Some(1) {
        return Err(SimError::InvalidInput(format!(
            "two-stage run failed during the first level ({s1_max} -> {s2_max}, eta = {eta_cons})"
        )));
    }
    let n2 = r.cycles_per_block[1];
    let eta_rem = n2 as f64 / n2f as f64;
    Ok(TwoStageResult {
        eta_cons,
        eta_rem,
        sum_eta: eta_cons + eta_rem,
        n1,
        n2,
    })
}

/// Axial strain at the upper and lower reversal of one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreepPoint {
    pub cycle: u64,
    pub eps_top: f64,
    pub eps_bot: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub failed: bool,
    pub runout: bool,
    pub failure_block: Option<usize>,
    pub failure_cause: Option<FailureCause>,
    /// Completed cycles in each block; blocks after a failure stay at zero.
    pub cycles_per_block: Vec<u64>,
    pub creep_curve: Vec<CreepPoint>,
    /// Lateral damage after each completed cycle.
    pub damage_history: Vec<f64>,
}

impl ScenarioResult {
    pub fn total_cycles(&self) -> u64 {
        self.cycles_per_block.iter().sum()
    }

    pub fn creep_csv(&self) -> String {
        let mut out = String::from("cycle,eps_top,eps_bot,omega2\n");
        for (c, w) in self.creep_curve.iter().zip(&self.damage_history) {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", c.cycle, c.eps_top, c.eps_bot, w));
        }
        out
    }
}

/// Run a resolved scenario with full history capture. Stresses use the
/// scenario's own compressive strength.
pub fn run_scenario(
    p: &MaterialParameters,
    scenario: &LoadScenario,
    settings: &SimulationSettings,
) -> Result<ScenarioResult, SimError> {
    run_scenario_with(p, scenario, settings, true)
}

/// As [`run_scenario`], optionally skipping the per-cycle history.
pub fn run_scenario_with(
    p: &MaterialParameters,
    scenario: &LoadScenario,
    settings: &SimulationSettings,
    record: bool,
) -> Result<ScenarioResult, SimError> {
    scenario.validate()?;
    if let Some(i) = scenario
        .blocks
        .iter()
        .position(|b| matches!(b.duration, Duration::ConsumedFraction(_)))
    {
        return Err(ProtocolError::Unresolved(i).into());
    }
    let mut pp = *p;
    pp.fc = scenario.fc;
    let s_lo = scenario.s_min * scenario.fc;
    let mut spec = Specimen::new(&pp, settings, s_lo)?;
    let mut res = ScenarioResult {
        cycles_per_block: vec![0; scenario.blocks.len()],
        ..Default::default()
    };
    let push = |res: &mut ScenarioResult, spec: &Specimen| {
        if record {
            res.creep_curve.push(CreepPoint {
                cycle: spec.state.cycles_completed,
                eps_top: spec.eps_top,
                eps_bot: spec.state.eps1,
            });
            res.damage_history.push(spec.state.omega2);
        }
    };
    for (bi, block) in scenario.blocks.iter().enumerate() {
        let s_hi = block.s_max * scenario.fc;
        let (limit, to_failure) = match block.duration {
            Duration::Cycles(n) => (n, false),
            Duration::ToFailure => (settings.max_cycles, true),
            Duration::ConsumedFraction(_) => unreachable!(),
        };
        let mut n = 0;
        while n < limit {
            match spec.cycle(s_lo, s_hi)? {
                CycleEnd::Failed(cause) => {
                    res.failed = true;
                    res.failure_block = Some(bi);
                    res.failure_cause = Some(cause);
                    res.cycles_per_block[bi] = n;
                    return Ok(res);
                }
                CycleEnd::Completed { unchanged } => {
                    n += 1;
                    push(&mut res, &spec);
                    if unchanged {
                        if to_failure {
                            break;
                        }
                        // the remaining cycles of this block are exact repeats
                        while n < limit {
                            n += 1;
                            spec.state.cycles_completed += 1;
                            push(&mut res, &spec);
                        }
                    }
                }
            }
        }
        res.cycles_per_block[bi] = n;
        if to_failure {
            res.runout = true;
        }
    }
    Ok(res)
}

/// The six upper load levels of the two-stage grid.
pub fn grid_levels() -> Vec<f64> {
    (0..6).map(|i| (65 + 5 * i) as f64 / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::LoadBlock;

    fn quick() -> SimulationSettings {
        SimulationSettings {
            disc: CycleDiscretization {
                substeps_per_branch: 10,
            },
            ..Default::default()
        }
    }

    #[test]
    fn equal_levels_run_out() {
        let p = MaterialParameters::default();
        let o = run_constant_amplitude(&p, 0.2, 0.2, &quick()).unwrap();
        assert_eq!(o, LifeOutcome::Runout);
    }

    #[test]
    fn cycle_cap_gives_runout() {
        let p = MaterialParameters::default();
        let s = SimulationSettings {
            max_cycles: 5,
            ..quick()
        };
        assert_eq!(run_constant_amplitude(&p, 0.9, 0.2, &s).unwrap(), LifeOutcome::Runout);
    }

    #[test]
    fn invalid_levels() {
        let p = MaterialParameters::default();
        assert!(run_constant_amplitude(&p, 0.5, 0.6, &quick()).is_err());
        assert!(build_sn_table(&p, &[], 0.2, &quick()).is_err());
    }

    #[test]
    fn sn_table_checks_order() {
        assert!(SnTable::new(0.2, vec![(0.7, 10), (0.8, 20)], String::new()).is_err());
        assert!(SnTable::new(0.2, vec![(0.7, 10), (0.7, 5)], String::new()).is_err());
        let t = SnTable::new(0.2, vec![(0.8, 10), (0.7, 20)], String::new()).unwrap();
        assert_eq!(t.levels(), vec![0.7, 0.8]);
        assert_eq!(t.get(0.6 + 0.1), Some(20));
        assert_eq!(t.get(0.9), None);
        assert_eq!(t.to_csv(), "s_max,n_f\n0.7,20\n0.8,10\n");
    }

    #[test]
    fn high_level_life_and_scenario_consistency() {
        let p = MaterialParameters::default();
        let s = quick();
        let n = run_constant_amplitude(&p, 0.9, 0.2, &s).unwrap().cycles().unwrap();
        assert!(n > 0);
        let sc = LoadScenario::new(0.2, p.fc, vec![LoadBlock::to_failure(0.9)]).unwrap();
        let r = run_scenario(&p, &sc, &s).unwrap();
        assert!(r.failed);
        assert_eq!(r.failure_block, Some(0));
        assert_eq!(r.cycles_per_block, vec![n]);
        assert_eq!(r.damage_history.len() as u64, n);
        assert!(r.damage_history.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.creep_curve.iter().all(|c| c.eps_top >= c.eps_bot));
    }

    #[test]
    fn zero_block_scenario_rejected() {
        let p = MaterialParameters::default();
        let sc = LoadScenario {
            s_min: 0.2,
            fc: 50.0,
            blocks: vec![],
        };
        assert!(matches!(
            run_scenario(&p, &sc, &quick()),
            Err(SimError::Protocol(ProtocolError::InvalidScenario(_)))
        ));
    }

    #[test]
    fn two_stage_normalisation() {
        let p = MaterialParameters::default();
        let s = quick();
        let sn = build_sn_table(&p, &[0.85, 0.9], 0.2, &s).unwrap();
        let a = run_two_stage(&p, 0.9, 0.85, 0.2, 0.0, &sn, &s).unwrap();
        assert_eq!(a.sum_eta, 1.0);
        let b = run_two_stage(&p, 0.9, 0.85, 0.2, 1.0, &sn, &s).unwrap();
        assert_eq!(b.sum_eta, 1.0);
        let hl = run_two_stage(&p, 0.9, 0.85, 0.2, 0.5, &sn, &s).unwrap();
        let lh = run_two_stage(&p, 0.85, 0.9, 0.2, 0.5, &sn, &s).unwrap();
        assert!(hl.sum_eta < 1.0, "{hl:?}");
        assert!(lh.sum_eta > 1.0, "{lh:?}");
        assert_eq!(hl.sum_eta, hl.eta_cons + hl.eta_rem);
    }

    #[test]
    fn creep_csv_layout() {
        let r = ScenarioResult {
            creep_curve: vec![CreepPoint {
                cycle: 1,
                eps_top: 1e-3,
                eps_bot: 2e-4,
            }],
            damage_history: vec![0.5],
            ..Default::default()
        };
        assert_eq!(r.creep_csv(), "cycle,eps_top,eps_bot,omega2\n1,1e-3,2e-4,5e-1\n");
    }
}
