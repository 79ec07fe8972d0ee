//! Run configuration: flat `key = value` text grouped under `[section]`
//! headers. Every key has a default; unknown keys are rejected.
//!
//! ```text
//! [material]
//! fc = 50
//! [training]
//! max_epochs = 20000
//! batch_size = full
//! ```

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::material::{KappaGrouping, MaterialParameters, ThresholdSign};
use crate::nn::{LossWeights, TrainingConfig};
use crate::simulator::SimulationSettings;
use crate::util::fingerprint;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "FATIGUE_CONFIG";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub material: MaterialParameters,
    pub settings: SimulationSettings,
    pub s_min: f64,
    /// Train/val/test fractions of the full dataset.
    pub split: [f64; 3],
    /// Use the 60-sample training subset instead of the random split.
    pub small_subset: bool,
    pub training: TrainingConfig,
    pub loss: LossWeights,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            material: MaterialParameters::default(),
            settings: SimulationSettings::default(),
            s_min: 0.2,
            split: [0.70, 0.15, 0.15],
            small_subset: false,
            training: TrainingConfig::default(),
            loss: LossWeights::default(),
            seed: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("`{v}`: {e}"),
    })
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "material.lambda",
        "material.mu",
        "material.g",
        "material.k",
        "material.c0",
        "material.c1",
        "material.alpha",
        "material.beta",
        "material.n",
        "material.fc",
        "material.threshold",
        "material.kappa_grouping",
        "simulation.substeps_per_branch",
        "simulation.omega_crit",
        "simulation.max_cycles",
        "simulation.s_min",
        "dataset.train_fraction",
        "dataset.val_fraction",
        "dataset.test_fraction",
        "dataset.small_subset",
        "training.learning_rate",
        "training.batch_size",
        "training.max_epochs",
        "training.patience",
        "training.loss_tolerance",
        "training.min_delta",
        "loss.w_const",
        "loss.w_bound",
        "loss.w_spars",
        "run.seed",
        "run.out_dir",
    ];

    /// Set one dotted key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let v = v.trim();
        let m = &mut self.material;
        match key {
            "material.lambda" => m.lambda = num(key, v)?,
            "material.mu" => m.mu = num(key, v)?,
            "material.g" => m.g = num(key, v)?,
            "material.k" => m.k = num(key, v)?,
            "material.c0" => m.c0 = num(key, v)?,
            "material.c1" => m.c1 = num(key, v)?,
            "material.alpha" => m.alpha = num(key, v)?,
            "material.beta" => m.beta = num(key, v)?,
            "material.n" => m.n = num(key, v)?,
            "material.fc" => m.fc = num(key, v)?,
            "material.threshold" => {
                m.threshold = match v {
                    "softening" => ThresholdSign::Softening,
                    "hardening" => ThresholdSign::Hardening,
                    _ => return Err(invalid(key, "expected softening|hardening")),
                }
            }
            "material.kappa_grouping" => {
                m.kappa_grouping = match v {
                    "factored" => KappaGrouping::Factored,
                    "literal" => KappaGrouping::Literal,
                    _ => return Err(invalid(key, "expected factored|literal")),
                }
            }
            "simulation.substeps_per_branch" => self.settings.disc.substeps_per_branch = num(key, v)?,
            "simulation.omega_crit" => self.settings.omega_crit = num(key, v)?,
            "simulation.max_cycles" => self.settings.max_cycles = num::<f64>(key, v).and_then(|x| {
                if x >= 1.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
                    Ok(x as u64)
                } else {
                    Err(invalid(key, "expected a positive integer"))
                }
            })?,
            "simulation.s_min" => self.s_min = num(key, v)?,
            "dataset.train_fraction" => self.split[0] = num(key, v)?,
            "dataset.val_fraction" => self.split[1] = num(key, v)?,
            "dataset.test_fraction" => self.split[2] = num(key, v)?,
            "dataset.small_subset" => self.small_subset = num(key, v)?,
            "training.learning_rate" => self.training.learning_rate = num(key, v)?,
            "training.batch_size" => {
                self.training.batch_size = if v == "full" { None } else { Some(num(key, v)?) }
            }
            "training.max_epochs" => self.training.max_epochs = num(key, v)?,
            "training.patience" => self.training.patience = num(key, v)?,
            "training.loss_tolerance" => self.training.loss_tolerance = num(key, v)?,
            "training.min_delta" => self.training.min_delta = num(key, v)?,
            "loss.w_const" => self.loss.w_const = num(key, v)?,
            "loss.w_bound" => self.loss.w_bound = num(key, v)?,
            "loss.w_spars" => self.loss.w_spars = num(key, v)?,
            "run.seed" => self.seed = num(key, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Apply a config text on top of the current values.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: i + 1,
                    reason: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            if section.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: "key outside of a [section]".into(),
                });
            }
            self.set(&format!("{section}.{}", k.trim()), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.merge_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Apply `key=value` overrides (the `--set` form).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                reason: format!("override `{o}` is not key=value"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.material
            .validate()
            .map_err(|e| invalid("material", &e.to_string()))?;
        if self.settings.disc.substeps_per_branch == 0 {
            return Err(invalid("simulation.substeps_per_branch", "must be >= 1"));
        }
        if self.settings.omega_crit.is_nan() || self.settings.omega_crit <= 0.0 {
            return Err(invalid("simulation.omega_crit", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.s_min) {
            return Err(invalid("simulation.s_min", "must be in [0, 1)"));
        }
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| f.is_nan() || *f < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(invalid("dataset", "split fractions must be >= 0 and sum to 1"));
        }
        self.training.validate().map_err(|r| invalid("training", &r))?;
        self.loss.validate().map_err(|r| invalid("loss", &r))?;
        Ok(())
    }

    /// Canonical text form; parsing it back gives the same config.
    pub fn to_text(&self) -> String {
        let m = &self.material;
        let t = &self.training;
        let threshold = match m.threshold {
            ThresholdSign::Softening => "softening",
            ThresholdSign::Hardening => "hardening",
        };
        let grouping = match m.kappa_grouping {
            KappaGrouping::Factored => "factored",
            KappaGrouping::Literal => "literal",
        };
        let batch = t.batch_size.map_or("full".to_string(), |b| b.to_string());
        format!(
            "[material]\nlambda = {}\nmu = {}\ng = {}\nk = {}\nc0 = {}\nc1 = {}\nalpha = {}\nbeta = {}\nn = {}\nfc = {}\nthreshold = {threshold}\nkappa_grouping = {grouping}\n\n\
             [simulation]\nsubsteps_per_branch = {}\nomega_crit = {}\nmax_cycles = {}\ns_min = {}\n\n\
             [dataset]\ntrain_fraction = {}\nval_fraction = {}\ntest_fraction = {}\nsmall_subset = {}\n\n\
             [training]\nlearning_rate = {}\nbatch_size = {batch}\nmax_epochs = {}\npatience = {}\nloss_tolerance = {}\nmin_delta = {}\n\n\
             [loss]\nw_const = {}\nw_bound = {}\nw_spars = {}\n\n\
             [run]\nseed = {}\nout_dir = {}\n",
            m.lambda, m.mu, m.g, m.k, m.c0, m.c1, m.alpha, m.beta, m.n, m.fc,
            self.settings.disc.substeps_per_branch, self.settings.omega_crit, self.settings.max_cycles, self.s_min,
            self.split[0], self.split[1], self.split[2], self.small_subset,
            t.learning_rate, t.max_epochs, t.patience, t.loss_tolerance, t.min_delta,
            self.loss.w_const, self.loss.w_bound, self.loss.w_spars,
            self.seed, self.out_dir.display(),
        )
    }

    /// Training settings with the run seed folded in.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training
        }
    }

    /// Hash of everything that influences results (the output directory
    /// is excluded).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        fingerprint(&c)
    }
}

fn invalid(key: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_settable_and_in_the_canonical_text() {
        let text = RunConfig::default().to_text();
        for key in RunConfig::KEYS {
            let (section, name) = key.split_once('.').unwrap();
            assert!(text.contains(&format!("[{section}]")), "{key}");
            assert!(text.contains(&format!("\n{name} = ")), "{key}");
        }
    }

    #[test]
    fn sections_and_comments() {
        let c = RunConfig::from_text(
            "# demo\n[material]\nfc = 60 # MPa\nthreshold = hardening\n[training]\nbatch_size = 32\n[run]\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(c.material.fc, 60.0);
        assert_eq!(c.material.threshold, ThresholdSign::Hardening);
        assert_eq!(c.training.batch_size, Some(32));
        assert_eq!(c.training_config().seed, 9);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert_eq!(
            RunConfig::from_text("[material]\nfcc = 3\n"),
            Err(ConfigError::UnknownKey("material.fcc".into()))
        );
        assert!(matches!(RunConfig::from_text("fc = 3\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::from_text("[material\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(
            RunConfig::from_text("[material]\nfc = abc\n"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(RunConfig::from_text("[material]\nfc = -1\n").is_err());
        assert!(RunConfig::from_text("[dataset]\ntrain_fraction = 0.9\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["training.max_epochs=7".into(), "simulation.max_cycles = 1e5".into()])
            .unwrap();
        assert_eq!(c.training.max_epochs, 7);
        assert_eq!(c.settings.max_cycles, 100_000);
        assert!(c.apply_overrides(&["nonsense".into()]).is_err());
        assert!(c.apply_overrides(&["x.y=1".into()]).is_err());
    }

    #[test]
    fn fingerprint_ignores_out_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig { out_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.material.fc = 51.0;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
