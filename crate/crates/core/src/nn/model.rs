//! Feature scaling, the surrogate model and its text file format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::network::{Activation, Network, NetworkConfig};
use super::NnError;

/// Fixed per-feature min-max ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Scaler {
    fn default() -> Self {
        Self {
            min: [0.60, -0.30, 0.0],
            max: [0.95, 0.30, 1.0],
        }
    }
}

impl Scaler {
    pub fn validate(&self) -> Result<(), String> {
        for i in 0..3 {
            if !(self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i]) {
                return Err(format!(
                    "feature {i}: need min < max, got [{}, {}]",
                    self.min[i], self.max[i]
                ));
            }
        }
        Ok(())
    }

    /// Affine map to `[0, 1]`; values outside the range extrapolate.
    pub fn scale(&self, x: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = (x[i] - self.min[i]) / (self.max[i] - self.min[i]);
        }
        if out.iter().any(|v| !(0.0..=1.0).contains(v)) {
            log::debug!("feature vector {x:?} outside the scaler range");
        }
        out
    }

    pub fn unscale(&self, u: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.min[i] + u[i] * (self.max[i] - self.min[i]);
        }
        out
    }
}

/// Trained network plus everything needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub net: Network,
    pub scaler: Scaler,
    pub loss_weights: LossWeights,
}

const MAGIC: &str = "fatigue-surrogate";
pub const FORMAT_VERSION: u32 = 1;

impl SurrogateModel {
    pub fn new(net: Network, scaler: Scaler, loss_weights: LossWeights) -> Self {
        Self {
            net,
            scaler,
            loss_weights,
        }
    }

    /// Unclamped network output.
    pub fn raw(&self, s1_max: f64, delta_s_max: f64, eta_cons: f64) -> f64 {
        self.net
            .forward(&self.scaler.scale([s1_max, delta_s_max, eta_cons]))
    }

    /// Accumulated life `sum_eta`, never below the consumed fraction.
    pub fn predict(&self, s1_max: f64, delta_s_max: f64, eta_cons: f64) -> f64 {
        self.raw(s1_max, delta_s_max, eta_cons).max(eta_cons)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self.net.layer_sizes.iter().map(|n| n.to_string()).collect();
        let Activation::Elu { zeta } = self.net.activation;
        let w = &self.loss_weights;
        writeln!(s, "magic {MAGIC}").unwrap();
        writeln!(s, "version {FORMAT_VERSION}").unwrap();
        writeln!(s, "layers {}", sizes.join(" ")).unwrap();
        writeln!(s, "activation elu {zeta:e}").unwrap();
        writeln!(
            s,
            "scaler {:e} {:e} {:e} {:e} {:e} {:e}",
            self.scaler.min[0],
            self.scaler.max[0],
            self.scaler.min[1],
            self.scaler.max[1],
            self.scaler.min[2],
            self.scaler.max[2]
        )
        .unwrap();
        writeln!(
            s,
            "loss_weights {:e} {:e} {:e}",
            w.w_const, w.w_bound, w.w_spars
        )
        .unwrap();
        for l in 0..self.net.n_layers() {
            let (wm, b) = self.net.layer(l);
            writeln!(s, "layer {l} {} {}", self.net.layer_sizes[l + 1], self.net.layer_sizes[l]).unwrap();
            writeln!(s, "w {}", join(wm)).unwrap();
            writeln!(s, "b {}", join(b)).unwrap();
        }
        writeln!(s, "end").unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let corrupt = |m: &str| NnError::CorruptFile(m.to_string());
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut field = |key: &str| -> Result<Vec<&str>, NnError> {
            let line = lines
                .next()
                .ok_or_else(|| NnError::CorruptFile(format!("missing `{key}` line")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(NnError::CorruptFile(format!("expected `{key}`, found `{line}`")));
            }
            Ok(it.collect())
        };
        if field("magic")? != [MAGIC] {
            return Err(corrupt("not a surrogate model file"));
        }
        let version: u32 = field("version")?
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad version"))?;
        if version != FORMAT_VERSION {
            return Err(NnError::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let layer_sizes = field("layers")?
            .iter()
            .map(|v| v.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| corrupt("bad layer sizes"))?;
        let cfg = NetworkConfig { layer_sizes };
        cfg.validate().map_err(NnError::CorruptFile)?;
        let act = field("activation")?;
        let activation = match act.as_slice() {
            ["elu", z] => Activation::Elu {
                zeta: z.parse().map_err(|_| corrupt("bad activation constant"))?,
            },
            _ => return Err(corrupt("unknown activation")),
        };
        let sc = floats(&field("scaler")?, 6)?;
        let scaler = Scaler {
            min: [sc[0], sc[2], sc[4]],
            max: [sc[1], sc[3], sc[5]],
        };
        scaler.validate().map_err(NnError::CorruptFile)?;
        let lw = floats(&field("loss_weights")?, 3)?;
        let loss_weights = LossWeights {
            w_const: lw[0],
            w_bound: lw[1],
            w_spars: lw[2],
        };
        let mut params = Vec::with_capacity(cfg.n_params());
        for l in 0..cfg.layer_sizes.len() - 1 {
            let (n_in, n_out) = (cfg.layer_sizes[l], cfg.layer_sizes[l + 1]);
            let head = field("layer")?;
            if head != [l.to_string(), n_out.to_string(), n_in.to_string()] {
                return Err(corrupt(&format!("bad header for layer {l}")));
            }
            params.extend(floats(&field("w")?, n_in * n_out)?);
            params.extend(floats(&field("b")?, n_out)?);
        }
        field("end")?;
        let net = Network::from_params(&cfg, activation, params).map_err(NnError::CorruptFile)?;
        Ok(Self {
            net,
            scaler,
            loss_weights,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_text()).map_err(|e| NnError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Io(e.to_string()))?;
        Self::from_text(&text)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn floats(tokens: &[&str], n: usize) -> Result<Vec<f64>, NnError> {
    if tokens.len() != n {
        return Err(NnError::CorruptFile(format!(
            "expected {n} values, found {}",
            tokens.len()
        )));
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| NnError::CorruptFile(format!("bad number `{t}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;

    fn model() -> SurrogateModel {
        let net = Network::glorot(
            &NetworkConfig::default(),
            Activation::default(),
            &mut stream_rng(9, "init"),
        );
        SurrogateModel::new(net, Scaler::default(), LossWeights::default())
    }

    #[test]
    fn scaler_corners() {
        let s = Scaler::default();
        assert_eq!(s.scale([0.60, -0.30, 0.0]), [0.0, 0.0, 0.0]);
        assert_eq!(s.scale([0.95, 0.30, 1.0]), [1.0, 1.0, 1.0]);
        let mid = s.scale([0.775, 0.0, 0.5]);
        for v in mid {
            assert!((v - 0.5).abs() < 1e-12);
        }
        let back = s.unscale(s.scale([0.8, 0.1, 0.2]));
        assert!((back[0] - 0.8).abs() < 1e-12 && (back[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn clamp_at_inference() {
        let mut m = model();
        // zero the network and set the output bias
        m.net.params.iter_mut().for_each(|p| *p = 0.0);
        *m.net.params.last_mut().unwrap() = 0.4;
        assert_eq!(m.predict(0.8, 0.1, 0.75), 0.75);
        *m.net.params.last_mut().unwrap() = 1.2;
        assert_eq!(m.predict(0.8, 0.1, 0.3), 1.2);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let m = model();
        let back = SurrogateModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.predict(0.8, 0.1, 0.2).to_bits(),
            m.predict(0.8, 0.1, 0.2).to_bits()
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = model();
        m.save(&path).unwrap();
        assert_eq!(SurrogateModel::load(&path).unwrap(), m);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = model().to_text();
        let cut = &text[..text.len() / 2];
        assert!(matches!(SurrogateModel::from_text(cut), Err(NnError::CorruptFile(_))));
        assert!(matches!(SurrogateModel::from_text(""), Err(NnError::CorruptFile(_))));
    }

    #[test]
    fn future_version_rejected() {
        let text = model().to_text().replace("version 1", "version 2");
        assert!(matches!(
            SurrogateModel::from_text(&text),
            Err(NnError::VersionMismatch { found: 2, .. })
        ));
    }
}
