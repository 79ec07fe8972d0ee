//! Physics-augmented training loss and its exact gradient.
//!
//! `L_total = L_data + L_const + L_bound + L_spars` where
//! - `L_data` is the mean squared error on the batch,
//! - `L_const` penalises batch predictions on the wrong side of 1
//!   (`> 1` for high-to-low, `< 1` for low-to-high) with a squared hinge,
//! - `L_bound` pulls predictions at `eta_cons` in {0, 1} to 1,
//! - `L_spars` pulls predictions at `eta_cons` in {0.05, ..., 0.30} to 1.
//!
//! The last two are evaluated on fixed collocation points over the 30 level
//! pairs of the grid, independent of the batch.

use serde::{Deserialize, Serialize};

use super::model::Scaler;
use super::network::{Network, Workspace};
use crate::dataset::{level_pairs, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_const: f64,
    pub w_bound: f64,
    pub w_spars: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_const: 0.5,
            w_bound: 1.0,
            w_spars: 2.0,
        }
    }
}

impl LossWeights {
    /// Plain mean squared error.
    pub fn data_only() -> Self {
        Self {
            w_const: 0.0,
            w_bound: 0.0,
            w_spars: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("w_const", self.w_const),
            ("w_bound", self.w_bound),
            ("w_spars", self.w_spars),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// A labelled sample in network coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPoint {
    pub x: [f64; 3],
    pub delta_s_max: f64,
    pub target: f64,
}

impl TrainPoint {
    pub fn from_sample(s: &Sample, scaler: &Scaler) -> Self {
        Self {
            x: scaler.scale(s.features()),
            delta_s_max: s.delta_s_max,
            target: s.sum_eta,
        }
    }
}

/// Scaled collocation inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub boundary: Vec<[f64; 3]>,
    pub sparse: Vec<[f64; 3]>,
}

impl Collocation {
    /// `eta_cons` in {0, 1} and in {0.05, ..., 0.30} over every level pair.
    pub fn grid(scaler: &Scaler) -> Self {
        let pairs = level_pairs();
        let at = |eta: f64| {
            pairs
                .iter()
                .map(move |&(s1, ds)| scaler.scale([s1, ds, eta]))
        };
        Self {
            boundary: at(0.0).chain(at(1.0)).collect(),
            sparse: (1..=6).flat_map(|k| at(k as f64 / 20.0)).collect(),
        }
    }

    pub fn empty() -> Self {
        Self {
            boundary: Vec::new(),
            sparse: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_data: f64,
    pub l_const: f64,
    pub l_bound: f64,
    pub l_spars: f64,
    pub l_total: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        self.l_total.is_finite()
    }

    fn finish(mut self) -> Self {
        self.l_total = self.l_data + self.l_const + self.l_bound + self.l_spars;
        self
    }

    pub fn scaled_add(&mut self, other: &LossComponents, k: f64) {
        self.l_data += k * other.l_data;
        self.l_const += k * other.l_const;
        self.l_bound += k * other.l_bound;
        self.l_spars += k * other.l_spars;
        self.l_total += k * other.l_total;
    }
}

/// Hinge violation of the sequence-effect inequality: positive when a
/// high-to-low prediction exceeds 1 or a low-to-high prediction falls below 1.
#[inline]
pub fn constraint_violation(delta_s_max: f64, y: f64) -> f64 {
    if delta_s_max > 0.0 {
        (y - 1.0).max(0.0)
    } else if delta_s_max < 0.0 {
        (1.0 - y).max(0.0)
    } else {
        0.0
    }
}

/// Evaluate the loss and, if `grad` is given, add its gradient with respect
/// to the network parameters.
pub fn evaluate(
    net: &Network,
    batch: &[TrainPoint],
    colloc: &Collocation,
    w: &LossWeights,
    mut grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> LossComponents {
    let mut c = LossComponents::default();
    if !batch.is_empty() {
        let nb = batch.len() as f64;
        for p in batch {
            let y = net.forward_cached(&p.x, ws);
            let r = y - p.target;
            c.l_data += r * r / nb;
            let mut dy = 2.0 * r / nb;
            if w.w_const > 0.0 {
                let v = constraint_violation(p.delta_s_max, y);
                c.l_const += w.w_const * v * v / nb;
                let sign = if p.delta_s_max > 0.0 { 1.0 } else { -1.0 };
                dy += w.w_const * 2.0 * v * sign / nb;
            }
            if let Some(g) = grad.as_deref_mut() {
                net.backward(ws, dy, g);
            }
        }
    }
    for (pts, weight, slot) in [
        (&colloc.boundary, w.w_bound, 0),
        (&colloc.sparse, w.w_spars, 1),
    ] {
        if weight == 0.0 || pts.is_empty() {
            continue;
        }
        let n = pts.len() as f64;
        let mut l = 0.0;
        for x in pts {
            let r = net.forward_cached(x, ws) - 1.0;
            l += weight * r * r / n;
            if let Some(g) = grad.as_deref_mut() {
                net.backward(ws, weight * 2.0 * r / n, g);
            }
        }
        if slot == 0 {
            c.l_bound = l;
        } else {
            c.l_spars = l;
        }
    }
    c.finish()
}

/// Loss components only.
pub fn loss_total(
    net: &Network,
    batch: &[TrainPoint],
    colloc: &Collocation,
    w: &LossWeights,
) -> LossComponents {
    let mut ws = net.workspace();
    evaluate(net, batch, colloc, w, None, &mut ws)
}

/// Gradient of the total loss.
pub fn gradients(
    net: &Network,
    batch: &[TrainPoint],
    colloc: &Collocation,
    w: &LossWeights,
) -> Vec<f64> {
    let mut ws = net.workspace();
    let mut g = vec![0.0; net.params.len()];
    evaluate(net, batch, colloc, w, Some(&mut g), &mut ws);
    g
}

/// Largest relative error between analytic and central-difference
/// gradients over the given parameter indices.
pub fn gradient_check(
    net: &Network,
    batch: &[TrainPoint],
    colloc: &Collocation,
    w: &LossWeights,
    indices: &[usize],
    h: f64,
) -> f64 {
    let g = gradients(net, batch, colloc, w);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = loss_total(&probe, batch, colloc, w).l_total;
        probe.params[i] = orig - h;
        let dn = loss_total(&probe, batch, colloc, w).l_total;
        probe.params[i] = orig;
        let fd = (up - dn) / (2.0 * h);
        let scale = g[i].abs().max(fd.abs()).max(1e-7);
        worst = worst.max((g[i] - fd).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{Activation, NetworkConfig};
    use crate::util::stream_rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn constant_net(value: f64) -> Network {
        let mut net = Network::zeros(&NetworkConfig::default(), Activation::default());
        *net.params.last_mut().unwrap() = value;
        net
    }

    fn point(ds: f64, target: f64) -> TrainPoint {
        TrainPoint {
            x: [0.5, 0.5, 0.5],
            delta_s_max: ds,
            target,
        }
    }

    #[test]
    fn collocation_counts() {
        let c = Collocation::grid(&Scaler::default());
        assert_eq!(c.boundary.len(), 60);
        assert_eq!(c.sparse.len(), 180);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let net = constant_net(1.0);
        let colloc = Collocation::grid(&Scaler::default());
        let batch = [point(0.1, 1.0), point(-0.1, 1.0)];
        let w = LossWeights::default();
        assert_eq!(loss_total(&net, &batch, &colloc, &w).l_total, 0.0);
        assert!(gradients(&net, &batch, &colloc, &w).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hinge_examples() {
        let w = LossWeights::default();
        let colloc = Collocation::empty();
        let ok = loss_total(&constant_net(0.9), &[point(0.1, 0.9)], &colloc, &w);
        assert_eq!(ok.l_const, 0.0);
        let bad = loss_total(&constant_net(1.2), &[point(0.1, 1.2)], &colloc, &w);
        assert_relative_eq!(bad.l_const, 0.5 * 0.04, max_relative = 1e-12);
        let lh = loss_total(&constant_net(0.8), &[point(-0.1, 0.8)], &colloc, &w);
        assert_relative_eq!(lh.l_const, 0.5 * 0.04, max_relative = 1e-12);
    }

    #[test]
    fn data_mode_is_plain_mse() {
        let net = constant_net(0.7);
        let colloc = Collocation::grid(&Scaler::default());
        let batch = [point(0.1, 1.0), point(-0.2, 0.5)];
        let c = loss_total(&net, &batch, &colloc, &LossWeights::data_only());
        assert_eq!(c.l_total, c.l_data);
        assert_relative_eq!(c.l_data, (0.09 + 0.04) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn constraint_gradient_is_linear_in_its_weight() {
        let net = Network::glorot(&NetworkConfig::default(), Activation::default(), &mut stream_rng(2, "init"));
        // targets equal to the current output isolate the constraint term
        let mut batch: Vec<TrainPoint> = (0..4)
            .map(|i| TrainPoint {
                x: [0.1 * i as f64, 0.9, 0.3],
                delta_s_max: if i % 2 == 0 { 0.1 } else { -0.1 },
                target: 0.0,
            })
            .collect();
        for p in &mut batch {
            p.target = net.forward(&p.x);
        }
        let colloc = Collocation::empty();
        let w1 = LossWeights { w_const: 0.5, ..LossWeights::data_only() };
        let w2 = LossWeights { w_const: 1.0, ..LossWeights::data_only() };
        let g1 = gradients(&net, &batch, &colloc, &w1);
        let g2 = gradients(&net, &batch, &colloc, &w2);
        assert!(g1.iter().any(|&g| g != 0.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn finite_difference_check_full_loss() {
        let scaler = Scaler::default();
        let net = Network::glorot(&NetworkConfig::default(), Activation::default(), &mut stream_rng(3, "init"));
        let mut rng = stream_rng(3, "batch");
        let batch: Vec<TrainPoint> = (0..16)
            .map(|_| TrainPoint {
                x: [rng.gen(), rng.gen(), rng.gen()],
                delta_s_max: if rng.gen::<bool>() { 0.1 } else { -0.1 },
                target: rng.gen_range(0.5..1.5),
            })
            .collect();
        let colloc = Collocation::grid(&scaler);
        let idx: Vec<usize> = (0..100).map(|_| rng.gen_range(0..net.params.len())).collect();
        for w in [LossWeights::default(), LossWeights::data_only()] {
            let err = gradient_check(&net, &batch, &colloc, &w, &idx, 1e-6);
            assert!(err < 1e-4, "max relative error {err}");
        }
    }
}
