//! Dense feed-forward network with a flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    /// `x` for `x > 0`, `zeta (e^x - 1)` otherwise.
    Elu { zeta: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Elu { zeta: 1.0 }
    }
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { zeta } => {
                if x > 0.0 {
                    x
                } else {
                    zeta * x.exp_m1()
                }
            }
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { zeta } => {
                if x > 0.0 {
                    1.0
                } else {
                    zeta * x.exp()
                }
            }
        }
    }
}

pub fn elu(x: f64) -> f64 {
    Activation::default().apply(x)
}

/// Layer widths, input first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let mut layer_sizes = vec![3];
        layer_sizes.extend(std::iter::repeat_n(16, 10));
        layer_sizes.push(1);
        Self { layer_sizes }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), String> {
        let l = &self.layer_sizes;
        if l.len() < 2 {
            return Err("need at least an input and an output layer".into());
        }
        if l[0] != 3 || l[l.len() - 1] != 1 {
            return Err(format!("layers must start at 3 and end at 1, got {l:?}"));
        }
        if l.contains(&0) {
            return Err("zero-width layer".into());
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights and biases. Layer `l` occupies a contiguous block: the row-major
/// `out x in` weight matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Per-sample forward cache reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    /// Pre-activations of every non-input layer.
    z: Vec<Vec<f64>>,
    /// Activations, input first.
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Network {
    pub fn zeros(cfg: &NetworkConfig, activation: Activation) -> Self {
        let mut offsets = Vec::with_capacity(cfg.layer_sizes.len());
        let mut off = 0;
        for w in cfg.layer_sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Self {
            layer_sizes: cfg.layer_sizes.clone(),
            activation,
            params: vec![0.0; off],
            offsets,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(cfg: &NetworkConfig, activation: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(cfg, activation);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        net
    }

    pub fn from_params(
        cfg: &NetworkConfig,
        activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self, String> {
        let mut net = Self::zeros(cfg, activation);
        if params.len() != net.params.len() {
            return Err(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            ));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            layer_sizes: self.layer_sizes.clone(),
        }
    }

    /// Number of weight layers.
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l];
        let (w, rest) = self.params[off..].split_at(n_in * n_out);
        (w, &rest[..n_out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l];
        let (w, rest) = self.params[off..].split_at_mut(n_in * n_out);
        (w, &mut rest[..n_out])
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            z: self.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            a: self.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    /// Scalar output for a scaled input; the output layer is linear.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut ws = self.workspace();
        self.forward_cached(x, &mut ws)
    }

    pub fn forward_cached(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        ws.a[0].copy_from_slice(x);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let n_in = self.layer_sizes[l];
            let (head, tail) = ws.a.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let z = &mut ws.z[l];
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *zj = b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l == last {
                out.copy_from_slice(z);
            } else {
                for (o, &zj) in out.iter_mut().zip(z.iter()) {
                    *o = self.activation.apply(zj);
                }
            }
        }
        ws.a[self.n_layers()][0]
    }

    /// Accumulate `dy * d(output)/d(params)` into `grad`, using the cache of
    /// the preceding [`forward_cached`](Self::forward_cached) call.
    pub fn backward(&self, ws: &mut Workspace, dy: f64, grad: &mut [f64]) {
        let n = self.n_layers();
        ws.delta.clear();
        ws.delta.push(dy);
        for l in (0..n).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let input = &ws.a[l];
            {
                let (gw, rest) = grad[off..].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let d = ws.delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    rest[j] += d;
                    for (g, &a) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            ws.delta_prev.clear();
            ws.delta_prev.resize(n_in, 0.0);
            for j in 0..n_out {
                let d = ws.delta[j];
                for (dp, &wij) in ws.delta_prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *dp += d * wij;
                }
            }
            for (dp, &z) in ws.delta_prev.iter_mut().zip(&ws.z[l - 1]) {
                *dp *= self.activation.derivative(z);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use approx::assert_relative_eq;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(2.0), 2.0);
        assert_relative_eq!(elu(-1.0), -0.632_120_558_828_557_7, max_relative = 1e-15);
    }

    #[test]
    fn default_shape() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.layer_sizes.len(), 12);
        assert_eq!(cfg.n_params(), 3 * 16 + 16 + 9 * (16 * 16 + 16) + 16 + 1);
        cfg.validate().unwrap();
        assert!(NetworkConfig { layer_sizes: vec![2, 1] }.validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(&NetworkConfig::default(), Activation::default());
        assert_eq!(net.forward(&[0.3, -2.0, 7.0]), 0.0);
    }

    #[test]
    fn tiny_network_by_hand() {
        let cfg = NetworkConfig {
            layer_sizes: vec![3, 2, 1],
        };
        // hidden: z = [x0 - x1, -x2 + 0.5], output: 2 h0 - h1 + 0.1
        let params = vec![1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.5, 2.0, -1.0, 0.1];
        let net = Network::from_params(&cfg, Activation::default(), params).unwrap();
        let x = [1.0, 0.5, 2.0];
        let expected = 2.0 * 0.5 - elu(-1.5) + 0.1;
        assert_relative_eq!(net.forward(&x), expected, max_relative = 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = NetworkConfig {
            layer_sizes: vec![3, 5, 4, 1],
        };
        let net = Network::glorot(&cfg, Activation::default(), &mut stream_rng(1, "t"));
        let x = [0.2, -0.7, 0.9];
        let mut ws = net.workspace();
        net.forward_cached(&x, &mut ws);
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&mut ws, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let mut p = net.clone();
            p.params[i] += h;
            let up = p.forward(&x);
            p.params[i] -= 2.0 * h;
            let dn = p.forward(&x);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let cfg = NetworkConfig::default();
        let a = Network::glorot(&cfg, Activation::default(), &mut stream_rng(5, "init"));
        let b = Network::glorot(&cfg, Activation::default(), &mut stream_rng(5, "init"));
        assert_eq!(a, b);
        let (w, bias) = a.layer(1);
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
        assert!(bias.iter().all(|&v| v == 0.0));
    }
}
