//! Adam, the epoch loop with early stopping, and evaluation metrics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{evaluate, Collocation, LossComponents, LossWeights, TrainPoint};
use super::model::{Scaler, SurrogateModel};
use super::network::{Activation, Network, NetworkConfig};
use super::NnError;
use crate::dataset::Sample;
use crate::util::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// `None` trains full batch.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    /// Epochs without improvement of the monitored loss before stopping.
    pub patience: usize,
    /// Stop as soon as the epoch's total training loss drops below this.
    pub loss_tolerance: f64,
    /// Relative decrease that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: None,
            max_epochs: 20_000,
            patience: 500,
            loss_tolerance: 1e-6,
            min_delta: 0.0,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == Some(0) {
            return Err("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return Err("max_epochs must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossComponents,
    /// Mean squared error on the validation set; NaN without one.
    pub l_val: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_data,l_const,l_bound,l_spars,l_total,l_val\n");
        for r in &self.epochs {
            let l = &r.loss;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.epoch, l.l_data, l.l_const, l.l_bound, l.l_spars, l.l_total, r.l_val
            ));
        }
        out
    }
}

/// Train a fresh network.
///
/// Each epoch shuffles the training set (seeded), takes one Adam step per
/// mini-batch with the collocation terms evaluated every batch, and records
/// the batch-averaged loss components. The monitored loss is the validation
/// MSE when a validation set is given and the training total otherwise; the
/// parameters of the best monitored epoch are returned.
pub fn train(
    train: &[Sample],
    val: &[Sample],
    net_cfg: &NetworkConfig,
    cfg: &TrainingConfig,
    weights: &LossWeights,
) -> Result<(SurrogateModel, TrainingHistory), NnError> {
    if train.is_empty() {
        return Err(NnError::EmptyTrainingSet);
    }
    net_cfg.validate().map_err(NnError::InvalidConfig)?;
    cfg.validate().map_err(NnError::InvalidConfig)?;
    weights.validate().map_err(NnError::InvalidConfig)?;

    let scaler = Scaler::default();
    let points: Vec<TrainPoint> = train.iter().map(|s| TrainPoint::from_sample(s, &scaler)).collect();
    let val_points: Vec<TrainPoint> = val.iter().map(|s| TrainPoint::from_sample(s, &scaler)).collect();
    let colloc = if weights.w_bound > 0.0 || weights.w_spars > 0.0 {
        Collocation::grid(&scaler)
    } else {
        Collocation::empty()
    };

    let mut net = Network::glorot(net_cfg, Activation::default(), &mut stream_rng(cfg.seed, "init"));
    let mut shuffle_rng = stream_rng(cfg.seed, "batches");
    let mut adam = Adam::new(net.params.len(), cfg.learning_rate, cfg.adam);
    let mut ws = net.workspace();
    let mut grad = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..points.len()).collect();
    let bs = cfg.batch_size.unwrap_or(points.len()).min(points.len());
    let mut batch = Vec::with_capacity(bs);

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, net.params.clone(), 0usize);
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        if bs < points.len() {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = LossComponents::default();
        let n_batches = points.len().div_ceil(bs);
        for chunk in order.chunks(bs) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| points[i]));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let c = evaluate(&net, &batch, &colloc, weights, Some(&mut grad), &mut ws);
            if !c.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, loss: c });
            }
            epoch_loss.scaled_add(&c, 1.0 / n_batches as f64);
            adam.step(&mut net.params, &grad);
        }
        let l_val = if val_points.is_empty() {
            f64::NAN
        } else {
            evaluate(&net, &val_points, &Collocation::empty(), &LossWeights::data_only(), None, &mut ws).l_data
        };
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            l_val,
        });
        let monitored = if val_points.is_empty() { epoch_loss.l_total } else { l_val };
        if monitored < best.0 * (1.0 - cfg.min_delta) {
            best = (monitored, net.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if epoch_loss.l_total < cfg.loss_tolerance {
            stop = StopReason::Tolerance;
            best = (monitored, net.params.clone(), epoch);
            break;
        }
        if since_best > cfg.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    net.params = best.1;
    log::info!(
        "training stopped after {} epochs ({stop:?}); keeping epoch {}",
        history.len(),
        best.2
    );
    Ok((
        SurrogateModel::new(net, scaler, *weights),
        TrainingHistory {
            epochs: history,
            stop,
            best_epoch: best.2,
        },
    ))
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(preds: &[f64], targets: &[f64]) -> Result<f64, NnError> {
    if preds.len() != targets.len() || targets.len() < 2 {
        return Err(NnError::ZeroVariance);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(NnError::ZeroVariance);
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Clamped predictions and R² of a model on a sample set.
pub fn evaluate_model(model: &SurrogateModel, samples: &[Sample]) -> Result<(Vec<f64>, f64), NnError> {
    let preds: Vec<f64> = samples
        .iter()
        .map(|s| model.predict(s.s1_max, s.delta_s_max, s.eta_cons))
        .collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.sum_eta).collect();
    let r2 = r2_score(&preds, &targets)?;
    Ok((preds, r2))
}
