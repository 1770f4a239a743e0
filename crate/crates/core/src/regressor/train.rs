use ndarray::{Array2, Axis as NdAxis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpModel, PARAM_SCALE};
use crate::error::{Error, Result};
use crate::synthgen::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without validation improvement before halving the rate.
    pub plateau_epochs: usize,
    /// Relative drop in validation loss that counts as an improvement for
    /// the plateau and patience counters.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            validation_fraction: 0.1,
            patience: 30,
            plateau_epochs: 10,
            min_improvement: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::invalid(
                "validation_fraction",
                "must lie strictly between 0 and 0.5",
            ));
        }
        if !(0.0..1.0).contains(&self.min_improvement) {
            return Err(Error::invalid("min_improvement", "must lie in [0, 1)"));
        }
        if self.patience == 0 || self.plateau_epochs == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean batch MSE over the epoch.
    pub train: f64,
    pub validation: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MlpModel,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochLoss {
        &self.history[self.best_epoch]
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &MlpModel) -> Adam {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for l in 0..model.weights.len() {
            ndarray::Zip::from(&mut model.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .and(&g.weights[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut model.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .and(&g.biases[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

fn sgd_step(model: &mut MlpModel, g: &Gradients, lr: f64) {
    for l in 0..model.weights.len() {
        model.weights[l].scaled_add(-lr, &g.weights[l]);
        model.biases[l].scaled_add(-lr, &g.biases[l]);
    }
}

/// Minimizes the mean squared error between the network output and `ω / 30`.
///
/// A seeded shuffle splits off the validation rows and orders every epoch's
/// batches. The rate halves after `plateau_epochs` epochs without a
/// `min_improvement` relative gain in validation loss, training stops after
/// `patience` such epochs, and the parameters with the lowest validation loss
/// are returned.
pub fn train(model: &MlpModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schema = model
        .schema()
        .ok_or_else(|| Error::SchemaMismatch("model has no landmark schema".into()))?;
    let meta = dataset.meta();
    if schema.rig_fingerprint != meta.rig_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: schema.rig_fingerprint.clone(),
            found: meta.rig_fingerprint.clone(),
        });
    }
    if schema.component_ids != meta.component_ids {
        return Err(Error::SchemaMismatch(
            "dataset components differ from the model schema".into(),
        ));
    }
    if dataset.len() < 2 {
        return Err(Error::invalid("dataset", "need at least two samples"));
    }

    let x = model.encode_dataset(dataset)?;
    let mut t = Array2::zeros((dataset.len(), dataset.param_dim()));
    for i in 0..dataset.len() {
        for (dst, &v) in t.row_mut(i).iter_mut().zip(dataset.params_row(i)) {
            *dst = v as f64 / PARAM_SCALE;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64 * cfg.validation_fraction).round() as usize)
        .clamp(1, dataset.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let x_val = x.select(NdAxis(0), val_idx);
    let t_val = t.select(NdAxis(0), val_idx);
    let mut train_idx = train_idx.to_vec();

    let mut model = model.clone();
    let mut adam = Adam::new(&model);
    let mut lr = cfg.learning_rate;
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut reference = f64::INFINITY;
    let mut since_best = 0;
    let mut since_change = 0;
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in train_idx.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(NdAxis(0), idx);
            let tb = t.select(NdAxis(0), idx);
            let (loss, grads) = model.batch_gradient(xb.view(), tb.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss * idx.len() as f64;
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut model, &grads, lr),
                Optimizer::Sgd => sgd_step(&mut model, &grads, lr),
            }
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_loss = model.mse(x_val.view(), t_val.view());
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: train_idx.len().div_ceil(cfg.batch_size),
            });
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: val_loss,
            learning_rate: lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e} lr {lr:.1e}");

        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
        }
        if val_loss < reference * (1.0 - cfg.min_improvement) {
            reference = val_loss;
            since_best = 0;
            since_change = 0;
        } else {
            since_best += 1;
            since_change += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
        if since_change >= cfg.plateau_epochs {
            lr *= 0.5;
            since_change = 0;
        }
    }

    Ok(TrainOutcome {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}
