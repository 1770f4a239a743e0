//! Landmark-to-weight regression with a small fully connected network.
//!
//! Inputs are landmark residuals against the template divided by a fitted
//! `input_scale`; outputs are weights divided by [`PARAM_SCALE`].

mod io;
mod train;

pub use train::{train, EpochLoss, Optimizer, TrainConfig, TrainOutcome};

use ndarray::{s, Array1, Array2, ArrayView2, Axis as NdAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::landmarks::LandmarkSet;
use crate::rig::{ParamVector, Rig, WEIGHT_BOUND};
use crate::synthgen::Dataset;

/// Weights are regressed as `ω / PARAM_SCALE`.
pub const PARAM_SCALE: f64 = WEIGHT_BOUND;

/// Hidden layer widths used when none are given.
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// What the network's inputs and outputs mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSchema {
    pub rig_fingerprint: String,
    pub canvas_size: u32,
    pub landmark_ids: Vec<String>,
    /// Normalized template positions subtracted from the inputs.
    pub template: Vec<Point>,
    /// Output order: `x, y, scale` per component.
    pub component_ids: Vec<String>,
}

impl ModelSchema {
    pub fn from_dataset(d: &Dataset) -> ModelSchema {
        let m = d.meta();
        ModelSchema {
            rig_fingerprint: m.rig_fingerprint.clone(),
            canvas_size: m.canvas_size,
            landmark_ids: m.landmark_ids.clone(),
            template: m.template.clone(),
            component_ids: m.component_ids.clone(),
        }
    }
}

/// A feed-forward network with four weight layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    activation: Activation,
    /// `weights[l]` has shape `(dims[l], dims[l + 1])`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    input_scale: f64,
    schema: Option<ModelSchema>,
}

/// Per-layer gradients, same shapes as the model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(m: &MlpModel) -> Gradients {
        Gradients {
            weights: m
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: m
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Flattened in the model's parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases.
pub fn init_model(input_dim: usize, output_dim: usize, hidden: [usize; 3], seed: u64) -> MlpModel {
    assert!(
        input_dim >= 1 && output_dim >= 1 && hidden.iter().all(|&h| h >= 1),
        "layer widths must be positive"
    );
    let dims = vec![input_dim, hidden[0], hidden[1], hidden[2], output_dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..4 {
        let bound = (6.0 / dims[l] as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((dims[l], dims[l + 1]), || {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array1::zeros(dims[l + 1]));
    }
    MlpModel {
        dims,
        activation: Activation::Relu,
        weights,
        biases,
        input_scale: 1.0,
        schema: None,
    }
}

/// A network sized for `dataset`, with its schema and input scale attached.
pub fn init_for_dataset(dataset: &Dataset, hidden: [usize; 3], seed: u64) -> Result<MlpModel> {
    let mut m = init_model(dataset.landmark_dim(), dataset.param_dim(), hidden, seed);
    m.set_schema(ModelSchema::from_dataset(dataset))?;
    m.fit_input_scale(dataset)?;
    Ok(m)
}

impl MlpModel {
    /// Builds a model from explicit parameters. `weights[l]` is `(in, out)`.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        input_scale: f64,
        schema: Option<ModelSchema>,
    ) -> Result<MlpModel> {
        if weights.len() != 4 || biases.len() != 4 {
            return Err(Error::SchemaMismatch(format!(
                "expected 4 weight layers, got {}",
                weights.len()
            )));
        }
        let mut dims = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != dims[l] || b.len() != w.ncols() {
                return Err(Error::SchemaMismatch(format!(
                    "layer {l} shape {:?} does not chain",
                    w.dim()
                )));
            }
            dims.push(w.ncols());
        }
        let finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite || !(input_scale.is_finite() && input_scale > 0.0) {
            return Err(Error::SchemaMismatch("non-finite model parameters".into()));
        }
        let mut m = MlpModel {
            dims,
            activation: Activation::Relu,
            weights,
            biases,
            input_scale,
            schema: None,
        };
        if let Some(s) = schema {
            m.set_schema(s)?;
        }
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn schema(&self) -> Option<&ModelSchema> {
        self.schema.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[4]
    }

    pub fn set_schema(&mut self, schema: ModelSchema) -> Result<()> {
        if schema.landmark_ids.len() * 2 != self.input_dim()
            || schema.template.len() != schema.landmark_ids.len()
            || schema.component_ids.len() * 3 != self.output_dim()
        {
            return Err(Error::SchemaMismatch(format!(
                "schema with {} landmarks and {} components does not fit dims {:?}",
                schema.landmark_ids.len(),
                schema.component_ids.len(),
                self.dims
            )));
        }
        self.schema = Some(schema);
        Ok(())
    }

    /// Sets `input_scale` to the RMS landmark residual of `dataset`.
    pub fn fit_input_scale(&mut self, dataset: &Dataset) -> Result<()> {
        let schema = self.require_schema()?;
        let template: Vec<f64> = schema.template.iter().flat_map(|p| [p.x, p.y]).collect();
        let mut sum = 0.0;
        for i in 0..dataset.len() {
            for (v, t) in dataset.landmarks_row(i).iter().zip(&template) {
                let r = *v as f64 - t;
                sum += r * r;
            }
        }
        let count = (dataset.len() * template.len()) as f64;
        let rms = (sum / count).sqrt();
        self.input_scale = if rms.is_finite() && rms > 0.0 {
            rms
        } else {
            1.0
        };
        Ok(())
    }

    fn require_schema(&self) -> Result<&ModelSchema> {
        self.schema
            .as_ref()
            .ok_or_else(|| Error::SchemaMismatch("model has no landmark schema".into()))
    }

    /// Total number of weights and biases.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer (weights row-major, then biases).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                let cols = w.ncols();
                return &mut w[(index / cols, index % cols)];
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        *self.parameter_mut(index) = value;
    }

    /// Rounds every parameter to f32 precision, matching a saved model.
    pub fn round_to_f32(&mut self) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v as f32 as f64);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v as f32 as f64);
        }
        self.input_scale = self.input_scale as f32 as f64;
    }

    /// Network output for a batch of already-normalized rows.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for l in 0..4 {
            let mut z = a.dot(&self.weights[l]);
            z += &self.biases[l];
            if l < 3 {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Network output for one already-normalized input row.
    pub fn forward_raw(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row shape");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Normalized network input for a landmark set in schema order.
    pub fn encode(&self, landmarks: &LandmarkSet) -> Result<Vec<f64>> {
        let schema = self.require_schema()?;
        if landmarks.ids() != schema.landmark_ids.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "landmark ids differ from the model schema ({} vs {} ids)",
                landmarks.len(),
                schema.landmark_ids.len()
            )));
        }
        Ok(self.encode_row(&landmarks.flatten(), schema))
    }

    fn encode_row(&self, flat: &[f64], schema: &ModelSchema) -> Vec<f64> {
        flat.iter()
            .zip(schema.template.iter().flat_map(|p| [p.x, p.y]))
            .map(|(v, t)| (v - t) / self.input_scale)
            .collect()
    }

    /// Encodes every dataset row into a matrix of network inputs.
    pub(crate) fn encode_dataset(&self, dataset: &Dataset) -> Result<Array2<f64>> {
        let schema = self.require_schema()?;
        if dataset.meta().landmark_ids != schema.landmark_ids {
            return Err(Error::SchemaMismatch(
                "dataset landmark ids differ from the model schema".into(),
            ));
        }
        let d = self.input_dim();
        let mut x = Array2::zeros((dataset.len(), d));
        for i in 0..dataset.len() {
            let flat: Vec<f64> = dataset.landmarks_row(i).iter().map(|&v| v as f64).collect();
            let row = self.encode_row(&flat, schema);
            x.row_mut(i).assign(&Array1::from(row));
        }
        Ok(x)
    }

    /// Normalized weight prediction (`ω / 30`, unclamped).
    pub fn forward(&self, landmarks: &LandmarkSet) -> Result<Vec<f64>> {
        let x = self.encode(landmarks)?;
        self.forward_raw(&x)
    }

    /// Sum of squared errors and its gradient over a chunk of rows, with the
    /// loss normalized by `norm` (batch rows times outputs).
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        norm: f64,
    ) -> (f64, Gradients) {
        let mut acts = Vec::with_capacity(5);
        acts.push(x.to_owned());
        for l in 0..4 {
            let mut z = acts[l].dot(&self.weights[l]);
            z += &self.biases[l];
            if l < 3 {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let diff = &acts[4] - &targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / norm;
        let mut delta = diff * (2.0 / norm);
        let mut grads = Gradients::zeros_like(self);
        for l in (0..4).rev() {
            grads.weights[l] = acts[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(NdAxis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                // ReLU derivative: active where the post-activation is positive
                prev.zip_mut_with(&acts[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        (loss, grads)
    }

    /// Loss and gradient for a batch, computed in fixed 64-row chunks that are
    /// summed in order, so the result does not depend on the worker count.
    pub fn batch_gradient(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Gradients) {
        use rayon::prelude::*;
        const CHUNK: usize = 64;
        let rows = x.nrows();
        let norm = (rows * self.output_dim()) as f64;
        let parts: Vec<(f64, Gradients)> = (0..rows.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let r = c * CHUNK..((c + 1) * CHUNK).min(rows);
                self.loss_and_gradient(x.slice(s![r.clone(), ..]), targets.slice(s![r, ..]), norm)
            })
            .collect();
        let mut it = parts.into_iter();
        let (mut loss, mut grads) = it.next().unwrap_or((0.0, Gradients::zeros_like(self)));
        for (l, g) in it {
            loss += l;
            grads.add_assign(&g);
        }
        (loss, grads)
    }

    /// Mean squared error over rows, evaluated in chunks.
    pub fn mse(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
        const CHUNK: usize = 1024;
        let mut sum = 0.0;
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + CHUNK).min(x.nrows());
            let out = self.forward_batch(x.slice(s![start..end, ..]));
            sum += (&out - &targets.slice(s![start..end, ..]))
                .iter()
                .map(|d| d * d)
                .sum::<f64>();
            start = end;
        }
        sum / (x.nrows() * self.output_dim()).max(1) as f64
    }
}

/// Forward pass, scaled to weights and clamped to `[-30, 30]`.
pub fn predict_params(model: &MlpModel, landmarks: &LandmarkSet) -> Result<ParamVector> {
    let schema = model.require_schema()?;
    let out = model.forward(landmarks)?;
    let values: Vec<f64> = out
        .iter()
        .map(|v| (v * PARAM_SCALE).clamp(-WEIGHT_BOUND, WEIGHT_BOUND))
        .collect();
    ParamVector::from_ordered(schema.component_ids.iter().map(String::as_str), &values)
}

/// Rejects a model trained for a different rig.
pub fn check_model_rig(model: &MlpModel, rig: &Rig) -> Result<()> {
    let schema = model.require_schema()?;
    let found = rig.fingerprint();
    if schema.rig_fingerprint != found {
        return Err(Error::FingerprintMismatch {
            expected: schema.rig_fingerprint.clone(),
            found,
        });
    }
    Ok(())
}

/// Maximum relative error between analytic and central-difference
/// gradients of the loss on one sample, over `count` randomly chosen
/// parameters. Relative error is `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn gradient_check(model: &MlpModel, input: &[f64], target: &[f64], epsilon: f64) -> f64 {
    gradient_check_with(model, input, target, epsilon, 200, 0, |m, x, t| {
        m.loss_and_gradient(x, t, t.len() as f64).1.flatten()
    })
}

/// [`gradient_check`] with an injectable analytic gradient.
pub fn gradient_check_with(
    model: &MlpModel,
    input: &[f64],
    target: &[f64],
    epsilon: f64,
    count: usize,
    seed: u64,
    grad_fn: impl Fn(&MlpModel, ArrayView2<f64>, ArrayView2<f64>) -> Vec<f64>,
) -> f64 {
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon must lie in [1e-7, 1e-3]"
    );
    let x = ArrayView2::from_shape((1, input.len()), input).expect("input row");
    let t = ArrayView2::from_shape((1, target.len()), target).expect("target row");
    let analytic = grad_fn(model, x, t);
    let total = model.parameter_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = if count >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(&mut rng, total, count).into_vec()
    };
    let params = model.parameters();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in indices {
        probe.set_parameter(i, params[i] + epsilon);
        let up = probe.mse(x, t);
        probe.set_parameter(i, params[i] - epsilon);
        let down = probe.mse(x, t);
        probe.set_parameter(i, params[i]);
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
