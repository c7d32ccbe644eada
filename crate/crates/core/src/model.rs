//! Multilayer perceptron classifier over the three diagnosis classes.
//!
//! Inputs are standardized with training-set statistics, hidden layers use
//! ReLU, the output is a 3-way softmax. Training minimizes mean
//! cross-entropy plus `alpha/2 * sum(W^2)` (biases unpenalized) with seeded
//! mini-batch Adam or plain gradient descent.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allpairs::{Mode, TrainingMatrix};
use crate::cohort::{Diagnosis, FeatureGroup};
use crate::error::{Error, Result};
use crate::seed;

pub const N_CLASSES: usize = 3;
pub const FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "adprog-mlp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Adam,
    /// Plain (mini-batch) gradient descent.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            validation_fraction: 0.1,
            patience: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyperparams {
    pub hidden_sizes: Vec<usize>,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
    pub solver: Solver,
    /// Minimum loss improvement that resets the convergence counter.
    pub tol: f64,
    /// Epochs without `tol` improvement in training loss before stopping.
    pub n_iter_no_change: usize,
}

impl Default for MlpHyperparams {
    fn default() -> Self {
        MlpHyperparams {
            hidden_sizes: vec![100],
            alpha: 1e-2,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 300,
            seed: 0,
            early_stop: None,
            solver: Solver::Adam,
            tol: 1e-4,
            n_iter_no_change: 10,
        }
    }
}

impl MlpHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be a finite value >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and max epochs must be positive"));
        }
        if let Some(es) = self.early_stop {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return Err(Error::invalid("validation fraction must be in (0, 1)"));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be >= 0"));
        }
        Ok(())
    }
}

/// Per-column standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns get 1.
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: ArrayView2<f64>) -> Scaler {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(mu);
            sd.push(if s > 1e-12 * mu.abs().max(1.0) { s } else { 1.0 });
        }
        Scaler { mean, sd }
    }

    pub fn identity(width: usize) -> Scaler {
        Scaler {
            mean: vec![0.0; width],
            sd: vec![1.0; width],
        }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s) = (self.mean[j], self.sd[j]);
            col.mapv_inplace(|v| (v - mu) / s);
        }
        out
    }
}

/// Dense layer: `out = in · weights + bias`, weights shaped (in, out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub column_names: Vec<String>,
    pub group: FeatureGroup,
    pub mode: Mode,
    pub classes: Vec<Diagnosis>,
    pub scaler: Scaler,
    pub hyperparams: MlpHyperparams,
    layers: Vec<Layer>,
    /// Mean training loss per completed epoch.
    pub loss_curve: Vec<f64>,
}

/// Gradients for every weight matrix and bias vector, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Regularized-loss gradient split into its data term and its L2 term.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// Gradient of the mean cross-entropy.
    pub data: GradientSet,
    /// Gradient of `alpha/2 * sum(W^2)`, i.e. `alpha * W` per layer.
    pub weight_decay: Vec<Array2<f64>>,
}

impl LossGradient {
    pub fn total(&self) -> GradientSet {
        GradientSet {
            weights: self
                .data
                .weights
                .iter()
                .zip(&self.weight_decay)
                .map(|(d, w)| d + w)
                .collect(),
            biases: self.data.biases.clone(),
        }
    }
}

fn glorot_layers(dims: &[usize], rng: &mut impl Rng) -> Vec<Layer> {
    dims.windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
            let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound));
            Layer { weights, bias }
        })
        .collect()
}

fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

/// Row-wise log-softmax.
fn log_softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Returns the activation entering each layer plus the output logits.
fn forward(layers: &[Layer], xs: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut a = xs.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = a.dot(&layer.weights) + &layer.bias;
        inputs.push(a);
        if l + 1 < layers.len() {
            relu_inplace(&mut z);
        }
        a = z;
    }
    (inputs, a)
}

fn weight_penalty(layers: &[Layer], alpha: f64) -> f64 {
    0.5 * alpha * layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum::<f64>()
}

fn loss_on(layers: &[Layer], xs: ArrayView2<f64>, y: &[usize], alpha: f64) -> f64 {
    let (_, logits) = forward(layers, xs);
    let logp = log_softmax(&logits);
    let ce = -y.iter().enumerate().map(|(i, &k)| logp[[i, k]]).sum::<f64>() / y.len() as f64;
    ce + weight_penalty(layers, alpha)
}

fn backprop(layers: &[Layer], xs: ArrayView2<f64>, y: &[usize], alpha: f64) -> LossGradient {
    let n = y.len() as f64;
    let (inputs, logits) = forward(layers, xs);
    let logp = log_softmax(&logits);
    let ce = -y.iter().enumerate().map(|(i, &k)| logp[[i, k]]).sum::<f64>() / n;

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = logp.mapv(f64::exp);
    for (i, &k) in y.iter().enumerate() {
        delta[[i, k]] -= 1.0;
    }
    delta /= n;

    let mut weights = vec![Array2::zeros((0, 0)); layers.len()];
    let mut biases = vec![Array1::zeros(0); layers.len()];
    for l in (0..layers.len()).rev() {
        weights[l] = inputs[l].t().dot(&delta);
        biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut upstream = delta.dot(&layers[l].weights.t());
            // inputs[l] is the ReLU output of layer l-1; its derivative is 1 where positive.
            ndarray::Zip::from(&mut upstream)
                .and(&inputs[l])
                .for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            delta = upstream;
        }
    }
    LossGradient {
        loss: ce + weight_penalty(layers, alpha),
        data: GradientSet { weights, biases },
        weight_decay: layers.iter().map(|l| &l.weights * alpha).collect(),
    }
}

fn targets(y: &[Diagnosis]) -> Vec<usize> {
    y.iter().map(|d| d.ordinal()).collect()
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Layer]) -> Self {
        Adam {
            m_w: layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            v_w: layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            m_b: layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
            v_b: layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
            step: 0,
        }
    }

    fn update(&mut self, layers: &mut [Layer], grad: &GradientSet, lr: f64) {
        self.step += 1;
        let lr_t = lr * (1.0 - Self::BETA2.powi(self.step)).sqrt() / (1.0 - Self::BETA1.powi(self.step));
        let moment = |m: &mut f64, v: &mut f64, g: f64| -> f64 {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            lr_t * *m / (v.sqrt() + Self::EPS)
        };
        for (l, layer) in layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grad.weights[l])
                .for_each(|w, m, v, &g| *w -= moment(m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grad.biases[l])
                .for_each(|b, m, v, &g| *b -= moment(m, v, g));
        }
    }
}

fn sgd_update(layers: &mut [Layer], grad: &GradientSet, lr: f64) {
    for (l, layer) in layers.iter_mut().enumerate() {
        layer.weights.scaled_add(-lr, &grad.weights[l]);
        layer.bias.scaled_add(-lr, &grad.biases[l]);
    }
}

fn check_finite(x: ArrayView2<f64>) -> Result<()> {
    if let Some(((r, c), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite feature value at row {r}, column {c}")));
    }
    Ok(())
}

/// Trains a model on `matrix` until convergence or `hp.max_epochs`.
pub fn fit(matrix: &TrainingMatrix, hp: &MlpHyperparams) -> Result<MlpModel> {
    hp.validate()?;
    if matrix.is_empty() {
        return Err(Error::data("cannot train on an empty matrix"));
    }
    if matrix.classes_present().len() < 2 {
        return Err(Error::data("training targets contain a single class"));
    }
    check_finite(matrix.x.view())?;

    let scaler = Scaler::fit(matrix.x.view());
    let xs = scaler.transform(matrix.x.view());
    let y = targets(&matrix.y);

    let mut rng = seed::rng(hp.seed);
    let mut dims = vec![matrix.x.ncols()];
    dims.extend(&hp.hidden_sizes);
    dims.push(N_CLASSES);
    let mut layers = glorot_layers(&dims, &mut rng);

    let mut train_idx: Vec<usize> = (0..y.len()).collect();
    let mut val_idx = Vec::new();
    if let Some(es) = hp.early_stop {
        train_idx.shuffle(&mut rng);
        let n_val = ((es.validation_fraction * y.len() as f64).ceil() as usize).min(y.len() - 1);
        if n_val > 0 {
            val_idx = train_idx.split_off(y.len() - n_val);
        }
    }
    let val_x = xs.select(Axis(0), &val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| y[i]).collect();

    let mut adam = Adam::new(&layers);
    let mut loss_curve = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_val = f64::INFINITY;
    let mut best_layers = layers.clone();
    let mut stale = 0usize;

    for _epoch in 0..hp.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(hp.batch_size) {
            let bx = xs.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let grad = backprop(&layers, bx.view(), &by, hp.alpha);
            epoch_loss += grad.loss * batch.len() as f64;
            let total = grad.total();
            match hp.solver {
                Solver::Adam => adam.update(&mut layers, &total, hp.learning_rate),
                Solver::Sgd => sgd_update(&mut layers, &total, hp.learning_rate),
            }
        }
        epoch_loss /= train_idx.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical("training loss diverged".into()));
        }
        loss_curve.push(epoch_loss);

        if !val_idx.is_empty() {
            let val_loss = loss_on(&layers, val_x.view(), &val_y, hp.alpha);
            if val_loss < best_val - hp.tol {
                best_val = val_loss;
                best_layers = layers.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            if stale > hp.early_stop.map_or(0, |e| e.patience) {
                break;
            }
        } else {
            if epoch_loss > best_loss - hp.tol {
                stale += 1;
            } else {
                stale = 0;
            }
            best_loss = best_loss.min(epoch_loss);
            if stale >= hp.n_iter_no_change {
                break;
            }
        }
    }
    if !val_idx.is_empty() {
        layers = best_layers;
    }

    Ok(MlpModel {
        column_names: matrix.column_names.clone(),
        group: matrix.group.clone(),
        mode: matrix.mode,
        classes: Diagnosis::ALL.to_vec(),
        scaler,
        hyperparams: hp.clone(),
        layers,
        loss_curve,
    })
}

impl MlpModel {
    /// Freshly initialized (untrained) network with Glorot-uniform weights
    /// drawn from `hp.seed`.
    pub fn initialize(
        column_names: Vec<String>,
        group: FeatureGroup,
        mode: Mode,
        scaler: Scaler,
        hp: &MlpHyperparams,
    ) -> Result<MlpModel> {
        hp.validate()?;
        if scaler.mean.len() != column_names.len() || scaler.sd.len() != column_names.len() {
            return Err(Error::invalid("scaler width does not match column count"));
        }
        let mut dims = vec![column_names.len()];
        dims.extend(&hp.hidden_sizes);
        dims.push(N_CLASSES);
        let layers = glorot_layers(&dims, &mut seed::rng(hp.seed));
        Ok(MlpModel {
            column_names,
            group,
            mode,
            classes: Diagnosis::ALL.to_vec(),
            scaler,
            hyperparams: hp.clone(),
            layers,
            loss_curve: Vec::new(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access; layer shapes must be preserved.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_inputs(&self) -> usize {
        self.column_names.len()
    }

    fn check_rows(&self, rows: ArrayView2<f64>) -> Result<()> {
        if rows.ncols() != self.n_inputs() {
            return Err(Error::invalid(format!(
                "expected {} feature columns, got {}",
                self.n_inputs(),
                rows.ncols()
            )));
        }
        check_finite(rows)
    }

    fn validate(&self) -> Result<()> {
        let width = self.n_inputs();
        if self.scaler.mean.len() != width || self.scaler.sd.len() != width {
            return Err(Error::Blob("scaler width does not match column count".into()));
        }
        if self.scaler.sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Blob("scaler standard deviations must be positive".into()));
        }
        let mut fan_in = width;
        for layer in &self.layers {
            if layer.weights.nrows() != fan_in || layer.bias.len() != layer.weights.ncols() {
                return Err(Error::Blob("layer dimensions do not chain".into()));
            }
            fan_in = layer.weights.ncols();
        }
        if self.layers.is_empty() || fan_in != N_CLASSES || self.classes != Diagnosis::ALL {
            return Err(Error::Blob("output layer must have three classes".into()));
        }
        Ok(())
    }

    /// Regularized loss on raw (unstandardized) rows.
    pub fn loss(&self, rows: ArrayView2<f64>, y: &[Diagnosis]) -> Result<f64> {
        self.check_batch(rows, y)?;
        let xs = self.scaler.transform(rows);
        Ok(loss_on(&self.layers, xs.view(), &targets(y), self.hyperparams.alpha))
    }

    fn check_batch(&self, rows: ArrayView2<f64>, y: &[Diagnosis]) -> Result<()> {
        self.check_rows(rows)?;
        if rows.nrows() == 0 || rows.nrows() != y.len() {
            return Err(Error::invalid("batch must be non-empty with one target per row"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serialize(self)
    }
}

/// Analytic gradient of the regularized loss on a batch of raw rows.
pub fn loss_gradient(model: &MlpModel, rows: ArrayView2<f64>, y: &[Diagnosis]) -> Result<LossGradient> {
    model.check_batch(rows, y)?;
    let xs = model.scaler.transform(rows);
    Ok(backprop(&model.layers, xs.view(), &targets(y), model.hyperparams.alpha))
}

/// Class probabilities (NL, MCI, DEMENTIA) for each row.
pub fn predict_proba(model: &MlpModel, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
    model.check_rows(rows)?;
    let xs = model.scaler.transform(rows);
    let (_, logits) = forward(&model.layers, xs.view());
    Ok(log_softmax(&logits).mapv(f64::exp))
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn serialize(model: &MlpModel) -> Result<Vec<u8>> {
    let envelope = Envelope {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        model,
    };
    serde_json::to_vec_pretty(&envelope).map_err(|e| Error::Blob(e.to_string()))
}

pub fn deserialize(bytes: &[u8]) -> Result<MlpModel> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_slice(bytes).map_err(|e| Error::Blob(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(Error::Blob(format!("unexpected format tag '{}'", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Blob(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let envelope: Envelope<MlpModel> = serde_json::from_slice(bytes).map_err(|e| Error::Blob(e.to_string()))?;
    envelope.model.validate()?;
    Ok(envelope.model)
}
