//! Fully connected ReLU network trained with Adam on the patch MSE.
//!
//! Weights of layer `l` are stored as a `(fan_in, fan_out)` matrix so a batch
//! `X` (one sample per row) maps to `X W + b`. Every layer but the last is
//! followed by a ReLU.
//!
//! The loss is `(1/N) sum_n sum_k (o_nk - g_nk)^2`: squared error summed over
//! all output components of a sample, averaged over samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{read_f64s, read_u32, write_f64s};
use crate::patches::{Dataset, PatchEncoder, PATCH_ORDER};

pub const MODEL_MAGIC: [u8; 4] = *b"MCNN";
pub const MODEL_VERSION: u32 = 1;

/// Feature layout a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub encoder: PatchEncoder,
    pub patch_order: String,
}

impl ModelMeta {
    pub fn new(encoder: PatchEncoder) -> Self {
        Self { encoder, patch_order: PATCH_ORDER.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub meta: Option<ModelMeta>,
}

/// Same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidModel(format!("need at least 2 layer dims, got {}", layer_dims.len())));
    }
    if let Some(p) = layer_dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidModel(format!("layer {p} has zero width")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng)));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel { layer_dims: layer_dims.to_vec(), weights, biases, meta: None })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn with_meta(mut self, meta: ModelMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layer_dims.len().saturating_sub(1);
        if layers == 0 || self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::InvalidModel(format!("{} dims but {} weight layers", self.layer_dims.len(), self.weights.len())));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let want = (self.layer_dims[l], self.layer_dims[l + 1]);
            if w.dim() != want || b.len() != want.1 {
                return Err(Error::InvalidModel(format!("layer {l} shape {:?}/{} does not match {want:?}", w.dim(), b.len())));
            }
            if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Single sample.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!("input has {} values, model expects {}", input.len(), self.input_dim())));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// One sample per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.dot(w) + b;
            if l < last {
                a.mapv_inplace(relu);
            }
        }
        a
    }

    /// Checks a dataset's dims and feature layout against this model.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let dims = [("input_dim", self.input_dim(), ds.input_dim()), ("output_dim", self.output_dim(), ds.output_dim())];
        for (field, model, data) in dims {
            if model != data {
                return Err(Error::ModelMismatch { field, model: model.to_string(), scene: data.to_string() });
            }
        }
        if let Some(meta) = &self.meta {
            check_encoder(&meta.encoder, &ds.encoder)?;
        }
        Ok(())
    }
}

pub(crate) fn check_encoder(model: &PatchEncoder, need: &PatchEncoder) -> Result<()> {
    let mismatch = |field, m: String, s: String| Err(Error::ModelMismatch { field, model: m, scene: s });
    if model.kind != need.kind {
        return mismatch("feature_kind", model.kind.to_string(), need.kind.to_string());
    }
    if model.norm != need.norm {
        return mismatch("norm_mode", model.norm.to_string(), need.norm.to_string());
    }
    if model.factor != need.factor {
        return mismatch("dsds_factor", model.factor.to_string(), need.factor.to_string());
    }
    Ok(())
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn check_batch(model: &MlpModel, x: &ArrayView2<f64>, g: &ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if x.ncols() != model.input_dim() || g.ncols() != model.output_dim() || x.nrows() != g.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "batch {}x{} -> {}x{} vs model {} -> {}",
            x.nrows(),
            x.ncols(),
            g.nrows(),
            g.ncols(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    Ok(())
}

/// Sum (not mean) of squared residuals over a batch.
fn sum_squared_error(model: &MlpModel, x: ArrayView2<f64>, g: ArrayView2<f64>) -> f64 {
    let o = model.forward_batch(x);
    o.iter().zip(g.iter()).map(|(o, g)| (o - g) * (o - g)).sum()
}

pub fn loss(model: &MlpModel, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<f64> {
    check_batch(model, &x, &g)?;
    Ok(sum_squared_error(model, x, g) / x.nrows() as f64)
}

/// Loss and exact gradients. The ReLU derivative at 0 is taken as 0.
pub fn backward(model: &MlpModel, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<(f64, Gradients)> {
    check_batch(model, &x, &g)?;
    let n = x.nrows() as f64;
    let layers = model.weights.len();
    // acts[l] is the input to layer l
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers + 1);
    acts.push(x.to_owned());
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = acts[l].dot(w) + b;
        if l + 1 < layers {
            z.mapv_inplace(relu);
        }
        acts.push(z);
    }
    let mut delta = &acts[layers] - &g;
    let loss = delta.iter().map(|r| r * r).sum::<f64>() / n;
    delta *= 2.0 / n;

    let mut grads = Gradients::zeros_like(model);
    for l in (0..layers).rev() {
        grads.weights[l] = acts[l].t().dot(&delta);
        grads.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&model.weights[l].t());
            // acts[l] > 0 exactly where the pre-activation was positive
            Zip::from(&mut prev).and(&acts[l]).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self { m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for l in 0..model.weights.len() {
        Zip::from(&mut model.weights[l])
            .and(&grads.weights[l])
            .and(&mut state.m.weights[l])
            .and(&mut state.v.weights[l])
            .for_each(|p, &g, m, v| update(p, g, m, v));
        Zip::from(&mut model.biases[l])
            .and(&grads.biases[l])
            .and(&mut state.m.biases[l])
            .and(&mut state.v.biases[l])
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a relative validation improvement
    /// of at least `plateau_tolerance`.
    pub patience: usize,
    pub plateau_tolerance: f64,
    pub seed: u64,
    /// Fraction of pairs used for training; the rest validate.
    pub train_fraction: f64,
    pub max_steps: Option<u64>,
    /// Stop as soon as the epoch's training loss falls below this.
    pub target_train_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 4096,
            max_epochs: 1000,
            patience: 20,
            plateau_tolerance: 1e-4,
            seed: 0,
            train_fraction: 0.8,
            max_steps: None,
            target_train_mse: None,
        }
    }
}

impl TrainConfig {
    /// Full-scale batch size.
    pub const PAPER_BATCH_SIZE: usize = 50_000;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrainConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.plateau_tolerance < 0.0 {
            return bad("plateau_tolerance must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Plateau,
    MaxEpochs,
    MaxSteps,
    TargetReached,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MlpModel,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub steps: u64,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for e in &self.history {
            s.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.train_mse, e.val_mse));
        }
        s
    }
}

const EVAL_CHUNK: usize = 8192;

fn gather(ds: &Dataset, idx: &[usize], x: &mut Array2<f64>, g: &mut Array2<f64>) {
    for (r, &k) in idx.iter().enumerate() {
        x.row_mut(r).as_slice_mut().unwrap().copy_from_slice(ds.input(k));
        g.row_mut(r).as_slice_mut().unwrap().copy_from_slice(ds.output(k));
    }
}

/// Mean loss over the listed pairs, evaluated in fixed-size chunks.
fn subset_loss(model: &MlpModel, ds: &Dataset, idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut x = Array2::zeros((chunk.len(), ds.input_dim()));
        let mut g = Array2::zeros((chunk.len(), ds.output_dim()));
        gather(ds, chunk, &mut x, &mut g);
        total += sum_squared_error(model, x.view(), g.view());
    }
    total / idx.len() as f64
}

/// Mini-batch Adam with a seeded shuffle each epoch and early stopping on
/// validation loss. Datasets smaller than one batch train full-batch.
pub fn train(ds: &Dataset, model: MlpModel, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    model.check_dataset(ds)?;
    if ds.len() < 2 {
        return Err(Error::InvalidTrainConfig(format!("need at least 2 pairs to split, dataset has {}", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((ds.len() as f64 * config.train_fraction).round() as usize).clamp(1, ds.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();

    let batch = config.batch_size.min(train_idx.len());
    let mut xb = Array2::zeros((batch, ds.input_dim()));
    let mut gb = Array2::zeros((batch, ds.output_dim()));

    let mut model = model;
    let mut adam = AdamState::new(&model);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 0..config.max_epochs {
        train_idx.shuffle(&mut rng);
        for (b, chunk) in train_idx.chunks(batch).enumerate() {
            if chunk.len() != xb.nrows() {
                xb = Array2::zeros((chunk.len(), ds.input_dim()));
                gb = Array2::zeros((chunk.len(), ds.output_dim()));
            }
            gather(ds, chunk, &mut xb, &mut gb);
            let (x, g) = (xb.view(), gb.view());
            let (l, grads) = backward(&model, x, g)?;
            if !l.is_finite() || !grads.max_abs().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, lr: config.learning_rate });
            }
            adam_step(&mut model, &grads, &mut adam, config.learning_rate);
            if config.max_steps.is_some_and(|m| adam.step >= m) {
                stop = StopReason::MaxSteps;
                record(&mut history, &mut best, &model, ds, &train_idx, val_idx, epoch)?;
                break 'epochs;
            }
        }
        let val = record(&mut history, &mut best, &model, ds, &train_idx, val_idx, epoch)?;
        if config.target_train_mse.is_some_and(|t| history[history.len() - 1].train_mse < t) {
            stop = StopReason::TargetReached;
            break;
        }
        if val < reference * (1.0 - config.plateau_tolerance) {
            reference = val;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stop = StopReason::Plateau;
                break;
            }
        }
    }
    let (_, model, best_epoch) = best;
    Ok(TrainOutcome { model, history, best_epoch, steps: adam.step, stop })
}

fn record(
    history: &mut Vec<EpochLoss>,
    best: &mut (f64, MlpModel, usize),
    model: &MlpModel,
    ds: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    epoch: usize,
) -> Result<f64> {
    let train_mse = subset_loss(model, ds, train_idx);
    let val_mse = subset_loss(model, ds, val_idx);
    if !train_mse.is_finite() || !val_mse.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX, lr: f64::NAN });
    }
    history.push(EpochLoss { epoch, train_mse, val_mse });
    if val_mse < best.0 {
        *best = (val_mse, model.clone(), epoch);
    }
    Ok(val_mse)
}

/// Hidden-layer widths for a named architecture.
///
/// `"N*FC-V"` means `N` hidden layers of width `V` followed by the output
/// layer. `"fig4"` is three hidden layers of 64 (four weight layers in all).
pub fn preset_hidden(name: &str) -> Result<Vec<usize>> {
    if name == "fig4" {
        return Ok(vec![64; 3]);
    }
    let bad = || Error::InvalidModel(format!("unknown preset '{name}' (expected N*FC-V or fig4)"));
    let (n, v) = name.split_once("*FC-").ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    let v: usize = v.parse().map_err(|_| bad())?;
    if n == 0 || v == 0 {
        return Err(bad());
    }
    Ok(vec![v; n])
}

/// Architectures of the structure sweep.
pub const SWEEP_PRESETS: [&str; 5] = ["4*FC-32", "3*FC-64", "4*FC-64", "5*FC-64", "4*FC-128"];

pub fn preset_dims(name: &str, input_dim: usize, output_dim: usize) -> Result<Vec<usize>> {
    let mut dims = vec![input_dim];
    dims.extend(preset_hidden(name)?);
    dims.push(output_dim);
    Ok(dims)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    layer_dims: Vec<usize>,
    meta: Option<ModelMeta>,
    /// Human-readable decoding rule for local-frame models.
    decode: String,
}

const DECODE_RULE: &str = "target = output + f * centroid(miniature patch at t); inputs = miniature - centroid";
const MAX_HEADER: u32 = 1 << 20;

/// Layout: magic "MCNN" | version u32 | header_len u32 | JSON header |
/// per layer: weights row-major f64 LE, then biases.
pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_model(model: &MlpModel, w: &mut impl Write) -> Result<()> {
    model.validate()?;
    let header = ModelHeader { layer_dims: model.layer_dims.clone(), meta: model.meta.clone(), decode: DECODE_RULE.into() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (wt, b) in model.weights.iter().zip(&model.biases) {
        write_f64s(w, wt.as_standard_layout().as_slice().unwrap())?;
        write_f64s(w, b.as_slice().unwrap())?;
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}

pub fn read_model(r: &mut impl Read) -> Result<MlpModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != MODEL_VERSION {
        return Err(Error::Version { found: version, expected: MODEL_VERSION });
    }
    let len = read_u32(r)?;
    if len > MAX_HEADER {
        return Err(Error::Format(format!("model header of {len} bytes is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: ModelHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("model header: {e}")))?;
    let dims = header.layer_dims;
    if dims.len() < 2 || dims.iter().any(|&d| d == 0 || d > 1 << 16) {
        return Err(Error::Format(format!("bad layer dims {dims:?}")));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let mut wt = vec![0.0; w[0] * w[1]];
        read_f64s(r, &mut wt)?;
        let mut b = vec![0.0; w[1]];
        read_f64s(r, &mut b)?;
        weights.push(Array2::from_shape_vec((w[0], w[1]), wt).expect("shape"));
        biases.push(Array1::from(b));
    }
    let model = MlpModel { layer_dims: dims, weights, biases, meta: header.meta };
    model.validate()?;
    Ok(model)
}
