//! Fully connected rectifier network: training, evaluation, pre-activation
//! extraction and masked retraining from the initialization snapshot.
//!
//! Weights of each layer are stored row-major as `fan_in x fan_out`, so
//! `weights[i * fan_out + j]` connects input unit `i` to output unit `j`.
//! All arithmetic is `f64`; parameters are rounded to `f32` precision whenever
//! they are snapshotted into a [`Checkpoint`] so that the on-disk form is exact.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::data::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const EVAL_CHUNK: usize = 512;

/// One of the three hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerId {
    Fc1,
    Fc2,
    Fc3,
}

impl LayerId {
    pub const ALL: [LayerId; 3] = [LayerId::Fc1, LayerId::Fc2, LayerId::Fc3];

    /// Zero-based hidden-layer position.
    pub fn index(self) -> usize {
        match self {
            LayerId::Fc1 => 0,
            LayerId::Fc2 => 1,
            LayerId::Fc3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        LayerId::ALL.get(i).copied()
    }

    /// Byte tag used by the activation file (1, 2 or 3).
    pub fn tag(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fc{}", self.index() + 1)
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc1" => Ok(LayerId::Fc1),
            "fc2" => Ok(LayerId::Fc2),
            "fc3" => Ok(LayerId::Fc3),
            _ => Err(Error::InvalidConfig(format!("unknown layer id {s:?}"))),
        }
    }
}

/// Layer widths from input to output. Always three hidden layers and ten outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    layer_dims: Vec<usize>,
}

impl NetworkConfig {
    pub const HIDDEN_LAYERS: usize = 3;

    /// 784-20-20-20-10.
    pub fn mnist() -> Self {
        NetworkConfig {
            layer_dims: vec![784, 20, 20, 20, NUM_CLASSES],
        }
    }

    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() != Self::HIDDEN_LAYERS + 2 {
            return Err(Error::InvalidConfig(format!(
                "expected {} layer widths (three hidden layers), got {}",
                Self::HIDDEN_LAYERS + 2,
                layer_dims.len()
            )));
        }
        if *layer_dims.last().unwrap() != NUM_CLASSES {
            return Err(Error::InvalidConfig(format!(
                "output width must be {NUM_CLASSES}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(NetworkConfig { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn hidden_width(&self, layer: LayerId) -> usize {
        self.layer_dims[layer.index() + 1]
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::mnist()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.fan_out + j]
    }

    /// Affine map of one input row: `bias + x W`, summed in input order.
    fn affine_into<T: Copy + Into<f64>>(&self, x: &[T], z: &mut [f64]) {
        z.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            let xi: f64 = xi.into();
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (zj, &w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
    }
}

/// Weights and biases of every layer, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Params {
            layers: config
                .layer_dims
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }

    /// Flat view in layer order (weights, then bias).
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn shapes_match(&self, config: &NetworkConfig) -> bool {
        self.layers.len() == config.layer_dims.len() - 1
            && self.layers.iter().zip(config.layer_dims.windows(2)).all(|(l, w)| {
                l.fan_in == w[0]
                    && l.fan_out == w[1]
                    && l.weights.len() == w[0] * w[1]
                    && l.bias.len() == w[1]
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Current parameters plus the initialization snapshot they started from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub current: Params,
    pub initial: Params,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(
        config: NetworkConfig,
        current: Params,
        initial: Params,
        seed: u64,
        history: Vec<EpochRecord>,
    ) -> Result<Self> {
        if !current.shapes_match(&config) || !initial.shapes_match(&config) {
            return Err(Error::ShapeMismatch(
                "checkpoint parameter banks do not match the network config".into(),
            ));
        }
        if !current.all_finite() || !initial.all_finite() {
            return Err(Error::Format {
                format: "checkpoint",
                reason: "non-finite parameter".into(),
            });
        }
        Ok(Checkpoint {
            config,
            current,
            initial,
            seed,
            history,
        })
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
pub fn init_network(config: &NetworkConfig, seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut params = Params::zeros(config);
    for layer in &mut params.layers {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for w in &mut layer.weights {
            *w = dist.sample(&mut rng);
        }
    }
    params.round_to_f32();
    Checkpoint {
        config: config.clone(),
        current: params.clone(),
        initial: params,
        seed,
        history: Vec::new(),
    }
}

/// Per-sample activations kept for backpropagation.
struct Trace {
    /// Pre-activations of every layer, the last one being the logits.
    pre: Vec<Vec<f64>>,
    /// Rectified hidden outputs.
    post: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl Trace {
    fn new(params: &Params) -> Self {
        Trace {
            pre: params.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
            post: params.layers[..params.layers.len() - 1]
                .iter()
                .map(|l| vec![0.0; l.fan_out])
                .collect(),
            probs: vec![0.0; params.layers.last().unwrap().fan_out],
        }
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn forward_sample<T: Copy + Into<f64>>(params: &Params, x: &[T], trace: &mut Trace) {
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        if l == 0 {
            layer.affine_into(x, &mut trace.pre[0]);
        } else {
            layer.affine_into(&trace.post[l - 1], &mut trace.pre[l]);
        }
        if l < last {
            for (a, &zv) in trace.post[l].iter_mut().zip(&trace.pre[l]) {
                *a = zv.max(0.0);
            }
        }
    }
    softmax_into(&trace.pre[last], &mut trace.probs);
}

/// Output of a batch forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    /// One `B x width` matrix per hidden layer, taken before the rectifier.
    pub preacts: Vec<Array2<f64>>,
}

pub fn forward<T: Copy + Into<f64>>(params: &Params, batch: ArrayView2<'_, T>) -> Result<ForwardOutput> {
    let input_dim = params.layers[0].fan_in;
    if batch.ncols() != input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch width {} does not match input dimension {input_dim}",
            batch.ncols()
        )));
    }
    let b = batch.nrows();
    let n_out = params.layers.last().unwrap().fan_out;
    let hidden = params.layers.len() - 1;
    let mut logits = Array2::zeros((b, n_out));
    let mut probs = Array2::zeros((b, n_out));
    let mut preacts: Vec<Array2<f64>> = params.layers[..hidden]
        .iter()
        .map(|l| Array2::zeros((b, l.fan_out)))
        .collect();
    let mut trace = Trace::new(params);
    let mut row = vec![0.0f64; input_dim];
    for (r, x) in batch.outer_iter().enumerate() {
        for (dst, &v) in row.iter_mut().zip(x.iter()) {
            *dst = v.into();
        }
        forward_sample(params, &row, &mut trace);
        for (l, m) in preacts.iter_mut().enumerate() {
            m.row_mut(r).assign(&ndarray::ArrayView1::from(&trace.pre[l][..]));
        }
        logits
            .row_mut(r)
            .assign(&ndarray::ArrayView1::from(&trace.pre[hidden][..]));
        probs.row_mut(r).assign(&ndarray::ArrayView1::from(&trace.probs[..]));
    }
    Ok(ForwardOutput {
        logits,
        probs,
        preacts,
    })
}

/// Mean softmax cross-entropy and its gradient over a batch.
pub fn batch_gradient<T: Copy + Into<f64>>(
    params: &Params,
    inputs: ArrayView2<'_, T>,
    labels: &[u8],
) -> Result<(f64, Params)> {
    if inputs.nrows() != labels.len() {
        return Err(Error::ShapeMismatch("inputs and labels differ in length".into()));
    }
    if inputs.ncols() != params.layers[0].fan_in {
        return Err(Error::ShapeMismatch("input width does not match network".into()));
    }
    let mut grads = Params {
        layers: params
            .layers
            .iter()
            .map(|l| Layer::zeros(l.fan_in, l.fan_out))
            .collect(),
    };
    let mut ws = Workspace::new(params);
    let mut loss = 0.0;
    for (x, &y) in inputs.outer_iter().zip(labels) {
        let x: Vec<f64> = x.iter().map(|&v| v.into()).collect();
        loss += accumulate_sample(params, &x, y, &mut ws, &mut grads).0;
    }
    let scale = 1.0 / labels.len() as f64;
    for v in grads.iter_mut() {
        *v *= scale;
    }
    Ok((loss * scale, grads))
}

pub fn batch_loss<T: Copy + Into<f64>>(params: &Params, inputs: ArrayView2<'_, T>, labels: &[u8]) -> f64 {
    let mut trace = Trace::new(params);
    let mut loss = 0.0;
    for (x, &y) in inputs.outer_iter().zip(labels) {
        let x: Vec<f64> = x.iter().map(|&v| v.into()).collect();
        forward_sample(params, &x, &mut trace);
        loss -= trace.probs[y as usize].ln();
    }
    loss / labels.len() as f64
}

struct Workspace {
    trace: Trace,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(params: &Params) -> Self {
        Workspace {
            trace: Trace::new(params),
            delta: params.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
        }
    }
}

/// Forward + backward for one sample, adding its (unscaled) gradient into `grads`.
/// Returns the sample loss and whether the prediction was correct.
fn accumulate_sample(
    params: &Params,
    x: &[f64],
    y: u8,
    ws: &mut Workspace,
    grads: &mut Params,
) -> (f64, bool) {
    forward_sample(params, x, &mut ws.trace);
    let y = y as usize;
    let last = params.layers.len() - 1;
    let probs = &ws.trace.probs;
    let loss = -probs[y].ln();
    let correct = argmax(&ws.trace.pre[last]) == y;

    for (j, d) in ws.delta[last].iter_mut().enumerate() {
        *d = probs[j] - if j == y { 1.0 } else { 0.0 };
    }
    for l in (0..=last).rev() {
        let layer = &params.layers[l];
        let input: &[f64] = if l == 0 { x } else { &ws.trace.post[l - 1] };
        let (lower, upper) = ws.delta.split_at_mut(l);
        let delta = &upper[0];
        let g = &mut grads.layers[l];
        for (gb, &d) in g.bias.iter_mut().zip(delta) {
            *gb += d;
        }
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &mut g.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
            for (gw, &d) in row.iter_mut().zip(delta) {
                *gw += a * d;
            }
        }
        if l > 0 {
            let below = &mut lower[l - 1];
            let pre = &ws.trace.pre[l - 1];
            for (i, b) in below.iter_mut().enumerate() {
                if pre[i] <= 0.0 {
                    *b = 0.0;
                    continue;
                }
                let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                *b = row.iter().zip(delta).map(|(w, d)| w * d).sum();
            }
        }
    }
    (loss, correct)
}

/// Per-parameter trainability, shaped like [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMask {
    pub layers: Vec<(Vec<bool>, Vec<bool>)>,
}

impl ParamMask {
    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn count_trainable(&self) -> usize {
        self.iter().filter(|&m| m).count()
    }
}

fn run_sgd(
    params: &mut Params,
    mask: Option<&ParamMask>,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    history: &mut Vec<EpochRecord>,
) -> Result<()> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(());
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.feature_dim() != params.layers[0].fan_in {
        return Err(Error::ShapeMismatch(format!(
            "training images have {} features, network expects {}",
            train.feature_dim(),
            params.layers[0].fan_in
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut grads = Params {
        layers: params
            .layers
            .iter()
            .map(|l| Layer::zeros(l.fan_in, l.fan_out))
            .collect(),
    };
    let mut ws = Workspace::new(params);
    let mut x = vec![0.0f64; train.feature_dim()];
    let mut order: Vec<usize> = Vec::with_capacity(train.len());
    let images = train.images();
    let labels = train.labels();

    for epoch in 0..cfg.epochs {
        order.clear();
        order.extend(0..train.len());
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            for v in grads.iter_mut() {
                *v = 0.0;
            }
            let mut loss = 0.0;
            for &s in batch {
                for (dst, &v) in x.iter_mut().zip(images.row(s)) {
                    *dst = f64::from(v);
                }
                let (l, ok) = accumulate_sample(params, &x, labels[s], &mut ws, &mut grads);
                loss += l;
                correct += ok as usize;
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let step = cfg.learning_rate / batch.len() as f64;
            match mask {
                None => {
                    for (p, g) in params.iter_mut().zip(grads.iter()) {
                        *p -= step * g;
                    }
                }
                Some(mask) => {
                    for ((p, g), m) in params.iter_mut().zip(grads.iter()).zip(mask.iter()) {
                        if m {
                            *p -= step * g;
                        }
                    }
                }
            }
        }
        let train_accuracy = correct as f64 / train.len() as f64;
        let test_accuracy = match test {
            Some(t) if !t.is_empty() => accuracy(params, t)?,
            _ => f64::NAN,
        };
        log_epoch(epoch, train_accuracy, test_accuracy);
        history.push(EpochRecord {
            train_accuracy,
            test_accuracy,
        });
    }
    if !params.all_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs - 1,
            batch: 0,
        });
    }
    Ok(())
}

fn log_epoch(epoch: usize, train: f64, test: f64) {
    if std::env::var_os("OINFO_VERBOSE").is_some() {
        eprintln!("epoch {:>3}  train {:.4}  test {:.4}", epoch + 1, train, test);
    }
}

/// Minibatch SGD on softmax cross-entropy, reshuffling every epoch from `cfg.seed`.
///
/// The recorded train accuracy is the running accuracy of the minibatch
/// predictions during the epoch; test accuracy is measured after the epoch.
pub fn train(
    checkpoint: &Checkpoint,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let mut out = checkpoint.clone();
    run_sgd(&mut out.current, None, train_set, Some(test_set), cfg, &mut out.history)?;
    out.current.round_to_f32();
    Ok(out)
}

fn accuracy(params: &Params, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let images = dataset.images();
    let labels = dataset.labels();
    let starts: Vec<usize> = (0..dataset.len()).step_by(EVAL_CHUNK).collect();
    let correct: usize = starts
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(dataset.len());
            let mut trace = Trace::new(params);
            let mut x = vec![0.0f64; dataset.feature_dim()];
            (start..end)
                .filter(|&s| {
                    for (dst, &v) in x.iter_mut().zip(images.row(s)) {
                        *dst = f64::from(v);
                    }
                    forward_sample(params, &x, &mut trace);
                    argmax(&trace.pre[params.layers.len() - 1]) == labels[s] as usize
                })
                .count()
        })
        .sum();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<f64> {
    if dataset.feature_dim() != checkpoint.config.input_dim() {
        return Err(Error::ShapeMismatch("dataset width does not match network".into()));
    }
    accuracy(&checkpoint.current, dataset)
}

/// Pre-activation features of one hidden layer, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub values: Array2<f64>,
    pub labels: Vec<u8>,
    pub layer: LayerId,
}

pub fn extract_preactivations(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    layer: LayerId,
) -> Result<ActivationMatrix> {
    let params = &checkpoint.current;
    if dataset.feature_dim() != checkpoint.config.input_dim() {
        return Err(Error::ShapeMismatch("dataset width does not match network".into()));
    }
    let width = checkpoint.config.hidden_width(layer);
    let n = dataset.len();
    let images = dataset.images();
    let chunks: Vec<Vec<f64>> = (0..n)
        .step_by(EVAL_CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(n);
            let mut trace = Trace::new(params);
            let mut x = vec![0.0f64; dataset.feature_dim()];
            let mut out = Vec::with_capacity((end - start) * width);
            for s in start..end {
                for (dst, &v) in x.iter_mut().zip(images.row(s)) {
                    *dst = f64::from(v);
                }
                forward_sample(params, &x, &mut trace);
                out.extend_from_slice(&trace.pre[layer.index()]);
            }
            out
        })
        .collect();
    let values = Array2::from_shape_vec((n, width), chunks.concat()).expect("row count");
    Ok(ActivationMatrix {
        values,
        labels: dataset.labels().to_vec(),
        layer,
    })
}

/// What happens to hidden neurons that are not selected for retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreezeMode {
    /// Incoming weights, bias and outgoing weights zeroed and frozen.
    #[default]
    Zero,
    /// Kept at their trained values and frozen.
    Hold,
}

impl fmt::Display for FreezeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreezeMode::Zero => "zero",
            FreezeMode::Hold => "hold",
        })
    }
}

impl FromStr for FreezeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(FreezeMode::Zero),
            "hold" => Ok(FreezeMode::Hold),
            _ => Err(Error::InvalidConfig(format!("unknown freeze mode {s:?}"))),
        }
    }
}

/// Neurons to reset and retrain in each hidden layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezePlan {
    selected: Vec<Vec<usize>>,
    mode: FreezeMode,
}

impl FreezePlan {
    /// `selected[l]` lists the retained neurons of hidden layer `l`; indices are
    /// sorted and deduplicated here and checked against `config` at retraining.
    pub fn new(mut selected: Vec<Vec<usize>>, mode: FreezeMode) -> Result<Self> {
        if selected.len() != NetworkConfig::HIDDEN_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "freeze plan needs {} layers, got {}",
                NetworkConfig::HIDDEN_LAYERS,
                selected.len()
            )));
        }
        for s in &mut selected {
            s.sort_unstable();
            s.dedup();
        }
        Ok(FreezePlan { selected, mode })
    }

    pub fn full(config: &NetworkConfig, mode: FreezeMode) -> Self {
        FreezePlan {
            selected: LayerId::ALL
                .iter()
                .map(|&l| (0..config.hidden_width(l)).collect())
                .collect(),
            mode,
        }
    }

    pub fn selected(&self, layer: LayerId) -> &[usize] {
        &self.selected[layer.index()]
    }

    pub fn mode(&self) -> FreezeMode {
        self.mode
    }

    fn validate(&self, config: &NetworkConfig) -> Result<()> {
        for layer in LayerId::ALL {
            let sel = self.selected(layer);
            let width = config.hidden_width(layer);
            if let Some(&bad) = sel.iter().find(|&&i| i >= width) {
                return Err(Error::InvalidConfig(format!(
                    "neuron {bad} out of range for {layer} (width {width})"
                )));
            }
            if sel.is_empty() {
                return Err(Error::EmptySelection {
                    layer: layer.index() + 1,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    /// Input pixel or output class: always present.
    Fixed,
    Selected,
    Removed,
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Disposition {
    Reset,
    Zero,
    Keep,
}

/// Removed beats selected (a removed neuron has no connections at all), selected
/// beats held, and anything touching neither is reset.
fn disposition(a: Unit, b: Unit) -> Disposition {
    use Unit::*;
    if a == Removed || b == Removed {
        Disposition::Zero
    } else if a == Selected || b == Selected {
        Disposition::Reset
    } else if a == Held || b == Held {
        Disposition::Keep
    } else {
        Disposition::Reset
    }
}

/// Builds the starting parameters and the trainability mask for a plan.
pub fn apply_plan(checkpoint: &Checkpoint, plan: &FreezePlan) -> Result<(Params, ParamMask)> {
    plan.validate(&checkpoint.config)?;
    let dims = checkpoint.config.layer_dims();
    let units: Vec<Vec<Unit>> = dims
        .iter()
        .enumerate()
        .map(|(pos, &width)| {
            match LayerId::from_index(pos.wrapping_sub(1)).filter(|_| pos + 1 < dims.len()) {
                None => vec![Unit::Fixed; width],
                Some(layer) => {
                    let absent = match plan.mode {
                        FreezeMode::Zero => Unit::Removed,
                        FreezeMode::Hold => Unit::Held,
                    };
                    let mut u = vec![absent; width];
                    for &i in plan.selected(layer) {
                        u[i] = Unit::Selected;
                    }
                    u
                }
            }
        })
        .collect();

    let mut params = checkpoint.initial.clone();
    let mut mask = ParamMask { layers: Vec::new() };
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let current = &checkpoint.current.layers[l];
        let mut wmask = vec![true; layer.weights.len()];
        let mut bmask = vec![true; layer.bias.len()];
        for i in 0..layer.fan_in {
            for j in 0..layer.fan_out {
                let idx = i * layer.fan_out + j;
                match disposition(units[l][i], units[l + 1][j]) {
                    Disposition::Reset => {}
                    Disposition::Zero => {
                        layer.weights[idx] = 0.0;
                        wmask[idx] = false;
                    }
                    Disposition::Keep => {
                        layer.weights[idx] = current.weights[idx];
                        wmask[idx] = false;
                    }
                }
            }
        }
        for j in 0..layer.fan_out {
            match disposition(Unit::Fixed, units[l + 1][j]) {
                Disposition::Reset => {}
                Disposition::Zero => {
                    layer.bias[j] = 0.0;
                    bmask[j] = false;
                }
                Disposition::Keep => {
                    layer.bias[j] = current.bias[j];
                    bmask[j] = false;
                }
            }
        }
        mask.layers.push((wmask, bmask));
    }
    Ok((params, mask))
}

/// Resets the selected neurons to their initial parameters, disposes of the
/// rest according to the plan's [`FreezeMode`], and trains only the selected
/// connections. The returned checkpoint keeps the original initialization.
pub fn retrain_masked(
    checkpoint: &Checkpoint,
    plan: &FreezePlan,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let (mut params, mask) = apply_plan(checkpoint, plan)?;
    let mut history = Vec::new();
    run_sgd(&mut params, Some(&mask), train_set, Some(test_set), cfg, &mut history)?;
    params.round_to_f32();
    Ok(Checkpoint {
        config: checkpoint.config.clone(),
        current: params,
        initial: checkpoint.initial.clone(),
        seed: checkpoint.seed,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_dataset;
    use ndarray::Array2;
    use rand::Rng;

    fn toy_config() -> NetworkConfig {
        NetworkConfig::new(vec![8, 2, 2, 2, 10]).unwrap()
    }

    fn random_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = Array2::from_shape_fn((n, dim), |_| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random::<f32>()
            }
        });
        let labels = (0..n).map(|i| (i % 10) as u8).collect();
        make_dataset(images, labels, "rand").unwrap()
    }

    #[test]
    fn mnist_shapes() {
        let ck = init_network(&NetworkConfig::mnist(), 0);
        assert_eq!(ck.current.shapes(), vec![(784, 20), (20, 20), (20, 20), (20, 10)]);
        assert_eq!(ck.current, ck.initial);
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = NetworkConfig::mnist();
        assert_eq!(init_network(&cfg, 7), init_network(&cfg, 7));
        assert_ne!(init_network(&cfg, 7).current, init_network(&cfg, 8).current);
        let ck = init_network(&cfg, 3);
        for layer in &ck.current.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound + 1e-7));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn config_rejects_wrong_depth_or_output() {
        assert!(NetworkConfig::new(vec![784, 20, 20, 10]).is_err());
        assert!(NetworkConfig::new(vec![784, 20, 20, 20, 9]).is_err());
    }

    #[test]
    fn zero_network_outputs_uniform_softmax() {
        let params = Params::zeros(&NetworkConfig::mnist());
        let batch = Array2::<f32>::from_elem((3, 784), 0.5);
        let out = forward(&params, batch.view()).unwrap();
        for row in out.probs.outer_iter() {
            for &p in row {
                assert!((p - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = Params::zeros(&NetworkConfig::mnist());
        let batch = Array2::<f32>::zeros((1, 783));
        assert!(matches!(forward(&params, batch.view()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn forward_is_batch_independent_and_normalized() {
        let ck = init_network(&NetworkConfig::mnist(), 1);
        let data = random_dataset(32, 784, 2);
        let full = forward(&ck.current, data.images().view()).unwrap();
        let one = forward(&ck.current, data.images().slice(ndarray::s![..1, ..])).unwrap();
        assert_eq!(full.logits.row(0), one.logits.row(0));
        for l in 0..3 {
            assert_eq!(full.preacts[l].row(0), one.preacts[l].row(0));
        }
        for row in full.probs.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_preacts_equal_bias() {
        let mut ck = init_network(&NetworkConfig::mnist(), 4);
        for (i, b) in ck.current.layers[0].bias.iter_mut().enumerate() {
            *b = i as f64 * 0.01 - 0.1;
        }
        let images = Array2::<f32>::zeros((2, 784));
        let data = make_dataset(images, vec![3, 4], "zeros").unwrap();
        let act = extract_preactivations(&ck, &data, LayerId::Fc1).unwrap();
        assert_eq!(act.values.row(0).to_vec(), ck.current.layers[0].bias);
        assert_eq!(act.labels, vec![3, 4]);
        assert_eq!(act.layer, LayerId::Fc1);
    }

    #[test]
    fn post_activation_is_rectified_preact() {
        let ck = init_network(&NetworkConfig::mnist(), 5);
        let data = random_dataset(4, 784, 6);
        let out = forward(&ck.current, data.images().view()).unwrap();
        let fc2 = &ck.current.layers[1];
        // fc2 pre-activation recomputed from max(fc1 preact, 0)
        for r in 0..4 {
            let post: Vec<f64> = out.preacts[0].row(r).iter().map(|v| v.max(0.0)).collect();
            let mut z = vec![0.0; 20];
            fc2.affine_into(&post, &mut z);
            assert_eq!(z, out.preacts[1].row(r).to_vec());
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = toy_config();
        let mut ck = init_network(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for v in ck.current.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let inputs = Array2::from_shape_fn((3, 8), |_| rng.random_range(0.0..1.0f64));
        let labels = [1u8, 7, 4];
        let (_, grad) = batch_gradient(&ck.current, inputs.view(), &labels).unwrap();
        let analytic: Vec<f64> = grad.iter().collect();
        let h = 1e-4;
        assert_eq!(analytic.len(), ck.current.num_params());
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = ck.current.clone();
            *plus.iter_mut().nth(k).unwrap() += h;
            let mut minus = ck.current.clone();
            *minus.iter_mut().nth(k).unwrap() -= h;
            let numeric = (batch_loss(&plus, inputs.view(), &labels)
                - batch_loss(&minus, inputs.view(), &labels))
                / (2.0 * h);
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            assert!(rel <= 1e-3, "param {k}: analytic {a} numeric {numeric} rel {rel}");
        }
    }

    #[test]
    fn zero_epochs_leaves_checkpoint_unchanged() {
        let ck = init_network(&NetworkConfig::mnist(), 0);
        let data = random_dataset(10, 784, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&ck, &data, &data, &cfg).unwrap(), ck);
    }

    #[test]
    fn empty_dataset_errors() {
        let ck = init_network(&NetworkConfig::mnist(), 0);
        let empty = make_dataset(Array2::zeros((0, 784)), vec![], "e").unwrap();
        assert!(matches!(evaluate(&ck, &empty), Err(Error::EmptyDataset)));
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ck, &empty, &empty, &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn divergence_is_reported() {
        let ck = init_network(&toy_config(), 0);
        let data = random_dataset(64, 8, 3);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            batch_size: 4,
            epochs: 3,
            seed: 0,
        };
        assert!(matches!(
            train(&ck, &data, &data, &cfg),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let ck = init_network(&toy_config(), 2);
        let data = random_dataset(100, 8, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train(&ck, &data, &data, &cfg).unwrap();
        let b = train(&ck, &data, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
        assert_ne!(a.current, ck.current);
        assert_eq!(a.initial, ck.initial);
    }

    #[test]
    fn full_plan_equals_training_from_init() {
        let cfg = toy_config();
        let data = random_dataset(80, 8, 9);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let trained = train(&init_network(&cfg, 1), &data, &data, &tc).unwrap();
        let plan = FreezePlan::full(&cfg, FreezeMode::Zero);
        let retrained = retrain_masked(&trained, &plan, &data, &data, &tc).unwrap();

        let mut from_init = trained.clone();
        from_init.current = trained.initial.clone();
        from_init.history.clear();
        let direct = train(&from_init, &data, &data, &tc).unwrap();
        assert_eq!(retrained.current, direct.current);
        assert_eq!(retrained.history, direct.history);
    }

    #[test]
    fn empty_plan_is_rejected() {
        let ck = init_network(&toy_config(), 0);
        let data = random_dataset(8, 8, 0);
        let plan = FreezePlan::new(vec![vec![], vec![], vec![]], FreezeMode::Zero).unwrap();
        assert!(matches!(
            retrain_masked(&ck, &plan, &data, &data, &TrainConfig::default()),
            Err(Error::EmptySelection { layer: 1 })
        ));
        let bad = FreezePlan::new(vec![vec![0], vec![5], vec![0]], FreezeMode::Zero).unwrap();
        assert!(apply_plan(&ck, &bad).is_err());
    }

    fn frozen_entries_unchanged(mode: FreezeMode) {
        let cfg = NetworkConfig::new(vec![8, 5, 5, 5, 10]).unwrap();
        let data = random_dataset(120, 8, 21);
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let trained = train(&init_network(&cfg, 2), &data, &data, &tc).unwrap();
        let plan = FreezePlan::new(vec![vec![0, 3], vec![1, 2, 4], vec![4]], mode).unwrap();
        let (start, mask) = apply_plan(&trained, &plan).unwrap();
        let out = retrain_masked(&trained, &plan, &data, &data, &tc).unwrap();
        let mut drift_frozen = 0.0f64;
        let mut moved_trainable = 0usize;
        for ((s, e), m) in start.iter().zip(out.current.iter()).zip(mask.iter()) {
            if m {
                moved_trainable += (s != e) as usize;
            } else {
                drift_frozen = drift_frozen.max((s - e).abs());
            }
        }
        assert_eq!(drift_frozen, 0.0);
        assert!(moved_trainable > 0);
    }

    #[test]
    fn masking_zero_mode() {
        frozen_entries_unchanged(FreezeMode::Zero);
    }

    #[test]
    fn masking_hold_mode() {
        frozen_entries_unchanged(FreezeMode::Hold);
    }

    #[test]
    fn zero_mode_cuts_removed_neurons() {
        let cfg = NetworkConfig::new(vec![8, 4, 4, 4, 10]).unwrap();
        let mut ck = init_network(&cfg, 0);
        for v in ck.current.iter_mut() {
            *v += 1.0;
        }
        let plan = FreezePlan::new(vec![vec![1], vec![0, 2], vec![3]], FreezeMode::Zero).unwrap();
        let (p, mask) = apply_plan(&ck, &plan).unwrap();
        // neuron 0 of fc1 is removed: incoming column, bias and outgoing row are zero
        let l0 = &p.layers[0];
        assert!((0..8).all(|i| l0.weight(i, 0) == 0.0));
        assert_eq!(l0.bias[0], 0.0);
        assert!((0..4).all(|j| p.layers[1].weight(0, j) == 0.0));
        // selected neuron 1 starts from the initial snapshot
        assert!((0..8).all(|i| l0.weight(i, 1) == ck.initial.layers[0].weight(i, 1)));
        // output bias is trainable
        assert!(mask.layers[3].1.iter().all(|&m| m));
    }

    #[test]
    fn hold_mode_keeps_trained_values() {
        let cfg = NetworkConfig::new(vec![8, 4, 4, 4, 10]).unwrap();
        let mut ck = init_network(&cfg, 0);
        for v in ck.current.iter_mut() {
            *v += 1.0;
        }
        let plan = FreezePlan::new(vec![vec![1], vec![0, 2], vec![3]], FreezeMode::Hold).unwrap();
        let (p, mask) = apply_plan(&ck, &plan).unwrap();
        let l0 = &p.layers[0];
        assert!((0..8).all(|i| l0.weight(i, 0) == ck.current.layers[0].weight(i, 0)));
        assert_eq!(l0.bias[0], ck.current.layers[0].bias[0]);
        assert!(!mask.layers[0].0[0]);
        // held fc1 neuron 0 feeds selected fc2 neuron 0: reset and trainable
        assert_eq!(p.layers[1].weight(0, 0), ck.initial.layers[1].weight(0, 0));
        assert!(mask.layers[1].0[0]);
    }

    #[test]
    fn layer_id_round_trips_through_text() {
        for l in LayerId::ALL {
            assert_eq!(l.to_string().parse::<LayerId>().unwrap(), l);
        }
        assert!("fc4".parse::<LayerId>().is_err());
    }
}
