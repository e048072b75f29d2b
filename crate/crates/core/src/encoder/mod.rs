//! Three-branch time / frequency / time-frequency encoder.
//!
//! Each branch is a stack of `Conv1D -> BatchNorm -> ReLU` blocks followed by
//! global average pooling. The temporal branch sees the raw epoch, the
//! frequency branch the per-channel z-scored two-sided magnitude spectrum, and
//! the time-frequency branch both stacked along the channel axis (raw first).
//! Each branch has its own two-layer projection head; a linear classifier sits
//! on the time-frequency embedding.

pub mod layers;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{concatenate, Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, Ix2, Ix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{magnitude_two_sided, zscore_trace};
use layers::*;

/// Layer name -> tensor name -> values. Used for parameters, gradients and
/// optimizer state alike.
pub type TensorMap = BTreeMap<String, BTreeMap<String, ArrayD<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Temporal,
    Frequency,
    TimeFrequency,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Temporal, Branch::Frequency, Branch::TimeFrequency];

    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Temporal => "time",
            Branch::Frequency => "freq",
            Branch::TimeFrequency => "tf",
        }
    }

    pub fn block_name(self, i: usize) -> String {
        format!("{}.block{}", self.prefix(), i + 1)
    }

    pub fn proj_name(self) -> String {
        format!("{}.proj", self.prefix())
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

pub const CLASSIFIER: &str = "classifier";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderDims {
    /// EEG channels `C` of the input epochs.
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernels: Vec<usize>,
    pub stride: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub n_classes: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            in_channels: 30,
            widths: vec![32, 64, 128],
            // A 100 ms first kernel with stride 8 gives the third block a
            // receptive field of about 1.2 s at 500 Hz, long enough to
            // resolve the alpha/beta boundary.
            kernels: vec![51, 15, 7],
            stride: 8,
            proj_hidden: 128,
            proj_dim: 64,
            n_classes: 2,
        }
    }
}

impl EncoderDims {
    pub fn with_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn embed_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn n_blocks(&self) -> usize {
        self.widths.len()
    }

    pub fn branch_in_channels(&self, branch: Branch) -> usize {
        match branch {
            Branch::TimeFrequency => 2 * self.in_channels,
            _ => self.in_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.kernels.len() {
            return Err(Error::Config("widths and kernels must be non-empty and equally long".into()));
        }
        if self.in_channels == 0 || self.stride == 0 || self.proj_hidden == 0 || self.proj_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.widths.contains(&0) || self.kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::Config("widths must be positive and kernels odd".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }
}

/// One named layer: trainable tensors plus non-trainable buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Depth `l` within its branch, `1..=L`.
    pub depth: usize,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
    pub buffers: BTreeMap<String, ArrayD<f64>>,
}

impl Layer {
    fn tensor(&self, name: &str) -> &ArrayD<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    fn buffer(&self, name: &str) -> &ArrayD<f64> {
        self.buffers
            .get(name)
            .unwrap_or_else(|| panic!("missing buffer {name}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: EncoderDims,
    pub layers: BTreeMap<String, Layer>,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(shape.to_vec(), || std * rng.sample::<f64, _>(StandardNormal))
}

fn view1(a: &ArrayD<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

fn view2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

fn view3(a: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("rank-3 tensor")
}

impl ModelParams {
    /// He-initialised convolutions and hidden layers, Xavier-initialised output
    /// layers, zero biases, unit batch-norm scale.
    pub fn init(dims: &EncoderDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = BTreeMap::new();
        let embed = dims.embed_dim();
        for branch in Branch::ALL {
            let mut c_in = dims.branch_in_channels(branch);
            for (i, (&w, &k)) in dims.widths.iter().zip(&dims.kernels).enumerate() {
                let std = (2.0 / (c_in * k) as f64).sqrt();
                let mut tensors = BTreeMap::new();
                tensors.insert("conv.weight".into(), normal(&mut rng, &[w, c_in, k], std));
                tensors.insert("conv.bias".into(), ArrayD::zeros(vec![w]));
                tensors.insert("bn.gamma".into(), ArrayD::ones(vec![w]));
                tensors.insert("bn.beta".into(), ArrayD::zeros(vec![w]));
                let mut buffers = BTreeMap::new();
                buffers.insert("bn.running_mean".into(), ArrayD::zeros(vec![w]));
                buffers.insert("bn.running_var".into(), ArrayD::ones(vec![w]));
                layers.insert(branch.block_name(i), Layer { depth: i + 1, tensors, buffers });
                c_in = w;
            }
            let mut tensors = BTreeMap::new();
            let (h, p) = (dims.proj_hidden, dims.proj_dim);
            tensors.insert("fc1.weight".into(), normal(&mut rng, &[h, embed], (2.0 / embed as f64).sqrt()));
            tensors.insert("fc1.bias".into(), ArrayD::zeros(vec![h]));
            tensors.insert("fc2.weight".into(), normal(&mut rng, &[p, h], (2.0 / (h + p) as f64).sqrt()));
            tensors.insert("fc2.bias".into(), ArrayD::zeros(vec![p]));
            layers.insert(
                branch.proj_name(),
                Layer { depth: dims.n_blocks() + 1, tensors, buffers: BTreeMap::new() },
            );
        }
        let mut tensors = BTreeMap::new();
        let k = dims.n_classes;
        tensors.insert("weight".into(), normal(&mut rng, &[k, embed], (2.0 / (embed + k) as f64).sqrt()));
        tensors.insert("bias".into(), ArrayD::zeros(vec![k]));
        layers.insert(
            CLASSIFIER.into(),
            Layer { depth: dims.n_blocks() + 1, tensors, buffers: BTreeMap::new() },
        );
        Ok(Self { dims: dims.clone(), layers })
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::invalid(format!("model has no layer `{name}`")))
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut Layer> {
        self.layers
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("model has no layer `{name}`")))
    }

    /// Copy of every trainable tensor.
    pub fn trainable(&self) -> TensorMap {
        self.layers
            .iter()
            .map(|(n, l)| (n.clone(), l.tensors.clone()))
            .collect()
    }

    /// Overwrite trainable tensors present in `values`.
    pub fn set_trainable(&mut self, values: &TensorMap) -> Result<()> {
        for (lname, tensors) in values {
            let layer = self.layer_mut(lname)?;
            for (tname, v) in tensors {
                let dst = layer
                    .tensors
                    .get_mut(tname)
                    .ok_or_else(|| Error::invalid(format!("layer `{lname}` has no tensor `{tname}`")))?;
                if dst.shape() != v.shape() {
                    return Err(Error::shape(format!("{:?}", dst.shape()), format!("{:?}", v.shape())));
                }
                dst.assign(v);
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.values().all(|l| {
            l.tensors.values().chain(l.buffers.values()).all(|t| t.iter().all(|v| v.is_finite()))
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.values().flat_map(|l| l.tensors.values()).map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let (b, c, t) = x.dim();
        if c != self.dims.in_channels {
            return Err(Error::shape(format!("{} input channels", self.dims.in_channels), c));
        }
        if b == 0 || t < 2 {
            return Err(Error::invalid(format!("input batch {b}x{c}x{t} is empty or too short")));
        }
        Ok(())
    }

    /// Blend batch statistics from a training-mode forward pass into the
    /// running statistics: `r <- (1 - m) r + m * batch`.
    pub fn absorb_batch_stats(&mut self, branch: Branch, cache: &BranchCache, momentum: f64) {
        for (i, block) in cache.blocks.iter().enumerate() {
            let Some((mean, var)) = &block.norm.batch_stats else { continue };
            let layer = self.layers.get_mut(&branch.block_name(i)).expect("block exists");
            for (name, stats) in [("bn.running_mean", mean), ("bn.running_var", var)] {
                let buf = layer.buffers.get_mut(name).expect("bn buffer");
                for (r, &s) in buf.iter_mut().zip(stats.iter()) {
                    *r = (1.0 - momentum) * *r + momentum * s;
                }
            }
        }
    }
}

/// Zero an entire [`TensorMap`] shaped like `like`.
pub fn zeros_like(like: &TensorMap) -> TensorMap {
    like.iter()
        .map(|(l, ts)| (l.clone(), ts.iter().map(|(n, t)| (n.clone(), ArrayD::zeros(t.raw_dim()))).collect()))
        .collect()
}

/// Batch-norm mode for a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub norm: NormCache,
}

/// Activations retained by [`branch_forward`] for [`branch_backward`].
#[derive(Debug, Clone)]
pub struct BranchCache {
    /// `acts[0]` is the branch input, `acts[i + 1]` the output of block `i`.
    pub acts: Vec<Array3<f64>>,
    pub blocks: Vec<BlockCache>,
}

/// Per-channel z-scored two-sided magnitude spectrum of every trace.
pub fn spectrum_input(x: &Array3<f64>) -> Array3<f64> {
    let (b, c, t) = x.dim();
    let lanes: Vec<Vec<f64>> = x
        .lanes(Axis(2))
        .into_iter()
        .map(|l| l.to_vec())
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|trace| {
            let mut mag = magnitude_two_sided(&trace);
            zscore_trace(&mut mag);
            mag
        })
        .collect();
    Array3::from_shape_vec((b, c, t), lanes.concat()).expect("shape preserved")
}

/// Branch inputs for all three branches from a raw batch.
pub fn branch_inputs(x: &Array3<f64>) -> [Array3<f64>; 3] {
    let spec = spectrum_input(x);
    let tf = concatenate(Axis(1), &[x.view(), spec.view()]).expect("same geometry");
    [x.clone(), spec, tf]
}

pub fn branch_input(branch: Branch, x: &Array3<f64>) -> Array3<f64> {
    match branch {
        Branch::Temporal => x.clone(),
        Branch::Frequency => spectrum_input(x),
        Branch::TimeFrequency => {
            let spec = spectrum_input(x);
            concatenate(Axis(1), &[x.view(), spec.view()]).expect("same geometry")
        }
    }
}

/// Run the conv stack of one branch on a prepared input, returning the pooled
/// embedding `[B, D]` and the cache. `modes[i]` selects the batch-norm mode
/// of block `i`.
pub fn branch_forward(params: &ModelParams, branch: Branch, input: Array3<f64>, modes: &[Mode]) -> (Array2<f64>, BranchCache) {
    let dims = &params.dims;
    let mut acts = vec![input];
    let mut blocks = Vec::with_capacity(dims.n_blocks());
    for i in 0..dims.n_blocks() {
        let layer = &params.layers[&branch.block_name(i)];
        let k = dims.kernels[i];
        let y = conv1d_forward(
            acts[i].view(),
            view3(layer.tensor("conv.weight")),
            view1(layer.tensor("conv.bias")),
            dims.stride,
            k / 2,
        );
        let running = match modes[i] {
            Mode::Train => None,
            Mode::Eval => Some((view1(layer.buffer("bn.running_mean")), view1(layer.buffer("bn.running_var")))),
        };
        let (out, norm) = bn_relu_forward(&y, view1(layer.tensor("bn.gamma")), view1(layer.tensor("bn.beta")), running);
        acts.push(out);
        blocks.push(BlockCache { norm });
    }
    let h = global_avg_pool(acts.last().expect("at least one block"));
    (h, BranchCache { acts, blocks })
}

/// Backward through a branch's conv stack. Gradients are written for blocks
/// `lowest..n_blocks` (0-based) into `grads`; lower blocks are not visited.
pub fn branch_backward(
    params: &ModelParams,
    branch: Branch,
    cache: &BranchCache,
    d_h: ArrayView2<f64>,
    lowest: usize,
    grads: &mut TensorMap,
) {
    let dims = &params.dims;
    let n = dims.n_blocks();
    let last_len = cache.acts[n].dim().2;
    let mut d_act = global_avg_pool_backward(d_h, last_len);
    for i in (lowest..n).rev() {
        let name = branch.block_name(i);
        let layer = &params.layers[&name];
        let gamma = view1(layer.tensor("bn.gamma"));
        let (d_conv, d_gamma, d_beta) = bn_relu_backward(&d_act, &cache.acts[i + 1], &cache.blocks[i].norm, gamma);
        let (dw, db, dx) = conv1d_backward(
            cache.acts[i].view(),
            view3(layer.tensor("conv.weight")),
            d_conv.view(),
            dims.stride,
            dims.kernels[i] / 2,
            i > lowest,
        );
        let g = grads.entry(name).or_default();
        accumulate(g, "conv.weight", dw.into_dyn());
        accumulate(g, "conv.bias", Array1::from(db).into_dyn());
        accumulate(g, "bn.gamma", Array1::from(d_gamma).into_dyn());
        accumulate(g, "bn.beta", Array1::from(d_beta).into_dyn());
        if let Some(dx) = dx {
            d_act = dx;
        }
    }
}

fn accumulate(g: &mut BTreeMap<String, ArrayD<f64>>, name: &str, v: ArrayD<f64>) {
    match g.get_mut(name) {
        Some(acc) => *acc += &v,
        None => {
            g.insert(name.to_string(), v);
        }
    }
}

/// Cache for [`project_backward`].
#[derive(Debug, Clone)]
pub struct ProjCache {
    h: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

/// `z = W2 ReLU(W1 h + b1) + b2` with the branch's own head.
pub fn project(params: &ModelParams, branch: Branch, h: &Array2<f64>) -> Result<(Array2<f64>, ProjCache)> {
    let layer = params.layer(&branch.proj_name())?;
    project_with(layer, h)
}

fn project_with(layer: &Layer, h: &Array2<f64>) -> Result<(Array2<f64>, ProjCache)> {
    let w1 = view2(layer.tensor("fc1.weight"));
    let w2 = view2(layer.tensor("fc2.weight"));
    if h.dim().1 != w1.dim().1 {
        return Err(Error::shape(format!("embedding width {}", w1.dim().1), h.dim().1));
    }
    let pre = linear_forward(h.view(), w1, view1(layer.tensor("fc1.bias")));
    let hidden = pre.mapv(|v| v.max(0.0));
    let z = linear_forward(hidden.view(), w2, view1(layer.tensor("fc2.bias")));
    Ok((z, ProjCache { h: h.clone(), pre, hidden }))
}

/// Returns `d_h` and accumulates head gradients.
pub fn project_backward(params: &ModelParams, branch: Branch, cache: &ProjCache, d_z: ArrayView2<f64>, grads: &mut TensorMap) -> Array2<f64> {
    let name = branch.proj_name();
    let layer = &params.layers[&name];
    let (d_hidden, dw2, db2) = linear_backward(cache.hidden.view(), view2(layer.tensor("fc2.weight")), d_z);
    let mut d_pre = d_hidden;
    d_pre.zip_mut_with(&cache.pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let (d_h, dw1, db1) = linear_backward(cache.h.view(), view2(layer.tensor("fc1.weight")), d_pre.view());
    let g = grads.entry(name).or_default();
    accumulate(g, "fc1.weight", dw1.into_dyn());
    accumulate(g, "fc1.bias", Array1::from(db1).into_dyn());
    accumulate(g, "fc2.weight", dw2.into_dyn());
    accumulate(g, "fc2.bias", Array1::from(db2).into_dyn());
    d_h
}

/// Linear classifier over the time-frequency embedding: `[B, D] -> [B, K]`.
pub fn classify(params: &ModelParams, h_tf: &Array2<f64>) -> Result<Array2<f64>> {
    let layer = params.layer(CLASSIFIER)?;
    let w = view2(layer.tensor("weight"));
    if h_tf.dim().1 != w.dim().1 {
        return Err(Error::shape(format!("embedding width {}", w.dim().1), h_tf.dim().1));
    }
    Ok(linear_forward(h_tf.view(), w, view1(layer.tensor("bias"))))
}

/// Returns `d_h` and accumulates classifier gradients.
pub fn classify_backward(params: &ModelParams, h_tf: &Array2<f64>, d_logits: ArrayView2<f64>, grads: &mut TensorMap) -> Array2<f64> {
    let layer = &params.layers[CLASSIFIER];
    let (d_h, dw, db) = linear_backward(h_tf.view(), view2(layer.tensor("weight")), d_logits);
    let g = grads.entry(CLASSIFIER.to_string()).or_default();
    accumulate(g, "weight", dw.into_dyn());
    accumulate(g, "bias", Array1::from(db).into_dyn());
    d_h
}

/// Embeddings and projections of every branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub h_t: Array2<f64>,
    pub h_f: Array2<f64>,
    pub h_tf: Array2<f64>,
    pub z_t: Array2<f64>,
    pub z_f: Array2<f64>,
    pub z_tf: Array2<f64>,
}

fn all_modes(params: &ModelParams, mode: Mode) -> Vec<Mode> {
    vec![mode; params.dims.n_blocks()]
}

/// Temporal embedding `h_t` (running statistics when `mode` is `Eval`).
pub fn forward_temporal(params: &ModelParams, x: &Array3<f64>, mode: Mode) -> Result<Array2<f64>> {
    params.check_input(x)?;
    Ok(branch_forward(params, Branch::Temporal, x.clone(), &all_modes(params, mode)).0)
}

pub fn forward_frequency(params: &ModelParams, x: &Array3<f64>, mode: Mode) -> Result<Array2<f64>> {
    params.check_input(x)?;
    Ok(branch_forward(params, Branch::Frequency, spectrum_input(x), &all_modes(params, mode)).0)
}

pub fn forward_tf(params: &ModelParams, x: &Array3<f64>, mode: Mode) -> Result<Array2<f64>> {
    params.check_input(x)?;
    Ok(branch_forward(params, Branch::TimeFrequency, branch_input(Branch::TimeFrequency, x), &all_modes(params, mode)).0)
}

/// Full forward of all branches and heads.
pub fn encode(params: &ModelParams, x: &Array3<f64>, mode: Mode) -> Result<BranchOutput> {
    params.check_input(x)?;
    let modes = all_modes(params, mode);
    let [ti, fi, tfi] = branch_inputs(x);
    let (h_t, _) = branch_forward(params, Branch::Temporal, ti, &modes);
    let (h_f, _) = branch_forward(params, Branch::Frequency, fi, &modes);
    let (h_tf, _) = branch_forward(params, Branch::TimeFrequency, tfi, &modes);
    let (z_t, _) = project(params, Branch::Temporal, &h_t)?;
    let (z_f, _) = project(params, Branch::Frequency, &h_f)?;
    let (z_tf, _) = project(params, Branch::TimeFrequency, &h_tf)?;
    Ok(BranchOutput { h_t, h_f, h_tf, z_t, z_f, z_tf })
}

/// Eval-mode logits for a batch.
pub fn logits(params: &ModelParams, x: &Array3<f64>) -> Result<Array2<f64>> {
    let h = forward_tf(params, x, Mode::Eval)?;
    classify(params, &h)
}

/// Argmax class per row; ties resolve to the lower index.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Eval-mode predictions for every epoch, processed in chunks.
pub fn predict(params: &ModelParams, data: &Array3<f64>, chunk: usize) -> Result<Vec<usize>> {
    let n = data.dim().0;
    let mut preds = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let batch = data.slice(ndarray::s![start..end, .., ..]).to_owned();
        preds.extend(argmax_rows(&logits(params, &batch)?));
        start = end;
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::time_shift;
    use rand::Rng;

    fn small_dims(c: usize) -> EncoderDims {
        EncoderDims {
            in_channels: c,
            widths: vec![4, 5, 6],
            kernels: vec![7, 5, 3],
            stride: 2,
            proj_hidden: 5,
            proj_dim: 3,
            n_classes: 2,
        }
    }

    fn random_batch(seed: u64, shape: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_shapes() {
        let params = ModelParams::init(&EncoderDims::default(), 0).unwrap();
        let x = random_batch(1, (2, 30, 2500));
        let out = encode(&params, &x, Mode::Eval).unwrap();
        assert_eq!(out.h_t.dim(), (2, 128));
        assert_eq!(out.h_f.dim(), (2, 128));
        assert_eq!(out.h_tf.dim(), (2, 128));
        assert_eq!(out.z_tf.dim(), (2, 64));
        assert_eq!(classify(&params, &out.h_tf).unwrap().dim(), (2, 2));
        let w = &params.layers["tf.block1"].tensors["conv.weight"];
        assert_eq!(w.shape(), &[32, 60, 51]);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let params = ModelParams::init(&small_dims(3), 0).unwrap();
        let x = random_batch(1, (2, 4, 64));
        assert!(encode(&params, &x, Mode::Eval).is_err());
        assert!(forward_temporal(&params, &x, Mode::Train).is_err());
    }

    #[test]
    fn zero_input_zero_bias_pools_to_zero() {
        let params = ModelParams::init(&small_dims(2), 4).unwrap();
        let x = Array3::zeros((2, 2, 64));
        for mode in [Mode::Train, Mode::Eval] {
            let h = forward_temporal(&params, &x, mode).unwrap();
            assert!(h.iter().all(|&v| v == 0.0));
        }
        let a = forward_frequency(&params, &x, Mode::Eval).unwrap();
        let b = forward_frequency(&params, &x, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_rows_and_determinism() {
        let params = ModelParams::init(&small_dims(3), 2).unwrap();
        let one = random_batch(3, (1, 3, 80));
        let x = concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let out = encode(&params, &x, Mode::Eval).unwrap();
        assert_eq!(out.h_tf.row(0), out.h_tf.row(1));
        assert_eq!(out, encode(&params, &x, Mode::Eval).unwrap());
    }

    #[test]
    fn frequency_branch_ignores_circular_shift() {
        let params = ModelParams::init(&small_dims(3), 5).unwrap();
        let x = random_batch(6, (2, 3, 128));
        let mut shifted = x.clone();
        for (mut dst, src) in shifted.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
            dst.assign(&time_shift(src, 17));
        }
        let a = forward_frequency(&params, &x, Mode::Eval).unwrap();
        let b = forward_frequency(&params, &shifted, Mode::Eval).unwrap();
        let err = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-5);
    }

    #[test]
    fn tf_input_doubles_channels_raw_first() {
        let x = random_batch(7, (1, 3, 32));
        let tf = branch_input(Branch::TimeFrequency, &x);
        assert_eq!(tf.dim(), (1, 6, 32));
        assert_eq!(tf.slice(ndarray::s![.., 0..3, ..]), x);
        let params = ModelParams::init(&small_dims(3), 1).unwrap();
        let modes = [Mode::Eval; 3];
        let (a, _) = branch_forward(&params, Branch::TimeFrequency, tf.clone(), &modes);
        let swapped = concatenate(Axis(1), &[tf.slice(ndarray::s![.., 3.., ..]), tf.slice(ndarray::s![.., ..3, ..])]).unwrap();
        let (b, _) = branch_forward(&params, Branch::TimeFrequency, swapped, &modes);
        assert!((&a - &b).iter().any(|v| v.abs() > 1e-9));
    }

    #[test]
    fn identity_projection() {
        let mut params = ModelParams::init(&EncoderDims { proj_hidden: 6, proj_dim: 6, ..small_dims(2) }, 0).unwrap();
        let layer = params.layer_mut("time.proj").unwrap();
        layer.tensors.insert("fc1.weight".into(), Array2::<f64>::eye(6).into_dyn());
        layer.tensors.insert("fc2.weight".into(), Array2::<f64>::eye(6).into_dyn());
        let h = Array2::from_shape_fn((3, 6), |(i, j)| (i * 6 + j) as f64 * 0.1);
        let (z, _) = project(&params, Branch::Temporal, &h).unwrap();
        assert_eq!(z, h);
        assert!(project(&params, Branch::Temporal, &Array2::zeros((1, 5))).is_err());
    }

    #[test]
    fn classifier_head() {
        let mut params = ModelParams::init(&small_dims(2), 0).unwrap();
        let h = Array2::from_shape_fn((4, 6), |(i, j)| (i + j) as f64);
        assert_eq!(classify(&params, &h).unwrap().dim(), (4, 2));
        for t in params.layer_mut(CLASSIFIER).unwrap().tensors.values_mut() {
            t.fill(0.0);
        }
        let l = classify(&params, &h).unwrap();
        assert!(l.iter().all(|&v| v == 0.0));
        let shifted = &l + 3.5;
        assert_eq!(argmax_rows(&l), argmax_rows(&shifted));
    }

    #[test]
    fn layer_depths_are_contiguous() {
        let params = ModelParams::init(&EncoderDims::default(), 0).unwrap();
        for b in Branch::ALL {
            let depths: Vec<usize> = (0..3).map(|i| params.layers[&b.block_name(i)].depth).collect();
            assert_eq!(depths, vec![1, 2, 3]);
            assert_eq!(params.layers[&b.proj_name()].depth, 4);
        }
        assert!(params.all_finite());
    }
}
