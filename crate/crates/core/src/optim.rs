//! Optimisation: AdamW, Lookahead, stochastic weight averaging, cosine
//! annealing with warm restarts, and layer-wise learning-rate decay with
//! progressive unfreezing.
//!
//! Optimisers act on anything implementing [`TensorStore`]; the set of layers
//! they touch is given by an explicit per-layer learning-rate map, so a layer
//! absent from the map is frozen and left bit-identical.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::encoder::{ModelParams, TensorMap};
use crate::error::{Error, Result};

/// Named tensor storage addressed by `(layer, tensor)`.
pub trait TensorStore {
    fn tensor(&self, layer: &str, name: &str) -> Option<&ArrayD<f64>>;
    fn tensor_mut(&mut self, layer: &str, name: &str) -> Option<&mut ArrayD<f64>>;
}

impl TensorStore for TensorMap {
    fn tensor(&self, layer: &str, name: &str) -> Option<&ArrayD<f64>> {
        self.get(layer)?.get(name)
    }

    fn tensor_mut(&mut self, layer: &str, name: &str) -> Option<&mut ArrayD<f64>> {
        self.get_mut(layer)?.get_mut(name)
    }
}

impl TensorStore for ModelParams {
    fn tensor(&self, layer: &str, name: &str) -> Option<&ArrayD<f64>> {
        self.layers.get(layer)?.tensors.get(name)
    }

    fn tensor_mut(&mut self, layer: &str, name: &str) -> Option<&mut ArrayD<f64>> {
        self.layers.get_mut(layer)?.tensors.get_mut(name)
    }
}

/// Per-layer learning rates; layers not listed are frozen.
pub type LayerLrs = BTreeMap<String, f64>;

fn missing(layer: &str, name: &str) -> Error {
    Error::invalid(format!("no tensor `{layer}/{name}` in parameter store"))
}

fn check_grads<S: TensorStore + ?Sized>(params: &S, grads: &TensorMap, lrs: &LayerLrs) -> Result<()> {
    for (layer, tensors) in grads {
        if !lrs.contains_key(layer) {
            continue;
        }
        for (name, g) in tensors {
            let p = params.tensor(layer, name).ok_or_else(|| missing(layer, name))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("{:?}", p.shape()), format!("{:?}", g.shape())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {layer}/{name}")));
            }
        }
    }
    Ok(())
}

/// `eta0 * gamma^(L - l)` for layer `l` of `L`.
pub fn layer_lr(eta0: f64, gamma: f64, n_layers: usize, l: usize) -> Result<f64> {
    if l == 0 || l > n_layers {
        return Err(Error::invalid(format!("layer {l} outside 1..={n_layers}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("layer decay must lie in (0, 1], got {gamma}")));
    }
    Ok(eta0 * gamma.powi((n_layers - l) as i32))
}

/// The top `stage` layers, highest first: `{L, L-1, ..., L-stage+1}`.
pub fn unfrozen_set(n_layers: usize, stage: usize) -> Result<Vec<usize>> {
    if stage == 0 || stage > n_layers {
        return Err(Error::invalid(format!("stage {stage} outside 1..={n_layers}")));
    }
    Ok((n_layers + 1 - stage..=n_layers).rev().collect())
}

/// Unfreeze stage for a 0-based epoch when advancing every `every` epochs.
pub fn stage_for_epoch(epoch: usize, every: usize, n_layers: usize) -> usize {
    (1 + epoch / every.max(1)).min(n_layers)
}

/// Default stage length: `ceil(epochs / L)`.
pub fn default_stage_length(epochs: usize, n_layers: usize) -> usize {
    epochs.div_ceil(n_layers.max(1)).max(1)
}

/// Cosine annealing with warm restarts at fractional position `pos`
/// (measured in the same unit as `t0`, usually epochs). Cycles last
/// `t0, t0 * mult, t0 * mult^2, ...`.
pub fn cosine_warm_restarts(pos: f64, t0: f64, mult: f64, eta_max: f64, eta_min: f64) -> f64 {
    let t0 = t0.max(1.0);
    let mult = mult.max(1.0);
    let (mut t_cur, mut t_i) = (pos.max(0.0), t0);
    if mult == 1.0 {
        t_cur %= t0;
    } else {
        while t_cur >= t_i {
            t_cur -= t_i;
            t_i *= mult;
        }
    }
    eta_min + (eta_max - eta_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: ArrayD<f64>,
    v: ArrayD<f64>,
    step: u64,
}

/// AdamW with decoupled weight decay and per-tensor step counters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: BTreeMap<(String, String), Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state: BTreeMap::new() })
    }

    /// Number of updates applied to one tensor so far.
    pub fn steps(&self, layer: &str, name: &str) -> u64 {
        self.state
            .get(&(layer.to_string(), name.to_string()))
            .map_or(0, |s| s.step)
    }

    /// One update of every tensor in `grads` whose layer has a learning rate.
    /// Gradients are validated before anything is modified.
    pub fn step<S: TensorStore + ?Sized>(&mut self, params: &mut S, grads: &TensorMap, lrs: &LayerLrs) -> Result<()> {
        check_grads(params, grads, lrs)?;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        for (layer, tensors) in grads {
            let Some(&lr) = lrs.get(layer) else { continue };
            for (name, g) in tensors {
                let p = params.tensor_mut(layer, name).ok_or_else(|| missing(layer, name))?;
                let st = self
                    .state
                    .entry((layer.clone(), name.clone()))
                    .or_insert_with(|| Moments { m: ArrayD::zeros(g.raw_dim()), v: ArrayD::zeros(g.raw_dim()), step: 0 });
                st.step += 1;
                let bc1 = 1.0 - beta1.powi(st.step as i32);
                let bc2 = 1.0 - beta2.powi(st.step as i32);
                let decay = 1.0 - lr * weight_decay;
                Zip::from(&mut *p).and(&mut st.m).and(&mut st.v).and(g).for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LookaheadConfig {
    pub k: usize,
    pub beta: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self { k: 5, beta: 0.5 }
    }
}

/// Lookahead wrapper: after every `k` inner steps the slow weights move
/// toward the fast weights, `phi <- phi + beta (theta - phi)`, and the fast
/// weights are reset to the new slow weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookahead {
    pub config: LookaheadConfig,
    slow: TensorMap,
    inner_steps: u64,
}

impl Lookahead {
    /// Slow weights start as a copy of `initial`.
    pub fn new(config: LookaheadConfig, initial: TensorMap) -> Result<Self> {
        if config.k == 0 || !(config.beta > 0.0 && config.beta <= 1.0) {
            return Err(Error::Config(format!("invalid Lookahead settings {config:?}")));
        }
        Ok(Self { config, slow: initial, inner_steps: 0 })
    }

    pub fn slow(&self) -> &TensorMap {
        &self.slow
    }

    pub fn inner_steps(&self) -> u64 {
        self.inner_steps
    }

    /// Inner optimizer step, followed by a sync on every `k`-th call. Returns
    /// whether a sync happened.
    pub fn step<S: TensorStore + ?Sized>(&mut self, inner: &mut AdamW, params: &mut S, grads: &TensorMap, lrs: &LayerLrs) -> Result<bool> {
        inner.step(params, grads, lrs)?;
        self.inner_steps += 1;
        if self.inner_steps % self.config.k as u64 == 0 {
            self.sync(params, lrs)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn sync<S: TensorStore + ?Sized>(&mut self, params: &mut S, lrs: &LayerLrs) -> Result<()> {
        let beta = self.config.beta;
        for (layer, tensors) in self.slow.iter_mut() {
            if !lrs.contains_key(layer) {
                continue;
            }
            for (name, phi) in tensors.iter_mut() {
                let theta = params.tensor_mut(layer, name).ok_or_else(|| missing(layer, name))?;
                Zip::from(&mut *phi).and(&mut *theta).for_each(|phi, theta| {
                    *phi += beta * (*theta - *phi);
                    *theta = *phi;
                });
            }
        }
        Ok(())
    }
}

/// Running sum of registered checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Swa {
    sum: TensorMap,
    count: usize,
}

impl Swa {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn update(&mut self, checkpoint: &TensorMap) -> Result<()> {
        if self.count == 0 {
            if checkpoint.values().flat_map(|t| t.values()).any(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite("SWA checkpoint".into()));
            }
            self.sum = checkpoint.clone();
            self.count = 1;
            return Ok(());
        }
        for (layer, tensors) in &self.sum {
            for (name, s) in tensors {
                let c = checkpoint.tensor(layer, name).ok_or_else(|| missing(layer, name))?;
                if c.shape() != s.shape() {
                    return Err(Error::shape(format!("{:?}", s.shape()), format!("{:?}", c.shape())));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("SWA checkpoint {layer}/{name}")));
                }
            }
        }
        for (layer, tensors) in self.sum.iter_mut() {
            for (name, s) in tensors.iter_mut() {
                *s += &checkpoint[layer][name];
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Element-wise mean of the registered checkpoints.
    pub fn average(&self) -> Result<TensorMap> {
        if self.count == 0 {
            return Err(Error::NoCheckpoints);
        }
        let n = self.count as f64;
        Ok(self
            .sum
            .iter()
            .map(|(l, ts)| (l.clone(), ts.iter().map(|(k, t)| (k.clone(), t / n)).collect()))
            .collect())
    }
}
