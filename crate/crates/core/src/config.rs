//! Run configuration, loaded from TOML with every field defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::augsched::SamplerConfig;
use crate::encoder::EncoderDims;
use crate::error::{Error, Result};
use crate::optim::LookaheadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub t0: f64,
    pub mult: f64,
    /// Fraction of subjects held out for early stopping.
    pub val_fraction: f64,
    /// Put all branch projections of both views into one view set.
    pub cross_branch: bool,
    /// Samples per batch used to judge augmentation plans.
    pub judge_samples: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 32,
            lr: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-2,
            tau: 0.1,
            patience: 10,
            min_delta: 1e-4,
            t0: 10.0,
            mult: 2.0,
            val_fraction: 0.1,
            cross_branch: false,
            judge_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub smoothing: f64,
    pub label_fraction: f64,
    /// Fraction of subjects reserved for testing.
    pub test_fraction: f64,
    /// Fraction of the labeled training subjects held out for validation.
    pub val_fraction: f64,
    pub layer_decay: f64,
    /// Epochs per unfreeze stage; `None` spreads the stages evenly.
    pub stage_epochs: Option<usize>,
    pub lookahead: LookaheadConfig,
    /// Fraction of final epochs over which SWA checkpoints are taken.
    pub swa_fraction: f64,
    pub swa_every: usize,
    /// Validation accuracy is logged every this many epochs.
    pub val_every: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            smoothing: 0.1,
            label_fraction: 0.05,
            test_fraction: 0.9,
            val_fraction: 0.5,
            layer_decay: 0.65,
            stage_epochs: None,
            lookahead: LookaheadConfig::default(),
            swa_fraction: 0.25,
            swa_every: 5,
            val_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderDims,
    pub augment: AugmentConfig,
    pub sampler: SamplerConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderDims::default(),
            augment: AugmentConfig::default(),
            sampler: SamplerConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

fn in_unit(name: &str, v: f64, allow_zero: bool, allow_one: bool) -> Result<()> {
    let lo_ok = if allow_zero { v >= 0.0 } else { v > 0.0 };
    let hi_ok = if allow_one { v <= 1.0 } else { v < 1.0 };
    if lo_ok && hi_ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} is out of range")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serialisable")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Dotted paths of every value that differs from the defaults.
    pub fn overrides(&self) -> Vec<String> {
        let ours = serde_json::to_value(self).expect("serialisable");
        let base = serde_json::to_value(RunConfig::default()).expect("serialisable");
        let mut out = Vec::new();
        diff("", &ours, &base, &mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.augment.validate()?;
        self.sampler.validate()?;
        let p = &self.pretrain;
        if p.batch < 2 {
            return Err(Error::Config("pretrain.batch must be at least 2".into()));
        }
        if !(p.lr > 0.0) || p.lr_min < 0.0 || p.lr_min > p.lr || !(p.tau > 0.0) {
            return Err(Error::Config("pretrain learning rates and tau must be positive".into()));
        }
        if p.t0 < 1.0 || p.mult < 1.0 || p.min_delta < 0.0 || p.weight_decay < 0.0 {
            return Err(Error::Config("pretrain schedule settings out of range".into()));
        }
        in_unit("pretrain.val_fraction", p.val_fraction, true, false)?;
        if p.judge_samples == 0 {
            return Err(Error::Config("pretrain.judge_samples must be positive".into()));
        }
        let f = &self.finetune;
        if f.batch == 0 || !(f.lr > 0.0) || f.weight_decay < 0.0 {
            return Err(Error::Config("finetune batch, lr and weight_decay out of range".into()));
        }
        in_unit("finetune.smoothing", f.smoothing, true, false)?;
        in_unit("finetune.label_fraction", f.label_fraction, false, true)?;
        in_unit("finetune.test_fraction", f.test_fraction, false, false)?;
        in_unit("finetune.val_fraction", f.val_fraction, true, false)?;
        in_unit("finetune.swa_fraction", f.swa_fraction, false, true)?;
        if !(f.layer_decay > 0.0 && f.layer_decay <= 1.0) {
            return Err(Error::Config("finetune.layer_decay must lie in (0, 1]".into()));
        }
        if f.swa_every == 0 || f.stage_epochs == Some(0) || f.lookahead.k == 0 {
            return Err(Error::Config("finetune periods must be positive".into()));
        }
        if !(f.lookahead.beta > 0.0 && f.lookahead.beta <= 1.0) {
            return Err(Error::Config("finetune.lookahead.beta must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn diff(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, v) in x {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match y.get(k) {
                    Some(w) => diff(&path, v, w, out),
                    None => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}
