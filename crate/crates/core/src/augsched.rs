//! Dynamic augmentation manager.
//!
//! Each operator carries a success score `s_i = n_success / n_total` (0.5
//! before its first use). Operators are drawn with softmax probabilities
//! `p_i ∝ exp(s_i / T)`; a plan's outcome is credited to every operator in it.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugKind;
use crate::error::{Error, Result};

/// Score assigned to an operator that has never been applied.
pub const UNSEEN_PRIOR: f64 = 0.5;

/// Largest number of operators in one plan.
pub const MAX_COMBO: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    /// Multiplicative temperature decay applied at every epoch snapshot.
    pub temperature_decay: Option<f64>,
    pub min_temperature: f64,
    /// Cosine-similarity threshold for pre-training success.
    pub alpha: f64,
    /// Batch-accuracy threshold for fine-tuning success.
    pub beta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            temperature_decay: None,
            min_temperature: 0.05,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "sampler temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(d) = self.temperature_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("temperature_decay must be in (0, 1], got {d}")));
            }
        }
        Ok(())
    }
}

/// Per-operator snapshot taken at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub operator: AugKind,
    pub success_rate: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    ops: Vec<AugKind>,
    n_success: Vec<u64>,
    n_total: Vec<u64>,
    temperature: f64,
    temperature_decay: Option<f64>,
    min_temperature: f64,
    threshold: f64,
    history: Vec<HistoryRow>,
}

impl SamplerState {
    pub fn new(ops: Vec<AugKind>, temperature: f64, threshold: f64) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Config("sampler needs at least one operator".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "sampler temperature must be positive, got {temperature}"
            )));
        }
        let k = ops.len();
        Ok(Self {
            ops,
            n_success: vec![0; k],
            n_total: vec![0; k],
            temperature,
            temperature_decay: None,
            min_temperature: 0.0,
            threshold,
            history: Vec::new(),
        })
    }

    /// Sampler over all seven operators for pre-training (threshold α).
    pub fn for_pretraining(cfg: &SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut s = Self::new(AugKind::ALL.to_vec(), cfg.temperature, cfg.alpha)?;
        s.temperature_decay = cfg.temperature_decay;
        s.min_temperature = cfg.min_temperature;
        Ok(s)
    }

    /// Sampler over all seven operators for fine-tuning (threshold β).
    pub fn for_finetuning(cfg: &SamplerConfig) -> Result<Self> {
        let mut s = Self::for_pretraining(cfg)?;
        s.threshold = cfg.beta;
        Ok(s)
    }

    pub fn ops(&self) -> &[AugKind] {
        &self.ops
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn counts(&self, i: usize) -> (u64, u64) {
        (self.n_success[i], self.n_total[i])
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn success_score(&self, i: usize) -> f64 {
        success_score(self.n_success[i], self.n_total[i])
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.ops.len()).map(|i| self.success_score(i)).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.scores(), self.temperature).expect("temperature validated at construction")
    }

    /// Draw a combo size uniformly from `1..=min(3, K)`, then that many
    /// distinct operators, each by the softmax probabilities renormalised over
    /// the operators not yet chosen. Draw order is application order.
    pub fn sample_plan<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<AugKind> {
        let probs = self.probabilities();
        let k = self.ops.len();
        let n = rng.random_range(1..=MAX_COMBO.min(k));
        let mut remaining: Vec<usize> = (0..k).collect();
        let mut plan = Vec::with_capacity(n);
        for _ in 0..n {
            let mass: f64 = remaining.iter().map(|&i| probs[i]).sum();
            let mut u = rng.random::<f64>() * mass;
            let mut pick = remaining.len() - 1;
            for (pos, &i) in remaining.iter().enumerate() {
                if u < probs[i] {
                    pick = pos;
                    break;
                }
                u -= probs[i];
            }
            plan.push(self.ops[remaining.remove(pick)]);
        }
        plan
    }

    /// Credit a plan's outcome to each of its operators.
    pub fn record(&mut self, plan: &[AugKind], success: bool) -> Result<()> {
        let idx: Vec<usize> = plan
            .iter()
            .map(|k| {
                self.ops
                    .iter()
                    .position(|o| o == k)
                    .ok_or_else(|| Error::invalid(format!("operator {k} not managed by sampler")))
            })
            .collect::<Result<_>>()?;
        for i in idx {
            self.n_total[i] += 1;
            if success {
                self.n_success[i] += 1;
            }
        }
        Ok(())
    }

    /// Append one history row per operator and apply the optional temperature decay.
    pub fn snapshot(&mut self, epoch: usize) {
        let probs = self.probabilities();
        for (i, &op) in self.ops.iter().enumerate() {
            self.history.push(HistoryRow {
                epoch,
                operator: op,
                success_rate: success_score(self.n_success[i], self.n_total[i]),
                probability: probs[i],
            });
        }
        if let Some(d) = self.temperature_decay {
            self.temperature = (self.temperature * d).max(self.min_temperature).max(f64::MIN_POSITIVE);
        }
    }
}

/// `n_success / n_total`, or [`UNSEEN_PRIOR`] when the operator was never applied.
pub fn success_score(n_success: u64, n_total: u64) -> f64 {
    if n_total == 0 {
        UNSEEN_PRIOR
    } else {
        n_success as f64 / n_total as f64
    }
}

/// Temperature softmax with max subtraction.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Pre-training success: `cos(z, z_aug) > α`. Zero-norm inputs fail.
pub fn judge_pretrain(z: &[f64], z_aug: &[f64], alpha: f64) -> bool {
    cosine(z, z_aug).is_some_and(|c| c > alpha)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || a.len() != b.len() {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Fine-tuning success: batch accuracy `> β`. Empty or mismatched batches fail.
pub fn judge_finetune(preds: &[usize], targets: &[usize], beta: f64) -> bool {
    if preds.is_empty() || preds.len() != targets.len() {
        return false;
    }
    let correct = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    correct as f64 / preds.len() as f64 > beta
}

/// Write history rows as `epoch,operator,success_rate,probability`.
pub fn write_history_csv<W: Write>(rows: &[HistoryRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "operator", "success_rate", "probability"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.operator.to_string(),
            format!("{:.6}", r.success_rate),
            format!("{:.6}", r.probability),
        ])?;
    }
    w.flush()
}
