//! Contrastive pre-training, subject-disjoint splitting, supervised
//! fine-tuning and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use log::{info, warn};
use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugKind};
use crate::augsched::{cosine, judge_finetune, HistoryRow, SamplerState};
use crate::config::RunConfig;
use crate::encoder::{
    argmax_rows, branch_backward, branch_forward, branch_input, branch_inputs, classify, classify_backward, encode,
    predict, project, project_backward, Branch, BranchCache, EncoderDims, Mode, ModelParams, TensorMap, CLASSIFIER,
};
use crate::error::{Error, Result};
use crate::objective::{contrastive_loss, contrastive_loss_grad, smoothed_ce_grad, ViewSet};
use crate::optim::{
    cosine_warm_restarts, default_stage_length, layer_lr, stage_for_epoch, unfrozen_set, AdamW, AdamWConfig, LayerLrs,
    Lookahead, Swa,
};
use crate::signal::EpochSet;

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Epochs evaluated per forward call during inference.
const EVAL_CHUNK: usize = 64;

/// Binary metrics with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Metrics {
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { accuracy: ratio(tp + tn, tp + fp + fn_ + tn), f1, precision, recall, tp, fp, fn_, tn }
    }
}

pub fn binary_metrics(preds: &[usize], targets: &[usize]) -> Result<Metrics> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} targets", preds.len()), targets.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in preds.iter().zip(targets) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_confusion(tp, fp, fn_, tn))
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    pub success_rates: BTreeMap<String, f64>,
}

pub fn write_jsonl<W: Write>(logs: &[EpochLog], mut out: W) -> Result<()> {
    for l in logs {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<EpochLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn success_rates(sampler: &SamplerState) -> BTreeMap<String, f64> {
    sampler
        .ops()
        .iter()
        .zip(sampler.scores())
        .map(|(k, s)| (k.name().to_string(), s))
        .collect()
}

fn gather(data: &Array3<f64>, idx: &[usize]) -> Array3<f64> {
    data.select(Axis(0), idx)
}

/// Predictions for the epochs at `idx`, gathered one chunk at a time so a
/// large subset is never copied whole.
fn predict_subset(params: &ModelParams, data: &Array3<f64>, idx: &[usize]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        preds.extend(predict(params, &gather(data, chunk), EVAL_CHUNK)?);
    }
    Ok(preds)
}

fn dims_for(cfg: &RunConfig, data: &EpochSet) -> EncoderDims {
    cfg.encoder.clone().with_channels(data.n_channels())
}

fn check_dataset(data: &EpochSet, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(format!("{what} dataset has no epochs")));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite(format!("{what} dataset")));
    }
    Ok(())
}

/// Split subjects into (train, validation) epoch indices with a seeded
/// shuffle; `fraction` of the subjects go to validation.
pub fn holdout_subjects(data: &EpochSet, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut subjects = data.subjects();
    subjects.shuffle(rng);
    let n_val = if fraction > 0.0 && subjects.len() >= 2 {
        ((fraction * subjects.len() as f64).round() as usize).clamp(1, subjects.len() - 1)
    } else {
        0
    };
    let val: BTreeSet<u32> = subjects[..n_val].iter().copied().collect();
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, s) in data.subject_ids.iter().enumerate() {
        if val.contains(s) {
            held.push(i);
        } else {
            train.push(i);
        }
    }
    (train, held)
}

// ---------------------------------------------------------------------------
// Pre-training

pub struct PretrainOutput {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub logs: Vec<EpochLog>,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct ContrastiveForward {
    loss: f64,
    grads: TensorMap,
    caches: Vec<(Branch, BranchCache)>,
}

/// Training-mode forward and backward over `x2 = [view1; view2]`.
fn contrastive_train_step(params: &ModelParams, x2: Array3<f64>, n: usize, cfg: &RunConfig) -> Result<ContrastiveForward> {
    let modes = vec![Mode::Train; params.dims.n_blocks()];
    let mut per_branch = Vec::with_capacity(3);
    for (branch, input) in Branch::ALL.into_iter().zip(branch_inputs(&x2)) {
        let (h, cache) = branch_forward(params, branch, input, &modes);
        let (z, pc) = project(params, branch, &h)?;
        per_branch.push((branch, cache, z, pc));
    }
    let zs: Vec<&Array2<f64>> = per_branch.iter().map(|(_, _, z, _)| z).collect();
    let (loss, d_zs) = contrastive_with_grad(&zs, n, cfg)?;
    let mut grads = TensorMap::new();
    let mut caches = Vec::with_capacity(3);
    for ((branch, cache, _, pc), dz) in per_branch.into_iter().zip(d_zs) {
        let dh = project_backward(params, branch, &pc, dz.view(), &mut grads);
        branch_backward(params, branch, &cache, dh.view(), 0, &mut grads);
        caches.push((branch, cache));
    }
    Ok(ContrastiveForward { loss, grads, caches })
}

fn split_views(z: &Array2<f64>, n: usize) -> [Array2<f64>; 2] {
    [z.slice(s![..n, ..]).to_owned(), z.slice(s![n.., ..]).to_owned()]
}

/// Contrastive loss over per-branch projections of two stacked views, and
/// the gradient with respect to each branch's stacked projections.
fn contrastive_with_grad(zs: &[&Array2<f64>], n: usize, cfg: &RunConfig) -> Result<(f64, Vec<Array2<f64>>)> {
    let tau = cfg.pretrain.tau;
    if cfg.pretrain.cross_branch {
        let views: Vec<Array2<f64>> = zs.iter().flat_map(|z| split_views(z, n)).collect();
        let (loss, g) = contrastive_loss_grad(&ViewSet::new(&views, tau)?)?;
        let grads = g
            .chunks(2)
            .map(|p| concatenate(Axis(0), &[p[0].view(), p[1].view()]).expect("same width"))
            .collect();
        return Ok((loss, grads));
    }
    let scale = 1.0 / zs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(zs.len());
    for z in zs {
        let (l, g) = contrastive_loss_grad(&ViewSet::new(&split_views(z, n), tau)?)?;
        loss += scale * l;
        grads.push(concatenate(Axis(0), &[g[0].view(), g[1].view()]).expect("same width") * scale);
    }
    Ok((loss, grads))
}

fn contrastive_eval_loss(params: &ModelParams, x2: &Array3<f64>, n: usize, cfg: &RunConfig) -> Result<f64> {
    let out = encode(params, x2, Mode::Eval)?;
    let zs = [&out.z_t, &out.z_f, &out.z_tf];
    if cfg.pretrain.cross_branch {
        let views: Vec<Array2<f64>> = zs.iter().flat_map(|z| split_views(z, n)).collect();
        return contrastive_loss(&ViewSet::new(&views, cfg.pretrain.tau)?);
    }
    let mut loss = 0.0;
    for z in zs {
        loss += contrastive_loss(&ViewSet::new(&split_views(z, n), cfg.pretrain.tau)?)? / 3.0;
    }
    Ok(loss)
}

/// Mean cosine between eval-mode time-frequency projections of originals
/// and their augmented copies.
fn mean_tf_cosine(params: &ModelParams, x: &Array3<f64>, aug: &Array3<f64>) -> Result<f64> {
    let k = x.dim().0;
    let stacked = concatenate(Axis(0), &[x.view(), aug.view()]).expect("same geometry");
    let modes = vec![Mode::Eval; params.dims.n_blocks()];
    let (h, _) = branch_forward(params, Branch::TimeFrequency, branch_input(Branch::TimeFrequency, &stacked), &modes);
    let (z, _) = project(params, Branch::TimeFrequency, &h)?;
    let total: f64 = (0..k)
        .map(|i| {
            let a = z.row(i).to_vec();
            let b = z.row(k + i).to_vec();
            cosine(&a, &b).unwrap_or(0.0)
        })
        .sum();
    Ok(total / k as f64)
}

fn sample_seeds(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.random()).collect()
}

fn all_layer_lrs(params: &ModelParams, lr: f64, skip: &[&str]) -> LayerLrs {
    params
        .layers
        .keys()
        .filter(|k| !skip.contains(&k.as_str()))
        .map(|k| (k.clone(), lr))
        .collect()
}

/// Self-supervised pre-training on unlabeled epochs.
pub fn pretrain(data: &EpochSet, cfg: &RunConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    check_dataset(data, "pre-training")?;
    let pc = &cfg.pretrain;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(&dims_for(cfg, data), cfg.seed)?;
    let (train_idx, val_idx) = holdout_subjects(data, pc.val_fraction, &mut rng);
    if train_idx.len() < 2 {
        return Err(Error::Empty("pre-training needs at least two training epochs".into()));
    }
    let mut sampler = SamplerState::for_pretraining(&cfg.sampler)?;
    let mut opt = AdamW::new(AdamWConfig { weight_decay: pc.weight_decay, ..AdamWConfig::default() })?;
    let val_views = fixed_val_views(data, &val_idx, cfg)?;

    let mut logs = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut wait = 0;
    let mut stopped_early = false;
    let mut order = train_idx.clone();
    for epoch in 0..pc.epochs {
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(pc.batch).filter(|b| b.len() >= 2).collect();
        let n_batches = batches.len();
        let (mut loss_sum, mut lr) = (0.0, pc.lr);
        for (bi, idx) in batches.into_iter().enumerate() {
            let x = gather(&data.data, idx);
            let n = idx.len();
            let plans = [sampler.sample_plan(&mut rng), sampler.sample_plan(&mut rng)];
            let seeds = [sample_seeds(&mut rng, n), sample_seeds(&mut rng, n)];
            let v1 = augment_batch(&x, &plans[0], &cfg.augment, data.fs, &seeds[0])?;
            let v2 = augment_batch(&x, &plans[1], &cfg.augment, data.fs, &seeds[1])?;
            let k = pc.judge_samples.min(n);
            let judge_x = x.slice(s![..k, .., ..]).to_owned();
            let sims = [
                mean_tf_cosine(&params, &judge_x, &v1.slice(s![..k, .., ..]).to_owned())?,
                mean_tf_cosine(&params, &judge_x, &v2.slice(s![..k, .., ..]).to_owned())?,
            ];
            let x2 = concatenate(Axis(0), &[v1.view(), v2.view()]).expect("same geometry");
            let step = contrastive_train_step(&params, x2, n, cfg)?;
            if !step.loss.is_finite() {
                return Err(Error::Training(format!("non-finite contrastive loss at epoch {epoch}, batch {bi}")));
            }
            lr = cosine_warm_restarts(epoch as f64 + bi as f64 / n_batches as f64, pc.t0, pc.mult, pc.lr, pc.lr_min);
            let lrs = all_layer_lrs(&params, lr, &[CLASSIFIER]);
            opt.step(&mut params, &step.grads, &lrs)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {bi}: {e}")))?;
            for (branch, cache) in &step.caches {
                params.absorb_batch_stats(*branch, cache, BN_MOMENTUM);
            }
            for (plan, sim) in plans.iter().zip(sims) {
                sampler.record(plan, sim > cfg.sampler.alpha)?;
            }
            loss_sum += step.loss;
        }
        sampler.snapshot(epoch);
        let train_loss = loss_sum / n_batches.max(1) as f64;
        let val_loss = match &val_views {
            Some(views) => Some(validation_loss(&params, views, cfg)?),
            None => None,
        };
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::Training(format!("non-finite loss after epoch {epoch}")));
        }
        info!("pretrain epoch {epoch}: loss {train_loss:.5} val {val_loss:?} lr {lr:.3e}");
        logs.push(EpochLog {
            phase: "pretrain".into(),
            epoch,
            loss: train_loss,
            val_loss,
            val_accuracy: None,
            lr,
            stage: None,
            success_rates: success_rates(&sampler),
        });
        if monitored < best.0 - pc.min_delta {
            best = (monitored, params.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= pc.patience {
                stopped_early = true;
                info!("early stop at epoch {epoch}; best epoch {}", best.2);
                break;
            }
        }
    }
    if !best.1.all_finite() {
        return Err(Error::Training("pre-trained parameters are not finite".into()));
    }
    Ok(PretrainOutput { params: best.1, logs, history: sampler.history().to_vec(), best_epoch: best.2, stopped_early })
}

/// Validation batches with two views each, drawn once from a fixed stream so
/// that the monitored loss is comparable across epochs.
fn fixed_val_views(data: &EpochSet, idx: &[usize], cfg: &RunConfig) -> Result<Option<Vec<(Array3<f64>, usize)>>> {
    if idx.len() < 2 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1d);
    let mut out = Vec::new();
    for chunk in idx.chunks(cfg.pretrain.batch).filter(|c| c.len() >= 2) {
        let x = gather(&data.data, chunk);
        let n = chunk.len();
        let mut views = Vec::with_capacity(2);
        for _ in 0..2 {
            let plan = vec![AugKind::ALL[rng.random_range(0..AugKind::ALL.len())]];
            views.push(augment_batch(&x, &plan, &cfg.augment, data.fs, &sample_seeds(&mut rng, n))?);
        }
        out.push((concatenate(Axis(0), &[views[0].view(), views[1].view()]).expect("same geometry"), n));
    }
    Ok(Some(out))
}

fn validation_loss(params: &ModelParams, views: &[(Array3<f64>, usize)], cfg: &RunConfig) -> Result<f64> {
    let mut total = 0.0;
    for (x2, n) in views {
        total += contrastive_eval_loss(params, x2, *n, cfg)?;
    }
    Ok(total / views.len() as f64)
}

// ---------------------------------------------------------------------------
// Splitting

/// Subject-disjoint partition of a labeled dataset, as epoch indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    fn subjects_of(data: &EpochSet, idx: &[usize]) -> BTreeSet<u32> {
        idx.iter().map(|&i| data.subject_ids[i]).collect()
    }

    /// Errors if any subject contributes epochs to more than one partition.
    pub fn check_disjoint(&self, data: &EpochSet) -> Result<()> {
        let parts = [
            ("train", Self::subjects_of(data, &self.train)),
            ("val", Self::subjects_of(data, &self.val)),
            ("test", Self::subjects_of(data, &self.test)),
        ];
        for a in 0..3 {
            for b in (a + 1)..3 {
                if let Some(s) = parts[a].1.intersection(&parts[b].1).next() {
                    return Err(Error::invalid(format!(
                        "subject {s} appears in both {} and {} partitions",
                        parts[a].0, parts[b].0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Class of each subject (majority label of its epochs).
fn subjects_by_class(data: &EpochSet) -> Result<BTreeMap<usize, Vec<u32>>> {
    let targets = data.targets()?;
    let mut votes: BTreeMap<u32, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&s, &t) in data.subject_ids.iter().zip(&targets) {
        *votes.entry(s).or_default().entry(t).or_default() += 1;
    }
    let mut by_class: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (s, v) in votes {
        let class = v.iter().max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c))).map(|(c, _)| *c).expect("non-empty");
        by_class.entry(class).or_default().push(s);
    }
    Ok(by_class)
}

/// Stratified subject-level split. Per class, `test_fraction` of subjects
/// form the test set; of the rest, `val_fraction` of subjects are held out
/// for validation and the labeled training budget of
/// `label_fraction * n_epochs` (split across classes by their share) is
/// filled with whole subjects, truncating within the last one.
pub fn split_labeled(data: &EpochSet, label_fraction: f64, test_fraction: f64, val_fraction: f64, rng: &mut ChaCha8Rng) -> Result<Split> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::invalid(format!("label fraction {label_fraction} outside (0, 1]")));
    }
    let by_class = subjects_by_class(data)?;
    if by_class.len() < 2 {
        return Err(Error::invalid("labeled data contains a single class"));
    }
    let by_subject = data.indices_by_subject();
    let total = data.n_epochs() as f64;
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for subjects in by_class.values() {
        if subjects.len() < 2 {
            return Err(Error::invalid("every class needs at least two subjects for a disjoint split"));
        }
        let mut subjects = subjects.clone();
        subjects.shuffle(rng);
        let n = subjects.len();
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let pool = n - n_test;
        let n_val = if val_fraction > 0.0 && pool >= 2 {
            ((val_fraction * pool as f64).round() as usize).clamp(1, pool - 1)
        } else {
            0
        };
        let class_epochs: usize = subjects.iter().map(|s| by_subject[s].len()).sum();
        let budget = ((label_fraction * total * class_epochs as f64 / total).round() as usize).max(1);
        for s in &subjects[..n_test] {
            split.test.extend(&by_subject[s]);
        }
        for s in &subjects[n_test..n_test + n_val] {
            split.val.extend(&by_subject[s]);
        }
        let mut taken = 0;
        for s in &subjects[n_test + n_val..] {
            if taken >= budget {
                break;
            }
            let mut idx = by_subject[s].clone();
            if taken + idx.len() > budget {
                idx.shuffle(rng);
                idx.truncate(budget - taken);
                idx.sort_unstable();
            }
            taken += idx.len();
            split.train.extend(idx);
        }
        if taken < budget {
            warn!("label budget of {budget} epochs capped at {taken} available epochs");
        }
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

// ---------------------------------------------------------------------------
// Fine-tuning

/// Layers trained during fine-tuning, bottom to top. Depth `l` is the
/// 1-based position in this list.
pub fn finetune_units(dims: &EncoderDims) -> Vec<String> {
    let mut units: Vec<String> = (0..dims.n_blocks()).map(|i| Branch::TimeFrequency.block_name(i)).collect();
    units.push(CLASSIFIER.to_string());
    units
}

pub struct FinetuneOutput {
    pub params: ModelParams,
    pub split: Split,
    pub test_metrics: Metrics,
    pub logs: Vec<EpochLog>,
    pub history: Vec<HistoryRow>,
    pub swa_checkpoints: usize,
}

/// Layer learning rates and batch-norm modes for an unfreeze stage.
struct StagePlan {
    lrs: LayerLrs,
    modes: Vec<Mode>,
    /// Lowest unfrozen conv block (0-based), or `n_blocks` when only the
    /// classifier trains.
    lowest: usize,
}

fn stage_plan(dims: &EncoderDims, units: &[String], stage: usize, lr: f64, decay: f64) -> Result<StagePlan> {
    let n_units = units.len();
    let mut lrs = LayerLrs::new();
    for l in unfrozen_set(n_units, stage)? {
        lrs.insert(units[l - 1].clone(), layer_lr(lr, decay, n_units, l)?);
    }
    let n_blocks = dims.n_blocks();
    let lowest = (0..n_blocks).find(|&i| lrs.contains_key(&units[i])).unwrap_or(n_blocks);
    let modes = (0..n_blocks).map(|i| if i >= lowest { Mode::Train } else { Mode::Eval }).collect();
    Ok(StagePlan { lrs, modes, lowest })
}

fn unit_tensors(params: &ModelParams, units: &[String]) -> TensorMap {
    units
        .iter()
        .map(|u| (u.clone(), params.layers[u].tensors.clone()))
        .collect()
}

/// Supervised fine-tuning of a pre-trained model on a labeled split.
pub fn finetune(pretrained: &ModelParams, data: &EpochSet, cfg: &RunConfig) -> Result<FinetuneOutput> {
    cfg.validate()?;
    check_dataset(data, "fine-tuning")?;
    let fc = &cfg.finetune;
    if pretrained.dims.in_channels != data.n_channels() {
        return Err(Error::shape(format!("{} channels", pretrained.dims.in_channels), data.n_channels()));
    }
    let targets = data.targets()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let split = split_labeled(data, fc.label_fraction, fc.test_fraction, fc.val_fraction, &mut rng)?;
    split.check_disjoint(data)?;
    let classes: BTreeSet<usize> = split.train.iter().map(|&i| targets[i]).collect();
    if classes.len() < 2 {
        return Err(Error::invalid("labeled training subset contains a single class"));
    }
    info!("split: {} train, {} val, {} test epochs", split.train.len(), split.val.len(), split.test.len());

    let dims = pretrained.dims.clone();
    let units = finetune_units(&dims);
    let n_units = units.len();
    let stage_len = fc.stage_epochs.unwrap_or_else(|| default_stage_length(fc.epochs, n_units));
    let swa_start = fc.epochs - ((fc.swa_fraction * fc.epochs as f64).ceil() as usize).clamp(1, fc.epochs);

    let mut params = pretrained.clone();
    let mut sampler = SamplerState::for_finetuning(&cfg.sampler)?;
    let mut opt = AdamW::new(AdamWConfig { weight_decay: fc.weight_decay, ..AdamWConfig::default() })?;
    let mut lookahead = Lookahead::new(fc.lookahead, unit_tensors(&params, &units))?;
    let mut swa = Swa::new();
    let mut logs = Vec::new();
    let mut order = split.train.clone();
    let mut final_modes = vec![Mode::Eval; dims.n_blocks()];
    for epoch in 0..fc.epochs {
        let stage = stage_for_epoch(epoch, stage_len, n_units);
        let plan_s = &stage_plan(&dims, &units, stage, fc.lr, fc.layer_decay)?;
        final_modes.clone_from(&plan_s.modes);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for idx in order.chunks(fc.batch) {
            let x = gather(&data.data, idx);
            let y: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let plan = sampler.sample_plan(&mut rng);
            let seeds = sample_seeds(&mut rng, idx.len());
            let xa = augment_batch(&x, &plan, &cfg.augment, data.fs, &seeds)?;
            let input = branch_input(Branch::TimeFrequency, &xa);
            let (h, cache) = branch_forward(&params, Branch::TimeFrequency, input, &plan_s.modes);
            let logits = classify(&params, &h)?;
            let (loss, d_logits) = smoothed_ce_grad(&logits, &y, fc.smoothing)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite fine-tuning loss at epoch {epoch}")));
            }
            let mut grads = TensorMap::new();
            let d_h = classify_backward(&params, &h, d_logits.view(), &mut grads);
            if plan_s.lowest < dims.n_blocks() {
                branch_backward(&params, Branch::TimeFrequency, &cache, d_h.view(), plan_s.lowest, &mut grads);
            }
            lookahead
                .step(&mut opt, &mut params, &grads, &plan_s.lrs)
                .map_err(|e| Error::Training(format!("fine-tuning epoch {epoch}: {e}")))?;
            params.absorb_batch_stats(Branch::TimeFrequency, &cache, BN_MOMENTUM);
            sampler.record(&plan, judge_finetune(&argmax_rows(&logits), &y, cfg.sampler.beta))?;
            loss_sum += loss;
            n_batches += 1;
        }
        sampler.snapshot(epoch);
        if epoch >= swa_start && ((epoch - swa_start) % fc.swa_every == 0 || epoch + 1 == fc.epochs) {
            swa.update(lookahead.slow())?;
        }
        let last = epoch + 1 == fc.epochs;
        let val_accuracy = if !split.val.is_empty() && (last || (epoch + 1) % fc.val_every.max(1) == 0) {
            let preds = predict_subset(&params, &data.data, &split.val)?;
            let truth: Vec<usize> = split.val.iter().map(|&i| targets[i]).collect();
            Some(binary_metrics(&preds, &truth)?.accuracy)
        } else {
            None
        };
        let lr_top = plan_s.lrs.get(CLASSIFIER).copied().unwrap_or(fc.lr);
        let loss = loss_sum / n_batches.max(1) as f64;
        info!("finetune epoch {epoch}: stage {stage} loss {loss:.5} val_acc {val_accuracy:?}");
        logs.push(EpochLog {
            phase: "finetune".into(),
            epoch,
            loss,
            val_loss: None,
            val_accuracy,
            lr: lr_top,
            stage: Some(stage),
            success_rates: success_rates(&sampler),
        });
    }
    let swa_checkpoints = swa.count();
    params.set_trainable(&swa.average()?)?;
    recompute_bn(&mut params, &gather(&data.data, &split.train), &final_modes, fc.batch)?;
    if !params.all_finite() {
        return Err(Error::Training("fine-tuned parameters are not finite".into()));
    }
    let truth: Vec<usize> = split.test.iter().map(|&i| targets[i]).collect();
    let test_metrics = binary_metrics(&predict_subset(&params, &data.data, &split.test)?, &truth)?;
    Ok(FinetuneOutput { params, split, test_metrics, logs, history: sampler.history().to_vec(), swa_checkpoints })
}

/// Replace the running statistics of every training-mode block of the
/// time-frequency branch with the average batch statistics over one pass of
/// `x`.
pub fn recompute_bn(params: &mut ModelParams, x: &Array3<f64>, modes: &[Mode], batch: usize) -> Result<()> {
    let n_blocks = params.dims.n_blocks();
    let mut sums: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; n_blocks];
    let mut count = 0usize;
    let n = x.dim().0;
    let mut start = 0;
    while start < n {
        let end = (start + batch.max(1)).min(n);
        let xb = x.slice(s![start..end, .., ..]).to_owned();
        let (_, cache) = branch_forward(params, Branch::TimeFrequency, branch_input(Branch::TimeFrequency, &xb), modes);
        for (i, block) in cache.blocks.iter().enumerate() {
            if let Some((m, v)) = &block.norm.batch_stats {
                let entry = sums[i].get_or_insert_with(|| (vec![0.0; m.len()], vec![0.0; v.len()]));
                entry.0.iter_mut().zip(m).for_each(|(a, b)| *a += b);
                entry.1.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
        count += 1;
        start = end;
    }
    for (i, sum) in sums.into_iter().enumerate() {
        let Some((m, v)) = sum else { continue };
        let layer = params.layer_mut(&Branch::TimeFrequency.block_name(i))?;
        for (name, vals) in [("bn.running_mean", m), ("bn.running_var", v)] {
            let buf = layer.buffers.get_mut(name).expect("bn buffer");
            buf.iter_mut().zip(vals).for_each(|(r, s)| *r = s / count as f64);
        }
    }
    Ok(())
}

/// Eval-mode metrics over a labeled set.
pub fn evaluate(params: &ModelParams, data: &EpochSet) -> Result<Metrics> {
    check_dataset(data, "test")?;
    let preds = predict(params, &data.data, EVAL_CHUNK)?;
    binary_metrics(&preds, &data.targets()?)
}

/// Class probabilities for every epoch.
pub fn predict_proba(params: &ModelParams, data: &Array3<f64>) -> Result<Array2<f64>> {
    let n = data.dim().0;
    let mut rows = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let l = crate::encoder::logits(params, &data.slice(s![start..end, .., ..]).to_owned())?;
        rows.push(crate::objective::softmax_rows(&l));
        start = end;
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    concatenate(Axis(0), &views).map_err(|_| Error::Empty("no epochs".into()))
}
