//! Acceptance checks shared by the integration tests and the acceptance
//! harness. Every check compares library output against an independent
//! oracle and reports the worst error it saw.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use mclpd::augment::{
    amplitude_scale, band_noise, band_noise_with_residue, compose, frequency_shift, frequency_shift_with_residue,
    gaussian_noise, random_mask, spectral_scale, spectral_scale_with_residue, time_shift, AugKind, AugmentConfig,
};
use mclpd::augsched::{softmax, success_score, SamplerState, UNSEEN_PRIOR};
use mclpd::config::RunConfig;
use mclpd::encoder::{branch_forward, branch_input, Branch, EncoderDims, Mode, ModelParams, TensorMap};
use mclpd::interpret::{explain, ranking};
use mclpd::io::{read_checkpoint, read_container, write_checkpoint, write_container, CheckpointManifest};
use mclpd::objective::{contrastive_loss, contrastive_loss_grad, ntxent_pair, smoothed_ce, smoothed_ce_grad, ViewSet};
use mclpd::optim::{layer_lr, AdamW, AdamWConfig, LayerLrs, Lookahead, LookaheadConfig, Swa, TensorStore};
use mclpd::pipeline::{finetune, split_labeled};
use mclpd::signal::EpochSet;
use mclpd::synth::{channel_names, generate, SynthSpec};
use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }

    /// Pass when `worst < tol`.
    pub fn below(name: impl Into<String>, worst: f64, tol: f64) -> Self {
        Self::new(name, worst < tol, format!("worst {worst:.3e} (tol {tol:.0e})"))
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Panics with every failing line.
pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(Check::line).collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

/// Runs `f` and appends a runtime check against `budget`.
pub fn timed(name: &str, budget: Duration, f: impl FnOnce() -> Vec<Check>) -> Vec<Check> {
    let t = Instant::now();
    let mut checks = f();
    let took = t.elapsed();
    checks.push(Check::new(
        format!("{name} runtime"),
        took < budget,
        format!("{:.2} s (budget {} s)", took.as_secs_f64(), budget.as_secs()),
    ));
    checks
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(1e-300)
    }
}

fn randn2(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
}

fn randn_d(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample(StandardNormal))
}

// ---------------------------------------------------------------------------
// Formulas

/// Independent per-sample NT-Xent: explicit cosines, explicit sums.
pub fn brute_ntxent(zi: &Array2<f64>, zj: &Array2<f64>, tau: f64) -> Vec<f64> {
    let cos = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        dot / (na.sqrt() * nb.sqrt())
    };
    let n = zi.nrows();
    (0..n)
        .map(|k| {
            let pos = (cos(zi.row(k), zj.row(k)) / tau).exp();
            let mut denom = 0.0;
            for l in 0..n {
                denom += (cos(zi.row(k), zj.row(l)) / tau).exp();
            }
            -(pos / denom).ln()
        })
        .collect()
}

/// `2 / (M (M-1)) * sum_{i<j} mean_k (l^(i,j) + l^(j,i))`.
pub fn brute_multiview(views: &[Array2<f64>], tau: f64) -> f64 {
    let m = views.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let a = brute_ntxent(&views[i], &views[j], tau);
            let b = brute_ntxent(&views[j], &views[i], tau);
            let n = a.len() as f64;
            total += a.iter().zip(&b).map(|(x, y)| x + y).sum::<f64>() / n;
        }
    }
    2.0 / (m * (m - 1)) as f64 * total
}

/// Single tensor map `{layer: {"w": tensor}}`.
fn single(layer: &str, t: ArrayD<f64>) -> TensorMap {
    let mut inner = BTreeMap::new();
    inner.insert("w".to_string(), t);
    let mut m = TensorMap::new();
    m.insert(layer.to_string(), inner);
    m
}

pub fn formula_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checks = Vec::new();

    // Sampler probabilities from recorded counts.
    let mut worst = 0.0f64;
    let mut instances = 0;
    for &temp in &[0.5, 1.0, 2.0, 0.1] {
        let mut s = SamplerState::new(AugKind::ALL.to_vec(), temp, 0.5).unwrap();
        let mut succ = [0u64; 7];
        let mut tot = [0u64; 7];
        for _ in 0..40 {
            let i = rng.random_range(0..6);
            let ok = rng.random_bool(0.3 + 0.1 * i as f64);
            s.record(&[AugKind::ALL[i]], ok).unwrap();
            tot[i] += 1;
            succ[i] += ok as u64;
        }
        let scores: Vec<f64> = (0..7).map(|i| if tot[i] == 0 { UNSEEN_PRIOR } else { succ[i] as f64 / tot[i] as f64 }).collect();
        let denom: f64 = scores.iter().map(|s| (s / temp).exp()).sum();
        for (p, sc) in s.probabilities().iter().zip(&scores) {
            worst = worst.max(rel_err(*p, (sc / temp).exp() / denom));
        }
        instances += 1;
    }
    checks.push(Check::below(format!("softmax operator probabilities ({instances} instances)"), worst, 1e-6));

    let cases = [(3u64, 4u64, 0.75), (0, 5, 0.0), (7, 7, 1.0), (2, 3, 2.0 / 3.0)];
    let worst = cases.iter().map(|&(s, n, want)| (success_score(s, n) - want).abs() / want.max(1e-300)).fold(0.0, f64::max);
    let worst = if cases.iter().any(|&(s, n, want)| want == 0.0 && success_score(s, n) != 0.0) { f64::INFINITY } else { worst };
    checks.push(Check::below(format!("success score ({} instances)", cases.len()), worst, 1e-6));

    // NT-Xent against the O(N^2) oracle, plus the closed-form orthogonal case.
    let mut worst = 0.0f64;
    for (n, p, tau) in [(4, 3, 0.1), (6, 5, 0.5), (3, 8, 1.0), (8, 4, 0.2)] {
        let a = randn2(&mut rng, n, p);
        let b = randn2(&mut rng, n, p);
        let v = ViewSet::new(&[a.clone(), b.clone()], tau).unwrap();
        for (got, want) in ntxent_pair(&v, 0, 1).unwrap().iter().zip(brute_ntxent(&a, &b, tau)) {
            worst = worst.max(rel_err(*got, want));
        }
    }
    let e = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
    let v = ViewSet::new(&[e.clone(), e], 0.1).unwrap();
    worst = worst.max(rel_err(ntxent_pair(&v, 0, 1).unwrap()[0], (1.0 + (-10.0f64).exp()).ln()));
    checks.push(Check::below("NT-Xent pair vs brute force (5 instances)", worst, 1e-6));

    let mut worst = 0.0f64;
    for (m, n, p, tau) in [(2, 4, 3, 0.1), (3, 5, 4, 0.5), (4, 3, 6, 0.2), (6, 4, 4, 1.0)] {
        let views: Vec<Array2<f64>> = (0..m).map(|_| randn2(&mut rng, n, p)).collect();
        let v = ViewSet::new(&views, tau).unwrap();
        worst = worst.max(rel_err(contrastive_loss(&v).unwrap(), brute_multiview(&views, tau)));
    }
    // Identical views of mutually orthogonal samples.
    let eye = Array2::<f64>::eye(4);
    let v = ViewSet::new(&[eye.clone(), eye.clone(), eye], 0.1).unwrap();
    worst = worst.max(rel_err(contrastive_loss(&v).unwrap(), 2.0 * (1.0 + 3.0 * (-10.0f64).exp()).ln()));
    checks.push(Check::below("multi-view contrastive loss (5 instances)", worst, 1e-6));

    let cases = [(1e-3, 0.5, 4, 2, 2.5e-4), (1e-3, 0.65, 4, 4, 1e-3), (2e-3, 0.65, 4, 1, 2e-3 * 0.65f64.powi(3)), (1e-2, 0.9, 6, 3, 1e-2 * 0.9f64.powi(3))];
    let worst = cases.iter().map(|&(e, g, l_total, l, want)| rel_err(layer_lr(e, g, l_total, l).unwrap(), want)).fold(0.0, f64::max);
    checks.push(Check::below(format!("layer-wise learning rate ({} instances)", cases.len()), worst, 1e-6));

    // One Lookahead-wrapped AdamW inner step (k large, so no sync) against a
    // hand evaluation of the decoupled-decay update.
    let mut worst = 0.0f64;
    for (lr, wd) in [(1e-3, 1e-2), (5e-2, 0.0), (1e-1, 1e-1)] {
        let theta = randn_d(&mut rng, &[5]);
        let g = randn_d(&mut rng, &[5]);
        let mut params = single("a", theta.clone());
        let mut opt = AdamW::new(AdamWConfig { weight_decay: wd, ..AdamWConfig::default() }).unwrap();
        let mut la = Lookahead::new(LookaheadConfig { k: 1000, beta: 0.5 }, params.clone()).unwrap();
        let lrs: LayerLrs = [("a".to_string(), lr)].into();
        let grads = single("a", g.clone());
        // Two steps to exercise the bias corrections with accumulated moments.
        la.step(&mut opt, &mut params, &grads, &lrs).unwrap();
        la.step(&mut opt, &mut params, &grads, &lrs).unwrap();
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        for i in 0..5 {
            let mut p = theta[i];
            let (mut m, mut v) = (0.0, 0.0);
            for t in 1..=2 {
                m = b1 * m + (1.0 - b1) * g[i];
                v = b2 * v + (1.0 - b2) * g[i] * g[i];
                let mhat = m / (1.0 - b1.powi(t));
                let vhat = v / (1.0 - b2.powi(t));
                p = p * (1.0 - lr * wd) - lr * mhat / (vhat.sqrt() + eps);
            }
            worst = worst.max(rel_err(params["a"]["w"][i], p));
        }
    }
    checks.push(Check::below("Lookahead inner AdamW step (3 instances)", worst, 1e-6));

    // Slow/fast sync: phi' = phi + beta (theta' - phi), theta reset to phi'.
    let mut worst = 0.0f64;
    let zero_grad = single("a", ArrayD::zeros(IxDyn(&[1])));
    for (phi0, theta0, beta, want) in [(0.0, 2.0, 0.5, 1.0), (1.0, -3.0, 0.25, 0.0), (-2.0, 6.0, 1.0, 6.0), (4.0, 5.0, 0.1, 4.1)] {
        let mut params = single("a", ArrayD::from_elem(IxDyn(&[1]), theta0));
        let mut la = Lookahead::new(LookaheadConfig { k: 1, beta }, single("a", ArrayD::from_elem(IxDyn(&[1]), phi0))).unwrap();
        // Zero learning rate: the inner step leaves theta at theta0.
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }).unwrap();
        let lrs: LayerLrs = [("a".to_string(), 0.0)].into();
        la.step(&mut opt, &mut params, &zero_grad, &lrs).unwrap();
        worst = worst.max(rel_err(la.slow()["a"]["w"][0], want));
        worst = worst.max(rel_err(params["a"]["w"][0], want));
    }
    checks.push(Check::below("Lookahead sync (4 instances)", worst, 1e-6));
    checks
}

// ---------------------------------------------------------------------------
// Gradients

fn fd_rel(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let scale = analytic.mapv(|v| v * v).sum().sqrt().max(numeric.mapv(|v| v * v).sum().sqrt());
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(1e-12)
    }
}

pub fn gradient_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = 1e-5;
    let mut worst_nt = 0.0f64;
    let mut worst_ce = 0.0f64;
    let mut n_nt = 0;
    let mut n_ce = 0;
    for b in 1..=4 {
        for p in 2..=4 {
            for m in [2, 3] {
                let tau = rng.random_range(0.1..1.0);
                let views: Vec<Array2<f64>> = (0..m).map(|_| randn2(&mut rng, b, p)).collect();
                let (_, grads) = contrastive_loss_grad(&ViewSet::new(&views, tau).unwrap()).unwrap();
                for v in 0..m {
                    let mut num = Array2::zeros((b, p));
                    for r in 0..b {
                        for c in 0..p {
                            let mut plus = views.clone();
                            plus[v][[r, c]] += h;
                            let mut minus = views.clone();
                            minus[v][[r, c]] -= h;
                            let lp = contrastive_loss(&ViewSet::new(&plus, tau).unwrap()).unwrap();
                            let lm = contrastive_loss(&ViewSet::new(&minus, tau).unwrap()).unwrap();
                            num[[r, c]] = (lp - lm) / (2.0 * h);
                        }
                    }
                    worst_nt = worst_nt.max(fd_rel(&grads[v], &num));
                }
                n_nt += 1;
            }
            let k = p;
            let logits = randn2(&mut rng, b, k) * 2.0;
            let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let eps = rng.random_range(0.0..0.3);
            let (_, grad) = smoothed_ce_grad(&logits, &targets, eps).unwrap();
            let mut num = Array2::zeros((b, k));
            for r in 0..b {
                for c in 0..k {
                    let mut plus = logits.clone();
                    plus[[r, c]] += h;
                    let mut minus = logits.clone();
                    minus[[r, c]] -= h;
                    num[[r, c]] = (smoothed_ce(&plus, &targets, eps).unwrap() - smoothed_ce(&minus, &targets, eps).unwrap()) / (2.0 * h);
                }
            }
            worst_ce = worst_ce.max(fd_rel(&grad, &num));
            n_ce += 1;
        }
    }
    vec![
        Check::below(format!("NT-Xent gradient vs central differences ({n_nt} instances)"), worst_nt, 1e-4),
        Check::below(format!("smoothed cross-entropy gradient vs central differences ({n_ce} instances)"), worst_ce, 1e-4),
    ]
}

// ---------------------------------------------------------------------------
// Augmentation

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn augmentation_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let fs = 500.0;
    let mut checks = Vec::new();
    let mut identity = Vec::new();
    for t in [500usize, 999] {
        let mut x = randn2(&mut rng, 4, t);
        // A silent stretch so the mask has an identity case.
        x.slice_mut(ndarray::s![.., 100..120]).fill(0.0);
        let xv = x.view();
        identity.push(("gaussian_noise sigma=0", max_abs_diff(&gaussian_noise(xv, 0.0, &mut rng), &x), 0.0));
        identity.push(("time_shift 0", max_abs_diff(&time_shift(xv, 0), &x), 0.0));
        identity.push(("time_shift T", max_abs_diff(&time_shift(xv, t as i64), &x), 0.0));
        identity.push(("amplitude_scale 1", max_abs_diff(&amplitude_scale(xv, 1.0), &x), 0.0));
        identity.push(("random_mask on a silent segment", max_abs_diff(&random_mask(xv, 100, 119).unwrap(), &x), 0.0));
        identity.push(("frequency_shift 0", max_abs_diff(&frequency_shift(xv, 0.0), &x), 1e-6));
        identity.push(("spectral_scale 1", max_abs_diff(&spectral_scale(xv, 1.0), &x), 1e-6));
        identity.push(("band_noise sigma=0", max_abs_diff(&band_noise(xv, (13.0, 30.0), 0.0, fs, &mut rng).unwrap(), &x), 1e-6));
        identity.push(("band_noise empty band", max_abs_diff(&band_noise(xv, (20.0, 20.0), 0.2, fs, &mut rng).unwrap(), &x), 1e-6));
        let plan = compose(&[AugKind::AmplitudeScale], xv, &AugmentConfig { amplitude_range: (1.0, 1.0), ..AugmentConfig::default() }, fs, 5).unwrap();
        identity.push(("compose [amplitude_scale 1]", max_abs_diff(&plan.output, &x), 0.0));
    }
    let failing: Vec<String> = identity.iter().filter(|(_, e, tol)| if *tol == 0.0 { *e != 0.0 } else { *e >= *tol }).map(|(n, e, _)| format!("{n} ({e:.2e})")).collect();
    let worst = identity.iter().map(|(_, e, _)| *e).fold(0.0, f64::max);
    checks.push(Check::new(
        "identity parameters for all 7 operators",
        failing.is_empty(),
        if failing.is_empty() {
            format!("{} cases, time-domain exact, spectral worst {worst:.2e} (tol 1e-6)", identity.len())
        } else {
            format!("failing: {}", failing.join(", "))
        },
    ));

    let mut worst = 0.0f64;
    for beta in [0.5, 0.8, 1.2, 1.5] {
        for t in [256usize, 1001] {
            let x = randn2(&mut rng, 3, t);
            let y = spectral_scale(x.view(), beta);
            let ex = x.mapv(|v| v * v).sum();
            let ey = y.mapv(|v| v * v).sum();
            worst = worst.max(rel_err(ey, beta * beta * ex));
        }
    }
    checks.push(Check::below("spectral scale energy law (8 instances)", worst, 1e-6));

    let mut worst = 0.0f64;
    for t in [500usize, 777, 1024] {
        let x = randn2(&mut rng, 3, t);
        let xv = x.view();
        for phase in [-2.0, 0.7, 1.9] {
            worst = worst.max(frequency_shift_with_residue(xv, phase).1);
        }
        for beta in [0.5, 1.5] {
            worst = worst.max(spectral_scale_with_residue(xv, beta).1);
        }
        for (lo, hi) in [(0.5, 4.0), (13.0, 30.0), (30.0, 250.0)] {
            worst = worst.max(band_noise_with_residue(xv, (lo, hi), 0.2, fs, &mut rng).unwrap().1);
        }
    }
    checks.push(Check::below("spectral operators realness residue", worst, 1e-9));

    let dims = EncoderDims { in_channels: 3, widths: vec![8, 16, 16], kernels: vec![7, 5, 3], stride: 2, ..EncoderDims::default() };
    let params = ModelParams::init(&dims, 3).unwrap();
    let mut worst = 0.0f64;
    for shift in [1i64, 37, -120, 255] {
        let x = Array3::from_shape_simple_fn((2, 3, 256), || rng.sample::<f64, _>(StandardNormal));
        let mut xs = x.clone();
        for (mut out, src) in xs.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
            out.assign(&time_shift(src, shift));
        }
        let modes = [Mode::Eval; 3];
        let (h, _) = branch_forward(&params, Branch::Frequency, branch_input(Branch::Frequency, &x), &modes);
        let (hs, _) = branch_forward(&params, Branch::Frequency, branch_input(Branch::Frequency, &xs), &modes);
        worst = worst.max(max_abs_diff(&h, &hs));
    }
    checks.push(Check::below("frequency branch circular-shift invariance", worst, 1e-5));
    checks
}

// ---------------------------------------------------------------------------
// Sampler

pub fn sampler_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut checks = Vec::new();

    let mut worst_norm = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..12);
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let temp = rng.random_range(0.05..5.0);
        let p = softmax(&scores, temp).unwrap();
        worst_norm = worst_norm.max((p.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let q = softmax(&shifted, temp).unwrap();
        worst_shift = worst_shift.max(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    checks.push(Check::below("softmax normalization (200 instances)", worst_norm, 1e-9));
    checks.push(Check::below("softmax shift invariance (200 instances)", worst_shift, 1e-12));

    // Monte Carlo marginals of the first drawn operator against the softmax
    // probabilities, and of the combination size against uniform 1..=3.
    let mut s = SamplerState::new(AugKind::ALL.to_vec(), 0.5, 0.5).unwrap();
    for (i, &op) in AugKind::ALL.iter().enumerate() {
        for t in 0..10 {
            s.record(&[op], t < i + 2).unwrap();
        }
    }
    let probs = s.probabilities();
    let draws = 100_000;
    let mut first = [0usize; 7];
    let mut sizes = [0usize; 4];
    for _ in 0..draws {
        let plan = s.sample_plan(&mut rng);
        first[AugKind::ALL.iter().position(|k| *k == plan[0]).unwrap()] += 1;
        sizes[plan.len()] += 1;
    }
    let worst_op = (0..7).map(|i| rel_err(first[i] as f64 / draws as f64, probs[i])).fold(0.0, f64::max);
    let worst_size = (1..=3).map(|n| rel_err(sizes[n] as f64 / draws as f64, 1.0 / 3.0)).fold(0.0, f64::max);
    checks.push(Check::new(
        "Monte Carlo operator and combination-size frequencies (1e5 draws)",
        worst_op < 0.02 && worst_size < 0.02,
        format!("worst relative deviation {:.3e} operators, {:.3e} sizes (tol 2e-2)", worst_op, worst_size),
    ));

    // Success-rate history: one bounded row per operator per epoch.
    let mut s = SamplerState::new(AugKind::ALL.to_vec(), 1.0, 0.5).unwrap();
    let epochs = 20;
    for epoch in 0..epochs {
        for _ in 0..15 {
            let plan = s.sample_plan(&mut rng);
            let ok = rng.random_bool(0.6);
            s.record(&plan, ok).unwrap();
        }
        s.snapshot(epoch);
    }
    let h = s.history();
    let bounded = h.iter().all(|r| (0.0..=1.0).contains(&r.success_rate) && (0.0..=1.0).contains(&r.probability));
    let per_epoch = (0..epochs).all(|e| h.iter().filter(|r| r.epoch == e).count() == 7);
    let mut csv = Vec::new();
    mclpd::augsched::write_history_csv(h, &mut csv).unwrap();
    let lines = String::from_utf8(csv).unwrap().lines().count();
    checks.push(Check::new(
        "success-rate history bounded and emitted per epoch",
        bounded && per_epoch && h.len() == 7 * epochs && lines == 7 * epochs + 1,
        format!("{} rows over {epochs} epochs, bounded {bounded}, csv lines {lines}", h.len()),
    ));
    checks
}

// ---------------------------------------------------------------------------
// Fine-tuning mechanics

fn tiny_dims(c: usize) -> EncoderDims {
    EncoderDims { in_channels: c, widths: vec![4, 8, 8], kernels: vec![5, 3, 3], stride: 2, proj_hidden: 8, proj_dim: 4, n_classes: 2 }
}

fn random_like(rng: &mut ChaCha8Rng, like: &TensorMap) -> TensorMap {
    like.iter()
        .map(|(l, ts)| (l.clone(), ts.iter().map(|(n, t)| (n.clone(), randn_d(rng, t.shape()))).collect()))
        .collect()
}

fn max_map_diff(a: &TensorMap, b: &TensorMap) -> f64 {
    let mut worst = 0.0f64;
    for (layer, ts) in a {
        for (name, t) in ts {
            let o = b.tensor(layer, name).expect("same layout");
            worst = worst.max((t - o).iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }
    worst
}

/// Synthetic labeled set with `n_subjects` per class.
pub fn labeled_set(n_subjects: usize, epochs_per_subject: usize, seed: u64) -> EpochSet {
    generate(&SynthSpec {
        n_subjects_per_class: n_subjects,
        epochs_per_subject,
        n_channels: 4,
        duration_s: 1.0,
        fs: 128.0,
        signature_channels: channel_names(4)[..2].to_vec(),
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn mechanics_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut checks = Vec::new();

    // Frozen layers: gradients arrive for every layer, only the unfrozen
    // layer has a learning rate.
    let params0 = ModelParams::init(&tiny_dims(3), 1).unwrap();
    let mut params = params0.clone();
    let all = params.trainable();
    let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
    let mut la = Lookahead::new(LookaheadConfig::default(), all.clone()).unwrap();
    let lrs: LayerLrs = [("classifier".to_string(), 1e-2), ("tf.block3".to_string(), 1e-3)].into();
    for _ in 0..100 {
        let grads = random_like(&mut rng, &all);
        la.step(&mut opt, &mut params, &grads, &lrs).unwrap();
    }
    let mut frozen_equal = true;
    let mut moved = true;
    for (name, layer) in &params.layers {
        let same = layer.tensors == params0.layers[name].tensors && layer.buffers == params0.layers[name].buffers;
        if lrs.contains_key(name) {
            moved &= !same;
        } else {
            frozen_equal &= same;
        }
    }
    checks.push(Check::new(
        "frozen layers bit-identical over 100 steps",
        frozen_equal && moved,
        format!("frozen unchanged {frozen_equal}, unfrozen updated {moved}"),
    ));

    // Lookahead with beta=1, k=1 is the inner optimizer.
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let start = random_like(&mut rng, &all);
        let mut a = start.clone();
        let mut b = start.clone();
        let mut opt_a = AdamW::new(AdamWConfig::default()).unwrap();
        let mut opt_b = AdamW::new(AdamWConfig::default()).unwrap();
        let mut la = Lookahead::new(LookaheadConfig { k: 1, beta: 1.0 }, start.clone()).unwrap();
        let lrs: LayerLrs = all.keys().map(|k| (k.clone(), 1e-2 * (seed + 1) as f64)).collect();
        for _ in 0..100 {
            let grads = random_like(&mut rng, &all);
            la.step(&mut opt_a, &mut a, &grads, &lrs).unwrap();
            opt_b.step(&mut b, &grads, &lrs).unwrap();
        }
        worst = worst.max(max_map_diff(&a, &b)).max(max_map_diff(la.slow(), &b));
    }
    checks.push(Check::below("Lookahead beta=1, k=1 equals AdamW (3 runs x 100 steps)", worst, 1e-12));

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let ckpts: Vec<TensorMap> = (0..6).map(|_| random_like(&mut rng, &all)).collect();
        let mut order: Vec<usize> = (0..6).collect();
        let mut reference = Swa::new();
        for c in &ckpts {
            reference.update(c).unwrap();
        }
        let reference = reference.average().unwrap();
        for _ in 0..5 {
            order.shuffle(&mut rng);
            let mut swa = Swa::new();
            for &i in &order {
                swa.update(&ckpts[i]).unwrap();
            }
            worst = worst.max(max_map_diff(&swa.average().unwrap(), &reference));
        }
    }
    checks.push(Check::below("SWA permutation invariance", worst, 1e-12));

    let data = labeled_set(12, 6, 7);
    let mut violations = 0;
    for i in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(i);
        let lf = [0.01, 0.05, 0.2, 0.5][i as usize % 4];
        let split = split_labeled(&data, lf, 0.5 + 0.4 * r.random::<f64>(), r.random::<f64>(), &mut r).unwrap();
        if split.check_disjoint(&data).is_err() {
            violations += 1;
        }
    }
    checks.push(Check::new("subject-disjoint splits (100 random splits)", violations == 0, format!("{violations} violations")));
    checks
}

// ---------------------------------------------------------------------------
// IO

/// Random f32-representable epoch set.
pub fn random_epoch_set(rng: &mut ChaCha8Rng) -> EpochSet {
    let n = rng.random_range(0..6);
    let c = rng.random_range(1..5);
    let t = rng.random_range(1..40);
    let data = Array3::from_shape_simple_fn((n, c, t), || rng.random_range(-1e3f32..1e3) as f64);
    let labels = rng.random_bool(0.5).then(|| (0..n).map(|_| rng.random_range(0..2u8)).collect());
    let names = (0..c).map(|i| format!("ch{}_{}", i, rng.random_range(0..1000))).collect();
    let fs = [128.0, 250.0, 500.0, 1000.0][rng.random_range(0..4)];
    EpochSet::new(data, fs, labels, (0..n).map(|_| rng.random::<u32>()).collect(), names).unwrap()
}

pub fn io_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let path = std::path::Path::new("<memory>");
    let mut container_ok = 0;
    let mut ckpt_ok = 0;
    for i in 0..100u64 {
        let set = random_epoch_set(&mut rng);
        let mut buf = Vec::new();
        write_container(&set, &mut buf).unwrap();
        let back = read_container(buf.as_slice(), path, Some(buf.len() as u64)).unwrap();
        let bits_equal = back.data.iter().zip(set.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        if back == set && bits_equal {
            container_ok += 1;
        }

        let c = rng.random_range(1..4);
        let mut params = ModelParams::init(&tiny_dims(c), i).unwrap();
        for layer in params.layers.values_mut() {
            for t in layer.buffers.values_mut() {
                t.mapv_inplace(|_| rng.sample(StandardNormal));
            }
        }
        let mut manifest = CheckpointManifest::new(&params, &format!("{:016x}", rng.random::<u64>()), i, rng.random_range(0..500), "finetune");
        manifest.metrics.insert("f1".into(), rng.random());
        let mut buf = Vec::new();
        write_checkpoint(&params, &manifest, &mut buf).unwrap();
        let (p2, m2) = read_checkpoint(buf.as_slice(), path).unwrap();
        let mut rewritten = Vec::new();
        write_checkpoint(&p2, &m2, &mut rewritten).unwrap();
        if p2 == params && m2 == manifest && rewritten == buf {
            ckpt_ok += 1;
        }
    }
    vec![
        Check::new("container round trip bit-exact (100 instances)", container_ok == 100, format!("{container_ok}/100 exact")),
        Check::new("checkpoint round trip bit-exact (100 instances)", ckpt_ok == 100, format!("{ckpt_ok}/100 exact")),
    ]
}

// ---------------------------------------------------------------------------
// Interpretability

/// Dataset whose class signature is extra beta power on `channel` only.
pub fn beta_signature_set(channel: &str, n_subjects: usize, seed: u64, offset: u32) -> EpochSet {
    generate(&SynthSpec {
        n_subjects_per_class: n_subjects,
        epochs_per_subject: 10,
        n_channels: 8,
        duration_s: 2.0,
        signature_channels: vec![channel.to_string()],
        beta_multiplier: 4.0,
        subject_offset: offset,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

/// Supervised model trained from scratch on `train`.
pub fn train_supervised(train: &EpochSet, seed: u64) -> ModelParams {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.encoder = cfg.encoder.with_channels(train.n_channels());
    cfg.finetune.epochs = 30;
    cfg.finetune.label_fraction = 1.0;
    cfg.finetune.test_fraction = 0.2;
    cfg.finetune.val_fraction = 0.0;
    cfg.finetune.layer_decay = 1.0;
    cfg.finetune.stage_epochs = Some(1);
    cfg.finetune.val_every = 1000;
    let init = ModelParams::init(&cfg.encoder, seed).unwrap();
    finetune(&init, train, &cfg).unwrap().params
}

fn strictly_first(scores: &[(String, f64)], want: &str) -> (bool, String) {
    let order = ranking(scores);
    let top = scores.iter().find(|(n, _)| n == &order[0]).map(|s| s.1).unwrap_or(f64::NAN);
    let second = scores.iter().find(|(n, _)| order.len() > 1 && n == &order[1]).map(|s| s.1).unwrap_or(f64::NEG_INFINITY);
    (order[0] == want && top > second, format!("{} ({top:.3}) over {} ({second:.3})", order[0], order.get(1).map_or("-", |s| s.as_str())))
}

pub fn interpret_suite() -> Vec<Check> {
    let names = channel_names(8);
    let channel = names[4].as_str();
    let train = beta_signature_set(channel, 10, 71, 0);
    let test = beta_signature_set(channel, 10, 72, 500);
    let params = train_supervised(&train, 5);
    let a = explain(&params, &test).unwrap();
    let b = explain(&params, &test).unwrap();
    let (beta_first, beta_detail) = strictly_first(&a.band_scores, "beta");
    let (chan_first, chan_detail) = strictly_first(&a.channel_scores, channel);
    vec![
        Check::new("band importance ranks beta first", beta_first, format!("baseline acc {:.3}; {beta_detail}", a.baseline_accuracy)),
        Check::new("channel importance ranks the signature channel first", chan_first, chan_detail),
        Check::new("importance deterministic across reruns", a == b, format!("identical reports {}", a == b)),
    ]
}

/// Median of a non-empty slice.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}
