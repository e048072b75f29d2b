//! Forward and backward kernels for the encoder's building blocks.
//!
//! Activations are `[batch, channels, length]` in standard layout. Per-sample
//! work runs on the rayon pool; reductions over the batch are summed in sample
//! order so results do not depend on the thread count.

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Output length of a padded strided convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad).saturating_sub(kernel) / stride + 1
}

/// Output positions `o` whose tap `k` lands inside the unpadded input:
/// `0 <= o * stride + k - pad < len`.
fn valid_range(len: usize, k: usize, stride: usize, pad: usize, l_out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = if len + pad > k { ((len - 1 + pad - k) / stride + 1).min(l_out) } else { 0 };
    (lo.min(hi), hi)
}

/// `[C_in * K, L_out]` patch matrix of one sample, written into `out`.
fn im2col(x: ArrayView2<f64>, kernel: usize, stride: usize, pad: usize, l_out: usize, out: &mut [f64]) {
    let (c_in, len) = x.dim();
    for c in 0..c_in {
        let row = x.row(c);
        for k in 0..kernel {
            let dst = &mut out[(c * kernel + k) * l_out..(c * kernel + k + 1) * l_out];
            let (lo, hi) = valid_range(len, k, stride, pad, l_out);
            dst[..lo].fill(0.0);
            dst[hi..].fill(0.0);
            if lo >= hi {
                continue;
            }
            let start = lo * stride + k - pad;
            for (d, &v) in dst[lo..hi].iter_mut().zip(row.slice(s![start..;stride])) {
                *d = v;
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient onto a `[C_in, len]` input gradient.
fn col2im(src: &[f64], l_out: usize, kernel: usize, stride: usize, pad: usize, mut dx: ArrayViewMut2<f64>) {
    let (c_in, len) = dx.dim();
    for c in 0..c_in {
        let mut row = dx.row_mut(c);
        for k in 0..kernel {
            let g = &src[(c * kernel + k) * l_out..(c * kernel + k + 1) * l_out];
            let (lo, hi) = valid_range(len, k, stride, pad, l_out);
            if lo >= hi {
                continue;
            }
            let start = lo * stride + k - pad;
            for (d, &v) in row.slice_mut(s![start..;stride]).iter_mut().zip(&g[lo..hi]) {
                *d += v;
            }
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Run `f` with two reusable per-thread buffers of at least `n` elements.
/// Contents on entry are unspecified.
fn with_scratch<R>(n: usize, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (a, b) = &mut *guard;
        if a.len() < n {
            a.resize(n, 0.0);
            b.resize(n, 0.0);
        }
        f(&mut a[..n], &mut b[..n])
    })
}

/// 1-D convolution. `weight` is `[C_out, C_in, K]`, `bias` is `[C_out]`.
pub fn conv1d_forward(
    x: ArrayView3<f64>,
    weight: ArrayView3<f64>,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let (b, _, len) = x.dim();
    let (c_out, c_in, kernel) = weight.dim();
    let l_out = conv_out_len(len, kernel, stride, pad);
    let w = weight
        .to_shape((c_out, c_in * kernel))
        .expect("weight reshape");
    let mut out = Array3::zeros((b, c_out, l_out));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut y, xb)| {
            with_scratch(c_in * kernel * l_out, |buf, _| {
                im2col(xb, kernel, stride, pad, l_out, buf);
                let cols = ArrayView2::from_shape((c_in * kernel, l_out), &*buf).expect("scratch size");
                for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(bias) {
                    row.fill(bv);
                }
                general_mat_mul(1.0, &w, &cols, 1.0, &mut y);
            });
        });
    out
}

/// Gradients of [`conv1d_forward`]: `(d_weight, d_bias, d_input)`.
/// `d_input` is only computed when `need_dx` is set.
pub fn conv1d_backward(
    x: ArrayView3<f64>,
    weight: ArrayView3<f64>,
    dy: ArrayView3<f64>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Array3<f64>, Vec<f64>, Option<Array3<f64>>) {
    let (b, _, len) = x.dim();
    let (c_out, c_in, kernel) = weight.dim();
    let l_out = dy.dim().2;
    let ck = c_in * kernel;
    let w = weight.to_shape((c_out, ck)).expect("weight reshape");
    let mut dx = need_dx.then(|| Array3::zeros((b, c_in, len)));
    let mut per_sample: Vec<Array2<f64>> = (0..b).map(|_| Array2::zeros((c_out, ck))).collect();
    let work = |((xb, dyb), dw): ((ArrayView2<f64>, ArrayView2<f64>), &mut Array2<f64>), dxb: Option<ArrayViewMut2<f64>>| {
        with_scratch(ck * l_out, |buf, dbuf| {
            im2col(xb, kernel, stride, pad, l_out, buf);
            let cols = ArrayView2::from_shape((ck, l_out), &*buf).expect("scratch size");
            general_mat_mul(1.0, &dyb, &cols.t(), 0.0, dw);
            if let Some(dxb) = dxb {
                let mut dcols = ArrayViewMut2::from_shape((ck, l_out), &mut *dbuf).expect("scratch size");
                general_mat_mul(1.0, &w.t(), &dyb, 0.0, &mut dcols);
                col2im(dbuf, l_out, kernel, stride, pad, dxb);
            }
        })
    };
    let inputs = x.axis_iter(Axis(0)).into_par_iter().zip(dy.axis_iter(Axis(0)).into_par_iter());
    match dx.as_mut() {
        Some(dx) => inputs
            .zip(per_sample.par_iter_mut())
            .zip(dx.axis_iter_mut(Axis(0)).into_par_iter())
            .for_each(|(a, d)| work(a, Some(d))),
        None => inputs.zip(per_sample.par_iter_mut()).for_each(|a| work(a, None)),
    }

    let mut dw = Array2::<f64>::zeros((c_out, ck));
    for g in &per_sample {
        dw += g;
    }
    let db: Vec<f64> = (0..c_out)
        .map(|c| dy.index_axis(Axis(1), c).sum())
        .collect();
    let dw = dw
        .into_shape_with_order((c_out, c_in, kernel))
        .expect("weight reshape");
    (dw, db, dx)
}

/// Batch statistics and normalised activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Array3<f64>,
    pub inv_std: Vec<f64>,
    /// `Some` in training mode: per-channel batch mean and unbiased variance.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Batch-norm followed by ReLU. With `running = None` batch statistics are
/// used (training mode); otherwise the given running mean/variance.
pub fn bn_relu_forward(
    x: &Array3<f64>,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
) -> (Array3<f64>, NormCache) {
    let (b, c, l) = x.dim();
    let n = (b * l) as f64;
    let mut mean = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    let mut unbiased = vec![0.0; c];
    match running {
        None => {
            for ch in 0..c {
                let lane = x.index_axis(Axis(1), ch);
                let m = lane.sum() / n;
                let ss: f64 = lane.iter().map(|v| (v - m) * (v - m)).sum();
                let var = ss / n;
                mean[ch] = m;
                inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
                unbiased[ch] = if n > 1.0 { ss / (n - 1.0) } else { var };
            }
        }
        Some((rm, rv)) => {
            for ch in 0..c {
                mean[ch] = rm[ch];
                inv_std[ch] = 1.0 / (rv[ch] + BN_EPS).sqrt();
            }
        }
    }
    let mut xhat = x.clone();
    let mut out = Array3::zeros((b, c, l));
    for bi in 0..b {
        for ch in 0..c {
            let (m, s, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let mut xh = xhat.slice_mut(s![bi, ch, ..]);
            let mut o = out.slice_mut(s![bi, ch, ..]);
            for (xv, ov) in xh.iter_mut().zip(o.iter_mut()) {
                *xv = (*xv - m) * s;
                *ov = (g * *xv + be).max(0.0);
            }
        }
    }
    let batch_stats = running.is_none().then_some((mean, unbiased));
    (
        out,
        NormCache {
            xhat,
            inv_std,
            batch_stats,
        },
    )
}

/// Backward of [`bn_relu_forward`]. `out` is the forward output (for the
/// ReLU mask). Returns `(d_input, d_gamma, d_beta)`.
pub fn bn_relu_backward(
    d_out: &Array3<f64>,
    out: &Array3<f64>,
    cache: &NormCache,
    gamma: &[f64],
) -> (Array3<f64>, Vec<f64>, Vec<f64>) {
    let (b, c, l) = d_out.dim();
    let n = (b * l) as f64;
    let mut dy = d_out.clone();
    dy.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for ch in 0..c {
        let g = dy.index_axis(Axis(1), ch);
        let xh = cache.xhat.index_axis(Axis(1), ch);
        d_beta[ch] = g.sum();
        d_gamma[ch] = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
    }
    let train = cache.batch_stats.is_some();
    let mut dx = dy;
    for bi in 0..b {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch];
            let (db, dg) = (d_beta[ch], d_gamma[ch]);
            let mut row = dx.slice_mut(s![bi, ch, ..]);
            if train {
                let xh = cache.xhat.slice(s![bi, ch, ..]);
                for (v, &x) in row.iter_mut().zip(xh.iter()) {
                    *v = k * (*v - db / n - x * dg / n);
                }
            } else {
                row.mapv_inplace(|v| k * v);
            }
        }
    }
    (dx, d_gamma, d_beta)
}

/// Mean over the time axis: `[B, C, L] -> [B, C]`.
pub fn global_avg_pool(x: &Array3<f64>) -> Array2<f64> {
    x.mean_axis(Axis(2)).expect("non-empty time axis")
}

pub fn global_avg_pool_backward(d: ArrayView2<f64>, len: usize) -> Array3<f64> {
    let (b, c) = d.dim();
    let scale = 1.0 / len as f64;
    Array3::from_shape_fn((b, c, len), |(i, j, _)| d[[i, j]] * scale)
}

/// `x Wᵀ + b` for `x: [B, in]`, `W: [out, in]`.
pub fn linear_forward(x: ArrayView2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    for mut row in y.axis_iter_mut(Axis(0)) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
    y
}

/// Returns `(d_x, d_w, d_b)`.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let dx = dy.dot(&w);
    let dw = dy.t().dot(&x);
    let db = dy.sum_axis(Axis(0)).to_vec();
    (dx, dw, db)
}
