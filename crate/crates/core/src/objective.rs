//! Multi-view NT-Xent contrastive loss and label-smoothed cross-entropy,
//! both with analytic gradients.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Default contrastive temperature.
pub const DEFAULT_TAU: f64 = 0.1;

const MIN_NORM: f64 = 1e-12;

/// `M` views of `N` projections each, normalized to unit rows on
/// construction. The raw norms are kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ViewSet {
    unit: Vec<Array2<f64>>,
    norms: Vec<Array1<f64>>,
    tau: f64,
}

impl ViewSet {
    pub fn new(projections: &[Array2<f64>], tau: f64) -> Result<Self> {
        if projections.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 views, got {}", projections.len())));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        let dim = projections[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::invalid("views must hold at least one non-empty projection"));
        }
        let mut unit = Vec::with_capacity(projections.len());
        let mut norms = Vec::with_capacity(projections.len());
        for (v, z) in projections.iter().enumerate() {
            if z.dim() != dim {
                return Err(Error::shape(format!("{dim:?}"), format!("{:?}", z.dim())));
            }
            if z.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("projection view {v}")));
            }
            let n: Array1<f64> = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
            if let Some(k) = n.iter().position(|&x| x < MIN_NORM) {
                return Err(Error::invalid(format!("projection {k} of view {v} has zero norm")));
            }
            unit.push(z / &n.view().insert_axis(Axis(1)));
            norms.push(n);
        }
        Ok(Self { unit, norms, tau })
    }

    pub fn n_views(&self) -> usize {
        self.unit.len()
    }

    pub fn n_samples(&self) -> usize {
        self.unit[0].nrows()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Unit-norm projections of view `v`.
    pub fn unit(&self, v: usize) -> &Array2<f64> {
        &self.unit[v]
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let m = self.n_views();
        if i == j || i >= m || j >= m {
            return Err(Error::invalid(format!("invalid view pair ({i}, {j}) for {m} views")));
        }
        Ok(())
    }

    /// Similarity logits `S[k, l] = <z_k^(i), z_l^(j)> / tau` and their
    /// row-wise softmax.
    fn pair_softmax(&self, i: usize, j: usize) -> (Array2<f64>, Array2<f64>) {
        let s = self.unit[i].dot(&self.unit[j].t()) / self.tau;
        let mut p = s.clone();
        for mut row in p.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row /= z;
        }
        (s, p)
    }
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-sample NT-Xent losses anchoring view `i` against view `j`. The
/// denominator runs over every sample of view `j`, positive included.
pub fn ntxent_pair(views: &ViewSet, i: usize, j: usize) -> Result<Array1<f64>> {
    views.check_pair(i, j)?;
    let (s, _) = views.pair_softmax(i, j);
    Ok(Array1::from_shape_fn(s.nrows(), |k| log_sum_exp(s.row(k)) - s[[k, k]]))
}

/// Average over all ordered view pairs, normalized so that two views give the
/// mean of both directions summed.
pub fn contrastive_loss(views: &ViewSet) -> Result<f64> {
    let m = views.n_views();
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            total += ntxent_pair(views, i, j)?.mean().unwrap_or(0.0);
            total += ntxent_pair(views, j, i)?.mean().unwrap_or(0.0);
        }
    }
    Ok(2.0 / (m * (m - 1)) as f64 * total)
}

/// Loss and its gradient with respect to the raw (unnormalized) projections.
pub fn contrastive_loss_grad(views: &ViewSet) -> Result<(f64, Vec<Array2<f64>>)> {
    let m = views.n_views();
    let n = views.n_samples();
    let coef = 2.0 / (m * (m - 1)) as f64 / n as f64;
    let mut loss = 0.0;
    let mut d_unit: Vec<Array2<f64>> = views.unit.iter().map(|u| Array2::zeros(u.raw_dim())).collect();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (s, p) = views.pair_softmax(i, j);
            for k in 0..n {
                loss += coef * (log_sum_exp(s.row(k)) - s[[k, k]]);
            }
            // dl/dS = P - I, scaled; S = U_i U_j^T / tau.
            let mut g = p;
            for k in 0..n {
                g[[k, k]] -= 1.0;
            }
            g *= coef / views.tau;
            d_unit[i] += &g.dot(&views.unit[j]);
            d_unit[j] += &g.t().dot(&views.unit[i]);
        }
    }
    let grads = d_unit
        .into_iter()
        .zip(views.unit.iter().zip(&views.norms))
        .map(|(du, (u, norms))| {
            let mut dz = du;
            for ((mut dz_row, u_row), &r) in dz.axis_iter_mut(Axis(0)).zip(u.axis_iter(Axis(0))).zip(norms) {
                let proj = dz_row.dot(&u_row);
                dz_row.zip_mut_with(&u_row, |g, &uv| *g = (*g - proj * uv) / r);
            }
            dz
        })
        .collect();
    Ok((loss, grads))
}

/// Smoothed target distribution: `1 - eps` on `target`, `eps / (K - 1)`
/// elsewhere.
pub fn smoothed_target(k: usize, target: usize, eps: f64) -> Result<Array1<f64>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!("label smoothing must lie in [0, 1), got {eps}")));
    }
    if k < 2 || target >= k {
        return Err(Error::invalid(format!("target {target} invalid for {k} classes")));
    }
    let mut q = Array1::from_elem(k, eps / (k - 1) as f64);
    q[target] = 1.0 - eps;
    Ok(q)
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let lse = log_sum_exp(row.view());
        row -= lse;
    }
    out
}

/// Row-wise softmax probabilities.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

fn check_logits(logits: &Array2<f64>, targets: &[usize]) -> Result<()> {
    if logits.nrows() != targets.len() {
        return Err(Error::shape(format!("{} targets", logits.nrows()), targets.len()));
    }
    if logits.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

/// Mean label-smoothed cross-entropy.
pub fn smoothed_ce(logits: &Array2<f64>, targets: &[usize], eps: f64) -> Result<f64> {
    Ok(smoothed_ce_grad(logits, targets, eps)?.0)
}

/// Loss and gradient `(softmax - q) / B` with respect to the logits.
pub fn smoothed_ce_grad(logits: &Array2<f64>, targets: &[usize], eps: f64) -> Result<(f64, Array2<f64>)> {
    check_logits(logits, targets)?;
    let (b, k) = logits.dim();
    let logp = log_softmax(logits);
    let mut grad = logp.mapv(f64::exp);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let q = smoothed_target(k, t, eps)?;
        loss -= q.dot(&logp.row(r));
        let mut g = grad.row_mut(r);
        g -= &q;
    }
    grad /= b as f64;
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn single_sample_is_zero() {
        let v = ViewSet::new(&[array![[0.3, 0.4]], array![[1.0, -2.0]]], 0.1).unwrap();
        assert_abs_diff_eq!(ntxent_pair(&v, 0, 1).unwrap()[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_pair_value() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let v = ViewSet::new(&[e.clone(), e], 0.1).unwrap();
        let l = ntxent_pair(&v, 0, 1).unwrap();
        assert_abs_diff_eq!(l[0], (1.0 + (-10.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = array![[1.0, 0.0]];
        assert!(ViewSet::new(&[a.clone()], 0.1).is_err());
        assert!(ViewSet::new(&[a.clone(), array![[0.0, 0.0]]], 0.1).is_err());
        assert!(ViewSet::new(&[a.clone(), a.clone()], 0.0).is_err());
        let v = ViewSet::new(&[a.clone(), a], 0.1).unwrap();
        assert!(ntxent_pair(&v, 0, 0).is_err());
    }

    #[test]
    fn smoothing_targets() {
        assert_eq!(smoothed_target(2, 1, 0.1).unwrap(), array![0.1, 0.9]);
        assert!(smoothed_target(2, 1, 1.0).is_err());
        let l = array![[0.0, 0.0, 0.0]];
        assert_abs_diff_eq!(smoothed_ce(&l, &[2], 0.3).unwrap(), 3f64.ln(), epsilon = 1e-12);
    }
}
