//! Time- and frequency-domain augmentation operators.
//!
//! Every operator maps a `[n_channels, T]` epoch to a new epoch of the same
//! shape. Random draws happen only in [`AugKind::sample`]; the resulting
//! [`AppliedOp`] is a pure function of the input, so an [`AugOutcome`] can be
//! replayed bit-exactly.

use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{irfft_trace, rfft_trace, Band, CANONICAL_BANDS};

/// The seven augmentation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    GaussianNoise,
    TimeShift,
    AmplitudeScale,
    RandomMask,
    FrequencyShift,
    SpectralScale,
    BandNoise,
}

impl AugKind {
    pub const ALL: [AugKind; 7] = [
        AugKind::GaussianNoise,
        AugKind::TimeShift,
        AugKind::AmplitudeScale,
        AugKind::RandomMask,
        AugKind::FrequencyShift,
        AugKind::SpectralScale,
        AugKind::BandNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::GaussianNoise => "gaussian_noise",
            AugKind::TimeShift => "time_shift",
            AugKind::AmplitudeScale => "amplitude_scale",
            AugKind::RandomMask => "random_mask",
            AugKind::FrequencyShift => "frequency_shift",
            AugKind::SpectralScale => "spectral_scale",
            AugKind::BandNoise => "band_noise",
        }
    }

    pub fn is_spectral(self) -> bool {
        matches!(
            self,
            AugKind::FrequencyShift | AugKind::SpectralScale | AugKind::BandNoise
        )
    }

    /// Draw concrete parameters for an epoch of `n_samples` at `fs` Hz.
    pub fn sample<R: Rng + ?Sized>(
        self,
        cfg: &AugmentConfig,
        n_samples: usize,
        fs: f64,
        rng: &mut R,
    ) -> AppliedOp {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        match self {
            AugKind::GaussianNoise => AppliedOp::GaussianNoise {
                sigma: uniform(rng, cfg.noise_sigma),
                seed: rng.next_u64(),
            },
            AugKind::TimeShift => {
                let max = cfg.max_shift as i64;
                AppliedOp::TimeShift {
                    shift: rng.random_range(-max..=max),
                }
            }
            AugKind::AmplitudeScale => AppliedOp::AmplitudeScale {
                factor: uniform(rng, cfg.amplitude_range),
            },
            AugKind::RandomMask => {
                let len = cfg.mask_len.clamp(1, n_samples);
                let start = rng.random_range(0..=n_samples - len);
                AppliedOp::RandomMask {
                    start,
                    end: start + len - 1,
                }
            }
            AugKind::FrequencyShift => AppliedOp::FrequencyShift {
                phase: uniform(rng, (-cfg.max_phase_shift, cfg.max_phase_shift)),
            },
            AugKind::SpectralScale => AppliedOp::SpectralScale {
                factor: uniform(rng, cfg.spectral_range),
            },
            AugKind::BandNoise => {
                let nyquist = fs / 2.0;
                let bands: Vec<Band> = CANONICAL_BANDS
                    .iter()
                    .filter(|b| b.lo < nyquist)
                    .copied()
                    .collect();
                let band = bands[rng.random_range(0..bands.len())];
                AppliedOp::BandNoise {
                    lo: band.lo,
                    hi: band.hi.min(nyquist),
                    sigma: uniform(rng, cfg.noise_sigma),
                    seed: rng.next_u64(),
                }
            }
        }
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation `{s}`")))
    }
}

/// Parameter ranges for every operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// σ range for Gaussian noise and band noise.
    pub noise_sigma: (f64, f64),
    /// Maximum circular shift in samples.
    pub max_shift: usize,
    pub amplitude_range: (f64, f64),
    /// Masked segment length in samples.
    pub mask_len: usize,
    /// Maximum phase offset in radians.
    pub max_phase_shift: f64,
    pub spectral_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: (0.05, 0.2),
            max_shift: 50,
            amplitude_range: (0.8, 1.2),
            mask_len: 10,
            max_phase_shift: 2.0,
            spectral_range: (0.5, 1.5),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64), what: &str| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} range must satisfy lo <= hi")))
            }
        };
        ordered(self.noise_sigma, "noise_sigma")?;
        ordered(self.amplitude_range, "amplitude_range")?;
        ordered(self.spectral_range, "spectral_range")?;
        if self.noise_sigma.0 < 0.0 {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.max_phase_shift >= 0.0) {
            return Err(Error::Config("max_phase_shift must be non-negative".into()));
        }
        Ok(())
    }
}

/// One operator with concrete parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AppliedOp {
    GaussianNoise { sigma: f64, seed: u64 },
    TimeShift { shift: i64 },
    AmplitudeScale { factor: f64 },
    /// Inclusive sample range.
    RandomMask { start: usize, end: usize },
    /// Phase offset in radians.
    FrequencyShift { phase: f64 },
    SpectralScale { factor: f64 },
    BandNoise { lo: f64, hi: f64, sigma: f64, seed: u64 },
}

impl AppliedOp {
    pub fn kind(&self) -> AugKind {
        match self {
            AppliedOp::GaussianNoise { .. } => AugKind::GaussianNoise,
            AppliedOp::TimeShift { .. } => AugKind::TimeShift,
            AppliedOp::AmplitudeScale { .. } => AugKind::AmplitudeScale,
            AppliedOp::RandomMask { .. } => AugKind::RandomMask,
            AppliedOp::FrequencyShift { .. } => AugKind::FrequencyShift,
            AppliedOp::SpectralScale { .. } => AugKind::SpectralScale,
            AppliedOp::BandNoise { .. } => AugKind::BandNoise,
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>, fs: f64) -> Result<Array2<f64>> {
        Ok(match *self {
            AppliedOp::GaussianNoise { sigma, seed } => {
                gaussian_noise(x, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
            }
            AppliedOp::TimeShift { shift } => time_shift(x, shift),
            AppliedOp::AmplitudeScale { factor } => amplitude_scale(x, factor),
            AppliedOp::RandomMask { start, end } => random_mask(x, start, end)?,
            AppliedOp::FrequencyShift { phase } => frequency_shift(x, phase),
            AppliedOp::SpectralScale { factor } => spectral_scale(x, factor),
            AppliedOp::BandNoise { lo, hi, sigma, seed } => band_noise(
                x,
                (lo, hi),
                sigma,
                fs,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )?,
        })
    }
}

/// `x + n`, `n ~ N(0, σ²)` i.i.d. per sample.
pub fn gaussian_noise<R: Rng + ?Sized>(x: ArrayView2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    let mut out = x.to_owned();
    if sigma == 0.0 {
        return out;
    }
    for v in out.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += sigma * n;
    }
    out
}

/// Circular shift: `x'(t) = x((t - δ) mod T)`.
pub fn time_shift(x: ArrayView2<f64>, shift: i64) -> Array2<f64> {
    let (c, t) = x.dim();
    if t == 0 {
        return x.to_owned();
    }
    let k = shift.rem_euclid(t as i64) as usize;
    Array2::from_shape_fn((c, t), |(ch, i)| x[[ch, (i + t - k) % t]])
}

pub fn amplitude_scale(x: ArrayView2<f64>, factor: f64) -> Array2<f64> {
    x.mapv(|v| v * factor)
}

/// Zero the inclusive segment `[start, end]` on every channel.
pub fn random_mask(x: ArrayView2<f64>, start: usize, end: usize) -> Result<Array2<f64>> {
    let t = x.dim().1;
    if start > end || end >= t {
        return Err(Error::invalid(format!(
            "mask [{start}, {end}] outside 0..{t}"
        )));
    }
    let mut out = x.to_owned();
    out.slice_mut(ndarray::s![.., start..=end]).fill(0.0);
    Ok(out)
}

/// Apply `f(bin_index, bin)` to every non-negative-frequency bin of every
/// channel and transform back. Returns the output and the largest imaginary
/// residue seen before it was discarded.
fn spectral_map(
    x: ArrayView2<f64>,
    mut f: impl FnMut(usize, usize, Complex64) -> Complex64,
) -> (Array2<f64>, f64) {
    let (c, t) = x.dim();
    let mut out = Array2::zeros((c, t));
    let mut residue = 0.0f64;
    for ch in 0..c {
        let trace: Vec<f64> = x.row(ch).to_vec();
        let bins: Vec<Complex64> = rfft_trace(&trace)
            .into_iter()
            .enumerate()
            .map(|(k, b)| f(ch, k, b))
            .collect();
        let (y, r) = irfft_trace(&bins, t);
        residue = residue.max(r);
        out.row_mut(ch).assign(&ndarray::ArrayView1::from(&y));
    }
    (out, residue)
}

/// Constant phase offset on the positive-frequency bins; DC and Nyquist keep
/// their phase so the negative half stays the conjugate mirror.
pub fn frequency_shift_with_residue(x: ArrayView2<f64>, phase: f64) -> (Array2<f64>, f64) {
    let t = x.dim().1;
    let rot = Complex64::from_polar(1.0, phase);
    spectral_map(x, |_, k, b| {
        if k == 0 || (t % 2 == 0 && k == t / 2) {
            b
        } else {
            b * rot
        }
    })
}

pub fn frequency_shift(x: ArrayView2<f64>, phase: f64) -> Array2<f64> {
    frequency_shift_with_residue(x, phase).0
}

/// Scale every spectral magnitude by `factor`, phases unchanged.
pub fn spectral_scale_with_residue(x: ArrayView2<f64>, factor: f64) -> (Array2<f64>, f64) {
    spectral_map(x, |_, _, b| Complex64::from_polar(factor * b.norm(), b.arg()))
}

pub fn spectral_scale(x: ArrayView2<f64>, factor: f64) -> Array2<f64> {
    spectral_scale_with_residue(x, factor).0
}

/// Add complex Gaussian noise to bins inside `[lo, hi)` Hz.
///
/// Per-bin noise is `CN(0, T σ²)`: with the unnormalised forward FFT this
/// makes `σ` the standard deviation a white time-domain noise of the same
/// per-bin power would have. The Nyquist bin, when inside the band, only
/// receives a real component so the output stays real.
pub fn band_noise_with_residue<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    band: (f64, f64),
    sigma: f64,
    fs: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, f64)> {
    let (lo, hi) = band;
    if !(lo >= 0.0 && lo <= hi && hi <= fs / 2.0) {
        return Err(Error::invalid(format!(
            "band [{lo}, {hi}) must satisfy 0 <= lo <= hi <= fs/2"
        )));
    }
    let t = x.dim().1;
    let bin_hz = fs / t as f64;
    let scale = sigma * (t as f64).sqrt();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    Ok(spectral_map(x, |_, k, b| {
        let f = k as f64 * bin_hz;
        let inside = f >= lo && (f < hi || (hi == fs / 2.0 && f <= hi));
        if !inside || sigma == 0.0 {
            return b;
        }
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if k == 0 || (t % 2 == 0 && k == t / 2) {
            b + Complex64::new(scale * re, 0.0)
        } else {
            b + Complex64::new(scale * half * re, scale * half * im)
        }
    }))
}

pub fn band_noise<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    band: (f64, f64),
    sigma: f64,
    fs: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    Ok(band_noise_with_residue(x, band, sigma, fs, rng)?.0)
}

/// Result of composing a plan on one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AugOutcome {
    pub output: Array2<f64>,
    /// Operators in application order with their drawn parameters.
    pub applied: Vec<AppliedOp>,
    pub rng_seed: u64,
}

/// Draw parameters for every operator of `plan` from a generator seeded with
/// `seed`, then apply them left to right.
pub fn compose(
    plan: &[AugKind],
    x: ArrayView2<f64>,
    cfg: &AugmentConfig,
    fs: f64,
    seed: u64,
) -> Result<AugOutcome> {
    if plan.is_empty() {
        return Err(Error::invalid("augmentation plan is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = x.dim().1;
    let applied: Vec<AppliedOp> = plan
        .iter()
        .map(|k| k.sample(cfg, t, fs, &mut rng))
        .collect();
    let output = replay(&applied, x, fs)?;
    Ok(AugOutcome {
        output,
        applied,
        rng_seed: seed,
    })
}

/// Re-apply recorded operators.
pub fn replay(applied: &[AppliedOp], x: ArrayView2<f64>, fs: f64) -> Result<Array2<f64>> {
    let mut cur = x.to_owned();
    for op in applied {
        cur = op.apply(cur.view(), fs)?;
    }
    Ok(cur)
}

/// Compose `plan` on every epoch of a `[B, C, T]` batch, epoch `b` using `seeds[b]`.
pub fn augment_batch(
    x: &Array3<f64>,
    plan: &[AugKind],
    cfg: &AugmentConfig,
    fs: f64,
    seeds: &[u64],
) -> Result<Array3<f64>> {
    if seeds.len() != x.dim().0 {
        return Err(Error::shape(format!("{} seeds", x.dim().0), seeds.len()));
    }
    let outs: Vec<Array2<f64>> = x
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(seeds.par_iter())
        .map(|(epoch, &seed)| compose(plan, epoch, cfg, fs, seed).map(|o| o.output))
        .collect::<Result<_>>()?;
    let mut out = Array3::zeros(x.dim());
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(&outs) {
        dst.assign(src);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::fft_real;
    use std::f64::consts::PI;

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    fn random_epoch(seed: u64, c: usize, t: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((c, t), |_| rng.random_range(-2.0..2.0))
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn identity_parameters() {
        let x = random_epoch(1, 3, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_noise(x.view(), 0.0, &mut rng), x);
        assert_eq!(time_shift(x.view(), 0), x);
        assert_eq!(time_shift(x.view(), 128), x);
        assert_eq!(amplitude_scale(x.view(), 1.0), x);
        assert!(max_abs_diff(&frequency_shift(x.view(), 0.0), &x) < 1e-6);
        assert!(max_abs_diff(&spectral_scale(x.view(), 1.0), &x) < 1e-6);
        let y = band_noise(x.view(), (13.0, 30.0), 0.0, 250.0, &mut rng).unwrap();
        assert!(max_abs_diff(&y, &x) < 1e-6);
        let y = band_noise(x.view(), (20.0, 20.0), 0.3, 250.0, &mut rng).unwrap();
        assert!(max_abs_diff(&y, &x) < 1e-6);
    }

    #[test]
    fn time_shift_direction() {
        let y = time_shift(row(&[1.0, 2.0, 3.0, 4.0]).view(), 1);
        assert_eq!(y, row(&[4.0, 1.0, 2.0, 3.0]));
        let y = time_shift(row(&[1.0, 2.0, 3.0, 4.0]).view(), -1);
        assert_eq!(y, row(&[2.0, 3.0, 4.0, 1.0]));
    }

    #[test]
    fn amplitude_and_mask() {
        assert_eq!(amplitude_scale(row(&[1.0, -1.0]).view(), 2.0), row(&[2.0, -2.0]));
        let y = random_mask(row(&[5.0; 4]).view(), 1, 2).unwrap();
        assert_eq!(y, row(&[5.0, 0.0, 0.0, 5.0]));
        let y = random_mask(row(&[5.0; 4]).view(), 0, 3).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(random_mask(row(&[5.0; 4]).view(), 2, 4).is_err());
        assert!(random_mask(row(&[5.0; 4]).view(), 3, 2).is_err());
    }

    #[test]
    fn gaussian_noise_moments() {
        let n = 1_000_000;
        let x = Array2::zeros((1, n));
        let y = gaussian_noise(x.view(), 0.1, &mut ChaCha8Rng::seed_from_u64(42));
        let mean = y.mean().unwrap();
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * 0.1 / (n as f64).sqrt());
        assert!((var - 0.01).abs() < 0.02 * 0.01);
    }

    #[test]
    fn phase_shift_of_a_tone() {
        let (fs, t) = (500.0, 2500);
        let x = Array2::from_shape_fn((1, t), |(_, i)| (2.0 * PI * 10.0 * i as f64 / fs).cos());
        let (y, residue) = frequency_shift_with_residue(x.view(), PI / 2.0);
        let expected = Array2::from_shape_fn((1, t), |(_, i)| -(2.0 * PI * 10.0 * i as f64 / fs).sin());
        assert!(max_abs_diff(&y, &expected) < 1e-4);
        assert!(residue < 1e-9);
    }

    #[test]
    fn spectral_scale_energy_law() {
        let x = random_epoch(7, 2, 257);
        for beta in [0.5, 0.9, 1.5] {
            let (y, residue) = spectral_scale_with_residue(x.view(), beta);
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ey: f64 = y.iter().map(|v| v * v).sum();
            assert!(((ey - beta * beta * ex) / (beta * beta * ex)).abs() < 1e-6);
            assert!(residue < 1e-9);
        }
    }

    #[test]
    fn band_noise_is_local_and_real() {
        let (fs, t) = (500.0, 1000);
        let x = random_epoch(9, 2, t);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, residue) = band_noise_with_residue(x.view(), (13.0, 30.0), 0.5, fs, &mut rng).unwrap();
        assert!(residue < 1e-9);
        let bin_hz = fs / t as f64;
        for ch in 0..2 {
            let fx = fft_real(&x.row(ch).to_vec());
            let fy = fft_real(&y.row(ch).to_vec());
            let mut changed = 0;
            for k in 0..=t / 2 {
                let f = k as f64 * bin_hz;
                let d = (fx[k] - fy[k]).norm();
                if (13.0..30.0).contains(&f) {
                    changed += (d > 1e-6) as usize;
                } else {
                    assert!(d < 1e-9, "bin {k} ({f} Hz) moved by {d}");
                }
            }
            assert!(changed > 0);
        }
        // Band reaching Nyquist keeps the output real.
        let (_, residue) = band_noise_with_residue(x.view(), (200.0, 250.0), 0.5, fs, &mut rng).unwrap();
        assert!(residue < 1e-9);
        assert!(band_noise(x.view(), (30.0, 13.0), 0.1, fs, &mut rng).is_err());
        assert!(band_noise(x.view(), (13.0, 300.0), 0.1, fs, &mut rng).is_err());
    }

    #[test]
    fn compose_order_and_replay() {
        let x = row(&[1.0, 2.0, 3.0, 4.0]);
        let ops = [
            AppliedOp::AmplitudeScale { factor: 2.0 },
            AppliedOp::TimeShift { shift: 1 },
        ];
        assert_eq!(replay(&ops, x.view(), 1.0).unwrap(), row(&[8.0, 2.0, 4.0, 6.0]));

        let cfg = AugmentConfig {
            amplitude_range: (1.0, 1.0),
            ..Default::default()
        };
        let out = compose(&[AugKind::AmplitudeScale], x.view(), &cfg, 1.0, 3).unwrap();
        assert_eq!(out.output, x);

        let epoch = random_epoch(2, 4, 500);
        let plan = [AugKind::BandNoise, AugKind::GaussianNoise, AugKind::TimeShift];
        let a = compose(&plan, epoch.view(), &AugmentConfig::default(), 250.0, 99).unwrap();
        let b = compose(&plan, epoch.view(), &AugmentConfig::default(), 250.0, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(replay(&a.applied, epoch.view(), 250.0).unwrap(), a.output);
        assert!(compose(&[], epoch.view(), &AugmentConfig::default(), 250.0, 1).is_err());
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            for kind in AugKind::ALL {
                match kind.sample(&cfg, 2500, 500.0, &mut rng) {
                    AppliedOp::GaussianNoise { sigma, .. } => assert!((0.05..=0.2).contains(&sigma)),
                    AppliedOp::TimeShift { shift } => assert!(shift.abs() <= 50),
                    AppliedOp::AmplitudeScale { factor } => assert!((0.8..=1.2).contains(&factor)),
                    AppliedOp::RandomMask { start, end } => {
                        assert_eq!(end - start + 1, 10);
                        assert!(end < 2500);
                    }
                    AppliedOp::FrequencyShift { phase } => assert!(phase.abs() <= 2.0),
                    AppliedOp::SpectralScale { factor } => assert!((0.5..=1.5).contains(&factor)),
                    AppliedOp::BandNoise { lo, hi, sigma, .. } => {
                        assert!(CANONICAL_BANDS.iter().any(|b| b.lo == lo && b.hi == hi));
                        assert!((0.05..=0.2).contains(&sigma));
                    }
                }
            }
        }
    }

    #[test]
    fn every_operator_preserves_shape() {
        let x = random_epoch(5, 3, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in AugKind::ALL {
            let op = kind.sample(&AugmentConfig::default(), 300, 250.0, &mut rng);
            assert_eq!(op.apply(x.view(), 250.0).unwrap().dim(), (3, 300), "{kind}");
        }
    }

    #[test]
    fn batch_uses_per_epoch_seeds() {
        let x = Array3::from_shape_fn((3, 2, 64), |(b, c, t)| (b * 7 + c * 3 + t) as f64 % 5.0);
        let plan = [AugKind::GaussianNoise];
        let cfg = AugmentConfig::default();
        let out = augment_batch(&x, &plan, &cfg, 100.0, &[1, 2, 3]).unwrap();
        for b in 0..3 {
            let single = compose(&plan, x.index_axis(Axis(0), b), &cfg, 100.0, b as u64 + 1).unwrap();
            assert_eq!(out.index_axis(Axis(0), b), single.output);
        }
        assert!(augment_batch(&x, &plan, &cfg, 100.0, &[1]).is_err());
    }
}
