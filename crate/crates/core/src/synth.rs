//! Synthetic multi-site EEG with a controllable beta-band class signature.
//!
//! Each epoch and channel is a unit-variance pink-noise background plus two
//! random-phase sinusoids per canonical band, at the band's one- and
//! two-thirds points, built directly in the frequency domain on the FFT bin
//! grid. Class-1 epochs have the
//! beta-band bins of the signature channels scaled so their beta power is
//! multiplied by `beta_multiplier`. A recording site then applies a channel
//! gain, a white noise floor and 60 Hz line noise, and the result is
//! band-passed and z-scored like real recordings.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{band_power, bandpass_in_place, irfft_trace, zscore_in_place, EpochSet, Preprocess, CANONICAL_BANDS};

/// The 30 non-reference scalp channels used by default.
pub const STANDARD_CHANNELS: [&str; 30] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4", "T8", "CP5",
    "CP1", "CP2", "CP6", "P7", "P3", "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10",
];

/// Central channels carrying the class signature by default.
pub const DEFAULT_SIGNATURE: [&str; 10] = ["FC5", "FC1", "FC2", "FC6", "C3", "Cz", "C4", "CP5", "CP1", "CP2"];

const BETA: (f64, f64) = (13.0, 30.0);
const LINE_HZ: f64 = 60.0;

/// Acquisition characteristics of one recording site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteSpec {
    pub name: String,
    /// Overall amplifier gain.
    pub gain: f64,
    /// Relative standard deviation of per-channel gain.
    pub channel_gain_jitter: f64,
    /// Standard deviation of additive white noise.
    pub noise_floor: f64,
    /// Amplitude of 60 Hz line noise.
    pub line_noise: f64,
}

impl Default for SiteSpec {
    fn default() -> Self {
        Self::preset("siteA").expect("known preset")
    }
}

impl SiteSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let (gain, noise_floor, line_noise) = match name {
            "siteA" => (1.0, 0.3, 0.5),
            "siteB" => (1.2, 0.5, 1.0),
            "siteC" => (0.8, 0.7, 0.2),
            other => return Err(Error::invalid(format!("unknown site preset `{other}`"))),
        };
        Ok(Self { name: name.to_string(), gain, channel_gain_jitter: 0.05, noise_floor, line_noise })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects_per_class: usize,
    pub epochs_per_subject: usize,
    pub n_channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    /// Beta-band power multiplier for class 1 on the signature channels.
    pub beta_multiplier: f64,
    pub signature_channels: Vec<String>,
    /// Sinusoid amplitudes for delta, theta, alpha, beta and gamma, relative
    /// to the unit-variance background.
    pub band_amplitudes: [f64; 5],
    /// Log-normal sigma of per-subject band amplitude factors.
    pub subject_variability: f64,
    pub site: SiteSpec,
    /// First subject id; sites should use disjoint ranges.
    pub subject_offset: u32,
    pub seed: u64,
    /// Band-pass and z-score the generated epochs.
    pub preprocess: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects_per_class: 10,
            epochs_per_subject: 25,
            n_channels: 30,
            fs: 500.0,
            duration_s: 5.0,
            beta_multiplier: 2.0,
            signature_channels: DEFAULT_SIGNATURE.iter().map(|s| s.to_string()).collect(),
            band_amplitudes: [1.0, 0.8, 1.2, 0.6, 0.3],
            subject_variability: 0.1,
            site: SiteSpec::default(),
            subject_offset: 0,
            seed: 0,
            preprocess: true,
        }
    }
}

/// Channel names for `n` channels: the standard montage, then `Ch31`, ...
pub fn channel_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| STANDARD_CHANNELS.get(i).map_or_else(|| format!("Ch{}", i + 1), |s| s.to_string()))
        .collect()
}

impl SynthSpec {
    pub fn n_samples(&self) -> usize {
        (self.fs * self.duration_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects_per_class == 0 || self.epochs_per_subject == 0 || self.n_channels == 0 {
            return Err(Error::Config("synthetic dataset dimensions must be positive".into()));
        }
        if !(self.fs > 2.0 * BETA.1) || self.n_samples() < 16 {
            return Err(Error::Config("sampling rate or duration too small".into()));
        }
        if !(self.beta_multiplier > 0.0) || self.subject_variability < 0.0 {
            return Err(Error::Config("beta multiplier must be positive".into()));
        }
        if self.band_amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("band amplitudes must be non-negative".into()));
        }
        let s = &self.site;
        if !(s.gain > 0.0) || s.channel_gain_jitter < 0.0 || s.noise_floor < 0.0 || s.line_noise < 0.0 {
            return Err(Error::Config(format!("invalid site parameters for `{}`", s.name)));
        }
        let names = channel_names(self.n_channels);
        for c in &self.signature_channels {
            if !names.contains(c) {
                return Err(Error::UnknownChannel(c.clone()));
            }
        }
        Ok(())
    }

    fn signature_mask(&self) -> Vec<bool> {
        channel_names(self.n_channels)
            .iter()
            .map(|n| self.signature_channels.contains(n))
            .collect()
    }
}

/// Mean square of the real trace whose non-negative bins are `bins`.
fn bins_mean_square(bins: &[Complex64], n: usize) -> f64 {
    let total: f64 = bins
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let twice = k != 0 && !(n % 2 == 0 && k == n / 2);
            b.norm_sqr() * if twice { 2.0 } else { 1.0 }
        })
        .sum();
    total / (n as f64 * n as f64)
}

/// Complex Gaussian bin with the spectrum of real white noise of variance
/// `sigma^2`; DC and Nyquist bins are real.
fn white_bin(rng: &mut ChaCha8Rng, k: usize, n: usize, sigma: f64) -> Complex64 {
    let real_only = k == 0 || (n % 2 == 0 && k == n / 2);
    let re: f64 = rng.sample(StandardNormal);
    if real_only {
        Complex64::new(re * sigma * (n as f64).sqrt(), 0.0)
    } else {
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * sigma * (n as f64 / 2.0).sqrt()
    }
}

/// Unit-variance 1/f noise, as non-negative frequency bins.
fn pink_bins(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<Complex64> {
    let mut bins = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
    for (k, b) in bins.iter_mut().enumerate().skip(1) {
        let f = k as f64 * fs / n as f64;
        *b = white_bin(rng, k, n, 1.0) / f.sqrt();
    }
    let rms = bins_mean_square(&bins, n).sqrt();
    if rms > 0.0 {
        bins.iter_mut().for_each(|b| *b /= rms);
    }
    bins
}

/// Unit-variance 1/f noise.
#[cfg(test)]
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    irfft_trace(&pink_bins(rng, n, fs), n).0
}

/// Add `amp * sin(2 pi k t / n + phase)` to the spectrum at bin `k`.
fn add_sinusoid(bins: &mut [Complex64], n: usize, k: usize, amp: f64, phase: f64) {
    let real_only = k == 0 || (n % 2 == 0 && k == n / 2);
    let rot = Complex64::from_polar(1.0, phase);
    if real_only {
        bins[k] += amp * n as f64 * rot.im;
    } else {
        bins[k] += Complex64::new(0.0, -1.0) * rot * (amp * n as f64 / 2.0);
    }
}

/// Bin nearest to frequency `f`, clamped to the spectrum.
fn bin_of(f: f64, n: usize, fs: f64) -> usize {
    ((f * n as f64 / fs).round() as usize).min(n / 2)
}

struct Subject {
    label: u8,
    band_factors: [f64; 5],
    channel_gains: Vec<f64>,
}

fn generate_epoch(spec: &Subject, cfg: &SynthSpec, mask: &[bool], rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = cfg.n_samples();
    let fs = cfg.fs;
    let beta_scale = if spec.label == 1 { cfg.beta_multiplier.sqrt() } else { 1.0 };
    let site = &cfg.site;
    let line_bin = bin_of(LINE_HZ, n, fs);
    let mut out = Array2::zeros((cfg.n_channels, n));
    for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let mut bins = pink_bins(rng, n, fs);
        for (b, band) in CANONICAL_BANDS.iter().enumerate() {
            let amp = cfg.band_amplitudes[b] * spec.band_factors[b];
            for j in 1..=2 {
                let k = bin_of(band.lo + (band.hi - band.lo) * j as f64 / 3.0, n, fs).max(1);
                let phase = rng.random_range(0.0..2.0 * PI);
                add_sinusoid(&mut bins, n, k, amp, phase);
            }
        }
        let gain = site.gain * spec.channel_gains[c];
        for (k, b) in bins.iter_mut().enumerate() {
            let f = k as f64 * fs / n as f64;
            let scale = if mask[c] && (BETA.0..BETA.1).contains(&f) { beta_scale } else { 1.0 };
            *b *= gain * scale;
        }
        if site.noise_floor > 0.0 {
            for (k, b) in bins.iter_mut().enumerate() {
                *b += white_bin(rng, k, n, site.noise_floor);
            }
        }
        let line_phase = rng.random_range(0.0..2.0 * PI);
        add_sinusoid(&mut bins, n, line_bin, site.line_noise, line_phase);
        row.assign(&ndarray::Array1::from(irfft_trace(&bins, n).0));
    }
    out
}

/// Generated epochs before band-pass filtering and z-scoring.
pub fn generate_raw(cfg: &SynthSpec) -> Result<EpochSet> {
    cfg.validate()?;
    let mask = cfg.signature_mask();
    let n_subjects = 2 * cfg.n_subjects_per_class;
    let per = cfg.epochs_per_subject;
    let mut data = Array3::zeros((n_subjects * per, cfg.n_channels, cfg.n_samples()));
    data.axis_chunks_iter_mut(Axis(0), per).into_par_iter().enumerate().for_each(|(s, mut block)| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64 + 1);
        let variability = LogNormal::new(0.0, cfg.subject_variability).expect("validated sigma");
        let mut band_factors = [1.0; 5];
        band_factors.iter_mut().for_each(|f| *f = variability.sample(&mut rng));
        let channel_gains = (0..cfg.n_channels)
            .map(|_| (1.0 + cfg.site.channel_gain_jitter * rng.sample::<f64, _>(StandardNormal)).max(0.1))
            .collect();
        let subject = Subject {
            label: (s % 2) as u8,
            band_factors,
            channel_gains,
        };
        for mut epoch in block.axis_iter_mut(Axis(0)) {
            epoch.assign(&generate_epoch(&subject, cfg, &mask, &mut rng));
        }
    });
    let subject_ids = (0..n_subjects).flat_map(|s| std::iter::repeat_n(cfg.subject_offset + s as u32, per)).collect();
    let labels = (0..n_subjects).flat_map(|s| std::iter::repeat_n((s % 2) as u8, per)).collect();
    EpochSet::new(data, cfg.fs, Some(labels), subject_ids, channel_names(cfg.n_channels))
}

/// Generate a labeled dataset; subjects alternate between classes.
pub fn generate(cfg: &SynthSpec) -> Result<EpochSet> {
    let mut set = generate_raw(cfg)?;
    if cfg.preprocess {
        let p = Preprocess::default();
        bandpass_in_place(&mut set.data, set.fs, p.lo_hz, p.hi_hz, p.taps)?;
        zscore_in_place(&mut set.data);
    }
    Ok(set)
}

/// Mean beta-band power of class-1 epochs over that of class-0 epochs,
/// averaged over `channels`.
pub fn beta_power_ratio(set: &EpochSet, channels: &[String]) -> Result<f64> {
    let targets = set.targets()?;
    let idx: Vec<usize> = channels.iter().map(|c| set.channel_index(c)).collect::<Result<_>>()?;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (e, &t) in targets.iter().enumerate() {
        if t > 1 {
            continue;
        }
        let epoch = set.data.index_axis(Axis(0), e);
        let p: f64 = idx
            .iter()
            .map(|&c| band_power(&epoch.row(c).to_vec(), set.fs, BETA.0, BETA.1))
            .sum::<f64>()
            / idx.len() as f64;
        sums[t] += p;
        counts[t] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::invalid("both classes are needed for a power ratio"));
    }
    Ok((sums[1] / counts[1] as f64) / (sums[0] / counts[0] as f64))
}

/// Fraction of an epoch's power that lies in the beta band, averaged over
/// the given channel indices.
pub fn relative_beta_power(epoch: ArrayView2<f64>, fs: f64, channels: &[usize]) -> f64 {
    channels
        .iter()
        .map(|&c| {
            let x = epoch.row(c).to_vec();
            let total = band_power(&x, fs, 0.0, fs / 2.0 + 1.0);
            if total > 0.0 {
                band_power(&x, fs, BETA.0, BETA.1) / total
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / channels.len().max(1) as f64
}
