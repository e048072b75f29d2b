//! EEG epoch containers, preprocessing and real FFT helpers.
//!
//! FFT convention used throughout the crate: the forward transform is
//! unnormalised and the inverse divides by the trace length `T`. Parseval
//! therefore reads `Σ x² = (1/T) Σ |X|²` over the full two-sided spectrum.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Traces with a population standard deviation below this are treated as constant.
pub const ZSCORE_MIN_STD: f64 = 1e-12;

/// A batch of fixed-length multi-channel epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    /// `[n_epochs, n_channels, n_samples]`.
    pub data: Array3<f64>,
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Optional binary labels (0 = control, 1 = positive class).
    pub labels: Option<Vec<u8>>,
    pub subject_ids: Vec<u32>,
    pub channel_names: Vec<String>,
}

impl EpochSet {
    pub fn new(
        data: Array3<f64>,
        fs: f64,
        labels: Option<Vec<u8>>,
        subject_ids: Vec<u32>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let (n, c, _) = data.dim();
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if subject_ids.len() != n {
            return Err(Error::shape(format!("{n} subject ids"), subject_ids.len()));
        }
        if channel_names.len() != c {
            return Err(Error::shape(format!("{c} channel names"), channel_names.len()));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::shape(format!("{n} labels"), labels.len()));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::invalid(format!("labels must be 0 or 1, found {bad}")));
            }
        }
        Ok(Self {
            data,
            fs,
            labels,
            subject_ids,
            channel_names,
        })
    }

    /// An empty set with the given geometry.
    pub fn empty(n_channels: usize, n_samples: usize, fs: f64, channel_names: Vec<String>) -> Self {
        Self {
            data: Array3::zeros((0, n_channels, n_samples)),
            fs,
            labels: None,
            subject_ids: Vec::new(),
            channel_names,
        }
    }

    pub fn n_epochs(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_samples(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_empty(&self) -> bool {
        self.n_epochs() == 0
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Labels as class indices; errors when the set is unlabelled.
    pub fn targets(&self) -> Result<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&v| v as usize).collect())
            .ok_or_else(|| Error::invalid("epoch set has no labels"))
    }

    /// Sub-set of epochs in the given order.
    pub fn select(&self, indices: &[usize]) -> EpochSet {
        EpochSet {
            data: self.data.select(Axis(0), indices),
            fs: self.fs,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i]).collect(),
            channel_names: self.channel_names.clone(),
        }
    }

    /// Concatenate sets with identical geometry.
    pub fn concat(sets: &[&EpochSet]) -> Result<EpochSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        for s in sets {
            if s.n_channels() != first.n_channels() || s.n_samples() != first.n_samples() {
                return Err(Error::shape(
                    format!("{}x{}", first.n_channels(), first.n_samples()),
                    format!("{}x{}", s.n_channels(), s.n_samples()),
                ));
            }
        }
        let views: Vec<_> = sets.iter().map(|s| s.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::invalid(format!("concatenate: {e}")))?;
        let labels = if sets.iter().all(|s| s.labels.is_some()) {
            Some(sets.iter().flat_map(|s| s.labels.clone().unwrap()).collect())
        } else {
            None
        };
        let subject_ids = sets.iter().flat_map(|s| s.subject_ids.iter().copied()).collect();
        EpochSet::new(data, first.fs, labels, subject_ids, first.channel_names.clone())
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<u32> {
        let mut seen = std::collections::HashSet::new();
        self.subject_ids
            .iter()
            .copied()
            .filter(|s| seen.insert(*s))
            .collect()
    }

    /// Epoch indices grouped by subject.
    pub fn indices_by_subject(&self) -> HashMap<u32, Vec<usize>> {
        let mut map: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, &s) in self.subject_ids.iter().enumerate() {
            map.entry(s).or_default().push(i);
        }
        map
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named frequency band `[lo, hi)` in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// Whether a bin at `freq` Hz lies inside the band.
    pub fn contains(&self, freq: f64) -> bool {
        freq >= self.lo && freq < self.hi
    }
}

/// Canonical EEG bands. Gamma stops at 45 Hz because preprocessing low-passes there.
pub const CANONICAL_BANDS: [Band; 5] = [
    Band { name: "delta", lo: 0.5, hi: 4.0 },
    Band { name: "theta", lo: 4.0, hi: 8.0 },
    Band { name: "alpha", lo: 8.0, hi: 13.0 },
    Band { name: "beta", lo: 13.0, hi: 30.0 },
    Band { name: "gamma", lo: 30.0, hi: 45.0 },
];

pub fn band_by_name(name: &str) -> Result<Band> {
    CANONICAL_BANDS
        .iter()
        .find(|b| b.name.eq_ignore_ascii_case(name))
        .copied()
        .ok_or_else(|| Error::invalid(format!("unknown band `{name}`")))
}

/// Magnitude/phase view of the non-negative-frequency half of a real FFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `[n_channels, n_bins]`, `n_bins = T/2 + 1`.
    pub magnitude: Array2<f64>,
    pub phase: Array2<f64>,
    /// Frequency resolution `fs / T`.
    pub bin_hz: f64,
    /// Length `T` of the source traces.
    pub n_samples: usize,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unnormalised forward complex FFT.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// In-place inverse complex FFT, divided by the length.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
    }
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Full two-sided spectrum of a real trace.
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

/// Non-negative-frequency bins `0..=T/2` of a real trace.
pub fn rfft_trace(x: &[f64]) -> Vec<Complex64> {
    let mut full = fft_real(x);
    full.truncate(x.len() / 2 + 1);
    full
}

/// Inverse of [`rfft_trace`].
///
/// The negative-frequency half is filled with conjugates of bins `1..ceil(T/2)`.
/// DC and (for even `T`) Nyquist bins are used as given, so any imaginary part
/// placed there shows up in the returned residue: the largest absolute
/// imaginary component of the time-domain result before it is discarded.
pub fn irfft_trace(bins: &[Complex64], n: usize) -> (Vec<f64>, f64) {
    assert_eq!(bins.len(), n / 2 + 1, "bin count does not match trace length");
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..bins.len()].copy_from_slice(bins);
    for k in 1..n.div_ceil(2) {
        full[n - k] = bins[k].conj();
    }
    ifft_in_place(&mut full);
    let residue = full.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    (full.iter().map(|c| c.re).collect(), residue)
}

/// Two-sided magnitude spectrum `|F(x)|` of length `T`.
pub fn magnitude_two_sided(x: &[f64]) -> Vec<f64> {
    fft_real(x).iter().map(|c| c.norm()).collect()
}

/// Per-channel real FFT of `[n_channels, T]` traces.
pub fn rfft(x: ArrayView2<f64>, fs: f64) -> Spectrum {
    let (c, t) = x.dim();
    let n_bins = t / 2 + 1;
    let mut magnitude = Array2::zeros((c, n_bins));
    let mut phase = Array2::zeros((c, n_bins));
    for (ch, row) in x.axis_iter(Axis(0)).enumerate() {
        let trace: Vec<f64> = row.iter().copied().collect();
        for (k, v) in rfft_trace(&trace).into_iter().enumerate() {
            magnitude[[ch, k]] = v.norm();
            phase[[ch, k]] = v.arg();
        }
    }
    Spectrum {
        magnitude,
        phase,
        bin_hz: fs / t as f64,
        n_samples: t,
    }
}

/// Inverse of [`rfft`].
pub fn irfft(s: &Spectrum) -> Array2<f64> {
    let (c, n_bins) = s.magnitude.dim();
    let mut out = Array2::zeros((c, s.n_samples));
    for ch in 0..c {
        let bins: Vec<Complex64> = (0..n_bins)
            .map(|k| Complex64::from_polar(s.magnitude[[ch, k]], s.phase[[ch, k]]))
            .collect();
        let (trace, _) = irfft_trace(&bins, s.n_samples);
        out.row_mut(ch).assign(&ndarray::ArrayView1::from(&trace));
    }
    out
}

/// Hamming-windowed sinc band-pass taps, scaled to unit gain at the band centre.
pub fn design_bandpass(fs: f64, lo: f64, hi: f64, taps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < lo < hi < fs/2 (lo={lo}, hi={hi}, fs={fs})"
        )));
    }
    if taps < 3 || taps % 2 == 0 {
        return Err(Error::invalid(format!("tap count must be odd and >= 3, got {taps}")));
    }
    let m = (taps - 1) as f64 / 2.0;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let (flo, fhi) = (lo / fs, hi / fs);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - m;
            let ideal = 2.0 * fhi * sinc(2.0 * fhi * t) - 2.0 * flo * sinc(2.0 * flo * t);
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            ideal * window
        })
        .collect();
    let centre = 0.5 * (flo + fhi);
    let gain: f64 = h
        .iter()
        .enumerate()
        .map(|(n, &v)| v * (2.0 * PI * centre * (n as f64 - m)).cos())
        .sum();
    for v in &mut h {
        *v /= gain;
    }
    Ok(h)
}

/// Zero-phase application of linear-phase taps: linear convolution with zero
/// padding, shifted by the group delay `(taps-1)/2` so output aligns with input.
fn filter_same(x: &[f64], taps_fft: &[Complex64], n_fft: usize, taps: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    fft_in_place(&mut buf);
    for (b, h) in buf.iter_mut().zip(taps_fft) {
        *b *= h;
    }
    ifft_in_place(&mut buf);
    let delay = (taps - 1) / 2;
    buf[delay..delay + x.len()].iter().map(|c| c.re).collect()
}

/// Band-pass `[n_channels, N]` continuous traces.
pub fn bandpass_record(
    record: ArrayView2<f64>,
    fs: f64,
    lo: f64,
    hi: f64,
    taps: usize,
) -> Result<Array2<f64>> {
    let h = design_bandpass(fs, lo, hi, taps)?;
    let (c, n) = record.dim();
    let n_fft = (n + taps - 1).next_power_of_two();
    let mut hbuf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, &v) in hbuf.iter_mut().zip(&h) {
        b.re = v;
    }
    fft_in_place(&mut hbuf);
    let mut out = Array2::zeros((c, n));
    for ch in 0..c {
        let trace: Vec<f64> = record.row(ch).iter().copied().collect();
        let y = filter_same(&trace, &hbuf, n_fft, taps);
        out.row_mut(ch).assign(&ndarray::ArrayView1::from(&y));
    }
    Ok(out)
}

/// Band-pass every epoch and channel independently.
pub fn bandpass(x: &EpochSet, lo: f64, hi: f64, taps: usize) -> Result<EpochSet> {
    let mut out = x.clone();
    bandpass_in_place(&mut out.data, x.fs, lo, hi, taps)?;
    Ok(out)
}

/// Band-pass every `[n_channels, T]` epoch of `data` without a second copy.
pub fn bandpass_in_place(data: &mut Array3<f64>, fs: f64, lo: f64, hi: f64, taps: usize) -> Result<()> {
    for mut epoch in data.axis_iter_mut(Axis(0)) {
        let filtered = bandpass_record(epoch.view(), fs, lo, hi, taps)?;
        epoch.assign(&filtered);
    }
    Ok(())
}

/// Cut a continuous `[n_channels, N]` record into non-overlapping epochs of
/// `dur` seconds. The trailing remainder is discarded.
pub fn epoch_split(
    record: ArrayView2<f64>,
    fs: f64,
    dur: f64,
    channel_names: Vec<String>,
    subject_id: u32,
    label: Option<u8>,
) -> Result<EpochSet> {
    if !(dur > 0.0) {
        return Err(Error::invalid(format!("epoch duration must be positive, got {dur}")));
    }
    let (c, n) = record.dim();
    let len = (fs * dur).round() as usize;
    if len == 0 {
        return Err(Error::invalid("epoch shorter than one sample"));
    }
    let count = n / len;
    let mut data = Array3::zeros((count, c, len));
    for e in 0..count {
        data.slice_mut(s![e, .., ..])
            .assign(&record.slice(s![.., e * len..(e + 1) * len]));
    }
    EpochSet::new(
        data,
        fs,
        label.map(|l| vec![l; count]),
        vec![subject_id; count],
        channel_names,
    )
}

/// Standardise one trace in place with the population standard deviation.
/// Traces with σ below [`ZSCORE_MIN_STD`] become all-zero.
pub fn zscore_trace(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZSCORE_MIN_STD {
        x.fill(0.0);
    } else {
        for v in x.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
}

/// Per-(epoch, channel) z-score.
pub fn zscore(x: &EpochSet) -> EpochSet {
    let mut out = x.clone();
    zscore_in_place(&mut out.data);
    out
}

pub fn zscore_in_place(data: &mut Array3<f64>) {
    for mut lane in data.lanes_mut(Axis(2)) {
        match lane.as_slice_mut() {
            Some(s) => zscore_trace(s),
            None => {
                let mut v: Vec<f64> = lane.iter().copied().collect();
                zscore_trace(&mut v);
                lane.assign(&ndarray::ArrayView1::from(&v));
            }
        }
    }
}

/// Preprocessing applied to referenced continuous records before training:
/// band-pass, non-overlapping epoching, per-trace z-score.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Preprocess {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub taps: usize,
    pub epoch_seconds: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            lo_hz: 1.0,
            hi_hz: 45.0,
            taps: 501,
            epoch_seconds: 5.0,
        }
    }
}

impl Preprocess {
    pub fn apply(
        &self,
        record: ArrayView2<f64>,
        fs: f64,
        channel_names: Vec<String>,
        subject_id: u32,
        label: Option<u8>,
    ) -> Result<EpochSet> {
        let filtered = bandpass_record(record, fs, self.lo_hz, self.hi_hz, self.taps)?;
        let epochs = epoch_split(
            filtered.view(),
            fs,
            self.epoch_seconds,
            channel_names,
            subject_id,
            label,
        )?;
        Ok(zscore(&epochs))
    }
}

/// Power of a trace inside `[lo, hi)` Hz, from the one-sided periodogram.
pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let bin_hz = fs / n as f64;
    rfft_trace(x)
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * bin_hz;
            f >= lo && f < hi
        })
        .map(|(_, c)| c.norm_sqr())
        .sum::<f64>()
        / (n as f64 * n as f64)
}
