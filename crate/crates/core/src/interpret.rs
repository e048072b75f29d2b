//! Occlusion importance: accuracy drop when a frequency band, a channel or a
//! time window is removed from every test epoch.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{predict, ModelParams};
use crate::error::{Error, Result};
use crate::signal::{band_by_name, irfft_trace, rfft_trace, Band, EpochSet, CANONICAL_BANDS};

/// Number of equal time windows scored by [`window_importance`].
pub const N_WINDOWS: usize = 10;

const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_accuracy: f64,
    /// Canonical band order.
    pub band_scores: Vec<(String, f64)>,
    /// Montage order.
    pub channel_scores: Vec<(String, f64)>,
    pub window_scores: Vec<f64>,
}

fn accuracy(params: &ModelParams, x: &Array3<f64>, targets: &[usize]) -> Result<f64> {
    let preds = predict(params, x, CHUNK)?;
    let correct = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / targets.len() as f64)
}

fn labeled(test: &EpochSet) -> Result<Vec<usize>> {
    if test.is_empty() {
        return Err(Error::Empty("test set has no epochs".into()));
    }
    test.targets()
}

/// Zero the spectral content of every trace inside `[band.lo, band.hi)`,
/// keeping the spectrum Hermitian so the result stays real.
pub fn remove_band(x: &Array3<f64>, fs: f64, band: &Band) -> Array3<f64> {
    let (b, c, t) = x.dim();
    let traces: Vec<Vec<f64>> = x.lanes(Axis(2)).into_iter().map(|l| l.to_vec()).collect();
    let filtered: Vec<f64> = traces
        .into_par_iter()
        .flat_map_iter(|trace| {
            let mut bins = rfft_trace(&trace);
            for (k, bin) in bins.iter_mut().enumerate() {
                if band.contains(k as f64 * fs / t as f64) {
                    *bin = 0.0.into();
                }
            }
            irfft_trace(&bins, t).0
        })
        .collect();
    Array3::from_shape_vec((b, c, t), filtered).expect("shape preserved")
}

pub fn mask_channel(x: &Array3<f64>, channel: usize) -> Array3<f64> {
    let mut out = x.clone();
    out.slice_mut(s![.., channel, ..]).fill(0.0);
    out
}

/// Sample range of window `w` of `n_windows`; the last window absorbs any
/// remainder.
pub fn window_bounds(n_samples: usize, n_windows: usize, w: usize) -> (usize, usize) {
    let len = n_samples / n_windows;
    let start = w * len;
    let end = if w + 1 == n_windows { n_samples } else { start + len };
    (start, end)
}

pub fn occlude_window(x: &Array3<f64>, w: usize) -> Result<Array3<f64>> {
    if w >= N_WINDOWS {
        return Err(Error::invalid(format!("window {w} outside 0..{N_WINDOWS}")));
    }
    let (start, end) = window_bounds(x.dim().2, N_WINDOWS, w);
    let mut out = x.clone();
    out.slice_mut(s![.., .., start..end]).fill(0.0);
    Ok(out)
}

pub fn band_importance(params: &ModelParams, test: &EpochSet, band: &str) -> Result<f64> {
    let targets = labeled(test)?;
    let band = band_by_name(band)?;
    let base = accuracy(params, &test.data, &targets)?;
    Ok(base - accuracy(params, &remove_band(&test.data, test.fs, &band), &targets)?)
}

pub fn channel_importance(params: &ModelParams, test: &EpochSet, channel: &str) -> Result<f64> {
    let targets = labeled(test)?;
    let c = test.channel_index(channel)?;
    let base = accuracy(params, &test.data, &targets)?;
    Ok(base - accuracy(params, &mask_channel(&test.data, c), &targets)?)
}

pub fn window_importance(params: &ModelParams, test: &EpochSet, w: usize) -> Result<f64> {
    let targets = labeled(test)?;
    let base = accuracy(params, &test.data, &targets)?;
    Ok(base - accuracy(params, &occlude_window(&test.data, w)?, &targets)?)
}

/// Every band, channel and window score against one baseline.
pub fn explain(params: &ModelParams, test: &EpochSet) -> Result<ImportanceReport> {
    let targets = labeled(test)?;
    let base = accuracy(params, &test.data, &targets)?;
    let drop = |x: Array3<f64>| -> Result<f64> { Ok(base - accuracy(params, &x, &targets)?) };
    let band_scores = CANONICAL_BANDS
        .iter()
        .map(|b| Ok((b.name.to_string(), drop(remove_band(&test.data, test.fs, b))?)))
        .collect::<Result<_>>()?;
    let channel_scores = test
        .channel_names
        .iter()
        .enumerate()
        .map(|(c, name)| Ok((name.clone(), drop(mask_channel(&test.data, c))?)))
        .collect::<Result<_>>()?;
    let window_scores = (0..N_WINDOWS)
        .map(|w| drop(occlude_window(&test.data, w)?))
        .collect::<Result<_>>()?;
    Ok(ImportanceReport { baseline_accuracy: base, band_scores, channel_scores, window_scores })
}

/// Scores as percentages of the total positive drop.
pub fn as_percentages(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().filter(|s| **s > 0.0).sum();
    scores
        .iter()
        .map(|s| if total > 0.0 { 100.0 * s / total } else { 0.0 })
        .collect()
}

/// Names ordered by decreasing score; ties keep their original order.
pub fn ranking(scores: &[(String, f64)]) -> Vec<String> {
    let mut v: Vec<&(String, f64)> = scores.iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v.into_iter().map(|(n, _)| n.clone()).collect()
}

impl ImportanceReport {
    pub fn windows_named(&self) -> Vec<(String, f64)> {
        self.window_scores
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("W{}", i + 1), *s))
            .collect()
    }

    fn dimensions(&self) -> [(&'static str, Vec<(String, f64)>); 3] {
        [
            ("band", self.band_scores.clone()),
            ("channel", self.channel_scores.clone()),
            ("window", self.windows_named()),
        ]
    }

    /// Writes `<dim>_importance.csv` and `<dim>_importance.svg` for each of
    /// band, channel and window into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (dim, scores) in self.dimensions() {
            let csv_path = dir.join(format!("{dim}_importance.csv"));
            std::fs::write(&csv_path, to_csv(dim, &scores, self.baseline_accuracy)).map_err(|e| Error::io(&csv_path, e))?;
            let svg_path = dir.join(format!("{dim}_importance.svg"));
            std::fs::write(&svg_path, bar_chart(&format!("{dim} importance (accuracy drop, %)"), &scores))
                .map_err(|e| Error::io(&svg_path, e))?;
        }
        Ok(())
    }
}

pub fn to_csv(dim: &str, scores: &[(String, f64)], baseline: f64) -> String {
    let pct = as_percentages(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
    let mut out = format!("{dim},accuracy_drop,percent_of_total,baseline_accuracy\n");
    for ((name, s), p) in scores.iter().zip(pct) {
        let _ = writeln!(out, "{name},{s:.6},{p:.4},{baseline:.6}");
    }
    out
}

/// A horizontal bar chart of percentage scores as standalone SVG.
pub fn bar_chart(title: &str, scores: &[(String, f64)]) -> String {
    let pct = as_percentages(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
    let (row_h, label_w, bar_w) = (18.0, 70.0, 320.0);
    let height = 40.0 + row_h * scores.len() as f64;
    let max = pct.iter().fold(1e-9f64, |m, p| m.max(p.abs()));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="11">"#,
        w = label_w + bar_w + 70.0
    );
    let _ = writeln!(svg, r#"<text x="4" y="16" font-size="13">{}</text>"#, escape(title));
    for (i, ((name, _), p)) in scores.iter().zip(&pct).enumerate() {
        let y = 28.0 + row_h * i as f64;
        let w = (p.max(0.0) / max) * bar_w;
        let _ = writeln!(svg, r#"<text x="4" y="{:.1}">{}</text>"#, y + 12.0, escape(name));
        let _ = writeln!(
            svg,
            r##"<rect x="{label_w}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="#4a7ab5"/>"##,
            row_h - 4.0
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{p:.1}</text>"#, label_w + w + 4.0, y + 12.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
