//! Raw CSV ingestion: one file per subject, one row per sample, one column
//! per electrode including the reference.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::{EpochSet, Preprocess};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub fs: f64,
    /// Reference column subtracted from every channel.
    pub reference: String,
    /// CSV column name -> output channel name. Empty means every column
    /// except the reference and `ignore` is kept under its own name.
    pub channel_map: BTreeMap<String, String>,
    /// Columns never treated as channels, e.g. a time stamp.
    pub ignore: Vec<String>,
    pub subject_id: u32,
    pub label: Option<u8>,
    pub preprocess: Preprocess,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            fs: 500.0,
            reference: "CPz".into(),
            channel_map: BTreeMap::new(),
            ignore: vec!["time".into(), "t".into(), "timestamp".into()],
            subject_id: 0,
            label: None,
            preprocess: Preprocess::default(),
        }
    }
}

/// Read a CSV recording, re-reference it, keep the mapped channels and run
/// band-pass filtering, epoching and z-scoring.
pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<EpochSet> {
    let csv_err = |line: u64, reason: String| Error::Csv { path: path.to_path_buf(), line, reason };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => csv_err(1, format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let ref_col = headers
        .iter()
        .position(|h| h == &opts.reference)
        .ok_or_else(|| csv_err(1, format!("missing reference column `{}`", opts.reference)))?;
    let mut selected: Vec<(usize, String)> = Vec::new();
    if opts.channel_map.is_empty() {
        for (i, h) in headers.iter().enumerate() {
            if i != ref_col && !opts.ignore.iter().any(|g| g.eq_ignore_ascii_case(h)) {
                selected.push((i, h.clone()));
            }
        }
    } else {
        for (src, dst) in &opts.channel_map {
            let i = headers
                .iter()
                .position(|h| h == src)
                .ok_or_else(|| csv_err(1, format!("missing mapped column `{src}`")))?;
            selected.push((i, dst.clone()));
        }
        selected.sort_by_key(|(i, _)| *i);
    }
    if selected.len() < 2 {
        return Err(csv_err(1, format!("need at least 2 channels besides the reference, found {}", selected.len())));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); selected.len()];
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| csv_err(e.position().map_or(line, |p| p.line()), e.to_string()))?;
        if record.len() != headers.len() {
            return Err(csv_err(line, format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        let parse = |i: usize| -> Result<f64> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| csv_err(line, format!("column `{}`: `{}` is not a number", headers[i], &record[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(csv_err(line, format!("column `{}` is not finite", headers[i])))
            }
        };
        let reference = parse(ref_col)?;
        for (col, (i, _)) in columns.iter_mut().zip(&selected) {
            col.push(parse(*i)? - reference);
        }
    }
    let n = columns[0].len();
    let record = Array2::from_shape_fn((columns.len(), n), |(c, t)| columns[c][t]);
    let names = selected.into_iter().map(|(_, n)| n).collect();
    opts.preprocess.apply(record.view(), opts.fs, names, opts.subject_id, opts.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(rows: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        f
    }

    #[test]
    fn reference_only_signal_becomes_zero() {
        let mut rows = vec!["time,Fz,Cz,CPz".to_string()];
        for t in 0..3000 {
            let v = (t as f64 * 0.05).sin();
            rows.push(format!("{t},{v},{v},{v}"));
        }
        let f = write_csv(&rows);
        let set = ingest_csv(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!(set.channel_names, vec!["Fz", "Cz"]);
        assert_eq!(set.n_epochs(), 1);
        assert!(set.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_csv(&["Fz,Cz,CPz".into(), "1,2,3".into(), "1,x,3".into()]);
        match ingest_csv(f.path(), &IngestOptions::default()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_reference_and_too_few_channels() {
        let f = write_csv(&["Fz,Cz".into(), "1,2".into()]);
        assert!(ingest_csv(f.path(), &IngestOptions::default()).is_err());
        let f = write_csv(&["Fz,CPz".into(), "1,2".into()]);
        assert!(ingest_csv(f.path(), &IngestOptions::default()).is_err());
    }
}
