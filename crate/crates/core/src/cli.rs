//! Command-line front end: argument parsing, run manifests and the command
//! implementations behind the `mclpd` binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augsched::write_history_csv;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::interpret::explain;
use crate::io::{file_sha256, ingest_csv, load_checkpoint, load_container, save_checkpoint, save_container, CheckpointManifest, IngestOptions};
use crate::pipeline::{evaluate, finetune, pretrain, read_jsonl, write_jsonl, EpochLog, Metrics};
use crate::signal::EpochSet;
use crate::synth::{generate, SiteSpec, SynthSpec};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CORRUPT: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;
pub const EXIT_TRAINING: i32 = 6;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MCLPD_THREADS";

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Corrupt { .. } | Error::Csv { .. } => EXIT_CORRUPT,
        Error::Config(_) => EXIT_CONFIG,
        Error::Training(_) | Error::NonFinite(_) | Error::NoCheckpoints => EXIT_TRAINING,
        _ => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mclpd", version, about = "Multi-view contrastive pre-training and fine-tuning for EEG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic epoch container.
    Synth(SynthArgs),
    /// Ingest raw CSV recordings into an epoch container.
    Preprocess(PreprocessArgs),
    /// Contrastive pre-training on unlabeled epochs.
    Pretrain(TrainArgs),
    /// Supervised fine-tuning of a pre-trained checkpoint.
    Finetune(TrainArgs),
    /// Score a checkpoint on a labeled container.
    Evaluate(EvalArgs),
    /// Band, channel and window occlusion importance.
    Explain(EvalArgs),
    /// Regenerate CSV summaries from training logs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `default`, `siteA`, `siteB`, `siteC` or a TOML file.
    #[arg(long, default_value = "default")]
    pub spec: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects_per_class: Option<usize>,
    #[arg(long)]
    pub epochs_per_subject: Option<usize>,
    #[arg(long)]
    pub subject_offset: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// One CSV file, or a directory of CSV files (one per subject).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with ingestion settings (`reference`, `fs`, `channel_map`, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label for a single file; directories read `labels.csv` (file,label).
    #[arg(long)]
    pub label: Option<u8>,
    /// Subject id for a single file; directory files are numbered from it.
    #[arg(long, default_value_t = 0)]
    pub subject: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pre-trained checkpoint (fine-tuning only).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A JSON-lines log file or a run directory containing `*_log.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved configuration plus input hashes written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub config: Option<serde_json::Value>,
    pub overrides: Vec<String>,
    /// Input path -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, cfg: Option<&RunConfig>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.map(|c| c.seed),
            config_hash: cfg.map(RunConfig::hash),
            config: cfg.map(|c| serde_json::to_value(c).expect("config is serialisable")),
            overrides: cfg.map(RunConfig::overrides).unwrap_or_default(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Apply `MCLPD_THREADS` to the global rayon pool. Ignored when unset.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Explain(a) => cmd_explain(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_config(path: Option<&Path>, seed: Option<u64>, label_fraction: Option<f64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(f) = label_fraction {
        cfg.finetune.label_fraction = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_logs(dir: &Path, phase: &str, logs: &[EpochLog], history: &[crate::augsched::HistoryRow]) -> Result<Vec<String>> {
    let log_path = dir.join(format!("{phase}_log.jsonl"));
    let f = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    write_jsonl(logs, BufWriter::new(f))?;
    let hist_path = dir.join(format!("{phase}_history.csv"));
    let f = File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    write_history_csv(history, BufWriter::new(f)).map_err(|e| Error::io(&hist_path, e))?;
    Ok(vec![log_path.display().to_string(), hist_path.display().to_string()])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn synth_spec(name: &str) -> Result<SynthSpec> {
    match name {
        "default" => Ok(SynthSpec::default()),
        "siteA" | "siteB" | "siteC" => Ok(SynthSpec { site: SiteSpec::preset(name)?, ..SynthSpec::default() }),
        path => {
            let p = Path::new(path);
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")))
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = synth_spec(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.subjects_per_class {
        spec.n_subjects_per_class = n;
    }
    if let Some(n) = a.epochs_per_subject {
        spec.epochs_per_subject = n;
    }
    if let Some(o) = a.subject_offset {
        spec.subject_offset = o;
    }
    let set = generate(&spec)?;
    save_container(&set, &a.out)?;
    let mut m = RunManifest::new("synth", None);
    m.seed = Some(spec.seed);
    m.config = Some(serde_json::to_value(&spec)?);
    m.outputs.push(a.out.display().to_string());
    m.write(&manifest_path_for(&a.out))?;
    log::info!("wrote {} epochs to {}", set.n_epochs(), a.out.display());
    Ok(())
}

/// `<file>.manifest.json` next to a single-file output.
fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestFile {
    fs: Option<f64>,
    reference: Option<String>,
    channel_map: BTreeMap<String, String>,
    ignore: Option<Vec<String>>,
    preprocess: Option<crate::signal::Preprocess>,
}

fn read_labels(dir: &Path) -> Result<BTreeMap<String, u8>> {
    let path = dir.join("labels.csv");
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path).map_err(|e| Error::Csv {
        path: path.clone(),
        line: 1,
        reason: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv { path: path.clone(), line, reason: e.to_string() })?;
        let label = rec.get(1).and_then(|l| l.parse().ok()).ok_or_else(|| Error::Csv {
            path: path.clone(),
            line,
            reason: "expected `file,label` with an integer label".into(),
        })?;
        out.insert(rec.get(0).unwrap_or_default().to_string(), label);
    }
    Ok(out)
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let mut opts = IngestOptions::default();
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let f: IngestFile = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        opts.fs = f.fs.unwrap_or(opts.fs);
        opts.reference = f.reference.unwrap_or(opts.reference);
        opts.channel_map = f.channel_map;
        opts.ignore = f.ignore.unwrap_or(opts.ignore);
        opts.preprocess = f.preprocess.unwrap_or(opts.preprocess);
    }
    let mut m = RunManifest::new("preprocess", None);
    let files: Vec<(PathBuf, Option<u8>)> = if a.data.is_dir() {
        let labels = read_labels(&a.data)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&a.data)
            .map_err(|e| Error::io(&a.data, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().is_some_and(|n| n != "labels.csv"))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                let name = p.file_name().unwrap_or_default().to_string_lossy().to_string();
                let label = labels.get(&name).copied();
                (p, label)
            })
            .collect()
    } else {
        vec![(a.data.clone(), a.label)]
    };
    if files.is_empty() {
        return Err(Error::Empty(format!("no CSV files in {}", a.data.display())));
    }
    let mut sets = Vec::with_capacity(files.len());
    for (i, (path, label)) in files.iter().enumerate() {
        opts.subject_id = a.subject + i as u32;
        opts.label = *label;
        sets.push(ingest_csv(path, &opts)?);
        m.input(path)?;
    }
    let set = EpochSet::concat(&sets.iter().collect::<Vec<_>>())?;
    save_container(&set, &a.out)?;
    m.outputs.push(a.out.display().to_string());
    m.write(&manifest_path_for(&a.out))
}

pub fn cmd_pretrain(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed, a.label_fraction)?;
    let data = load_container(&a.data)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("pretrain", Some(&cfg));
    m.input(&a.data)?;
    let out = pretrain(&data, &cfg)?;
    let ckpt = a.out.join("model.ckpt");
    let mut cm = CheckpointManifest::new(&out.params, &cfg.hash(), cfg.seed, out.best_epoch, "pretrain");
    if let Some(l) = out.logs.get(out.best_epoch) {
        cm.metrics.insert("loss".into(), l.loss);
        if let Some(v) = l.val_loss {
            cm.metrics.insert("val_loss".into(), v);
        }
    }
    save_checkpoint(&out.params, &cm, &ckpt)?;
    m.outputs.push(ckpt.display().to_string());
    m.outputs.extend(write_logs(&a.out, "pretrain", &out.logs, &out.history)?);
    m.write(&a.out.join("manifest.json"))
}

pub fn cmd_finetune(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed, a.label_fraction)?;
    let model = a
        .model
        .as_deref()
        .ok_or_else(|| Error::Config("finetune needs --model <pre-trained checkpoint>".into()))?;
    let (pretrained, pm) = load_checkpoint(model)?;
    if pm.config_hash != cfg.hash() {
        log::warn!("config hash {} differs from the checkpoint's {}", cfg.hash(), pm.config_hash);
        eprintln!("warning: configuration differs from the one used to produce {}", model.display());
    }
    let data = load_container(&a.data)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("finetune", Some(&cfg));
    m.input(model)?;
    m.input(&a.data)?;
    let out = finetune(&pretrained, &data, &cfg)?;
    let last = out.logs.last().map_or(0, |l| l.epoch);
    let mut cm = CheckpointManifest::new(&out.params, &cfg.hash(), cfg.seed, last, "finetune");
    cm.metrics = metric_map(&out.test_metrics);
    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&out.params, &cm, &ckpt)?;
    let test_path = a.out.join("test.mclp");
    save_container(&data.select(&out.split.test), &test_path)?;
    let metrics_path = a.out.join("metrics.json");
    write_json(&metrics_path, &out.test_metrics)?;
    let split_path = a.out.join("split.json");
    write_json(&split_path, &out.split)?;
    m.outputs.extend([&ckpt, &test_path, &metrics_path, &split_path].map(|p| p.display().to_string()));
    m.outputs.extend(write_logs(&a.out, "finetune", &out.logs, &out.history)?);
    m.write(&a.out.join("manifest.json"))?;
    println!("{}", serde_json::to_string(&out.test_metrics)?);
    Ok(())
}

fn metric_map(m: &Metrics) -> BTreeMap<String, f64> {
    [("accuracy", m.accuracy), ("f1", m.f1), ("precision", m.precision), ("recall", m.recall)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

pub fn cmd_evaluate(a: &EvalArgs) -> Result<Metrics> {
    let (params, _) = load_checkpoint(&a.model)?;
    let data = load_container(&a.data)?;
    let metrics = evaluate(&params, &data)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        let mut m = RunManifest::new("evaluate", None);
        m.input(&a.model)?;
        m.input(&a.data)?;
        m.outputs.push(dir.join("metrics.json").display().to_string());
        m.write(&dir.join("manifest.json"))?;
    }
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(metrics)
}

pub fn cmd_explain(a: &EvalArgs) -> Result<()> {
    let (params, _) = load_checkpoint(&a.model)?;
    let data = load_container(&a.data)?;
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("explain"));
    let report = explain(&params, &data)?;
    report.write(&dir)?;
    let mut m = RunManifest::new("explain", None);
    m.input(&a.model)?;
    m.input(&a.data)?;
    for dim in ["band", "channel", "window"] {
        for ext in ["csv", "svg"] {
            m.outputs.push(dir.join(format!("{dim}_importance.{ext}")).display().to_string());
        }
    }
    m.write(&dir.join("manifest.json"))
}

fn log_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("_log.jsonl")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no *_log.jsonl files in {}", path.display())));
    }
    Ok(files)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// `(curves.csv, success_rates.csv)` contents for a set of log lines.
pub fn render_report(logs: &[EpochLog]) -> (String, String) {
    let mut curves = String::from("phase,epoch,loss,val_loss,val_accuracy,lr,stage\n");
    let mut rates = String::from("phase,epoch,operator,success_rate\n");
    for l in logs {
        curves.push_str(&format!(
            "{},{},{:.6},{},{},{:.6e},{}\n",
            l.phase,
            l.epoch,
            l.loss,
            fmt_opt(l.val_loss),
            fmt_opt(l.val_accuracy),
            l.lr,
            l.stage.map(|s| s.to_string()).unwrap_or_default()
        ));
        for (op, r) in &l.success_rates {
            rates.push_str(&format!("{},{},{op},{r:.6}\n", l.phase, l.epoch));
        }
    }
    (curves, rates)
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut logs = Vec::new();
    let mut m = RunManifest::new("report", None);
    for f in log_files(&a.data)? {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        logs.extend(read_jsonl(&text).map_err(|e| Error::corrupt(&f, e.to_string()))?);
        m.input(&f)?;
    }
    create_dir(&a.out)?;
    let (curves, rates) = render_report(&logs);
    for (name, text) in [("curves.csv", curves), ("success_rates.csv", rates)] {
        let p = a.out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        m.outputs.push(p.display().to_string());
    }
    m.write(&a.out.join("manifest.json"))
}
