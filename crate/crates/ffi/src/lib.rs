//! C ABI over the `mclpd` library.
//!
//! Every function returns an [`MclpdStatus`]. On failure the message is kept
//! per thread and can be fetched with [`mclpd_last_error`]. Objects cross the
//! boundary as opaque handles that must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mclpd::config::RunConfig;
use mclpd::encoder::ModelParams;
use mclpd::io::{load_checkpoint, load_container, save_checkpoint, save_container, CheckpointManifest};
use mclpd::pipeline::{evaluate, finetune, pretrain};
use mclpd::signal::EpochSet;
use mclpd::synth::{channel_names, generate, SiteSpec, SynthSpec};
use mclpd::Error;
use ndarray::Array3;

/// Result of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MclpdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Corrupt = 4,
    Config = 5,
    Training = 6,
    Panic = 7,
}

/// An epoch set: `[n_epochs x n_channels x n_samples]` plus metadata.
pub struct MclpdEpochs(EpochSet);

/// Encoder, projection heads and classifier parameters.
pub struct MclpdModel(ModelParams);

/// A resolved run configuration.
pub struct MclpdConfig(RunConfig);

/// Binary classification metrics; class 1 is positive.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MclpdMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MclpdStatus {
    match err {
        Error::Io { .. } => MclpdStatus::Io,
        Error::Corrupt { .. } | Error::Csv { .. } => MclpdStatus::Corrupt,
        Error::Config(_) => MclpdStatus::Config,
        Error::Training(_) | Error::NonFinite(_) | Error::NoCheckpoints => MclpdStatus::Training,
        _ => MclpdStatus::InvalidInput,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MclpdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MclpdStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MclpdStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MclpdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure::Lib(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mclpd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mclpd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Configuration

/// Default configuration with the given seed.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_config_default(seed: u64, out_cfg: *mut *mut MclpdConfig) -> MclpdStatus {
    guard(|| {
        let slot = out(out_cfg, "out_cfg")?;
        *slot = Box::into_raw(Box::new(MclpdConfig(RunConfig { seed, ..RunConfig::default() })));
        Ok(())
    })
}

/// Parse and validate a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out_cfg` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_config_from_toml(toml: *const c_char, out_cfg: *mut *mut MclpdConfig) -> MclpdStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let slot = out(out_cfg, "out_cfg")?;
        *slot = Box::into_raw(Box::new(MclpdConfig(RunConfig::from_toml(&text)?)));
        Ok(())
    })
}

/// Set the fraction of labeled epochs used for fine-tuning.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mclpd_config_set_label_fraction(cfg: *mut MclpdConfig, fraction: f64) -> MclpdStatus {
    guard(|| {
        let cfg = out(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.finetune.label_fraction = fraction;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mclpd_config_free(cfg: *mut MclpdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---------------------------------------------------------------------------
// Epoch sets

/// Copy a contiguous `[n_epochs x n_channels x n_samples]` array into a new
/// epoch set. `labels` may be null; `subject_ids` may be null (all zero).
/// Channels are named after the standard montage.
///
/// # Safety
/// `data` must point to `n_epochs * n_channels * n_samples` doubles, `labels`
/// and `subject_ids` (when non-null) to `n_epochs` values each.
#[no_mangle]
pub unsafe extern "C" fn mclpd_epochs_from_array(
    data: *const f64,
    n_epochs: usize,
    n_channels: usize,
    n_samples: usize,
    fs: f64,
    labels: *const u8,
    subject_ids: *const u32,
    out_set: *mut *mut MclpdEpochs,
) -> MclpdStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let len = n_epochs
            .checked_mul(n_channels)
            .and_then(|v| v.checked_mul(n_samples))
            .ok_or_else(|| Error::InvalidInput("array dimensions overflow".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let array = Array3::from_shape_vec((n_epochs, n_channels, n_samples), values)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let labels = (!labels.is_null()).then(|| std::slice::from_raw_parts(labels, n_epochs).to_vec());
        let subjects = if subject_ids.is_null() {
            vec![0; n_epochs]
        } else {
            std::slice::from_raw_parts(subject_ids, n_epochs).to_vec()
        };
        let set = EpochSet::new(array, fs, labels, subjects, channel_names(n_channels))?;
        *out(out_set, "out_set")? = Box::into_raw(Box::new(MclpdEpochs(set)));
        Ok(())
    })
}

/// Generate a synthetic labeled set. `site` is `siteA`, `siteB` or `siteC`.
///
/// # Safety
/// `site` must be a NUL-terminated string and `out_set` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_epochs_synth(
    site: *const c_char,
    subjects_per_class: usize,
    epochs_per_subject: usize,
    seed: u64,
    out_set: *mut *mut MclpdEpochs,
) -> MclpdStatus {
    guard(|| {
        let site = SiteSpec::preset(&str_arg(site, "site")?)?;
        let spec = SynthSpec { n_subjects_per_class: subjects_per_class, epochs_per_subject, site, seed, ..SynthSpec::default() };
        let set = generate(&spec)?;
        *out(out_set, "out_set")? = Box::into_raw(Box::new(MclpdEpochs(set)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_set` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_epochs_load(path: *const c_char, out_set: *mut *mut MclpdEpochs) -> MclpdStatus {
    guard(|| {
        let set = load_container(&path_arg(path, "path")?)?;
        *out(out_set, "out_set")? = Box::into_raw(Box::new(MclpdEpochs(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mclpd_epochs_save(set: *const MclpdEpochs, path: *const c_char) -> MclpdStatus {
    guard(|| {
        let set = borrow(set, "set")?;
        save_container(&set.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Write the dimensions of `set`. Any output pointer may be null.
///
/// # Safety
/// `set` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn mclpd_epochs_shape(
    set: *const MclpdEpochs,
    n_epochs: *mut usize,
    n_channels: *mut usize,
    n_samples: *mut usize,
) -> MclpdStatus {
    guard(|| {
        let (n, c, t) = borrow(set, "set")?.0.data.dim();
        for (p, v) in [(n_epochs, n), (n_channels, c), (n_samples, t)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mclpd_epochs_free(set: *mut MclpdEpochs) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ---------------------------------------------------------------------------
// Models

/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_model_load(path: *const c_char, out_model: *mut *mut MclpdModel) -> MclpdStatus {
    guard(|| {
        let (params, _) = load_checkpoint(&path_arg(path, "path")?)?;
        *out(out_model, "out_model")? = Box::into_raw(Box::new(MclpdModel(params)));
        Ok(())
    })
}

/// Save a checkpoint whose manifest records `cfg`'s hash and seed.
///
/// # Safety
/// `model` and `cfg` must be live handles and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mclpd_model_save(model: *const MclpdModel, cfg: *const MclpdConfig, path: *const c_char) -> MclpdStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let cfg = borrow(cfg, "cfg")?;
        let manifest = CheckpointManifest::new(&model.0, &cfg.0.hash(), cfg.0.seed, 0, "ffi");
        save_checkpoint(&model.0, &manifest, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mclpd_model_free(model: *mut MclpdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// Training and inference

/// Contrastive pre-training on `set` (labels are ignored).
///
/// # Safety
/// `set` and `cfg` must be live handles and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_pretrain(set: *const MclpdEpochs, cfg: *const MclpdConfig, out_model: *mut *mut MclpdModel) -> MclpdStatus {
    guard(|| {
        let set = borrow(set, "set")?;
        let cfg = borrow(cfg, "cfg")?;
        let slot = out(out_model, "out_model")?;
        let result = pretrain(&set.0, &cfg.0)?;
        *slot = Box::into_raw(Box::new(MclpdModel(result.params)));
        Ok(())
    })
}

/// Fine-tune `model` on the labeled `set`; writes the held-out test metrics
/// to `out_metrics` when it is non-null.
///
/// # Safety
/// Handles must be live and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_finetune(
    model: *const MclpdModel,
    set: *const MclpdEpochs,
    cfg: *const MclpdConfig,
    out_model: *mut *mut MclpdModel,
    out_metrics: *mut MclpdMetrics,
) -> MclpdStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let set = borrow(set, "set")?;
        let cfg = borrow(cfg, "cfg")?;
        let slot = out(out_model, "out_model")?;
        let result = finetune(&model.0, &set.0, &cfg.0)?;
        if let Some(m) = out_metrics.as_mut() {
            *m = to_c_metrics(&result.test_metrics);
        }
        *slot = Box::into_raw(Box::new(MclpdModel(result.params)));
        Ok(())
    })
}

fn to_c_metrics(m: &mclpd::pipeline::Metrics) -> MclpdMetrics {
    MclpdMetrics { accuracy: m.accuracy, f1: m.f1, precision: m.precision, recall: m.recall }
}

/// Predicted class of every epoch, written to `out_labels[0..len]`; `len`
/// must equal the number of epochs.
///
/// # Safety
/// Handles must be live and `out_labels` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mclpd_predict(model: *const MclpdModel, set: *const MclpdEpochs, out_labels: *mut u8, len: usize) -> MclpdStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let set = borrow(set, "set")?;
        if out_labels.is_null() {
            return Err(Failure::Null("out_labels"));
        }
        if len != set.0.n_epochs() {
            return Err(Error::InvalidInput(format!("buffer holds {len} labels, set has {} epochs", set.0.n_epochs())).into());
        }
        let preds = mclpd::encoder::predict(&model.0, &set.0.data, 64)?;
        let dst = std::slice::from_raw_parts_mut(out_labels, len);
        for (d, p) in dst.iter_mut().zip(preds) {
            *d = p as u8;
        }
        Ok(())
    })
}

/// Metrics of `model` on the labeled `set`.
///
/// # Safety
/// Handles must be live and `out_metrics` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_evaluate(model: *const MclpdModel, set: *const MclpdEpochs, out_metrics: *mut MclpdMetrics) -> MclpdStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let set = borrow(set, "set")?;
        let slot = out(out_metrics, "out_metrics")?;
        *slot = to_c_metrics(&evaluate(&model.0, &set.0)?);
        Ok(())
    })
}

/// A freshly initialised model for `n_channels` inputs with default sizes.
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclpd_model_init(n_channels: usize, seed: u64, out_model: *mut *mut MclpdModel) -> MclpdStatus {
    guard(|| {
        let dims = mclpd::encoder::EncoderDims::default().with_channels(n_channels);
        let params = ModelParams::init(&dims, seed)?;
        *out(out_model, "out_model")? = Box::into_raw(Box::new(MclpdModel(params)));
        Ok(())
    })
}
