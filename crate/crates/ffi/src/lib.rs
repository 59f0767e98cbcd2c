//! C ABI for loading checkpoints and datasets, predicting, evaluating,
//! writing synthetic data and running gradient checks.
//!
//! Conventions:
//! - every fallible call returns a [`DeepmmStatus`]; on failure a message is
//!   kept per thread and read with [`deepmm_last_error`];
//! - objects are opaque handles released with their `_free` function;
//! - strings returned by the library are released with [`deepmm_string_free`];
//! - matrices are passed as row-major `double` buffers with explicit counts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use deepmm::data::{load_dataset, save_dataset, synth_generate, FeatureRecord, SynthConfig};
use deepmm::params::Parameterized;
use deepmm::training::{evaluate, run_scope, Checkpoint, Scope};
use deepmm::{Error, Model, ModelConfig};

/// Status codes. Values match the command-line exit codes where both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepmmStatus {
    Ok = 0,
    CheckFailed = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Io = 5,
    Shape = 6,
    NullPointer = 7,
    InvalidString = 8,
    Panic = 9,
}

impl From<&Error> for DeepmmStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => DeepmmStatus::Config,
            3 => DeepmmStatus::Data,
            4 => DeepmmStatus::Numeric,
            5 => DeepmmStatus::Io,
            _ => DeepmmStatus::Shape,
        }
    }
}

/// Gradient-check scope for [`deepmm_gradcheck`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepmmScope {
    Layers = 0,
    Attention = 1,
    Full = 2,
}

/// A trained or freshly initialized network.
pub struct DeepmmModel(Model);

/// An in-memory feature dataset.
pub struct DeepmmDataset(Vec<FeatureRecord>);

/// Widths a caller needs to size prediction buffers.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DeepmmModelInfo {
    pub d_img: usize,
    pub d_obj: usize,
    pub d_word: usize,
    pub n_topics: usize,
    pub n_sentiments: usize,
    pub parameter_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DeepmmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(DeepmmStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Fail>;

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> DeepmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DeepmmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DeepmmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DeepmmStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DeepmmStatus::InvalidString, format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Rows of `dim` values from a row-major buffer.
unsafe fn rows(data: *const f64, count: usize, dim: usize, what: &str) -> FfiResult<Vec<Vec<f64>>> {
    if count == 0 || dim == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    let flat = std::slice::from_raw_parts(data, count * dim);
    Ok(flat.chunks(dim).map(<[f64]>::to_vec).collect())
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(DeepmmStatus::InvalidString, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn deepmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn deepmm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn deepmm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a freshly initialized model from a JSON model configuration.
/// Missing fields take their defaults; null means all defaults.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn deepmm_model_new(config_json: *const c_char, seed: u64, out: *mut *mut DeepmmModel) -> DeepmmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config: ModelConfig = if config_json.is_null() {
            ModelConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Fail(DeepmmStatus::Config, format!("model config: {e}")))?
        };
        *out = Box::into_raw(Box::new(DeepmmModel(Model::build(config, seed)?)));
        Ok(())
    })
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn deepmm_model_load(path: *const c_char, out: *mut *mut DeepmmModel) -> DeepmmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = Checkpoint::load(str_arg(path, "path")?)?.to_model()?;
        *out = Box::into_raw(Box::new(DeepmmModel(model)));
        Ok(())
    })
}

/// Writes the model as a checkpoint without training state.
///
/// # Safety
/// `model` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn deepmm_model_save(model: *const DeepmmModel, path: *const c_char) -> DeepmmStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        Checkpoint::new(&model.0, 0, None, None).save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn deepmm_model_info(model: *const DeepmmModel, out: *mut DeepmmModelInfo) -> DeepmmStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let c = &m.config;
        *out_arg(out, "out")? = DeepmmModelInfo {
            d_img: c.d_img,
            d_obj: c.d_obj,
            d_word: c.d_word,
            n_topics: c.n_topics,
            n_sentiments: c.n_sentiments,
            parameter_count: m.to_parameter_set().scalar_count(),
        };
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` comes from this library and has not been freed.
#[no_mangle]
pub unsafe extern "C" fn deepmm_model_free(model: *mut DeepmmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Eval-mode probabilities for one record.
///
/// `global` holds `d_img` values, `objects` is `n_objects x d_obj` and
/// `words` is `n_words x d_word`, both row-major; either may be null when
/// its count is 0. `topic_out` and `sentiment_out` must hold `n_topics` and
/// `n_sentiments` values; their capacities are checked.
///
/// # Safety
/// All buffers are valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn deepmm_model_predict(
    model: *const DeepmmModel,
    global: *const f64,
    objects: *const f64,
    n_objects: usize,
    words: *const f64,
    n_words: usize,
    topic_out: *mut f64,
    topic_capacity: usize,
    sentiment_out: *mut f64,
    sentiment_capacity: usize,
) -> DeepmmStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let c = &m.config;
        if topic_capacity < c.n_topics || sentiment_capacity < c.n_sentiments {
            return Err(Fail(
                DeepmmStatus::Shape,
                format!(
                    "output capacities {topic_capacity}/{sentiment_capacity} below {}/{}",
                    c.n_topics, c.n_sentiments
                ),
            ));
        }
        if topic_out.is_null() || sentiment_out.is_null() {
            return Err(null("output buffer"));
        }
        let global = rows(global, 1, c.d_img, "global")?;
        let record = FeatureRecord {
            id: "ffi".into(),
            global_feature: global.into_iter().next().ok_or_else(|| null("global"))?,
            object_features: rows(objects, n_objects, c.d_obj, "objects")?,
            word_embeddings: rows(words, n_words, c.d_word, "words")?,
            words: None,
            topic_labels: vec![0; c.n_topics],
            sentiment_labels: vec![0; c.n_sentiments],
        };
        let (t, s) = m.predict_probs(&record)?;
        std::slice::from_raw_parts_mut(topic_out, t.len()).copy_from_slice(&t);
        std::slice::from_raw_parts_mut(sentiment_out, s.len()).copy_from_slice(&s);
        Ok(())
    })
}

/// Loads a JSON-lines dataset (gzip when the name ends in `.gz`).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn deepmm_dataset_load(path: *const c_char, out: *mut *mut DeepmmDataset) -> DeepmmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (_, records) = load_dataset(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DeepmmDataset(records)));
        Ok(())
    })
}

/// Number of records; 0 for null.
///
/// # Safety
/// `dataset` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn deepmm_dataset_len(dataset: *const DeepmmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` comes from this library and has not been freed.
#[no_mangle]
pub unsafe extern "C" fn deepmm_dataset_free(dataset: *mut DeepmmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Evaluates `model` on every record of `dataset` and returns the report
/// as JSON (`{"topic": {...}, "sentiment": {...}}`), to be released with
/// [`deepmm_string_free`].
///
/// # Safety
/// Handles are live; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn deepmm_evaluate(
    model: *const DeepmmModel,
    dataset: *const DeepmmDataset,
    threshold: f64,
    out_json: *mut *mut c_char,
) -> DeepmmStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        let m = &ref_arg(model, "model")?.0;
        let d = &ref_arg(dataset, "dataset")?.0;
        let report = evaluate(m, d, threshold)?;
        let json = serde_json::to_string(&report).map_err(|e| Fail(DeepmmStatus::Data, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// Writes a synthetic planted dataset. `config_json` is a synth
/// configuration (null for defaults).
///
/// # Safety
/// `config_json` is null or NUL-terminated; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn deepmm_synth_write(config_json: *const c_char, path: *const c_char) -> DeepmmStatus {
    guard(|| {
        let cfg: SynthConfig = if config_json.is_null() {
            SynthConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Fail(DeepmmStatus::Config, format!("synth config: {e}")))?
        };
        let (header, records) = synth_generate(&cfg)?;
        save_dataset(str_arg(path, "path")?, &header, &records)?;
        Ok(())
    })
}

/// Runs the canned gradient check for `scope`. Returns `CheckFailed` when
/// the check runs but exceeds its tolerance; `max_rel_error` may be null.
///
/// # Safety
/// `max_rel_error` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn deepmm_gradcheck(scope: DeepmmScope, seed: u64, max_rel_error: *mut f64) -> DeepmmStatus {
    guard(|| {
        let scope = match scope {
            DeepmmScope::Layers => Scope::Layers,
            DeepmmScope::Attention => Scope::Attention,
            DeepmmScope::Full => Scope::Full,
        };
        let report = run_scope(scope, seed, false)?;
        if let Some(out) = max_rel_error.as_mut() {
            *out = report.max_rel_error;
        }
        if report.passed {
            Ok(())
        } else {
            Err(Fail(
                DeepmmStatus::CheckFailed,
                format!("max relative error {:.3e} over {:.0e}", report.max_rel_error, report.tolerance),
            ))
        }
    })
}
