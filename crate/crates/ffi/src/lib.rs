//! C interface to the `genint` library.
//!
//! Every entry point returns a [`GenintStatus`]; on failure the message is
//! kept per thread and read back with [`genint_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller frees.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use genint::causal::{intervened_bound, linear_iv_estimate, natural_bound, StrategyBoundInput};
use genint::classify::Classifier;
use genint::cli::config::ExperimentConfig;
use genint::cli::pipeline::{parse_stages, Pipeline};
use genint::datagen::{read_tensor_file, write_tensor_file};
use genint::ndcore::{argmax_rows, Tensor};
use genint::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenintStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    MissingDependency = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// An n-dimensional f32 array.
pub struct GenintTensor(Tensor);

/// A trained classifier loaded from a model directory.
pub struct GenintClassifier(Classifier);

/// A configured experiment pipeline.
pub struct GenintPipeline(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GenintStatus {
    match e {
        Error::Dependency { .. } => GenintStatus::MissingDependency,
        Error::Io { .. } => GenintStatus::Io,
        Error::Format(_) | Error::Length { .. } | Error::Json(_) | Error::Csv(_) => GenintStatus::Format,
        Error::NonFinite { .. }
        | Error::TrainingDiverged { .. }
        | Error::WeakInstrument { .. }
        | Error::Identifiability(_)
        | Error::InsufficientData(_) => GenintStatus::Numeric,
        _ => GenintStatus::InvalidArgument,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Arg(String),
    Small { needed: usize },
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GenintStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GenintStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("`{name}` is null"));
            GenintStatus::NullArgument
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            GenintStatus::InvalidArgument
        }
        Ok(Err(Fail::Small { needed })) => {
            set_error(format!("buffer too small: {needed} elements needed"));
            GenintStatus::BufferTooSmall
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            GenintStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn path_arg(p: *const c_char, name: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn genint_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full length including the NUL, or 0 if
/// there is no error recorded.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn genint_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// # Safety
/// `shape` must point to `ndim` values and `data` to their product.
#[no_mangle]
pub unsafe extern "C" fn genint_tensor_new(
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    out_tensor: *mut *mut GenintTensor,
) -> GenintStatus {
    guard(|| {
        let out = out(out_tensor, "out_tensor")?;
        let shape = slice(shape, ndim, "shape")?.to_vec();
        let n = shape.iter().product();
        let t = Tensor::new(shape, slice(data, n, "data")?.to_vec())?;
        *out = Box::into_raw(Box::new(GenintTensor(t)));
        Ok(())
    })
}

/// Reads a `.gint` tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn genint_tensor_read(path: *const c_char, out_tensor: *mut *mut GenintTensor) -> GenintStatus {
    guard(|| {
        let out = out(out_tensor, "out_tensor")?;
        let t = read_tensor_file(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GenintTensor(t)));
        Ok(())
    })
}

/// # Safety
/// `tensor` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn genint_tensor_write(tensor: *const GenintTensor, path: *const c_char) -> GenintStatus {
    guard(|| {
        let t = nonnull(tensor, "tensor")?;
        write_tensor_file(&path_arg(path, "path")?, &t.0)?;
        Ok(())
    })
}

/// Writes the rank to `out_ndim` and up to `cap` extents to `out_shape`.
///
/// # Safety
/// `tensor` must come from this library; `out_shape` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn genint_tensor_shape(
    tensor: *const GenintTensor,
    out_shape: *mut usize,
    cap: usize,
    out_ndim: *mut usize,
) -> GenintStatus {
    guard(|| {
        let t = nonnull(tensor, "tensor")?;
        let shape = t.0.shape();
        *out(out_ndim, "out_ndim")? = shape.len();
        if cap < shape.len() {
            return Err(Fail::Small { needed: shape.len() });
        }
        if !shape.is_empty() {
            ptr::copy_nonoverlapping(shape.as_ptr(), out(out_shape, "out_shape")?, shape.len());
        }
        Ok(())
    })
}

/// Copies the elements in row-major order; `cap` is in elements.
///
/// # Safety
/// `tensor` must come from this library; `out_data` must hold `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn genint_tensor_copy_data(tensor: *const GenintTensor, out_data: *mut f32, cap: usize) -> GenintStatus {
    guard(|| {
        let t = nonnull(tensor, "tensor")?;
        let d = t.0.data();
        if cap < d.len() {
            return Err(Fail::Small { needed: d.len() });
        }
        if !d.is_empty() {
            ptr::copy_nonoverlapping(d.as_ptr(), out(out_data, "out_data")?, d.len());
        }
        Ok(())
    })
}

/// # Safety
/// `tensor` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn genint_tensor_free(tensor: *mut GenintTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Loads a classifier saved by the `train-classifier` stage.
///
/// # Safety
/// `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn genint_classifier_load(dir: *const c_char, out_model: *mut *mut GenintClassifier) -> GenintStatus {
    guard(|| {
        let out = out(out_model, "out_model")?;
        let m = Classifier::load(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(GenintClassifier(m)));
        Ok(())
    })
}

/// Flattened input width the classifier expects.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn genint_classifier_input_dim(model: *const GenintClassifier, out_dim: *mut usize) -> GenintStatus {
    guard(|| {
        *out(out_dim, "out_dim")? = nonnull(model, "model")?.0.input_dim();
        Ok(())
    })
}

/// Predicts a label for each of `n` rows of `input_dim` floats.
///
/// # Safety
/// `images` must hold `n * input_dim` floats and `out_labels` `n` values.
#[no_mangle]
pub unsafe extern "C" fn genint_classifier_predict(
    model: *const GenintClassifier,
    images: *const f32,
    n: usize,
    out_labels: *mut usize,
) -> GenintStatus {
    guard(|| {
        let m = &nonnull(model, "model")?.0;
        let d = m.input_dim();
        let x = Tensor::new(vec![n, d], slice(images, n * d, "images")?.to_vec())?;
        let labels = argmax_rows(&m.forward(&x)?);
        if n > 0 {
            ptr::copy_nonoverlapping(labels.as_ptr(), out(out_labels, "out_labels")?, n);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn genint_classifier_free(model: *mut GenintClassifier) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opens a pipeline from an INI file, or from defaults when `config_path` is
/// null. A non-null `out_dir` overrides the configured output directory.
///
/// # Safety
/// Non-null strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn genint_pipeline_open(
    config_path: *const c_char,
    out_dir: *const c_char,
    out_pipeline: *mut *mut GenintPipeline,
) -> GenintStatus {
    guard(|| {
        let out = out(out_pipeline, "out_pipeline")?;
        let mut cfg = if config_path.is_null() {
            let cwd = std::env::current_dir().map_err(|e| Fail::Arg(format!("current directory: {e}")))?;
            ExperimentConfig::defaults(&cwd)?
        } else {
            ExperimentConfig::load(&path_arg(config_path, "config_path")?)?
        };
        if !out_dir.is_null() {
            cfg.out_dir = path_arg(out_dir, "out_dir")?;
        }
        *out = Box::into_raw(Box::new(GenintPipeline(Pipeline::new(cfg))));
        Ok(())
    })
}

/// # Safety
/// `pipeline` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn genint_pipeline_set_seed(pipeline: *mut GenintPipeline, seed: u64) -> GenintStatus {
    guard(|| {
        out(pipeline, "pipeline")?.0.cfg.seed = seed;
        Ok(())
    })
}

/// Runs a comma-separated stage list (`"run"` for all). Stages with current
/// stamps are skipped unless `force` is non-zero.
///
/// # Safety
/// `pipeline` must come from this library; `stages` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn genint_pipeline_run(pipeline: *mut GenintPipeline, stages: *const c_char, force: i32) -> GenintStatus {
    guard(|| {
        let p = &mut out(pipeline, "pipeline")?.0;
        let list = path_arg(stages, "stages")?;
        let stages = parse_stages(&list.to_string_lossy())?;
        p.force = force != 0;
        p.run(&stages)?;
        Ok(())
    })
}

/// # Safety
/// `pipeline` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn genint_pipeline_free(pipeline: *mut GenintPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Bounds on P(y | do(x)) from P(y, x) and P(x).
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn genint_natural_bound(p_xy: f64, p_x: f64, out_lower: *mut f64, out_upper: *mut f64) -> GenintStatus {
    guard(|| {
        let b = natural_bound(p_xy, p_x)?;
        *out(out_lower, "out_lower")? = b.lower;
        *out(out_upper, "out_upper")? = b.upper;
        Ok(())
    })
}

/// Bounds on P(y | do(x)) from P(y, x | z) and P(x | z) under an exogenous Z.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn genint_intervened_bound(
    p_yx_given_z: f64,
    p_x_given_z: f64,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> GenintStatus {
    guard(|| {
        let b = intervened_bound(&StrategyBoundInput::new(p_yx_given_z, p_x_given_z)?)?;
        *out(out_lower, "out_lower")? = b.lower;
        *out(out_upper, "out_upper")? = b.upper;
        Ok(())
    })
}

/// `cov(z, y) / cov(z, x)` over `n` samples.
///
/// # Safety
/// `z`, `x`, `y` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn genint_linear_iv_estimate(
    z: *const f64,
    x: *const f64,
    y: *const f64,
    n: usize,
    out_effect: *mut f64,
) -> GenintStatus {
    guard(|| {
        let est = linear_iv_estimate(slice(z, n, "z")?, slice(x, n, "x")?, slice(y, n, "y")?)?;
        *out(out_effect, "out_effect")? = est.effect;
        Ok(())
    })
}
