//! C interface to `routechoice`.
//!
//! Objects cross the boundary as opaque handles created by `rc_*_new`/`load`
//! style functions and released with the matching `rc_*_free`. Every fallible
//! call returns an [`RcStatus`]; on failure the message is available from
//! [`rc_last_error`] until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::ArrayView2;
use routechoice::cli::{io, Run, RunConfig};
use routechoice::engine::Checkpoint;
use routechoice::eval::{fit_model, Dataset, Fitted, ModelSpec};
use routechoice::features::TransformSpec;
use routechoice::models::{DcmFit, DcmSpec, DeepModel, UtilityModel};
use routechoice::types::POLICY_DIM;
use routechoice::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, or a buffer of the wrong size.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    /// The library panicked; the handle involved should be freed.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcDcmKind {
    Mnl = 0,
    Psl = 1,
}

/// Observations read from a dataset directory, with default transforms.
pub struct RcDataset {
    inner: Dataset,
}

/// An estimated MNL or PSL model.
pub struct RcDcmFit {
    inner: DcmFit,
}

/// A neural utility model restored from a checkpoint.
pub struct RcModel {
    inner: DeepModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RcStatus {
    match e.exit_code() {
        2 => RcStatus::Config,
        4 => RcStatus::Numerical,
        _ => RcStatus::Data,
    }
}

struct Invalid(&'static str);

enum Failure {
    Lib(Error),
    Arg(Invalid),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<Invalid> for Failure {
    fn from(e: Invalid) -> Self {
        Failure::Arg(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Arg(Invalid(msg)))) => {
            set_error(msg.to_string());
            RcStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            RcStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Invalid> {
    if p.is_null() {
        return Err(Invalid("null path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Invalid("path is not UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Invalid> {
    p.as_ref().ok_or(Invalid("null handle"))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, want: usize) -> Result<&'a mut [f64], Invalid> {
    if p.is_null() || len < want {
        return Err(Invalid("output buffer is null or too short"));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

fn boxed<T>(out: *mut *mut T, v: T) -> Result<(), Invalid> {
    if out.is_null() {
        return Err(Invalid("null output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(v)) };
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on this thread.
#[no_mangle]
pub extern "C" fn rc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Read `network.json` and `observations.jsonl` from `dir`.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_load(dir: *const c_char, out: *mut *mut RcDataset) -> RcStatus {
    guard(|| {
        let dir = path_arg(dir)?;
        let (_, obs) = io::read_dataset(&dir)?;
        let inner = Dataset::new(obs, TransformSpec::default())?;
        Ok(boxed(out, RcDataset { inner })?)
    })
}

/// Number of observations.
///
/// # Safety
/// `data` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_len(data: *const RcDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n_observations())
}

/// # Safety
/// `data` must come from [`rc_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_free(data: *mut RcDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Estimate an MNL or PSL model (fare coefficient fixed at −1) on every
/// observation of `data`.
///
/// # Safety
/// `data` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_dcm(data: *const RcDataset, kind: RcDcmKind, out: *mut *mut RcDcmFit) -> RcStatus {
    guard(|| {
        let data = &handle(data)?.inner;
        let spec = match kind {
            RcDcmKind::Mnl => DcmSpec::mnl(),
            RcDcmKind::Psl => DcmSpec::psl(),
        };
        let all: Vec<usize> = (0..data.n_observations()).collect();
        match fit_model(&ModelSpec::Dcm { spec }, data, &all, None, None)? {
            Fitted::Dcm(inner) => Ok(boxed(out, RcDcmFit { inner })?),
            Fitted::Deep(_) => unreachable!("logit spec yields a logit fit"),
        }
    })
}

/// Number of coefficients: 4 for MNL (IVTT, Fare, WT, NoT), 5 for PSL
/// (path size last).
///
/// # Safety
/// `fit` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rc_dcm_len(fit: *const RcDcmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.table.len())
}

/// Copy estimates, standard errors and t-statistics into buffers of
/// `len >= rc_dcm_len(fit)` entries. Any of the three may be null. Fixed
/// coefficients report a zero standard error and a NaN t-statistic.
///
/// # Safety
/// Non-null buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rc_dcm_coefficients(
    fit: *const RcDcmFit,
    estimates: *mut f64,
    std_errors: *mut f64,
    t_stats: *mut f64,
    len: usize,
) -> RcStatus {
    guard(|| {
        let t = &handle(fit)?.inner.table;
        let n = t.len();
        let nan = vec![f64::NAN; n];
        let columns = [
            (estimates, &t.estimates),
            (std_errors, t.std_errors.as_ref().unwrap_or(&nan)),
            (t_stats, t.t_stats.as_ref().unwrap_or(&nan)),
        ];
        for (buf, src) in columns {
            if !buf.is_null() {
                out_slice(buf, len, n)?.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Maximised log-likelihood.
///
/// # Safety
/// `fit` must be a live handle or null (which yields NaN).
#[no_mangle]
pub unsafe extern "C" fn rc_dcm_log_likelihood(fit: *const RcDcmFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.inner.log_likelihood)
}

/// # Safety
/// `fit` must come from [`rc_fit_dcm`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rc_dcm_free(fit: *mut RcDcmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Restore a neural model from a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_model_load(path: *const c_char, out: *mut *mut RcModel) -> RcStatus {
    guard(|| {
        let path = path_arg(path)?;
        let inner = DeepModel::from_checkpoint(&Checkpoint::load(&path)?)?;
        Ok(boxed(out, RcModel { inner })?)
    })
}

/// Input width (4 or 97 columns).
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rc_model_feature_dim(model: *const RcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.feature_dim())
}

/// Utility parameters, fixed entries included.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rc_model_parameter_count(model: *const RcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.parameter_count())
}

/// The four policy coefficients (IVTT, Fare, WT, NoT).
///
/// # Safety
/// `out` must hold `len >= 4` doubles.
#[no_mangle]
pub unsafe extern "C" fn rc_model_policy_betas(model: *const RcModel, out: *mut f64, len: usize) -> RcStatus {
    guard(|| {
        let m = &handle(model)?.inner;
        out_slice(out, len, POLICY_DIM)?.copy_from_slice(&m.policy_betas());
        Ok(())
    })
}

/// Utilities of the alternatives of one choice set. `rows` is row-major,
/// `n_rows x rc_model_feature_dim(model)`, in transformed feature units;
/// `out` receives `n_rows` values.
///
/// # Safety
/// `rows` must hold `n_rows * n_cols` doubles and `out` `n_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn rc_model_utilities(
    model: *const RcModel,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> RcStatus {
    guard(|| {
        let m = &handle(model)?.inner;
        if rows.is_null() || out.is_null() || n_rows == 0 {
            return Err(Invalid("null buffer or empty choice set").into());
        }
        if n_cols != m.feature_dim() {
            return Err(Invalid("column count differs from the model's feature width").into());
        }
        let x = ArrayView2::from_shape_ptr((n_rows, n_cols), rows);
        let u = m.set_utilities(&x, None);
        std::slice::from_raw_parts_mut(out, n_rows).copy_from_slice(&u);
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`rc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rc_model_free(model: *mut RcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run the whole pipeline for a TOML config. `run_dir` may be null to use
/// the config's output directory; the dataset must already exist in
/// `<run_dir>/data`.
///
/// # Safety
/// `config_path` (and `run_dir` if non-null) must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn rc_run_pipeline(config_path: *const c_char, run_dir: *const c_char) -> RcStatus {
    guard(|| {
        let config = RunConfig::load(&path_arg(config_path)?)?;
        let dir = if run_dir.is_null() { None } else { Some(path_arg(run_dir)?) };
        Run::new(config, dir, None).pipeline(|_| {})?;
        Ok(())
    })
}
