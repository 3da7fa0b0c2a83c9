//! C ABI over the `jumpsde` library.
//!
//! Every function returns a [`JsdeStatus`]. On failure the message is kept
//! per thread and can be read with [`jsde_last_error`]. Objects are opaque
//! handles created by `jsde_model_new`, `jsde_config_parse`/`_load` and
//! `jsde_converge`, and released with the matching `*_free`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use jumpsde::distance::{w1_1d, EmpiricalMeasure};
use jumpsde::harness::{rate_fit, run_convergence, write_report, Convergence, ExperimentConfig, FitOutcome, FitPoint};
use jumpsde::model::{JumpModel, Preset, TailTable};
use jumpsde::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    InsufficientData = 5,
    BufferTooSmall = 6,
    NoFit = 7,
    Io = 8,
    Panic = 9,
}

/// A jump-SDE model built from a preset string.
pub struct JsdeModel {
    model: JumpModel,
}

/// A parsed experiment config.
pub struct JsdeConfig {
    config: ExperimentConfig,
}

/// A finished convergence study.
pub struct JsdeConvergence {
    run: Convergence,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> JsdeStatus {
    match e {
        Error::Config(_) | Error::ConfigFile { .. } => JsdeStatus::Config,
        Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::OutOfRange { .. }
        | Error::Domain(_)
        | Error::OrderTooHigh(_) => JsdeStatus::InvalidArgument,
        Error::InsufficientData { .. } => JsdeStatus::InsufficientData,
        Error::Io(_) => JsdeStatus::Io,
        _ => JsdeStatus::Numerical,
    }
}

struct Fail(JsdeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(JsdeStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> JsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JsdeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            JsdeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(JsdeStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length including the NUL,
/// or 0 when there is no message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn jsde_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds a model from a preset string such as `"exp-decay(1, 1, 1, 1)"`.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jsde_model_new(preset: *const c_char, out: *mut *mut JsdeModel) -> JsdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(preset, "preset")?;
        let model = Preset::parse(text, &BTreeMap::new())?.build()?;
        *out = Box::into_raw(Box::new(JsdeModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`jsde_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn jsde_model_free(model: *mut JsdeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_model_dim(model: *const JsdeModel, out: *mut usize) -> JsdeStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.model.dim();
        Ok(())
    })
}

/// Contraction rate of the model; may be non-positive.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_model_theta(model: *const JsdeModel, out: *mut f64) -> JsdeStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.model;
        let out = out_arg(out, "out")?;
        *out = m.theta()?;
        Ok(())
    })
}

/// Tail error `epsilon_m`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_model_epsilon(model: *const JsdeModel, m: usize, out: *mut f64) -> JsdeStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.model;
        let out = out_arg(out, "out")?;
        *out = model.epsilon_m(m)?;
        Ok(())
    })
}

/// Truncation level `M(gamma)`: the least `m` with `epsilon_m <= gamma^2`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_model_truncation_level(
    model: *const JsdeModel,
    gamma: f64,
    out: *mut usize,
) -> JsdeStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.model;
        let out = out_arg(out, "out")?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Fail(JsdeStatus::InvalidArgument, format!("gamma must be positive, got {gamma}")));
        }
        *out = TailTable::for_gamma(model, gamma)?.truncation_level(gamma)?;
        Ok(())
    })
}

/// Parses a TOML (or JSON) experiment config.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jsde_config_parse(text: *const c_char, out: *mut *mut JsdeConfig) -> JsdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let config = ExperimentConfig::parse(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(JsdeConfig { config }));
        Ok(())
    })
}

/// Reads an experiment config from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jsde_config_load(path: *const c_char, out: *mut *mut JsdeConfig) -> JsdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let config = ExperimentConfig::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(JsdeConfig { config }));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn jsde_config_free(config: *mut JsdeConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn jsde_config_set_seed(config: *mut JsdeConfig, seed: u64) -> JsdeStatus {
    guard(|| {
        out_arg(config, "config")?.config.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn jsde_config_set_paths(config: *mut JsdeConfig, paths: usize) -> JsdeStatus {
    guard(|| {
        let c = &mut out_arg(config, "config")?.config;
        let old = c.paths;
        c.paths = paths;
        if let Err(e) = c.validate() {
            c.paths = old;
            return Err(e.into());
        }
        Ok(())
    })
}

/// Number of paths and state dimension, i.e. the shape of [`jsde_simulate`]'s output.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_config_shape(
    config: *const JsdeConfig,
    paths: *mut usize,
    dim: *mut usize,
) -> JsdeStatus {
    guard(|| {
        let c = &ref_arg(config, "config")?.config;
        let paths = out_arg(paths, "paths")?;
        let dim = out_arg(dim, "dim")?;
        *paths = c.paths;
        *dim = c.dim()?;
        Ok(())
    })
}

/// Runs the `[simulate]` scheme and writes terminal states row-major
/// (`paths x dim`) into `out`, which holds `len` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn jsde_simulate(
    config: *const JsdeConfig,
    threads: usize,
    out: *mut f64,
    len: usize,
) -> JsdeStatus {
    guard(|| {
        let c = &ref_arg(config, "config")?.config;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = c.paths * c.dim()?;
        if len < need {
            return Err(Fail(
                JsdeStatus::BufferTooSmall,
                format!("output holds {len} values, need {need}"),
            ));
        }
        let ens = jumpsde::harness::simulate_ensemble(c, threads.max(1))?;
        ptr::copy_nonoverlapping(ens.terminal.as_ptr(), out, ens.terminal.len());
        Ok(())
    })
}

/// Runs a convergence study.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_converge(
    config: *const JsdeConfig,
    threads: usize,
    out: *mut *mut JsdeConvergence,
) -> JsdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let c = &ref_arg(config, "config")?.config;
        let run = run_convergence(c, threads.max(1))?;
        *out = Box::into_raw(Box::new(JsdeConvergence { run }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a live handle from [`jsde_converge`].
#[no_mangle]
pub unsafe extern "C" fn jsde_convergence_free(run: *mut JsdeConvergence) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of checkpoint rows.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_convergence_rows(run: *const JsdeConvergence, out: *mut usize) -> JsdeStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(run, "run")?.run.report.rows.len();
        Ok(())
    })
}

/// Which distance a fit refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsdeDistance {
    W1 = 0,
    Tv = 1,
}

/// Fitted rate and its bootstrap interval for `which` (a [`JsdeDistance`]).
/// Returns [`JsdeStatus::NoFit`] when the window rule left too few rows.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_convergence_slope(
    run: *const JsdeConvergence,
    which: u32,
    slope: *mut f64,
    ci_lo: *mut f64,
    ci_hi: *mut f64,
) -> JsdeStatus {
    guard(|| {
        let r = &ref_arg(run, "run")?.run.report;
        let slope = out_arg(slope, "slope")?;
        let lo = out_arg(ci_lo, "ci_lo")?;
        let hi = out_arg(ci_hi, "ci_hi")?;
        let (name, outcome): (&str, &Option<FitOutcome>) = match which {
            w if w == JsdeDistance::W1 as u32 => ("w1", &r.w1_fit),
            w if w == JsdeDistance::Tv as u32 => ("tv", &r.tv_fit),
            w => return Err(Fail(JsdeStatus::InvalidArgument, format!("unknown distance {w}"))),
        };
        let Some(outcome) = outcome else {
            return Err(Fail(JsdeStatus::NoFit, format!("{name} was not measured")));
        };
        let Some(fit) = &outcome.fit else {
            let note = outcome.note.clone().unwrap_or_else(|| "no fit".into());
            return Err(Fail(JsdeStatus::NoFit, format!("{name}: {note}")));
        };
        *slope = fit.slope;
        *lo = fit.ci.0;
        *hi = fit.ci.1;
        Ok(())
    })
}

/// Writes `report.json`, `rows.csv`, `reference.csv` and `seeds.csv` into `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn jsde_convergence_write(run: *const JsdeConvergence, dir: *const c_char) -> JsdeStatus {
    guard(|| {
        let run = &ref_arg(run, "run")?.run;
        let dir = Path::new(str_arg(dir, "dir")?);
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        write_report(dir, run)?;
        Ok(())
    })
}

/// The report as a JSON string; free it with [`jsde_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsde_convergence_json(run: *const JsdeConvergence, out: *mut *mut c_char) -> JsdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let r = &ref_arg(run, "run")?.run.report;
        let text = serde_json::to_string(r).map_err(|e| Fail(JsdeStatus::Numerical, e.to_string()))?;
        *out = CString::new(text)
            .map_err(|e| Fail(JsdeStatus::Numerical, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn jsde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Exact 1-D Wasserstein-1 distance between two uniform samples.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` doubles.
#[no_mangle]
pub unsafe extern "C" fn jsde_w1_1d(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> JsdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let a = EmpiricalMeasure::from_scalars(slice_arg(a, na, "a")?.to_vec())?;
        let b = EmpiricalMeasure::from_scalars(slice_arg(b, nb, "b")?.to_vec())?;
        *out = w1_1d(&a, &b)?;
        Ok(())
    })
}

/// Log-log rate fit of `distance` against `gamma`. `stderr` may be null.
///
/// # Safety
/// Arrays must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn jsde_rate_fit(
    gamma: *const f64,
    distance: *const f64,
    stderr: *const f64,
    n: usize,
    slope: *mut f64,
    ci_lo: *mut f64,
    ci_hi: *mut f64,
) -> JsdeStatus {
    guard(|| {
        let g = slice_arg(gamma, n, "gamma")?;
        let d = slice_arg(distance, n, "distance")?;
        let se = if stderr.is_null() { None } else { Some(slice_arg(stderr, n, "stderr")?) };
        let slope = out_arg(slope, "slope")?;
        let lo = out_arg(ci_lo, "ci_lo")?;
        let hi = out_arg(ci_hi, "ci_hi")?;
        let points: Vec<FitPoint> = (0..n)
            .map(|i| FitPoint {
                gamma: g[i],
                distance: d[i],
                stderr: se.map_or(0.0, |s| s[i]),
            })
            .collect();
        let fit = rate_fit(&points)?;
        *slope = fit.slope;
        *lo = fit.ci.0;
        *hi = fit.ci.1;
        Ok(())
    })
}
