//! C interface to the discontinuity library.
//!
//! Models are passed around as opaque `DcModel` handles created by
//! [`dc_model_load`] and released with [`dc_model_free`]. Every fallible
//! function returns a [`DcStatus`]; on failure the message for the calling
//! thread is available from [`dc_last_error`] until the next failing call.
//! Panics never cross the boundary; they surface as `DC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use discontinuity::bijection::boundary_expansion;
use discontinuity::checkpoint::{load_checkpoint, save_checkpoint};
use discontinuity::experiment::{self, ExperimentConfig};
use discontinuity::metrics::{expansion, expansion_ratio, fgsm_step, min_pairwise_l1};
use discontinuity::{DropoutMode, Error, Model, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Parameter = 4,
    Domain = 5,
    Contract = 6,
    Numeric = 7,
    Instability = 8,
    Sweep = 9,
    Format = 10,
    Length = 11,
    Consistency = 12,
    Checksum = 13,
    UnsupportedVersion = 14,
    Config = 15,
    Io = 16,
    Panic = 17,
}

impl From<&Error> for DcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => DcStatus::Dimension,
            Error::Parameter(_) => DcStatus::Parameter,
            Error::Domain(_) => DcStatus::Domain,
            Error::Contract(_) => DcStatus::Contract,
            Error::Numeric(_) => DcStatus::Numeric,
            Error::Instability(_) => DcStatus::Instability,
            Error::Sweep { .. } => DcStatus::Sweep,
            Error::Format(_) => DcStatus::Format,
            Error::Length(_) => DcStatus::Length,
            Error::Consistency(_) => DcStatus::Consistency,
            Error::Checksum { .. } => DcStatus::Checksum,
            Error::UnsupportedVersion(_) => DcStatus::UnsupportedVersion,
            Error::Config(_) => DcStatus::Config,
            Error::Io { .. } => DcStatus::Io,
        }
    }
}

/// Opaque model handle.
pub struct DcModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (DcStatus, String)>) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DcStatus::Panic
        }
    }
}

fn lib(e: Error) -> (DcStatus, String) {
    (DcStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (DcStatus, String) {
    (DcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (DcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (DcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (DcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (DcStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const DcModel) -> Result<&'a Model, (DcStatus, String)> {
    m.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), (DcStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load(path: *const c_char, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_checkpoint(path).map_err(lib)?;
        out.write(Box::into_raw(Box::new(DcModel { model })));
        Ok(())
    })
}

/// Writes the model to a checkpoint file.
///
/// # Safety
/// `model` must come from [`dc_model_load`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dc_model_save(model: *const DcModel, path: *const c_char) -> DcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path, "path")?;
        save_checkpoint(m, path).map_err(lib)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input and output widths of the model.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_model_dims(
    model: *const DcModel,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> DcStatus {
    guard(|| {
        let m = model_ref(model)?;
        write(input_dim, m.input_dim(), "input_dim")?;
        write(output_dim, m.output_dim(), "output_dim")
    })
}

/// Evaluation-mode forward pass over `rows` row-major inputs.
///
/// `out` must hold `rows * output_dim` values.
///
/// # Safety
/// `x` must point to `rows * input_dim` doubles and `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn dc_model_forward(
    model: *const DcModel,
    x: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> DcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let input = slice(x, rows * m.input_dim(), "x")?;
        if out_len != rows * m.output_dim() {
            return Err((
                DcStatus::Dimension,
                format!("out holds {out_len} values, need {}", rows * m.output_dim()),
            ));
        }
        let out = slice_mut(out, out_len, "out")?;
        let t = Tensor::matrix(rows, m.input_dim(), input.to_vec()).map_err(lib)?;
        let y = m.forward(&t, DropoutMode::Inactive).map_err(lib)?;
        out.copy_from_slice(y.data());
        Ok(())
    })
}

/// Minimum pairwise L1 distance between the rows of a `rows x cols` matrix,
/// with the lexicographically first attaining pair.
///
/// # Safety
/// `values` must point to `rows * cols` doubles; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn dc_min_pairwise_l1(
    values: *const f64,
    rows: usize,
    cols: usize,
    d_m: *mut f64,
    i: *mut usize,
    j: *mut usize,
) -> DcStatus {
    guard(|| {
        let data = slice(values, rows * cols, "values")?;
        let t = Tensor::matrix(rows, cols, data.to_vec()).map_err(lib)?;
        let (d, (a, b)) = min_pairwise_l1(&t).map_err(lib)?;
        write(d_m, d, "d_m")?;
        write(i, a, "i")?;
        write(j, b, "j")
    })
}

/// `d_m` of the model's outputs over `rows` inputs.
///
/// # Safety
/// As [`dc_model_forward`] for `x`; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn dc_model_min_pairwise(
    model: *const DcModel,
    x: *const f64,
    rows: usize,
    d_m: *mut f64,
    i: *mut usize,
    j: *mut usize,
) -> DcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let input = slice(x, rows * m.input_dim(), "x")?;
        let t = Tensor::matrix(rows, m.input_dim(), input.to_vec()).map_err(lib)?;
        let y = m.forward(&t, DropoutMode::Inactive).map_err(lib)?;
        let (d, (a, b)) = min_pairwise_l1(&y).map_err(lib)?;
        write(d_m, d, "d_m")?;
        write(i, a, "i")?;
        write(j, b, "j")
    })
}

/// `x + eta * sign(gradient)` into `out`; clipped to `[0, 1]` when `clip` is nonzero.
///
/// # Safety
/// `x`, `gradient` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_fgsm_step(
    x: *const f64,
    gradient: *const f64,
    len: usize,
    eta: f64,
    clip: i32,
    out: *mut f64,
) -> DcStatus {
    guard(|| {
        let x = slice(x, len, "x")?;
        let g = slice(gradient, len, "gradient")?;
        let step = fgsm_step(x, g, eta, clip != 0).map_err(lib)?;
        slice_mut(out, len, "out")?.copy_from_slice(&step);
        Ok(())
    })
}

/// `r = e_a / e_n` for one input `x` and its adversarial and random
/// neighbours, each of width `input_dim`.
///
/// # Safety
/// `x`, `x_a` and `x_n` must each point to `input_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_model_expansion_ratio(
    model: *const DcModel,
    x: *const f64,
    x_a: *const f64,
    x_n: *const f64,
    ratio: *mut f64,
) -> DcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = m.input_dim();
        let (x, xa, xn) = (slice(x, n, "x")?, slice(x_a, n, "x_a")?, slice(x_n, n, "x_n")?);
        let out = |p: &[f64]| m.forward_one(p, DropoutMode::Inactive).map_err(lib);
        let (ox, oa, on) = (out(x)?, out(xa)?, out(xn)?);
        let e_a = expansion(&ox, &oa, x, xa).map_err(lib)?;
        let e_n = expansion(&ox, &on, x, xn).map_err(lib)?;
        write(ratio, expansion_ratio(e_a, e_n).map_err(lib)?, "ratio")
    })
}

/// Expansion of the bit-interleaving bijection across the dyadic boundary
/// at depth `k` with `precision` bits per coordinate.
///
/// # Safety
/// `ratio` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_boundary_expansion(k: u32, precision: u32, ratio: *mut f64) -> DcStatus {
    guard(|| write(ratio, boundary_expansion(k, precision).map_err(lib)?, "ratio"))
}

/// Runs the experiment described by a TOML config file. When `output_dir`
/// is not null it replaces the config's output directory.
///
/// # Safety
/// `config_path` must be NUL-terminated; `output_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dc_run_experiment(config_path: *const c_char, output_dir: *const c_char) -> DcStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let mut cfg = ExperimentConfig::load(&path).map_err(lib)?;
        if !output_dir.is_null() {
            cfg.output_dir = path_arg(output_dir, "output_dir")?;
        }
        experiment::run(&cfg).map(|_| ()).map_err(lib)
    })
}
