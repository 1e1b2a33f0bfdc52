//! C ABI over `iidm`.
//!
//! Every fallible call returns an [`IidmStatus`]; on failure the message is kept per
//! thread and read with [`iidm_last_error`]. Rasters and models are opaque handles
//! owned by the caller and released with their `_free` function. Panics never cross
//! the boundary; they surface as `IIDM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use iidm::carbon::{carbon_storage, CarbonParams};
use iidm::checkpoint::Checkpoint;
use iidm::metrics::Psnr;
use iidm::pipeline::{evaluate_run, Model};
use iidm::raster::{read_raster, write_raster, Raster};
use iidm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IidmStatus {
    Ok = 0,
    NullArgument = 1,
    Contract = 2,
    Shape = 3,
    Format = 4,
    Numeric = 5,
    Config = 6,
    MissingInput = 7,
    Io = 8,
    Other = 9,
    Panic = 10,
}

/// An opaque raster.
pub struct IidmRaster(Raster);

/// An opaque trained model.
pub struct IidmModel(Model);

/// Metric values; `psnr` is `+inf` for identical images.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IidmMetrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n_pixels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> IidmStatus {
    match e {
        Error::Contract(_) | Error::Sequencing(_) | Error::InvalidInput(_) => IidmStatus::Contract,
        Error::Shape(_) => IidmStatus::Shape,
        Error::Format { .. } => IidmStatus::Format,
        Error::Numeric(_) | Error::Diverged { .. } | Error::Asymmetric(_) => IidmStatus::Numeric,
        Error::Config(_) => IidmStatus::Config,
        Error::MissingInput { .. } => IidmStatus::MissingInput,
        Error::Io(_) => IidmStatus::Io,
        _ => IidmStatus::Other,
    }
}

struct Fail(IidmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IidmStatus::NullArgument, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IidmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            IidmStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("panic: {}", m.unwrap_or_else(|| "unknown".into())));
            IidmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(IidmStatus::Contract, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// The message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn iidm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iidm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a RAS1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_raster_read(path: *const c_char, out: *mut *mut IidmRaster) -> IidmStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, IidmRaster(read_raster(p)?))
    })
}

/// Writes a raster as RAS1.
///
/// # Safety
/// `raster` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn iidm_raster_write(raster: *const IidmRaster, path: *const c_char) -> IidmStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        write_raster(&r.0, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// A single-band f32 raster from `height × width` row-major values.
///
/// # Safety
/// `data` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_raster_from_f64(height: usize, width: usize, data: *const f64, out: *mut *mut IidmRaster) -> IidmStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = height.checked_mul(width).ok_or_else(|| Fail(IidmStatus::Contract, "raster size overflows".into()))?;
        let v = std::slice::from_raw_parts(data, n);
        put(out, IidmRaster(Raster::from_f64_band(height, width, v)?))
    })
}

/// Height, width and channel count.
///
/// # Safety
/// `raster` must come from this library; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_raster_dims(raster: *const IidmRaster, height: *mut usize, width: *mut usize, channels: *mut usize) -> IidmStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if height.is_null() || width.is_null() || channels.is_null() {
            return Err(null("dims output"));
        }
        *height = r.0.height();
        *width = r.0.width();
        *channels = r.0.channels();
        Ok(())
    })
}

/// Copies one band as doubles into `buf`, which must hold `height * width` values.
///
/// # Safety
/// `raster` must come from this library; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn iidm_raster_band(raster: *const IidmRaster, band: usize, buf: *mut f64, len: usize) -> IidmStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if band >= r.0.channels() {
            return Err(Fail(IidmStatus::Contract, format!("band {band} of a {}-band raster", r.0.channels())));
        }
        if len != r.0.pixels() {
            return Err(Fail(IidmStatus::Shape, format!("buffer holds {len} values, raster has {} pixels", r.0.pixels())));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&r.0.band(band));
        Ok(())
    })
}

/// # Safety
/// `raster` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn iidm_raster_free(raster: *mut IidmRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// MAE, MSE, RMSE, PSNR and SSIM of `pred` against `truth`, over forest pixels of
/// `mask` or over every pixel when `mask` is null.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_evaluate(
    pred: *const IidmRaster,
    truth: *const IidmRaster,
    mask: *const IidmRaster,
    out: *mut IidmMetrics,
) -> IidmStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        let t = truth.as_ref().ok_or_else(|| null("truth"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = evaluate_run(&p.0, &t.0, mask.as_ref().map(|m| &m.0))?;
        let psnr = match r.psnr {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        };
        *out = IidmMetrics { mae: r.mae, mse: r.mse, rmse: r.rmse, psnr, ssim: r.ssim, n_pixels: r.n_pixels };
        Ok(())
    })
}

/// Carbon storage `factor·δ·ρ·γ·V` for stand volume `volume` (m³).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_carbon_storage(volume: f64, delta: f64, rho: f64, gamma: f64, factor: f64, out: *mut f64) -> IidmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = carbon_storage(volume, &CarbonParams { delta, rho, gamma, factor })?;
        Ok(())
    })
}

/// Loads a model checkpoint written by `iidm train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_model_load(path: *const c_char, out: *mut *mut IidmModel) -> IidmStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        if !p.exists() {
            return Err(Error::MissingInput { path: p, msg: "model checkpoint not found".into() }.into());
        }
        put(out, IidmModel(Model::from_checkpoint(&Checkpoint::read(&p)?)?))
    })
}

/// Runs the reverse chain for one scene and returns a density raster.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidm_model_estimate(
    model: *const IidmModel,
    imagery: *const IidmRaster,
    mask: *const IidmRaster,
    seed: u64,
    out: *mut *mut IidmRaster,
) -> IidmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let im = imagery.as_ref().ok_or_else(|| null("imagery"))?;
        let mk = mask.as_ref().ok_or_else(|| null("mask"))?;
        put(out, IidmRaster(m.0.estimate(&im.0, &mk.0, seed)?))
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn iidm_model_free(model: *mut IidmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the command line with `argc` arguments (program name first) and returns its
/// exit code: 0 success, 1 usage error, 2 runtime error.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn iidm_cli_run(argc: usize, argv: *const *const c_char) -> i32 {
    if argv.is_null() {
        set_error("`argv` is null".into());
        return 1;
    }
    let args: Vec<String> =
        (0..argc).map(|i| *argv.add(i)).map(|p| if p.is_null() { String::new() } else { CStr::from_ptr(p).to_string_lossy().into_owned() }).collect();
    catch_unwind(|| iidm::pipeline::cli::run(args)).unwrap_or_else(|_| {
        set_error("panic inside the command line".into());
        2
    })
}
