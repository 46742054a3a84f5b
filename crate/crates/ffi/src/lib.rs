//! C ABI over `hyhdr-core`.
//!
//! Every function returns a [`HyhdrStatus`]. On failure a description is
//! available from [`hyhdr_last_error`] on the same thread. Images are
//! row-major `H x W x 3` arrays of `float`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use hyhdr_core::hdr::{mu_law, ExposureStack, HdrImage, LdrFrame, NUM_FRAMES};
use hyhdr_core::io::load_checkpoint;
use hyhdr_core::metrics::{self, Domain, Psnr};
use hyhdr_core::model::{HyHdrNet, ModelConfig, ParamStore};
use hyhdr_core::tensor::Tensor;
use hyhdr_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyhdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Config = 5,
    Domain = 6,
    Format = 7,
    UnsupportedVersion = 8,
    Io = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyhdrDomain {
    Linear = 0,
    Mu = 1,
}

/// A network with its parameters. Create with `hyhdr_model_load` or
/// `hyhdr_model_new`, release with `hyhdr_model_free`.
pub struct HyhdrModel {
    net: HyHdrNet,
    params: ParamStore<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HyhdrStatus {
    match e {
        Error::Shape(_) => HyhdrStatus::Shape,
        Error::Numeric { .. } | Error::GradCheck { .. } => HyhdrStatus::Numeric,
        Error::Config(_) | Error::Json(_) => HyhdrStatus::Config,
        Error::Domain(_) => HyhdrStatus::Domain,
        Error::Format(_) => HyhdrStatus::Format,
        Error::UnsupportedVersion { .. } => HyhdrStatus::UnsupportedVersion,
        Error::Io { .. } => HyhdrStatus::Io,
    }
}

struct Fail(HyhdrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HyhdrStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HyhdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HyhdrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HyhdrStatus::Internal
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HyhdrStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn image<'a>(p: *const f32, height: usize, width: usize, what: &str) -> Result<&'a [f32], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if height == 0 || width == 0 {
        return Err(Fail(HyhdrStatus::Shape, format!("`{what}` has zero size")));
    }
    Ok(slice::from_raw_parts(p, height * width * 3))
}

fn hdr(data: &[f32], height: usize, width: usize) -> Result<HdrImage, Fail> {
    Ok(HdrImage::new(Tensor::new(vec![height, width, 3], data.to_vec())?)?)
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn hyhdr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hyhdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `hyhdr train`.
#[no_mangle]
pub unsafe extern "C" fn hyhdr_model_load(path: *const c_char, out: *mut *mut HyhdrModel) -> HyhdrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let ckpt = load_checkpoint(Path::new(path))?;
        let net = HyHdrNet::new(ckpt.config.model)?;
        net.check_params(&ckpt.params)?;
        *out = Box::into_raw(Box::new(HyhdrModel { net, params: ckpt.params }));
        Ok(())
    })
}

/// Freshly initialized model. `config_json` holds model options (null for
/// defaults).
#[no_mangle]
pub unsafe extern "C" fn hyhdr_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut HyhdrModel,
) -> HyhdrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config: ModelConfig = if config_json.is_null() {
            ModelConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(Error::from)?
        };
        let net = HyHdrNet::new(config)?;
        let params = net.init_params(seed);
        *out = Box::into_raw(Box::new(HyhdrModel { net, params }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hyhdr_model_free(model: *mut HyhdrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hyhdr_model_param_count(model: *const HyhdrModel, out: *mut usize) -> HyhdrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.params.num_scalars();
        Ok(())
    })
}

/// Fuses three LDR frames (`frames`: 3 consecutive `H x W x 3` images in
/// `[0, 1]`, ascending `evs`) into `out` (`H x W x 3` radiance).
#[no_mangle]
pub unsafe extern "C" fn hyhdr_infer(
    model: *const HyhdrModel,
    frames: *const f32,
    evs: *const f32,
    height: usize,
    width: usize,
    out: *mut f32,
) -> HyhdrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if frames.is_null() {
            return Err(null("frames"));
        }
        if evs.is_null() {
            return Err(null("evs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = height * width * 3;
        let all = image(frames, height * NUM_FRAMES, width, "frames")?;
        let evs = slice::from_raw_parts(evs, NUM_FRAMES);
        let frame = |k: usize| -> Result<LdrFrame, Fail> {
            let t = Tensor::new(vec![height, width, 3], all[k * n..(k + 1) * n].to_vec())?;
            Ok(LdrFrame::new(t, evs[k])?)
        };
        let stack = ExposureStack::new([frame(0)?, frame(1)?, frame(2)?])?;
        let result = m.net.infer(&m.params, &stack)?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(result.radiance().data());
        Ok(())
    })
}

/// Elementwise μ-law tonemap of `n` values (clamped to `[0, 1]` first).
#[no_mangle]
pub unsafe extern "C" fn hyhdr_mu_law(x: *const f32, n: usize, mu: f64, out: *mut f32) -> HyhdrStatus {
    guard(|| {
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if !(mu > 0.0) {
            return Err(Fail(HyhdrStatus::InvalidArgument, format!("mu must be positive, got {mu}")));
        }
        let src = slice::from_raw_parts(x, n);
        let dst = slice::from_raw_parts_mut(out, n);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = mu_law((s as f64).clamp(0.0, 1.0), mu) as f32;
        }
        Ok(())
    })
}

fn domain(d: HyhdrDomain) -> Domain {
    match d {
        HyhdrDomain::Linear => Domain::Linear,
        HyhdrDomain::Mu => Domain::Mu,
    }
}

/// PSNR in dB. For identical images `*identical` is set to true and
/// `*out_db` to infinity.
#[no_mangle]
pub unsafe extern "C" fn hyhdr_psnr(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    dom: HyhdrDomain,
    out_db: *mut f64,
    identical: *mut bool,
) -> HyhdrStatus {
    guard(|| {
        let a = hdr(image(a, height, width, "a")?, height, width)?;
        let b = hdr(image(b, height, width, "b")?, height, width)?;
        let out_db = out_db.as_mut().ok_or_else(|| null("out_db"))?;
        let p = metrics::psnr(&a, &b, domain(dom))?;
        *out_db = p.as_f64();
        if let Some(flag) = identical.as_mut() {
            *flag = p == Psnr::Identical;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hyhdr_ssim(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    dom: HyhdrDomain,
    out: *mut f64,
) -> HyhdrStatus {
    guard(|| {
        let a = hdr(image(a, height, width, "a")?, height, width)?;
        let b = hdr(image(b, height, width, "b")?, height, width)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = metrics::ssim(&a, &b, domain(dom))?;
        Ok(())
    })
}
