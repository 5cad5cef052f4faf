//! C ABI over the conmatformer library.
//!
//! Every function returns a `CmfStatus`. On failure the message is kept per
//! thread and can be read with `cmf_last_error`. Models are opaque handles
//! released with `cmf_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use conmatformer::eval::paired_t_test;
use conmatformer::model::{build_seeded, load_checkpoint, save_checkpoint, ConMatFormer, ModelConfig, Tap};
use conmatformer::xai::{grad_cam, grad_cam_pp};
use conmatformer::{CmfError, Tensor};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    Numerical = 6,
    Shape = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct CmfModel {
    inner: ConMatFormer<f32>,
}

/// Saliency method for `cmf_model_grad_cam`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmfCamMethod {
    GradCam = 0,
    GradCamPlusPlus = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &CmfError) -> CmfStatus {
    match e {
        CmfError::InvalidArgument(_) => CmfStatus::InvalidArgument,
        CmfError::Config(_) => CmfStatus::Config,
        CmfError::Data(_) | CmfError::Format(_) | CmfError::Csv(_) | CmfError::Json(_) | CmfError::Image(_) => {
            CmfStatus::Data
        }
        CmfError::Io(_) => CmfStatus::Io,
        CmfError::NonFinite(_) | CmfError::Numerical(_) | CmfError::Autodiff(_) => CmfStatus::Numerical,
        CmfError::Shape(_) => CmfStatus::Shape,
    }
}

struct Failure(CmfStatus, String);

impl From<CmfError> for Failure {
    fn from(e: CmfError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: CmfStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CmfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CmfStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CmfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CmfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const CmfModel) -> Result<&'a ConMatFormer<f32>, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| fail(CmfStatus::NullPointer, "model handle is null"))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(CmfStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn emit(model: ConMatFormer<f32>, out: *mut *mut CmfModel) {
    unsafe { *out = Box::into_raw(Box::new(CmfModel { inner: model })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cmf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a freshly initialised model from a named preset
/// ("paper", "desk" or "tiny"). `num_classes` of 0 keeps the preset's count.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_new_preset(
    preset: *const c_char,
    num_classes: usize,
    seed: u64,
    out: *mut *mut CmfModel,
) -> CmfStatus {
    guard(|| {
        non_null(out, "out")?;
        let mut cfg = ModelConfig::preset(c_str(preset, "preset")?)?;
        if num_classes > 0 {
            cfg.num_classes = num_classes;
        }
        emit(build_seeded(&cfg, seed)?, out);
        Ok(())
    })
}

/// Builds a model from `key = value` configuration text laid over the
/// "desk" preset.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_new_config(config: *const c_char, seed: u64, out: *mut *mut CmfModel) -> CmfStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = ModelConfig::from_kv(c_str(config, "config")?, &ModelConfig::desk())?;
        emit(build_seeded(&cfg, seed)?, out);
        Ok(())
    })
}

/// Loads a checkpoint written by `cmf_model_save` or the `cmf` tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_load(path: *const c_char, out: *mut *mut CmfModel) -> CmfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = PathBuf::from(c_str(path, "path")?);
        emit(load_checkpoint(&path)?, out);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_save(model: *const CmfModel, path: *const c_char) -> CmfStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_checkpoint(m, PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_free(model: *mut CmfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_param_count(model: *const CmfModel, out: *mut usize) -> CmfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = model_ref(model)?.param_count();
        Ok(())
    })
}

/// Input side length and class count of a model.
///
/// # Safety
/// `model` must come from this library; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_dims(
    model: *const CmfModel,
    input_size: *mut usize,
    num_classes: *mut usize,
) -> CmfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if !input_size.is_null() {
            *input_size = m.input_size();
        }
        if !num_classes.is_null() {
            *num_classes = m.num_classes();
        }
        Ok(())
    })
}

/// Class probabilities for `n` images laid out as `[n, 3, S, S]` in `[0, 1]`.
/// Writes `n * num_classes` values to `out`.
///
/// # Safety
/// `images` must hold `n * 3 * S * S` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_predict_proba(
    model: *const CmfModel,
    images: *const f32,
    n: usize,
    out: *mut f32,
    out_len: usize,
) -> CmfStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(images, "images")?;
        non_null(out, "out")?;
        if n == 0 {
            return Err(fail(CmfStatus::InvalidArgument, "n must be positive"));
        }
        let s = m.input_size();
        let k = m.num_classes();
        if out_len < n * k {
            return Err(fail(CmfStatus::BufferTooSmall, format!("need {} floats, got {out_len}", n * k)));
        }
        let data = std::slice::from_raw_parts(images, n * 3 * s * s).to_vec();
        let probs = m.predict_proba(&Tensor::new(vec![n, 3, s, s], data)?)?;
        std::slice::from_raw_parts_mut(out, n * k).copy_from_slice(probs.data());
        Ok(())
    })
}

/// Grad-CAM or Grad-CAM++ for one `[3, S, S]` image. Writes the normalised
/// `S * S` saliency map to `out` and the explained class to `class_out`.
/// A negative `target` explains the predicted class. `tap` names the layer
/// ("stem", "stage1".."stage5", "pool"); null means "stage4".
///
/// # Safety
/// `image` must hold `3 * S * S` floats, `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cmf_model_grad_cam(
    model: *const CmfModel,
    image: *const f32,
    target: i64,
    method: CmfCamMethod,
    tap: *const c_char,
    out: *mut f64,
    out_len: usize,
    class_out: *mut usize,
) -> CmfStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(image, "image")?;
        non_null(out, "out")?;
        let s = m.input_size();
        if out_len < s * s {
            return Err(fail(CmfStatus::BufferTooSmall, format!("need {} doubles, got {out_len}", s * s)));
        }
        let tap: Tap = if tap.is_null() { Tap::Stage(4) } else { c_str(tap, "tap")?.parse()? };
        let target = usize::try_from(target).ok();
        let img = Tensor::new(vec![3, s, s], std::slice::from_raw_parts(image, 3 * s * s).to_vec())?;
        let sal = match method {
            CmfCamMethod::GradCam => grad_cam(m, &img, target, tap)?,
            CmfCamMethod::GradCamPlusPlus => grad_cam_pp(m, &img, target, tap)?,
        };
        std::slice::from_raw_parts_mut(out, s * s).copy_from_slice(sal.upsampled.data());
        if !class_out.is_null() {
            *class_out = sal.target_class;
        }
        Ok(())
    })
}

/// Paired two-sided t-test over `n` matched scores.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn cmf_paired_t_test(
    a: *const f64,
    b: *const f64,
    n: usize,
    t_out: *mut f64,
    p_out: *mut f64,
) -> CmfStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(b, "b")?;
        let r = paired_t_test(std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, n))?;
        if !t_out.is_null() {
            *t_out = r.t;
        }
        if !p_out.is_null() {
            *p_out = r.p;
        }
        Ok(())
    })
}
