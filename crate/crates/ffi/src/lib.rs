//! C ABI over trained auxvae checkpoints.
//!
//! Every function returns an [`AuxvaeStatus`]; on failure the message is
//! available from [`auxvae_last_error_message`] on the same thread. Model
//! handles are opaque and must be released with [`auxvae_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use auxvae::checkpoint::{load_checkpoint, Checkpoint};
use auxvae::data::GaitWindow;
use auxvae::inference::{predict_raw, InferenceConfig};
use auxvae::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxvaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    HashMismatch = 5,
    Shape = 6,
    NonFinite = 7,
    Panic = 8,
    Internal = 9,
}

/// Opaque handle to a loaded checkpoint.
pub struct AuxvaeModel {
    ckpt: Checkpoint,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuxvaeModelInfo {
    pub num_channels: usize,
    pub window_len: usize,
    pub baseline_len: usize,
    pub num_styles: usize,
    /// Nonzero when the model predicts carrying style.
    pub has_style_head: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AuxvaeStatus {
    match e {
        Error::Io { .. } => AuxvaeStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) | Error::MissingParam(_) => AuxvaeStatus::Checkpoint,
        Error::HashMismatch { .. } => AuxvaeStatus::HashMismatch,
        Error::Shape { .. } => AuxvaeStatus::Shape,
        Error::NonFinite(_) | Error::Diverged { .. } => AuxvaeStatus::NonFinite,
        Error::InvalidArgument(_) | Error::Data(_) | Error::Config { .. } => {
            AuxvaeStatus::InvalidArgument
        }
        _ => AuxvaeStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AuxvaeStatus, String)>) -> AuxvaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AuxvaeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside auxvae");
            AuxvaeStatus::Panic
        }
    }
}

fn lift(e: Error) -> (AuxvaeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AuxvaeStatus, String) {
    (AuxvaeStatus::NullPointer, format!("{what} is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn auxvae_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn auxvae_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads the checkpoint directory at `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxvae_model_load(
    path: *const c_char,
    out: *mut *mut AuxvaeModel,
) -> AuxvaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| {
            (
                AuxvaeStatus::InvalidArgument,
                "path is not UTF-8".to_string(),
            )
        })?;
        let ckpt = load_checkpoint(Path::new(p), None).map_err(lift)?;
        *out = Box::into_raw(Box::new(AuxvaeModel { ckpt }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`auxvae_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn auxvae_model_free(model: *mut AuxvaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn auxvae_model_info(
    model: *const AuxvaeModel,
    out: *mut AuxvaeModelInfo,
) -> AuxvaeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = &m.ckpt.model;
        *out = AuxvaeModelInfo {
            num_channels: c.num_channels,
            window_len: c.window_len,
            baseline_len: c.baseline_len,
            num_styles: c.num_styles,
            has_style_head: c.use_aux_output as u8,
        };
        Ok(())
    })
}

unsafe fn window(
    data: *const f64,
    steps: usize,
    channels: usize,
    name: &str,
) -> Result<GaitWindow, (AuxvaeStatus, String)> {
    if data.is_null() {
        return Err(null(name));
    }
    if steps < 2 {
        return Err((
            AuxvaeStatus::InvalidArgument,
            format!("{name} needs at least 2 time steps"),
        ));
    }
    let values = std::slice::from_raw_parts(data, steps * channels).to_vec();
    GaitWindow::new(values, steps, channels).map_err(lift)
}

/// Predicts the hand load of one raw window.
///
/// `x` holds `x_steps` rows and `x_aux` holds `aux_steps` rows, each row being
/// `num_channels` values (row-major, unnormalized). Both are resampled and
/// normalized as during training. `num_samples` latent draws are averaged;
/// zero uses the posterior mean. When `style_probs` is not null and the model
/// has a style head, it receives `num_styles` averaged probabilities.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn auxvae_predict(
    model: *const AuxvaeModel,
    x: *const f64,
    x_steps: usize,
    x_aux: *const f64,
    aux_steps: usize,
    num_samples: usize,
    seed: u64,
    load_lbs: *mut f64,
    style_probs: *mut f64,
) -> AuxvaeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = load_lbs.as_mut().ok_or_else(|| null("load_lbs"))?;
        let c = m.ckpt.model.num_channels;
        let xw = window(x, x_steps, c, "x")?;
        let aw = window(x_aux, aux_steps, c, "x_aux")?;
        let icfg = InferenceConfig {
            num_latent_samples: num_samples.max(1),
            deterministic_latent: num_samples == 0,
        };
        let p = predict_raw(&m.ckpt, &xw, &aw, &icfg, seed).map_err(lift)?;
        *out = p.load_lbs;
        if let (false, Some(s)) = (style_probs.is_null(), p.style.as_ref()) {
            std::slice::from_raw_parts_mut(style_probs, s.probs.len()).copy_from_slice(&s.probs);
        }
        Ok(())
    })
}
