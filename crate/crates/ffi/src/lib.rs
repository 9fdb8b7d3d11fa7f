//! C ABI over the conversion engine: opaque handles, integer status codes,
//! and a thread-local last-error message.
//!
//! Every function catches panics at the boundary; the header is generated by
//! cbindgen into `include/advc.h`.

use advc_core::config::ProjectConfig;
use advc_core::dsp::MelConfig;
use advc_core::eval::{self, SpeakerEmbedder};
use advc_core::pipeline::Converter;
use advc_core::tensorio::wav;
use advc_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

/// Call outcome. Nonzero values match the CLI's exit codes; `ARGUMENT`
/// flags misuse of the ABI itself (null or non-UTF-8 arguments).
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AdvcStatus {
    Ok = 0,
    Panic = 1,
    Config = 2,
    Input = 3,
    Format = 4,
    Shape = 5,
    Domain = 6,
    Extraction = 7,
    Eval = 8,
    Param = 9,
    Training = 10,
    Io = 11,
    Argument = 12,
}

fn status_of(e: &Error) -> AdvcStatus {
    match e {
        Error::Config(_) => AdvcStatus::Config,
        Error::Input(_) => AdvcStatus::Input,
        Error::Format(_) => AdvcStatus::Format,
        Error::Shape(_) => AdvcStatus::Shape,
        Error::Domain(_) => AdvcStatus::Domain,
        Error::Extraction(_) => AdvcStatus::Extraction,
        Error::Eval(_) => AdvcStatus::Eval,
        Error::Param(_) => AdvcStatus::Param,
        Error::Training(_) => AdvcStatus::Training,
        Error::Io { .. } => AdvcStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).expect("NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> AdvcStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn arg_error(msg: &str) -> AdvcStatus {
    set_error(msg);
    AdvcStatus::Argument
}

/// Run a fallible body with panic containment and error capture.
fn guard(f: impl FnOnce() -> Result<(), AdvcStatus>) -> AdvcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdvcStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("panic inside advc");
            AdvcStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, AdvcStatus> {
    if p.is_null() {
        return Err(arg_error(&format!("{what} is null")));
    }
    match unsafe { CStr::from_ptr(p) }.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(arg_error(&format!("{what} is not valid UTF-8"))),
    }
}

/// Opaque conversion handle; create with `advc_converter_open`, release
/// with `advc_converter_close`.
pub struct AdvcConverter {
    inner: Converter,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn advc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failing call on this thread, or null after a
/// success. The pointer is valid until the next advc call on the thread.
#[no_mangle]
pub extern "C" fn advc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(c) => c.as_ptr(),
        None => ptr::null(),
    })
}

/// Load a project config and a checkpoint into a conversion handle.
/// On success writes the handle to `out` and returns `ADVC_STATUS_OK`.
///
/// # Safety
/// `config_path` and `checkpoint_path` must be NUL-terminated strings;
/// `out` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn advc_converter_open(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut AdvcConverter,
) -> AdvcStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg_error("out is null"));
        }
        let config_path = unsafe { path_arg(config_path, "config_path") }?;
        let checkpoint_path = unsafe { path_arg(checkpoint_path, "checkpoint_path") }?;
        let cfg = ProjectConfig::load(&config_path).map_err(fail)?;
        let inner = Converter::open(cfg, &checkpoint_path).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(AdvcConverter { inner })) };
        Ok(())
    })
}

/// Convert `input_wav` into the target voice at `output_wav`.
///
/// # Safety
/// `converter` must come from `advc_converter_open` and not be closed;
/// the paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn advc_converter_convert_wav(
    converter: *const AdvcConverter,
    input_wav: *const c_char,
    output_wav: *const c_char,
) -> AdvcStatus {
    guard(|| {
        if converter.is_null() {
            return Err(arg_error("converter is null"));
        }
        let input = unsafe { path_arg(input_wav, "input_wav") }?;
        let output = unsafe { path_arg(output_wav, "output_wav") }?;
        let handle = unsafe { &*converter };
        handle.inner.convert_file(&input, &output).map_err(fail)?;
        Ok(())
    })
}

/// Checkpoint step the handle was restored from.
///
/// # Safety
/// `converter` must come from `advc_converter_open` and not be closed.
#[no_mangle]
pub unsafe extern "C" fn advc_converter_step(converter: *const AdvcConverter) -> u64 {
    if converter.is_null() {
        return 0;
    }
    unsafe { &*converter }.inner.checkpoint_step
}

/// Release a handle. Null is a no-op.
///
/// # Safety
/// `converter` must come from `advc_converter_open` and not be closed twice.
#[no_mangle]
pub unsafe extern "C" fn advc_converter_close(converter: *mut AdvcConverter) {
    if !converter.is_null() {
        drop(unsafe { Box::from_raw(converter) });
    }
}

/// Mel-cepstral distortion in dB between two wav files, DTW-aligned,
/// using the default 16 kHz analysis geometry.
///
/// # Safety
/// The paths must be NUL-terminated strings; `out_mcd_db` must point to
/// writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn advc_mcd(
    converted_wav: *const c_char,
    reference_wav: *const c_char,
    out_mcd_db: *mut f64,
) -> AdvcStatus {
    guard(|| {
        if out_mcd_db.is_null() {
            return Err(arg_error("out_mcd_db is null"));
        }
        let conv = unsafe { path_arg(converted_wav, "converted_wav") }?;
        let refr = unsafe { path_arg(reference_wav, "reference_wav") }?;
        let a = wav::read_wav(&conv).map_err(fail)?;
        let b = wav::read_wav(&refr).map_err(fail)?;
        let v = eval::mcd(&a, &b, &MelConfig::default()).map_err(fail)?;
        unsafe { *out_mcd_db = v };
        Ok(())
    })
}

/// Cosine similarity of the built-in speaker embeddings of two wav files.
///
/// # Safety
/// The paths must be NUL-terminated strings; `out_cos_sim` must point to
/// writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn advc_cosine_similarity(
    converted_wav: *const c_char,
    reference_wav: *const c_char,
    out_cos_sim: *mut f64,
) -> AdvcStatus {
    guard(|| {
        if out_cos_sim.is_null() {
            return Err(arg_error("out_cos_sim is null"));
        }
        let conv = unsafe { path_arg(converted_wav, "converted_wav") }?;
        let refr = unsafe { path_arg(reference_wav, "reference_wav") }?;
        let a = wav::read_wav(&conv).map_err(fail)?;
        let b = wav::read_wav(&refr).map_err(fail)?;
        let v = eval::cosine_similarity(&SpeakerEmbedder::default(), &a, &b).map_err(fail)?;
        unsafe { *out_cos_sim = v };
        Ok(())
    })
}
