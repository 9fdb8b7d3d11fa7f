//! Exercise the C ABI from Rust the way a C caller would.

use advc_core::config::ProjectConfig;
use advc_core::dsp;
use advc_core::model::GeneratorConfig;
use advc_core::tensorio::wav;
use advc_core::training::{ModelBundleConfig, TrainState, TrainingConfig};
use advc_ffi::*;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn c(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error_string() -> String {
    let p = advc_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        input_dim: 24,
        hidden_dim: 16,
        encoder_blocks: 1,
        decoder_blocks: 1,
        attention_heads: 2,
        conv_kernel: 3,
        upsample_factor: 2,
        n_mels: 80,
        dropout: 0.0,
    }
}

fn write_project(dir: &Path) -> (CString, CString) {
    let mut cfg = ProjectConfig::default();
    cfg.target_speaker = "target".into();
    cfg.extractor.dim = 24;
    cfg.generator = tiny_generator();
    cfg.vocoder.iterations = 4;
    let config_path = dir.join("advc.toml");
    std::fs::write(&config_path, toml::to_string(&cfg).unwrap()).unwrap();

    let bundle = ModelBundleConfig::for_generator(cfg.generator.clone());
    let state = TrainState::new(bundle, &TrainingConfig::default(), 9).unwrap();
    let ckpt = state.save(dir, 0).unwrap();
    (c(&config_path), c(&ckpt))
}

#[test]
fn version_is_a_semver_string() {
    let v = unsafe { CStr::from_ptr(advc_version()) }.to_str().unwrap();
    assert_eq!(v.split('.').count(), 3, "{v}");
}

#[test]
fn open_convert_close_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (config, ckpt) = write_project(dir.path());
    let input = dir.path().join("in.wav");
    wav::write_wav(&input, &dsp::speech_like(0.4, 3)).unwrap();
    let output = dir.path().join("out.wav");

    let mut handle: *mut AdvcConverter = ptr::null_mut();
    let status = unsafe { advc_converter_open(config.as_ptr(), ckpt.as_ptr(), &mut handle) };
    assert_eq!(status, AdvcStatus::Ok, "{}", last_error_string());
    assert!(!handle.is_null());
    assert_eq!(unsafe { advc_converter_step(handle) }, 0);

    let status = unsafe {
        advc_converter_convert_wav(handle, c(&input).as_ptr(), c(&output).as_ptr())
    };
    assert_eq!(status, AdvcStatus::Ok, "{}", last_error_string());
    assert!(output.exists());
    let samples = wav::read_wav(&output).unwrap();
    assert!(!samples.is_empty());

    unsafe { advc_converter_close(handle) };
}

#[test]
fn open_with_missing_config_sets_io_status_and_message() {
    let missing = CString::new("/nonexistent/advc.toml").unwrap();
    let ckpt = CString::new("/nonexistent/ckpt.vcck").unwrap();
    let mut handle: *mut AdvcConverter = ptr::null_mut();
    let status = unsafe { advc_converter_open(missing.as_ptr(), ckpt.as_ptr(), &mut handle) };
    assert_eq!(status, AdvcStatus::Io);
    assert!(handle.is_null());
    assert!(last_error_string().contains("advc.toml"));
}

#[test]
fn null_arguments_are_flagged_not_crashed() {
    let mut out = 0.0f64;
    let status = unsafe { advc_mcd(ptr::null(), ptr::null(), &mut out) };
    assert_eq!(status, AdvcStatus::Argument);
    let wavp = CString::new("x.wav").unwrap();
    let status = unsafe { advc_mcd(wavp.as_ptr(), wavp.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, AdvcStatus::Argument);
    let status =
        unsafe { advc_converter_convert_wav(ptr::null(), wavp.as_ptr(), wavp.as_ptr()) };
    assert_eq!(status, AdvcStatus::Argument);
}

#[test]
fn metrics_match_their_identities() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.wav");
    wav::write_wav(&a, &dsp::speech_like(0.4, 11)).unwrap();

    let mut mcd = f64::NAN;
    let status = unsafe { advc_mcd(c(&a).as_ptr(), c(&a).as_ptr(), &mut mcd) };
    assert_eq!(status, AdvcStatus::Ok, "{}", last_error_string());
    assert!(mcd.abs() < 1e-9, "mcd(x, x) = {mcd}");
    assert!(advc_last_error().is_null(), "success must clear the error");

    let mut cos = f64::NAN;
    let status = unsafe { advc_cosine_similarity(c(&a).as_ptr(), c(&a).as_ptr(), &mut cos) };
    assert_eq!(status, AdvcStatus::Ok);
    assert!((cos - 1.0).abs() < 1e-9, "cos(x, x) = {cos}");

    let missing = CString::new("/nonexistent.wav").unwrap();
    let status = unsafe { advc_mcd(missing.as_ptr(), c(&a).as_ptr(), &mut mcd) };
    assert_eq!(status, AdvcStatus::Input);
}

#[test]
fn generated_header_declares_the_surface() {
    let header = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("include/advc.h"),
    )
    .expect("build.rs wrote include/advc.h");
    for symbol in [
        "advc_converter_open",
        "advc_converter_convert_wav",
        "advc_converter_close",
        "advc_mcd",
        "advc_cosine_similarity",
        "advc_last_error",
        "advc_version",
        "ADVC_STATUS_OK",
        "typedef struct AdvcConverter AdvcConverter;",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
