use std::ffi::{CStr, CString};
use std::ptr;

use hyhdr_core::datagen::{synth_scene, SceneSpec};
use hyhdr_core::io::{save_checkpoint, Checkpoint};
use hyhdr_core::metrics::{self, Domain};
use hyhdr_core::model::{HyHdrNet, ModelConfig};
use hyhdr_core::train::TrainConfig;
use hyhdr_ffi::*;
use tempfile::TempDir;

fn last_error() -> String {
    unsafe { CStr::from_ptr(hyhdr_last_error()) }.to_str().unwrap().to_owned()
}

fn tiny_json() -> CString {
    CString::new(serde_json::to_string(&ModelConfig::tiny()).unwrap()).unwrap()
}

fn new_tiny(seed: u64) -> *mut HyhdrModel {
    let cfg = tiny_json();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hyhdr_model_new(cfg.as_ptr(), seed, &mut model) }, HyhdrStatus::Ok);
    assert!(!model.is_null());
    model
}

#[test]
fn header_declares_the_exported_functions() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hyhdr.h")).unwrap();
    for name in [
        "hyhdr_last_error",
        "hyhdr_version",
        "hyhdr_model_load",
        "hyhdr_model_new",
        "hyhdr_model_free",
        "hyhdr_model_param_count",
        "hyhdr_infer",
        "hyhdr_mu_law",
        "hyhdr_psnr",
        "hyhdr_ssim",
        "HYHDR_STATUS_NULL_POINTER",
        "HyhdrModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(hyhdr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn inference_matches_the_rust_api() {
    let cfg = ModelConfig::tiny();
    let net = HyHdrNet::new(cfg.clone()).unwrap();
    let params = net.init_params(3);
    let sample = synth_scene(&SceneSpec::random(12, 10, 5), 5).unwrap();
    let want = net.infer(&params, &sample.stack).unwrap();

    let model = new_tiny(3);
    let mut count = 0usize;
    assert_eq!(unsafe { hyhdr_model_param_count(model, &mut count) }, HyhdrStatus::Ok);
    assert_eq!(count, params.num_scalars());

    let frames: Vec<f32> = sample
        .stack
        .frames()
        .iter()
        .flat_map(|f| f.pixels().data().iter().copied())
        .collect();
    let evs: Vec<f32> = sample.stack.frames().iter().map(|f| f.ev()).collect();
    let mut out = vec![0f32; 12 * 10 * 3];
    let status = unsafe { hyhdr_infer(model, frames.as_ptr(), evs.as_ptr(), 12, 10, out.as_mut_ptr()) };
    assert_eq!(status, HyhdrStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");
    assert_eq!(out.as_slice(), want.radiance().data());
    unsafe { hyhdr_model_free(model) };
}

#[test]
fn saved_checkpoints_load_through_the_abi() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.hyhd");
    let cfg = TrainConfig {
        model: ModelConfig::tiny(),
        ..TrainConfig::default()
    };
    let params = HyHdrNet::new(cfg.model.clone()).unwrap().init_params(1);
    let total = params.num_scalars();
    save_checkpoint(&path, &Checkpoint { params, config: cfg, step: 0, adam: None }).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hyhdr_model_load(c_path.as_ptr(), &mut model) }, HyhdrStatus::Ok);
    let mut count = 0usize;
    assert_eq!(unsafe { hyhdr_model_param_count(model, &mut count) }, HyhdrStatus::Ok);
    assert_eq!(count, total);
    unsafe { hyhdr_model_free(model) };
}

#[test]
fn failures_report_codes_and_messages() {
    let dir = TempDir::new().unwrap();
    let missing = CString::new(dir.path().join("absent.hyhd").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hyhdr_model_load(missing.as_ptr(), &mut model) }, HyhdrStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("absent.hyhd"), "{}", last_error());

    assert_eq!(unsafe { hyhdr_model_load(ptr::null(), &mut model) }, HyhdrStatus::NullPointer);
    assert!(last_error().contains("path"));

    let bad = CString::new("{\"channels\": \"wide\"}").unwrap();
    assert_eq!(unsafe { hyhdr_model_new(bad.as_ptr(), 0, &mut model) }, HyhdrStatus::Config);
    assert!(model.is_null());

    let mut count = 0usize;
    assert_eq!(unsafe { hyhdr_model_param_count(ptr::null(), &mut count) }, HyhdrStatus::NullPointer);

    let x = [0.5f32];
    let mut y = [0f32];
    assert_eq!(unsafe { hyhdr_mu_law(x.as_ptr(), 1, 0.0, y.as_mut_ptr()) }, HyhdrStatus::InvalidArgument);
    assert!(last_error().contains("mu"));

    let model = new_tiny(0);
    let frames = vec![0.5f32; 3 * 4 * 4 * 3];
    let descending = [2.0f32, 0.0, -2.0];
    let mut out = vec![0f32; 4 * 4 * 3];
    let status = unsafe { hyhdr_infer(model, frames.as_ptr(), descending.as_ptr(), 4, 4, out.as_mut_ptr()) };
    assert_ne!(status, HyhdrStatus::Ok);
    assert!(!last_error().is_empty());
    let status = unsafe { hyhdr_infer(model, frames.as_ptr(), descending.as_ptr(), 0, 4, out.as_mut_ptr()) };
    assert_eq!(status, HyhdrStatus::Shape);
    unsafe {
        hyhdr_model_free(model);
        hyhdr_model_free(ptr::null_mut());
    }
}

#[test]
fn metrics_agree_with_the_rust_api() {
    let a: Vec<f32> = (0..16 * 16 * 3).map(|i| (i % 17) as f32 / 16.0).collect();
    let b: Vec<f32> = a.iter().map(|v| (v * 0.9 + 0.05).min(1.0)).collect();
    let img = |d: &[f32]| {
        hyhdr_core::hdr::HdrImage::new(hyhdr_core::tensor::Tensor::new(vec![16, 16, 3], d.to_vec()).unwrap()).unwrap()
    };

    let (mut db, mut same) = (0f64, true);
    let status = unsafe { hyhdr_psnr(a.as_ptr(), b.as_ptr(), 16, 16, HyhdrDomain::Mu, &mut db, &mut same) };
    assert_eq!(status, HyhdrStatus::Ok);
    assert!(!same);
    assert_eq!(db, metrics::psnr(&img(&a), &img(&b), Domain::Mu).unwrap().as_f64());

    let status = unsafe { hyhdr_psnr(a.as_ptr(), a.as_ptr(), 16, 16, HyhdrDomain::Linear, &mut db, &mut same) };
    assert_eq!(status, HyhdrStatus::Ok);
    assert!(same && db.is_infinite());

    let mut s = 0f64;
    let status = unsafe { hyhdr_ssim(a.as_ptr(), b.as_ptr(), 16, 16, HyhdrDomain::Linear, &mut s) };
    assert_eq!(status, HyhdrStatus::Ok);
    assert_eq!(s, metrics::ssim(&img(&a), &img(&b), Domain::Linear).unwrap());

    let x = [0.0f32, 0.5, 1.0, 2.0];
    let mut y = [0f32; 4];
    assert_eq!(unsafe { hyhdr_mu_law(x.as_ptr(), 4, 5000.0, y.as_mut_ptr()) }, HyhdrStatus::Ok);
    assert_eq!((y[0], y[2], y[3]), (0.0, 1.0, 1.0));
    assert!((y[1] - 0.91864).abs() < 1e-4);
}
