use std::ffi::{CStr, CString};
use std::ptr;

use conmatformer_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cmf_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_model(seed: u64) -> *mut CmfModel {
    let preset = CString::new("tiny").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { cmf_model_new_preset(preset.as_ptr(), 3, seed, &mut m) };
    assert_eq!(st, CmfStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

fn dims(m: *const CmfModel) -> (usize, usize) {
    let (mut s, mut k) = (0, 0);
    assert_eq!(unsafe { cmf_model_dims(m, &mut s, &mut k) }, CmfStatus::Ok);
    (s, k)
}

fn image(s: usize) -> Vec<f32> {
    (0..3 * s * s).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(cmf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn predict_rows_are_distributions() {
    let m = tiny_model(1);
    let (s, k) = dims(m);
    assert_eq!(k, 3);
    let mut batch = image(s);
    batch.extend(image(s).iter().map(|v| 1.0 - v));
    let mut out = vec![0f32; 2 * k];
    let st = unsafe { cmf_model_predict_proba(m, batch.as_ptr(), 2, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, CmfStatus::Ok, "{}", last_error());
    for row in out.chunks(k) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|p| *p > 0.0));
    }
    unsafe { cmf_model_free(m) };
}

#[test]
fn short_buffer_and_nulls_are_reported() {
    let m = tiny_model(2);
    let (s, _) = dims(m);
    let img = image(s);
    let mut out = vec![0f32; 1];
    let st = unsafe { cmf_model_predict_proba(m, img.as_ptr(), 1, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, CmfStatus::BufferTooSmall);
    assert!(last_error().contains("need 3"));

    let st = unsafe { cmf_model_predict_proba(ptr::null(), img.as_ptr(), 1, out.as_mut_ptr(), 3) };
    assert_eq!(st, CmfStatus::NullPointer);
    let mut n = 0usize;
    assert_eq!(unsafe { cmf_model_param_count(m, ptr::null_mut()) }, CmfStatus::NullPointer);
    assert_eq!(unsafe { cmf_model_param_count(m, &mut n) }, CmfStatus::Ok);
    assert!(n > 0);
    assert_eq!(last_error(), "");
    unsafe {
        cmf_model_free(m);
        cmf_model_free(ptr::null_mut());
    }
}

#[test]
fn unknown_preset_is_a_config_error() {
    let name = CString::new("huge").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { cmf_model_new_preset(name.as_ptr(), 0, 0, &mut m) };
    assert_eq!(st, CmfStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("huge"));
}

#[test]
fn config_text_builds_model() {
    let text = CString::new("input_size = 32\nnum_classes = 2\n").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { cmf_model_new_config(text.as_ptr(), 5, &mut m) };
    assert_eq!(st, CmfStatus::Ok, "{}", last_error());
    assert_eq!(dims(m), (32, 2));
    unsafe { cmf_model_free(m) };

    let bad = CString::new("no_such_key = 1\n").unwrap();
    let st = unsafe { cmf_model_new_config(bad.as_ptr(), 5, &mut m) };
    assert_eq!(st, CmfStatus::Config);
}

#[test]
fn save_load_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    let m = tiny_model(3);
    let (s, k) = dims(m);
    assert_eq!(unsafe { cmf_model_save(m, path.as_ptr()) }, CmfStatus::Ok, "{}", last_error());
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { cmf_model_load(path.as_ptr(), &mut loaded) }, CmfStatus::Ok);

    let img = image(s);
    let (mut a, mut b) = (vec![0f32; k], vec![0f32; k]);
    unsafe {
        cmf_model_predict_proba(m, img.as_ptr(), 1, a.as_mut_ptr(), k);
        cmf_model_predict_proba(loaded, img.as_ptr(), 1, b.as_mut_ptr(), k);
    }
    assert_eq!(a, b);
    let (mut na, mut nb) = (0, 0);
    unsafe {
        cmf_model_param_count(m, &mut na);
        cmf_model_param_count(loaded, &mut nb);
        cmf_model_free(m);
        cmf_model_free(loaded);
    }
    assert_eq!(na, nb);

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    let st = unsafe { cmf_model_load(missing.as_ptr(), &mut none) };
    assert_ne!(st, CmfStatus::Ok);
    assert!(none.is_null());
}

#[test]
fn grad_cam_map_is_normalised() {
    let m = tiny_model(4);
    let (s, _) = dims(m);
    let img = image(s);
    let mut map = vec![-1.0f64; s * s];
    let mut class = usize::MAX;
    for method in [CmfCamMethod::GradCam, CmfCamMethod::GradCamPlusPlus] {
        let st = unsafe {
            cmf_model_grad_cam(m, img.as_ptr(), 1, method, ptr::null(), map.as_mut_ptr(), map.len(), &mut class)
        };
        assert_eq!(st, CmfStatus::Ok, "{}", last_error());
        assert_eq!(class, 1);
        assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let tap = CString::new("stage9").unwrap();
    let st = unsafe {
        cmf_model_grad_cam(
            m,
            img.as_ptr(),
            -1,
            CmfCamMethod::GradCam,
            tap.as_ptr(),
            map.as_mut_ptr(),
            map.len(),
            &mut class,
        )
    };
    assert_ne!(st, CmfStatus::Ok);
    unsafe { cmf_model_free(m) };
}

#[test]
fn t_test_through_c_abi() {
    let a = [1.0, 2.0, 3.0];
    let b = [1.0, 2.0, 0.0];
    let (mut t, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { cmf_paired_t_test(a.as_ptr(), b.as_ptr(), 3, &mut t, &mut p) }, CmfStatus::Ok);
    assert!((t - 1.0).abs() < 1e-12);
    assert!((p - 0.4226497308103742).abs() < 1e-9);
    let st = unsafe { cmf_paired_t_test(a.as_ptr(), b.as_ptr(), 1, &mut t, &mut p) };
    assert_eq!(st, CmfStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/conmatformer.h")).unwrap();
    for name in [
        "cmf_version",
        "cmf_last_error",
        "cmf_model_new_preset",
        "cmf_model_new_config",
        "cmf_model_load",
        "cmf_model_save",
        "cmf_model_free",
        "cmf_model_param_count",
        "cmf_model_dims",
        "cmf_model_predict_proba",
        "cmf_model_grad_cam",
        "cmf_paired_t_test",
        "typedef struct CmfModel CmfModel",
        "CMF_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libconmatformer_ffi.a");
    if !lib.exists() || std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = std::process::Command::new("cc")
        .arg(format!("{manifest}/tests/c/smoke.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout.trim(), format!("{} 32 2 1.000000", env!("CARGO_PKG_VERSION")));
}
