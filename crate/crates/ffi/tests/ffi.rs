use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use iidm_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(iidm_last_error()) }.to_string_lossy().into_owned()
}

fn raster(h: usize, w: usize, v: &[f64]) -> *mut IidmRaster {
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { iidm_raster_from_f64(h, w, v.as_ptr(), &mut r) }, IidmStatus::Ok);
    r
}

fn cli(args: &[&str]) -> i32 {
    let owned: Vec<CString> = args.iter().map(|a| CString::new(*a).unwrap()).collect();
    let ptrs: Vec<*const std::ffi::c_char> = owned.iter().map(|c| c.as_ptr()).collect();
    unsafe { iidm_cli_run(ptrs.len(), ptrs.as_ptr()) }
}

#[test]
fn carbon_storage_matches_hand_value() {
    let mut out = 0.0;
    // 2.439 · 1.2 · 0.5 · 0.5 · 100 = 73.17
    let s = unsafe { iidm_carbon_storage(100.0, 1.2, 0.5, 0.5, 2.439, &mut out) };
    assert_eq!(s, IidmStatus::Ok);
    assert!((out - 73.17).abs() < 1e-9, "{out}");
    assert_eq!(last_error(), "");

    let s = unsafe { iidm_carbon_storage(-1.0, 1.2, 0.5, 0.5, 2.439, &mut out) };
    assert_eq!(s, IidmStatus::Contract);
    assert!(last_error().contains("volume"), "{}", last_error());
    assert_eq!(unsafe { iidm_carbon_storage(1.0, 1.0, 1.0, 1.0, 1.0, ptr::null_mut()) }, IidmStatus::NullArgument);
}

#[test]
fn raster_round_trip_through_a_file() {
    let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
    let r = raster(3, 4, &v);
    let (mut h, mut w, mut c) = (0, 0, 0);
    assert_eq!(unsafe { iidm_raster_dims(r, &mut h, &mut w, &mut c) }, IidmStatus::Ok);
    assert_eq!((h, w, c), (3, 4, 1));

    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("r.ras"));
    assert_eq!(unsafe { iidm_raster_write(r, path.as_ptr()) }, IidmStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { iidm_raster_read(path.as_ptr(), &mut back) }, IidmStatus::Ok);
    let mut buf = vec![0.0; 12];
    assert_eq!(unsafe { iidm_raster_band(back, 0, buf.as_mut_ptr(), 12) }, IidmStatus::Ok);
    assert_eq!(buf, v);

    assert_eq!(unsafe { iidm_raster_band(back, 1, buf.as_mut_ptr(), 12) }, IidmStatus::Contract);
    assert_eq!(unsafe { iidm_raster_band(back, 0, buf.as_mut_ptr(), 11) }, IidmStatus::Shape);
    unsafe {
        iidm_raster_free(r);
        iidm_raster_free(back);
        iidm_raster_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ptr::null_mut();
    let missing = cstr(&dir.path().join("nope.ras"));
    assert_ne!(unsafe { iidm_raster_read(missing.as_ptr(), &mut r) }, IidmStatus::Ok);
    assert!(r.is_null());
    assert!(!last_error().is_empty());

    let junk = dir.path().join("junk.ras");
    std::fs::write(&junk, b"not a raster at all").unwrap();
    assert_eq!(unsafe { iidm_raster_read(cstr(&junk).as_ptr(), &mut r) }, IidmStatus::Format);
    assert_eq!(unsafe { iidm_raster_read(ptr::null(), &mut r) }, IidmStatus::NullArgument);

    let mut m = ptr::null_mut();
    let ck = cstr(&dir.path().join("model.ckpt"));
    assert_eq!(unsafe { iidm_model_load(ck.as_ptr(), &mut m) }, IidmStatus::MissingInput);
    assert!(m.is_null());
}

#[test]
fn evaluate_identity_and_shift() {
    let v: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin() + 1.5).collect();
    let a = raster(8, 8, &v);
    let mut out = IidmMetrics::default();
    assert_eq!(unsafe { iidm_evaluate(a, a, ptr::null(), &mut out) }, IidmStatus::Ok);
    assert_eq!((out.mae, out.rmse, out.ssim, out.n_pixels), (0.0, 0.0, 1.0, 64));
    assert!(out.psnr.is_infinite() && out.psnr > 0.0);

    let shifted: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
    let b = raster(8, 8, &shifted);
    assert_eq!(unsafe { iidm_evaluate(b, a, ptr::null(), &mut out) }, IidmStatus::Ok);
    assert!((out.mae - 0.5).abs() < 1e-6 && (out.rmse - 0.5).abs() < 1e-6 && (out.mse - 0.25).abs() < 1e-6);

    let c = raster(4, 4, &[0.0; 16]);
    assert_eq!(unsafe { iidm_evaluate(c, a, ptr::null(), &mut out) }, IidmStatus::Shape);
    unsafe {
        iidm_raster_free(a);
        iidm_raster_free(b);
        iidm_raster_free(c);
    }
}

#[test]
fn cli_trains_and_the_model_estimates_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[modules]\nkd_vgg = false\n[train]\nsteps = 3\n[diffusion]\nsteps = 5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(cli(&["iidm", "gen", "--config", cfg, "--out", out, "--size", "16"]), 0);
    assert_eq!(cli(&["iidm", "train", "--config", cfg, "--out", out, "--size", "16"]), 0);
    assert_eq!(cli(&["iidm", "frobnicate"]), 1);

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { iidm_model_load(cstr(&dir.path().join("model.ckpt")).as_ptr(), &mut model) }, IidmStatus::Ok);
    let scene = dir.path().join("scene_2");
    let (mut img, mut mask) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(iidm_raster_read(cstr(&scene.join("imagery.ras")).as_ptr(), &mut img), IidmStatus::Ok);
        assert_eq!(iidm_raster_read(cstr(&scene.join("mask.ras")).as_ptr(), &mut mask), IidmStatus::Ok);
    }
    let run = |seed| {
        let mut pred = ptr::null_mut();
        assert_eq!(unsafe { iidm_model_estimate(model, img, mask, seed, &mut pred) }, IidmStatus::Ok, "{}", last_error());
        let mut buf = vec![0.0; 256];
        assert_eq!(unsafe { iidm_raster_band(pred, 0, buf.as_mut_ptr(), 256) }, IidmStatus::Ok);
        unsafe { iidm_raster_free(pred) };
        buf
    };
    let a = run(4);
    assert_eq!(a, run(4));
    assert!(a.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert_eq!(unsafe { iidm_model_estimate(model, img, ptr::null(), 4, &mut ptr::null_mut()) }, IidmStatus::NullArgument);
    unsafe {
        iidm_raster_free(img);
        iidm_raster_free(mask);
        iidm_model_free(model);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(iidm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/iidm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "iidm_last_error",
        "iidm_version",
        "iidm_raster_read",
        "iidm_raster_write",
        "iidm_raster_from_f64",
        "iidm_raster_dims",
        "iidm_raster_band",
        "iidm_raster_free",
        "iidm_evaluate",
        "iidm_carbon_storage",
        "iidm_model_load",
        "iidm_model_estimate",
        "iidm_model_free",
        "iidm_cli_run",
        "IIDM_STATUS_MISSING_INPUT",
        "typedef struct IidmRaster IidmRaster",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"iidm.h\"\nint main(void) { IidmMetrics m; (void)m; return iidm_cli_run(0, 0); }\n").unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("a C compiler `cc` on PATH");
    assert!(status.success());
}
