use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use feddt_ffi::*;

fn last_error() -> String {
    let p = fdt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn default_config() -> FdtModelConfig {
    let mut cfg = FdtModelConfig {
        vocab_size: 0,
        frame_dim: 0,
        d_model: 0,
        heads: 0,
        ffn_dim: 0,
        target_layers: 0,
        growth_parts: 0,
        max_seq_len: 0,
        literal_division: false,
    };
    assert_eq!(unsafe { fdt_model_config_default(&mut cfg) }, FdtStatus::Ok);
    cfg
}

#[test]
fn cost_matches_closed_forms() {
    let mut c = FdtCostTotals::default();
    assert_eq!(unsafe { fdt_cost(120, 6, 6, 1, 1, &mut c) }, FdtStatus::Ok);
    assert_eq!((c.fedt_total, c.feddt_series_total), (1440, 840));
    assert_eq!((c.feddt_closed_form_num, c.feddt_closed_form_den), (140, 1));
    assert!((c.series_ratio - 7.0 / 12.0).abs() < 1e-15);
    assert!((c.closed_form_ratio - 7.0 / 72.0).abs() < 1e-15);

    assert_eq!(
        unsafe { fdt_cost(120, 4, 6, 1, 1, &mut c) },
        FdtStatus::Config
    );
    assert!(last_error().contains("divisible"), "{}", last_error());
    assert_eq!(
        unsafe { fdt_cost(1, 1, 1, 1, 1, ptr::null_mut()) },
        FdtStatus::NullPointer
    );
}

#[test]
fn model_lifecycle() {
    let cfg = default_config();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fdt_model_new(&cfg, 3, &mut m) }, FdtStatus::Ok);
    let mut layers = 0;
    unsafe { fdt_model_layers(m, &mut layers) };
    assert_eq!(layers, 1);

    let mut pc = FdtParamCount::default();
    assert_eq!(unsafe { fdt_model_param_count(m, &mut pc) }, FdtStatus::Ok);
    assert_eq!(pc.block_params, pc.per_enc_block + pc.per_dec_block);

    assert_eq!(unsafe { fdt_model_grow(m, 5) }, FdtStatus::Ok);
    assert_eq!(unsafe { fdt_model_grow(m, 1) }, FdtStatus::GrowthCap);
    assert!(last_error().contains("exceeds target 6"));

    let (mut buf, mut len) = (ptr::null_mut(), 0);
    assert_eq!(
        unsafe { fdt_model_serialize(m, true, &mut buf, &mut len) },
        FdtStatus::Ok
    );
    let bytes = unsafe { std::slice::from_raw_parts(buf, len) }.to_vec();
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { fdt_model_deserialize(&cfg, buf, len, &mut back) },
        FdtStatus::Ok
    );
    unsafe { fdt_bytes_free(buf, len) };

    let (mut buf2, mut len2) = (ptr::null_mut(), 0);
    unsafe { fdt_model_serialize(back, true, &mut buf2, &mut len2) };
    assert_eq!(
        unsafe { std::slice::from_raw_parts(buf2, len2) },
        &bytes[..]
    );
    unsafe { fdt_bytes_free(buf2, len2) };

    let mut corrupt = bytes.clone();
    corrupt[0] ^= 0xff;
    let mut none = ptr::null_mut();
    assert_eq!(
        unsafe { fdt_model_deserialize(&cfg, corrupt.as_ptr(), corrupt.len(), &mut none) },
        FdtStatus::Format
    );
    assert!(none.is_null());

    let tokens = [4u32, 5, 6];
    let mut out = vec![0.0; 3 * cfg.frame_dim];
    let status = unsafe {
        fdt_model_infer(
            m,
            tokens.as_ptr(),
            tokens.len(),
            3,
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(status, FdtStatus::Ok);
    assert!(out.iter().all(|x| x.is_finite()));
    let bad = [999u32];
    let status = unsafe { fdt_model_infer(m, bad.as_ptr(), 1, 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, FdtStatus::Data);

    unsafe {
        fdt_model_free(back);
        fdt_model_free(m);
        fdt_model_free(ptr::null_mut());
    }
}

#[test]
fn invalid_config_reports_config_error() {
    let mut cfg = default_config();
    cfg.heads = 3;
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fdt_model_new(&cfg, 0, &mut m) }, FdtStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("heads"));
    assert_eq!(
        unsafe { fdt_model_new(ptr::null(), 0, &mut m) },
        FdtStatus::NullPointer
    );
}

#[test]
fn short_training_run_returns_summary_json() {
    let toml = CString::new(
        "[model]\nd_model = 8\nffn_dim = 16\ntarget_layers = 2\ngrowth_parts = 2\n\
         [federated]\nrounds = 2\nlocal_iters = 1\nbatch_size = 2\nnum_clients = 2\n\
         [data]\nn_train = 8\nn_test = 2\n",
    )
    .unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { fdt_run_training(toml.as_ptr(), &mut out) },
        FdtStatus::Ok
    );
    let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { fdt_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["layer_trace"], serde_json::json!([2, 2]));

    let bad = CString::new("[federated]\nroundz = 2\n").unwrap();
    assert_eq!(
        unsafe { fdt_run_training(bad.as_ptr(), &mut out) },
        FdtStatus::Config
    );
    assert!(last_error().contains("roundz"));
}

#[test]
fn success_clears_last_error() {
    let mut c = FdtCostTotals::default();
    unsafe { fdt_cost(1, 2, 1, 1, 1, &mut c) };
    assert!(!fdt_last_error().is_null());
    unsafe { fdt_cost(2, 1, 1, 1, 1, &mut c) };
    assert!(fdt_last_error().is_null());
}

fn target_dir() -> PathBuf {
    // tests/abi.rs runs from target/<profile>/deps/abi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/feddt.h");
    assert!(header.exists(), "header not generated");
    let lib = target_dir().join("libfeddt_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = target_dir().join("feddt_ffi_smoke");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
