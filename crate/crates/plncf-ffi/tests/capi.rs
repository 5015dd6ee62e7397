//! Exercises the C ABI from Rust: handle lifecycle, error reporting, and
//! the documented numeric behavior of each entry point.

use std::ffi::{CStr, CString};
use std::ptr;

use plncf_ffi::*;
use tempfile::TempDir;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(plncf_last_error())
            .to_string_lossy()
            .into_owned()
    }
}

/// A small dataset keeps train-dependent tests quick; seed 7 matches the
/// CLI default.
fn generate() -> *mut PlncfDataset {
    let mut ds: *mut PlncfDataset = ptr::null_mut();
    let status = unsafe { plncf_dataset_generate(7, &mut ds) };
    assert_eq!(status, PlncfStatus::Ok, "{}", last_error());
    assert!(!ds.is_null());
    ds
}

#[test]
fn version_is_a_nonempty_c_string() {
    let version = unsafe { CStr::from_ptr(plncf_version()) };
    let text = version.to_str().expect("utf-8");
    assert!(!text.is_empty());
    assert!(text.split('.').count() >= 2, "semver-ish: {text}");
}

#[test]
fn generate_counts_and_free() {
    let ds = generate();
    let (mut users, mut groups, mut interactions) = (0usize, 0usize, 0usize);
    let status =
        unsafe { plncf_dataset_counts(ds, &mut users, &mut groups, &mut interactions) };
    assert_eq!(status, PlncfStatus::Ok);
    assert_eq!(users, 165);
    assert_eq!(groups, 498);
    assert_eq!(interactions, 498);

    // Out pointers are individually optional.
    let status = unsafe { plncf_dataset_counts(ds, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(status, PlncfStatus::Ok);

    unsafe { plncf_dataset_free(ds) };
    unsafe { plncf_dataset_free(ptr::null_mut()) }; // NULL is a no-op
}

#[test]
fn save_load_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = CString::new(
        dir.path()
            .join("bundle.json")
            .to_str()
            .expect("utf-8 path"),
    )
    .unwrap();

    let ds = generate();
    let status = unsafe { plncf_dataset_save(ds, path.as_ptr()) };
    assert_eq!(status, PlncfStatus::Ok, "{}", last_error());

    let mut loaded: *mut PlncfDataset = ptr::null_mut();
    let status = unsafe { plncf_dataset_load(path.as_ptr(), &mut loaded) };
    assert_eq!(status, PlncfStatus::Ok, "{}", last_error());
    let mut users = 0usize;
    unsafe { plncf_dataset_counts(loaded, &mut users, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(users, 165);

    unsafe { plncf_dataset_free(ds) };
    unsafe { plncf_dataset_free(loaded) };
}

#[test]
fn load_missing_file_sets_io_error() {
    let mut ds: *mut PlncfDataset = ptr::null_mut();
    let path = CString::new("/nonexistent/plncf-bundle.json").unwrap();
    let status = unsafe { plncf_dataset_load(path.as_ptr(), &mut ds) };
    assert_eq!(status, PlncfStatus::Io);
    assert!(ds.is_null(), "out parameter untouched on failure");
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected_with_messages() {
    let status = unsafe { plncf_dataset_generate(1, ptr::null_mut()) };
    assert_eq!(status, PlncfStatus::NullPointer);
    assert!(last_error().contains("out"));

    let mut out = 0.0f64;
    let status =
        unsafe { plncf_align_features(ptr::null(), 3, ptr::null(), 3, &mut out) };
    assert_eq!(status, PlncfStatus::NullPointer);
}

#[test]
fn align_features_matches_documented_identities() {
    let x = [0.3f64, 0.1, 0.6];
    let z = [0.6f64, 0.2, 1.2]; // x scaled by 2: alignment must be 1
    let mut out = 0.0f64;
    let status = unsafe { plncf_align_features(x.as_ptr(), 3, z.as_ptr(), 3, &mut out) };
    assert_eq!(status, PlncfStatus::Ok, "{}", last_error());
    assert!((out - 1.0).abs() <= 1e-12, "colinear alignment {out}");

    let e0 = [1.0f64, 0.0];
    let e1 = [0.0f64, 2.0];
    let status = unsafe { plncf_align_features(e0.as_ptr(), 2, e1.as_ptr(), 2, &mut out) };
    assert_eq!(status, PlncfStatus::Ok);
    assert_eq!(out, 0.5, "orthogonal alignment is exactly one half");

    let status = unsafe { plncf_align_features(x.as_ptr(), 3, e0.as_ptr(), 2, &mut out) };
    assert_eq!(status, PlncfStatus::InvalidArgument, "length mismatch");
}

#[test]
fn train_score_and_input_validation() {
    let ds = generate();
    let arch = CString::new("mf_pl").unwrap();
    let protocol = CString::new("loo").unwrap();

    let mut model: *mut PlncfModel = ptr::null_mut();
    let status =
        unsafe { plncf_model_train(ds, arch.as_ptr(), protocol.as_ptr(), 42, 1, 0.03, &mut model) };
    assert_eq!(status, PlncfStatus::Ok, "{}", last_error());
    assert!(!model.is_null());

    let mut params = 0usize;
    let status = unsafe { plncf_model_num_params(model, &mut params) };
    assert_eq!(status, PlncfStatus::Ok);
    assert!(params > 0);

    let mut score = -1.0f64;
    let status = unsafe { plncf_model_score(model, ds, 0, 0, &mut score) };
    assert_eq!(status, PlncfStatus::Ok, "{}", last_error());
    assert!(score > 0.0 && score < 1.0, "sigmoid score, got {score}");

    // Determinism: the same inputs give the same trained model.
    let mut model2: *mut PlncfModel = ptr::null_mut();
    let status =
        unsafe { plncf_model_train(ds, arch.as_ptr(), protocol.as_ptr(), 42, 1, 0.03, &mut model2) };
    assert_eq!(status, PlncfStatus::Ok);
    let mut score2 = -1.0f64;
    unsafe { plncf_model_score(model2, ds, 0, 0, &mut score2) };
    assert_eq!(score.to_bits(), score2.to_bits(), "training not deterministic");

    // Bad indices and names are rejected.
    let status = unsafe { plncf_model_score(model, ds, 9999, 0, &mut score) };
    assert_eq!(status, PlncfStatus::InvalidArgument);
    assert!(last_error().contains("9999"));

    let bad_arch = CString::new("transformer").unwrap();
    let status = unsafe {
        plncf_model_train(ds, bad_arch.as_ptr(), protocol.as_ptr(), 42, 1, 0.0, &mut model2)
    };
    assert_eq!(status, PlncfStatus::InvalidArgument);

    let status =
        unsafe { plncf_model_train(ds, arch.as_ptr(), protocol.as_ptr(), 42, 0, 0.03, &mut model2) };
    assert_eq!(status, PlncfStatus::InvalidArgument, "zero epochs rejected");

    unsafe { plncf_model_free(model) };
    unsafe { plncf_model_free(model2) };
    unsafe { plncf_dataset_free(ds) };
}

#[test]
fn header_is_generated_and_covers_the_surface() {
    // build.rs mirrors the cbindgen output into include/plncf.h.
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/plncf.h");
    let text = std::fs::read_to_string(&header).expect("generated header exists");
    for symbol in [
        "PLNCF_H",
        "PlncfStatus",
        "PLNCF_STATUS_OK",
        "PlncfDataset",
        "PlncfModel",
        "plncf_version",
        "plncf_last_error",
        "plncf_dataset_generate",
        "plncf_dataset_load",
        "plncf_dataset_save",
        "plncf_dataset_counts",
        "plncf_align_features",
        "plncf_model_train",
        "plncf_model_score",
        "plncf_model_num_params",
        "plncf_dataset_free",
        "plncf_model_free",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
