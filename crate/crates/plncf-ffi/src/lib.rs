//! C ABI for the plncf library: opaque handles over the dataset and trained
//! models, status codes, and a thread-local last-error message.
//!
//! Conventions:
//! - Every fallible call returns a [`PlncfStatus`]; `PLNCF_STATUS_OK` is 0.
//! - On failure, [`plncf_last_error`] returns a NUL-terminated message that
//!   stays valid on the calling thread until the next failing call.
//! - Handles created here must be released with the matching `_free`
//!   function; `_free` accepts NULL.
//! - Out-parameters are written only on success.
//!
//! The generated header lives at `include/plncf.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use plncf::dataset::{
    align_features, generate_synthetic_dataset, load_bundle, save_bundle, DatasetBundle,
    GeneratorConfig,
};
use plncf::models::{forward, Arch, ModelState};
use plncf::rng::derive_seed;
use plncf::splits::{leave_one_out_split, ratio_split, Protocol, SplitPlan};
use plncf::training::{train, TrainConfig};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlncfStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument failed validation (unknown name, bad index, bad shape).
    InvalidArgument = 2,
    /// Reading or writing a file failed.
    Io = 3,
    /// A numeric routine failed or panicked.
    Compute = 4,
    /// A string argument was not valid UTF-8.
    Utf8 = 5,
}

/// Opaque handle over the synthetic survey dataset plus the per-user
/// feature vectors models consume.
pub struct PlncfDataset {
    bundle: DatasetBundle,
    features: Vec<Vec<f64>>,
}

/// Opaque handle over one trained model.
pub struct PlncfModel {
    state: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::default());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = sanitized);
}

fn fail(status: PlncfStatus, message: &str) -> PlncfStatus {
    set_last_error(message);
    status
}

/// Run `body` with panics converted into `PLNCF_STATUS_COMPUTE`.
fn guarded(body: impl FnOnce() -> PlncfStatus) -> PlncfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(PlncfStatus::Compute, "internal panic in plncf"),
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PlncfStatus> {
    if ptr.is_null() {
        return Err(fail(PlncfStatus::NullPointer, &format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(PlncfStatus::Utf8, &format!("{what} is not valid UTF-8")))
}

fn wrap_dataset(bundle: DatasetBundle) -> *mut PlncfDataset {
    let features = bundle.users.iter().map(|u| u.features()).collect();
    Box::into_raw(Box::new(PlncfDataset { bundle, features }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn plncf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the calling thread's most recent failure; empty when
/// no call on this thread has failed. The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn plncf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Generate the canonical synthetic dataset (165 users, 498 groups) with
/// the given RNG seed and store a handle in `out`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plncf_dataset_generate(
    seed: u64,
    out: *mut *mut PlncfDataset,
) -> PlncfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PlncfStatus::NullPointer, "out is NULL");
        }
        match generate_synthetic_dataset(&GeneratorConfig::canonical(seed)) {
            Ok(bundle) => {
                *out = wrap_dataset(bundle);
                PlncfStatus::Ok
            }
            Err(e) => fail(PlncfStatus::Compute, &e.to_string()),
        }
    })
}

/// Load a dataset bundle from a JSON file written by `plncf_dataset_save`
/// (or by the CLI's generate stage).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plncf_dataset_load(
    path: *const c_char,
    out: *mut *mut PlncfDataset,
) -> PlncfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PlncfStatus::NullPointer, "out is NULL");
        }
        let path = match read_str(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_bundle(Path::new(path)) {
            Ok(bundle) => {
                *out = wrap_dataset(bundle);
                PlncfStatus::Ok
            }
            Err(e) => fail(PlncfStatus::Io, &e.to_string()),
        }
    })
}

/// Write the dataset bundle as JSON.
///
/// # Safety
/// `dataset` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn plncf_dataset_save(
    dataset: *const PlncfDataset,
    path: *const c_char,
) -> PlncfStatus {
    guarded(|| {
        let Some(ds) = dataset.as_ref() else {
            return fail(PlncfStatus::NullPointer, "dataset is NULL");
        };
        let path = match read_str(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match save_bundle(&ds.bundle, Path::new(path)) {
            Ok(()) => PlncfStatus::Ok,
            Err(e) => fail(PlncfStatus::Io, &e.to_string()),
        }
    })
}

/// Report the dataset's user, group, and interaction counts. Any out
/// pointer may be NULL to skip that count.
///
/// # Safety
/// `dataset` must be a live handle; non-NULL out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plncf_dataset_counts(
    dataset: *const PlncfDataset,
    users: *mut usize,
    groups: *mut usize,
    interactions: *mut usize,
) -> PlncfStatus {
    guarded(|| {
        let Some(ds) = dataset.as_ref() else {
            return fail(PlncfStatus::NullPointer, "dataset is NULL");
        };
        if let Some(slot) = users.as_mut() {
            *slot = ds.bundle.users.len();
        }
        if let Some(slot) = groups.as_mut() {
            *slot = ds.bundle.groups.len();
        }
        if let Some(slot) = interactions.as_mut() {
            *slot = ds.bundle.interactions.len();
        }
        PlncfStatus::Ok
    })
}

/// Feature-alignment score `(cos(x, z) + 1) / 2` over two equal-length
/// vectors; always in [0, 1].
///
/// # Safety
/// `x` and `z` must point to `x_len` / `z_len` readable doubles; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plncf_align_features(
    x: *const f64,
    x_len: usize,
    z: *const f64,
    z_len: usize,
    out: *mut f64,
) -> PlncfStatus {
    guarded(|| {
        if x.is_null() || z.is_null() || out.is_null() {
            return fail(PlncfStatus::NullPointer, "x, z, and out must be non-NULL");
        }
        if x_len != z_len || x_len == 0 {
            return fail(
                PlncfStatus::InvalidArgument,
                &format!("vector lengths {x_len} and {z_len} must match and be positive"),
            );
        }
        let xs = std::slice::from_raw_parts(x, x_len);
        let zs = std::slice::from_raw_parts(z, z_len);
        match align_features(xs, zs) {
            Ok(a) => {
                *out = a;
                PlncfStatus::Ok
            }
            Err(e) => fail(PlncfStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Train one model on the dataset and store a handle in `out`.
///
/// `arch` is one of `mf`, `mlp`, `neumf`, `mf_pl`, `mlp_pl`, `neumf_pl`
/// (case-insensitive, hyphens allowed); `protocol` is `loo` or `ratio`.
/// Published hyperparameters apply, with `epochs` and the pseudo-label
/// weight `lambda_pl` supplied by the caller. The split and all training
/// randomness derive from `seed`, so equal inputs give equal models.
///
/// # Safety
/// `dataset` must be a live handle; `arch` and `protocol` must be
/// NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plncf_model_train(
    dataset: *const PlncfDataset,
    arch: *const c_char,
    protocol: *const c_char,
    seed: u64,
    epochs: u32,
    lambda_pl: f64,
    out: *mut *mut PlncfModel,
) -> PlncfStatus {
    guarded(|| {
        let Some(ds) = dataset.as_ref() else {
            return fail(PlncfStatus::NullPointer, "dataset is NULL");
        };
        if out.is_null() {
            return fail(PlncfStatus::NullPointer, "out is NULL");
        }
        let arch = match read_str(arch, "arch") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let protocol = match read_str(protocol, "protocol") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let arch = match Arch::from_str(arch) {
            Ok(a) => a,
            Err(e) => return fail(PlncfStatus::InvalidArgument, &e.to_string()),
        };
        let protocol = match Protocol::from_str(protocol) {
            Ok(p) => p,
            Err(e) => return fail(PlncfStatus::InvalidArgument, &e.to_string()),
        };

        let mut config = TrainConfig::new(seed, protocol, lambda_pl);
        config.epochs = epochs as usize;
        if let Err(e) = config.validate() {
            return fail(PlncfStatus::InvalidArgument, &e.to_string());
        }
        let split_seed = derive_seed(seed, "split");
        let split = match protocol {
            Protocol::LeaveOneOut => leave_one_out_split(&ds.bundle, split_seed),
            Protocol::Ratio70_15_15 => ratio_split(&ds.bundle, split_seed),
        };
        let plan: SplitPlan = match split {
            Ok(plan) => plan,
            Err(e) => return fail(PlncfStatus::Compute, &e.to_string()),
        };

        match train(&ds.bundle, &plan, arch, &config) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(PlncfModel {
                    state: outcome.state,
                }));
                PlncfStatus::Ok
            }
            Err(e) => fail(PlncfStatus::Compute, &e.to_string()),
        }
    })
}

/// Predicted membership score (sigmoid, in (0, 1)) for one (user, group)
/// pair, using the user's survey features from the dataset.
///
/// # Safety
/// `model` and `dataset` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn plncf_model_score(
    model: *const PlncfModel,
    dataset: *const PlncfDataset,
    user: usize,
    group: usize,
    out: *mut f64,
) -> PlncfStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            return fail(PlncfStatus::NullPointer, "model is NULL");
        };
        let Some(ds) = dataset.as_ref() else {
            return fail(PlncfStatus::NullPointer, "dataset is NULL");
        };
        if out.is_null() {
            return fail(PlncfStatus::NullPointer, "out is NULL");
        }
        if user >= ds.features.len() {
            return fail(
                PlncfStatus::InvalidArgument,
                &format!("user {user} out of range ({} users)", ds.features.len()),
            );
        }
        match forward(&m.state, user, group, &ds.features[user]) {
            Ok(prediction) => {
                *out = prediction.score;
                PlncfStatus::Ok
            }
            Err(e) => fail(PlncfStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Number of trainable parameters in the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn plncf_model_num_params(
    model: *const PlncfModel,
    out: *mut usize,
) -> PlncfStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            return fail(PlncfStatus::NullPointer, "model is NULL");
        };
        if out.is_null() {
            return fail(PlncfStatus::NullPointer, "out is NULL");
        }
        *out = m.state.num_params();
        PlncfStatus::Ok
    })
}

/// Release a dataset handle. NULL is a no-op.
///
/// # Safety
/// `dataset` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn plncf_dataset_free(dataset: *mut PlncfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn plncf_model_free(model: *mut PlncfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
