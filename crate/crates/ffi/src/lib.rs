//! C ABI for the memaudit toolkit.
//!
//! Opaque handles wrap the core types; every fallible call returns an
//! [`ma_status`] code and the last error message is retrievable per thread
//! via [`ma_last_error`]. The matching header lives at
//! `include/memaudit.h`.

#![allow(non_camel_case_types)]

use memaudit::canary::{
    build_canary_dataset, build_probe_triple, render_glyph, sample_random_patch, Patch,
    ProbeTriple,
};
use memaudit::config::load_named_dataset;
use memaudit::data::{make_ood_set, Dataset, Split};
use memaudit::nn::{build_model, checkpoint, Arch, Mode, Model, ModelRegs};
use memaudit::score::{m_score, mw_score, ScoreMeta, TTestKind};
use memaudit::tensor::Tensor;
use memaudit::Error;
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::path::{Path, PathBuf};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ma_status {
    MA_OK = 0,
    MA_ERR_INVALID_ARGUMENT = 1,
    MA_ERR_IO = 2,
    MA_ERR_FORMAT = 3,
    MA_ERR_NUMERIC = 4,
    MA_ERR_NULL_POINTER = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> ma_status {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::UnknownArchitecture(_)
        | Error::UnsupportedGlyph(_)
        | Error::IndexOutOfRange { .. }
        | Error::ShapeMismatch(_)
        | Error::PatchOutOfBounds { .. } => ma_status::MA_ERR_INVALID_ARGUMENT,
        Error::Io { .. } => ma_status::MA_ERR_IO,
        Error::DatasetFormat(_) | Error::Checkpoint(_) | Error::Json(_) => ma_status::MA_ERR_FORMAT,
        Error::NonFinite(_) | Error::InvalidDistribution(_) => ma_status::MA_ERR_NUMERIC,
    }
}

fn fail(e: Error) -> ma_status {
    let code = status_of(&e);
    set_error(&e.to_string());
    code
}

/// Message for the most recent error on this thread. Borrowed pointer, valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ma_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// Opaque handle types.
pub struct ma_dataset(Dataset);
pub struct ma_model(Model<f32>);
pub struct ma_patch(Patch);
pub struct ma_probe_triple(ProbeTriple);

/// Black-box score result as plain C fields.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ma_mscore {
    pub m: c_double,
    pub t_stat: c_double,
    pub p_value: c_double,
    pub n: usize,
}

/// White-box score result.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ma_mwscore {
    pub m_w: c_double,
    pub mean_p_unique: c_double,
    pub mean_p_random: c_double,
    pub n: usize,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, ma_status> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(ma_status::MA_ERR_NULL_POINTER);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        ma_status::MA_ERR_INVALID_ARGUMENT
    })
}

unsafe fn path_of(ptr: *const c_char) -> Result<PathBuf, ma_status> {
    Ok(PathBuf::from(unsafe { cstr(ptr) }?))
}

macro_rules! out_ptr {
    ($out:ident) => {{
        if $out.is_null() {
            set_error("null output pointer");
            return ma_status::MA_ERR_NULL_POINTER;
        }
    }};
}

macro_rules! deref {
    ($ptr:ident) => {{
        if $ptr.is_null() {
            set_error("null handle");
            return ma_status::MA_ERR_NULL_POINTER;
        }
        unsafe { &*$ptr }
    }};
}

// ─── Datasets ──────────────────────────────────────────────────────────────

/// Load an IDX image/label pair (MNIST layout). `out` receives an owned
/// handle; free with `ma_dataset_free`.
///
/// # Safety
/// `images_path`, `labels_path` must be valid NUL-terminated strings and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ma_dataset_load_idx(
    images_path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut ma_dataset,
) -> ma_status {
    out_ptr!(out);
    let images = match unsafe { path_of(images_path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    let labels = match unsafe { path_of(labels_path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    match memaudit::data::load_idx(&images, &labels, "idx", Split::Train) {
        Ok(ds) => {
            unsafe { *out = Box::into_raw(Box::new(ma_dataset(ds))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// Load CIFAR-10 binary batches.
///
/// # Safety
/// `paths` must point to `n_paths` valid C strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ma_dataset_load_cifar10(
    paths: *const *const c_char,
    n_paths: usize,
    out: *mut *mut ma_dataset,
) -> ma_status {
    out_ptr!(out);
    if paths.is_null() {
        set_error("null paths array");
        return ma_status::MA_ERR_NULL_POINTER;
    }
    let mut list: Vec<PathBuf> = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        match unsafe { path_of(*paths.add(i)) } {
            Ok(p) => list.push(p),
            Err(s) => return s,
        }
    }
    match memaudit::data::load_cifar10(&list, "cifar10", Split::Train) {
        Ok(ds) => {
            unsafe { *out = Box::into_raw(Box::new(ma_dataset(ds))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// Generate a named built-in dataset ("synth", "synth-rgb", "synth-texture",
/// "synth-texture-grey") of `limit` images (0 for the default size).
///
/// # Safety
/// `name` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ma_dataset_synth(
    name: *const c_char,
    limit: usize,
    seed: u64,
    out: *mut *mut ma_dataset,
) -> ma_status {
    out_ptr!(out);
    let name = match unsafe { cstr(name) } {
        Ok(s) => s,
        Err(s) => return s,
    };
    let limit = if limit == 0 { None } else { Some(limit) };
    match load_named_dataset(name, None, Split::Train, seed, limit) {
        Ok(ds) => {
            unsafe { *out = Box::into_raw(Box::new(ma_dataset(ds))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// Number of images; 0 for a null handle.
///
/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn ma_dataset_len(ds: *const ma_dataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.0.len()
}

/// Image shape as (h, w, c).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ma_dataset_shape(
    ds: *const ma_dataset,
    h: *mut usize,
    w: *mut usize,
    c: *mut usize,
) -> ma_status {
    let ds = deref!(ds);
    out_ptr!(h);
    out_ptr!(w);
    out_ptr!(c);
    let (sh, sw, sc) = ds.0.shape();
    unsafe {
        *h = sh;
        *w = sw;
        *c = sc;
    }
    ma_status::MA_OK
}

/// # Safety
/// `ds` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ma_dataset_free(ds: *mut ma_dataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

// ─── Patches and canaries ──────────────────────────────────────────────────

/// Render the 5x5 glyph patch for an ASCII letter A-Z.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ma_patch_glyph(letter: c_char, out: *mut *mut ma_patch) -> ma_status {
    out_ptr!(out);
    match render_glyph(letter as u8 as char) {
        Ok(p) => {
            unsafe { *out = Box::into_raw(Box::new(ma_patch(p))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// Draw a seeded uniform-random 5x5 patch.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ma_patch_random(seed: u64, out: *mut *mut ma_patch) -> ma_status {
    out_ptr!(out);
    unsafe { *out = Box::into_raw(Box::new(ma_patch(sample_random_patch(seed)))) };
    ma_status::MA_OK
}

/// # Safety
/// `p` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ma_patch_free(p: *mut ma_patch) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Copy of `ds` with the patch injected into image `index`.
///
/// # Safety
/// All handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ma_inject_canary(
    ds: *const ma_dataset,
    index: usize,
    patch: *const ma_patch,
    out: *mut *mut ma_dataset,
) -> ma_status {
    let ds = deref!(ds);
    let patch = deref!(patch);
    out_ptr!(out);
    match build_canary_dataset(&ds.0, index, &patch.0) {
        Ok(canary) => {
            unsafe { *out = Box::into_raw(Box::new(ma_dataset(canary))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

// ─── Models ────────────────────────────────────────────────────────────────

/// Build one of the named architectures ("MLP-1", "CNN-1", "CNN-2") with
/// fresh seeded weights. The model starts in eval mode.
///
/// # Safety
/// `arch` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ma_model_build(
    arch: *const c_char,
    num_classes: usize,
    dropout: c_int,
    batchnorm: c_int,
    seed: u64,
    out: *mut *mut ma_model,
) -> ma_status {
    out_ptr!(out);
    let arch_name = match unsafe { cstr(arch) } {
        Ok(s) => s,
        Err(s) => return s,
    };
    let arch = match Arch::parse(arch_name) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let regs = ModelRegs {
        dropout: dropout != 0,
        batchnorm: batchnorm != 0,
    };
    match build_model::<f32>(arch, num_classes, regs, seed) {
        Ok(m) => {
            unsafe { *out = Box::into_raw(Box::new(ma_model(m))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// Load weights from a checkpoint container into the model.
///
/// # Safety
/// `model` must be live and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ma_model_load_weights(
    model: *mut ma_model,
    path: *const c_char,
) -> ma_status {
    if model.is_null() {
        set_error("null handle");
        return ma_status::MA_ERR_NULL_POINTER;
    }
    let path = match unsafe { path_of(path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    let model = unsafe { &mut *model };
    match checkpoint::load_model(&mut model.0, Path::new(&path)) {
        Ok(()) => ma_status::MA_OK,
        Err(e) => fail(e),
    }
}

/// Save the model's weights to a checkpoint container.
///
/// # Safety
/// `model` must be live and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ma_model_save_weights(
    model: *const ma_model,
    path: *const c_char,
) -> ma_status {
    let model = deref!(model);
    let path = match unsafe { path_of(path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint::save_model(&model.0, Path::new(&path)) {
        Ok(()) => ma_status::MA_OK,
        Err(e) => fail(e),
    }
}

/// Trainable parameter count; 0 for a null handle.
///
/// # Safety
/// `model` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn ma_model_param_count(model: *const ma_model) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.0.param_count()
}

/// Set the model mode: 0 = eval, non-zero = train.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ma_model_set_mode(model: *mut ma_model, train: c_int) -> ma_status {
    if model.is_null() {
        set_error("null handle");
        return ma_status::MA_ERR_NULL_POINTER;
    }
    let model = unsafe { &mut *model };
    model
        .0
        .set_mode(if train != 0 { Mode::Train } else { Mode::Eval });
    ma_status::MA_OK
}

/// Eval-mode class probabilities for one image. `pixels` holds h*w*c floats
/// in [0,1]; `probs_out` receives `num_classes` values.
///
/// # Safety
/// `pixels` must hold the model's input size, `probs_out` at least
/// num_classes floats.
#[no_mangle]
pub unsafe extern "C" fn ma_model_predict(
    model: *const ma_model,
    pixels: *const f32,
    pixel_count: usize,
    probs_out: *mut f32,
    probs_len: usize,
) -> ma_status {
    let model = deref!(model);
    if pixels.is_null() || probs_out.is_null() {
        set_error("null buffer");
        return ma_status::MA_ERR_NULL_POINTER;
    }
    let (h, w, c) = model.0.input_shape();
    if pixel_count != h * w * c {
        set_error("pixel buffer does not match the model input size");
        return ma_status::MA_ERR_INVALID_ARGUMENT;
    }
    if probs_len < model.0.num_classes() {
        set_error("probability buffer too small");
        return ma_status::MA_ERR_INVALID_ARGUMENT;
    }
    let data = unsafe { std::slice::from_raw_parts(pixels, pixel_count) }.to_vec();
    let batch = match Tensor::new(vec![1, h, w, c], data) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    match model.0.forward(&batch) {
        Ok(probs) => {
            let rows = probs.data();
            unsafe {
                std::ptr::copy_nonoverlapping(rows.as_ptr(), probs_out, model.0.num_classes())
            };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `model` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ma_model_free(model: *mut ma_model) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

// ─── Scores ────────────────────────────────────────────────────────────────

/// Build the aligned probe triple (clean / unique / random) from an OOD
/// source dataset, converting to the target shape and sampling `n` images.
///
/// # Safety
/// All handles must be live; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ma_probe_triple_build(
    ood_source: *const ma_dataset,
    target_h: usize,
    target_w: usize,
    target_c: usize,
    n: usize,
    z_u: *const ma_patch,
    seed: u64,
    out: *mut *mut ma_probe_triple,
) -> ma_status {
    let src = deref!(ood_source);
    let z_u = deref!(z_u);
    out_ptr!(out);
    let built = make_ood_set(&src.0, (target_h, target_w, target_c), n, seed)
        .and_then(|ood| build_probe_triple(&ood, &z_u.0, seed));
    match built {
        Ok(t) => {
            unsafe { *out = Box::into_raw(Box::new(ma_probe_triple(t))) };
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `t` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ma_probe_triple_free(t: *mut ma_probe_triple) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Black-box M score of an eval-mode model over a probe triple. `paired`
/// non-zero selects the paired t-test.
///
/// # Safety
/// All handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ma_m_score(
    model: *const ma_model,
    triple: *const ma_probe_triple,
    paired: c_int,
    out: *mut ma_mscore,
) -> ma_status {
    let model = deref!(model);
    let triple = deref!(triple);
    out_ptr!(out);
    let kind = if paired != 0 {
        TTestKind::Paired
    } else {
        TTestKind::Welch
    };
    match m_score(&model.0, &triple.0, kind, ScoreMeta::default()) {
        Ok(r) => {
            unsafe {
                *out = ma_mscore {
                    m: r.m,
                    t_stat: r.t_stat,
                    p_value: r.p_value,
                    n: r.n,
                };
            }
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}

/// White-box M_w score over the images of `dataset` labelled `label`.
///
/// # Safety
/// All handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ma_mw_score(
    model: *const ma_model,
    dataset: *const ma_dataset,
    label: usize,
    z_u: *const ma_patch,
    seed: u64,
    out: *mut ma_mwscore,
) -> ma_status {
    let model = deref!(model);
    let ds = deref!(dataset);
    let z_u = deref!(z_u);
    out_ptr!(out);
    let members = ds.0.indices_with_label(label);
    if members.is_empty() {
        set_error("dataset holds no images with that label");
        return ma_status::MA_ERR_INVALID_ARGUMENT;
    }
    let d_y = ds.0.subset(&members, "d_y");
    match mw_score(&model.0, &d_y, label, &z_u.0, seed, ScoreMeta::default()) {
        Ok(r) => {
            unsafe {
                *out = ma_mwscore {
                    m_w: r.m_w,
                    mean_p_unique: r.mean_p_unique,
                    mean_p_random: r.mean_p_random,
                    n: r.terms.len(),
                };
            }
            ma_status::MA_OK
        }
        Err(e) => fail(e),
    }
}
