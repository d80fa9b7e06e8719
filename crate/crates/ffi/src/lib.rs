//! C interface to the fdna library.
//!
//! Every fallible function returns an [`FdnaStatus`]; on failure a message is
//! kept per thread and can be read with [`fdna_last_error_message`]. Objects
//! are handed out as opaque pointers and must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fdna::evaluation;
use fdna::network::Input;
use fdna::pipeline::{Channel, ItemModel};
use fdna::similarity::{self, EmbeddingStore};
use fdna::training;
use fdna::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdnaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Channel of a loaded model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdnaChannel {
    Attribute = 0,
    Precomputed = 1,
    Combined = 2,
}

/// Opaque embedding store: item ids with one fDNA vector each.
pub struct FdnaStore {
    store: EmbeddingStore,
    ids: Vec<CString>,
}

/// Opaque item model of any channel.
pub struct FdnaModel {
    model: ItemModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FdnaStatus {
    match e {
        Error::InvalidArgument(_) => FdnaStatus::InvalidArgument,
        Error::Numerical(_) => FdnaStatus::Numerical,
        Error::Io { .. } => FdnaStatus::Io,
        Error::Data(_) | Error::DimensionMismatch { .. } | Error::Format { .. } => FdnaStatus::Data,
    }
}

struct Fail(FdnaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FdnaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FdnaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FdnaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FdnaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FdnaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<(), Fail> {
    if expected == actual {
        Ok(())
    } else {
        Err(Fail(
            FdnaStatus::InvalidArgument,
            format!("{what}: expected length {expected}, got {actual}"),
        ))
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fdna_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fdna_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Logistic purchase probability `σ(f·w + b)` over vectors of length `dim`.
///
/// # Safety
/// `f` and `w` must point to `dim` doubles; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn fdna_predict_probability(
    f: *const f64,
    w: *const f64,
    dim: usize,
    b: f64,
    out: *mut f64,
) -> FdnaStatus {
    guard(|| {
        let f = slice_arg(f, dim, "f")?;
        let w = slice_arg(w, dim, "w")?;
        *out_ptr(out, "out")? = training::predict_probability(f, w, b)?;
        Ok(())
    })
}

/// Cosine distance `1 − cos(f, g)` of two vectors of length `dim`.
///
/// # Safety
/// `f` and `g` must point to `dim` doubles; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn fdna_cosine_distance(f: *const f64, g: *const f64, dim: usize, out: *mut f64) -> FdnaStatus {
    guard(|| {
        let f = slice_arg(f, dim, "f")?;
        let g = slice_arg(g, dim, "g")?;
        *out_ptr(out, "out")? = similarity::cosine_distance(f, g)?;
        Ok(())
    })
}

/// Area under the ROC curve of `n` scores against 0/1 labels; ties count one half.
///
/// # Safety
/// `scores` must point to `n` doubles, `labels` to `n` bytes, `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn fdna_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> FdnaStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let labels: Vec<bool> = slice_arg(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
        *out_ptr(out, "out")? = evaluation::auc(scores, &labels)?;
        Ok(())
    })
}

/// Opens an embedding store file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_open(path: *const c_char, out: *mut *mut FdnaStore) -> FdnaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let store = EmbeddingStore::read(&path)?;
        let ids = store
            .ids()
            .iter()
            .map(|s| CString::new(s.as_str()).map_err(|_| Fail(FdnaStatus::Data, format!("item id {s:?} contains NUL"))))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(FdnaStore { store, ids }));
        Ok(())
    })
}

/// Releases a store; null is ignored.
///
/// # Safety
/// `store` must come from [`fdna_store_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_free(store: *mut FdnaStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of items, or 0 for a null store.
///
/// # Safety
/// `store` must be null or a live store.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_len(store: *const FdnaStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.len())
}

/// Vector dimension, or 0 for a null store.
///
/// # Safety
/// `store` must be null or a live store.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_dim(store: *const FdnaStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.dim())
}

/// Item id at `index`, owned by the store; null when out of range.
///
/// # Safety
/// `store` must be null or a live store.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_id(store: *const FdnaStore, index: usize) -> *const c_char {
    store
        .as_ref()
        .and_then(|s| s.ids.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Copies the vector of item `id` into `out` (length must equal the dimension).
///
/// # Safety
/// `store` must be a live store, `id` a NUL-terminated string and `out` point to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_get(
    store: *const FdnaStore,
    id: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> FdnaStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        let id = str_arg(id, "id")?;
        check_len("out", s.store.dim(), out_len)?;
        let v = s
            .store
            .get(id)
            .ok_or_else(|| Fail(FdnaStatus::Data, format!("unknown item `{id}`")))?;
        out_slice(out, out_len, "out")?.copy_from_slice(v);
        Ok(())
    })
}

/// The `k` nearest items to `id` by cosine distance. Writes store indices and
/// distances, nearest first. Slots left over when fewer than `k` items have a
/// nonzero vector get index `SIZE_MAX` and distance NaN.
///
/// # Safety
/// `store` must be a live store, `id` a NUL-terminated string, and `indices` and
/// `distances` must each point to `k` writable elements.
#[no_mangle]
pub unsafe extern "C" fn fdna_store_neighbors(
    store: *const FdnaStore,
    id: *const c_char,
    k: usize,
    indices: *mut usize,
    distances: *mut f64,
) -> FdnaStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        let id = str_arg(id, "id")?;
        let result = similarity::nearest_neighbors(&s.store, id, k)?;
        let indices = out_slice(indices, k, "indices")?;
        let distances = out_slice(distances, k, "distances")?;
        for (slot, (nid, d)) in result.neighbors.iter().enumerate() {
            indices[slot] = s.store.index_of(nid).expect("neighbor ids come from the store");
            distances[slot] = *d;
        }
        for slot in result.neighbors.len()..k {
            indices[slot] = usize::MAX;
            distances[slot] = f64::NAN;
        }
        Ok(())
    })
}

/// Opens a model artifact written by `fdna train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdna_model_open(path: *const c_char, out: *mut *mut FdnaModel) -> FdnaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let model = ItemModel::read(&path)?;
        *out = Box::into_raw(Box::new(FdnaModel { model }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`fdna_model_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fdna_model_free(model: *mut FdnaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Channel of the model.
///
/// # Safety
/// `model` must be a live model; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdna_model_channel(model: *const FdnaModel, out: *mut FdnaChannel) -> FdnaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ptr(out, "out")? = match m.model.channel() {
            Channel::Attribute => FdnaChannel::Attribute,
            Channel::Precomputed => FdnaChannel::Precomputed,
            Channel::Combined => FdnaChannel::Combined,
        };
        Ok(())
    })
}

/// fDNA width, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn fdna_model_output_width(model: *const FdnaModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.output_width())
}

/// Width of the first input: the attribute one-hot width, or the feature width
/// for a precomputed model. 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn fdna_model_input_width(model: *const FdnaModel) -> usize {
    model.as_ref().map_or(0, |m| match &m.model {
        ItemModel::Attribute(n) | ItemModel::Precomputed(n) => n.input_width(),
        ItemModel::Combined(c) => c.channel_a.input_width(),
    })
}

/// Inference-mode fDNA of one item. `input` is the dense attribute vector
/// (attribute and combined models) or the feature vector (precomputed models);
/// `features` is read by combined models only and may be null otherwise.
///
/// # Safety
/// Pointers must reference the stated number of doubles; `out` must hold
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fdna_model_infer(
    model: *const FdnaModel,
    input: *const f64,
    input_len: usize,
    features: *const f64,
    features_len: usize,
    out: *mut f64,
    out_len: usize,
) -> FdnaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = Input::Dense(slice_arg(input, input_len, "input")?.to_vec());
        check_len("out", m.model.output_width(), out_len)?;
        let f = match &m.model {
            ItemModel::Attribute(n) | ItemModel::Precomputed(n) => n.infer(&x)?,
            ItemModel::Combined(c) => c.forward(&x, Some(slice_arg(features, features_len, "features")?))?,
        };
        out_slice(out, out_len, "out")?.copy_from_slice(&f);
        Ok(())
    })
}
