//! C ABI for `closer-core`.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`CloserStatus`]; `CLOSER_OK` is 0.
//!   On failure a human-readable message is available from
//!   [`closer_last_error`] on the same thread until the next failing call.
//! * Encoders and prototype banks are opaque handles created by `*_new` /
//!   `*_load` functions and released with the matching `*_free`.
//! * Matrices are passed as row-major `double` buffers with explicit row
//!   and column counts. Class labels are `size_t`.
//! * Results are written through caller-provided out-pointers; buffers are
//!   never allocated on the caller's behalf.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use closer_core::data::{Dataset, Sample};
use closer_core::encoder::EncoderParams;
use closer_core::experiment::{run, write_run, ExperimentConfig};
use closer_core::ib::{ib_lower_bound, CovarianceSummary};
use closer_core::losses::{inter_loss_value, intra_loss_value, sce_loss_value, ssc_loss_value, view_pairs};
use closer_core::metrics::transferability_from_features;
use closer_core::numerics::Tensor;
use closer_core::protocol::{classifier_replace, PrototypeBank};
use closer_core::Error;

/// Result codes of every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloserStatus {
    Ok = 0,
    NullPointer = 1,
    ShapeMismatch = 2,
    InvalidArgument = 3,
    DegenerateInput = 4,
    NotInLemmaRegime = 5,
    Io = 6,
    EncoderChanged = 7,
    ClassOverlap = 8,
    NonFinite = 9,
    Panic = 10,
    Other = 11,
}

/// Trained feature extractor.
pub struct CloserEncoder {
    inner: EncoderParams,
}

/// Class prototypes bound to one encoder.
pub struct CloserPrototypeBank {
    inner: PrototypeBank,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CloserStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::NotScalar(_) => CloserStatus::ShapeMismatch,
        Error::DegenerateInput(_) | Error::NonPositiveLog { .. } => CloserStatus::DegenerateInput,
        Error::NotInLemmaRegime { .. } => CloserStatus::NotInLemmaRegime,
        Error::Io(_) | Error::Json(_) | Error::Idx { .. } => CloserStatus::Io,
        Error::EncoderChanged => CloserStatus::EncoderChanged,
        Error::ClassOverlap(_) => CloserStatus::ClassOverlap,
        Error::NonFinite(_) => CloserStatus::NonFinite,
        Error::Stage { source, .. } => status_of(source),
        Error::InvalidArgument(_)
        | Error::LabelOutOfRange { .. }
        | Error::NoInterPair
        | Error::NoIntraPair
        | Error::EmptyClass(_)
        | Error::UnseenClass(_)
        | Error::InsufficientClasses { .. }
        | Error::InsufficientSamples { .. } => CloserStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CloserStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CloserStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer passed for {what}"));
            CloserStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            CloserStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Tensor, Fail> {
    let data = slice(p, rows * cols, what)?;
    Ok(Tensor::matrix(rows, cols, data.to_vec())?)
}

unsafe fn cstr(p: *const c_char, what: &'static str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Core(Error::invalid(format!("{what} is not valid UTF-8"))))
}

unsafe fn dataset(x: *const f64, labels: *const usize, rows: usize, cols: usize) -> Result<Dataset, Fail> {
    let xs = slice(x, rows * cols, "inputs")?;
    let ls = slice(labels, rows, "labels")?;
    if cols == 0 {
        return Err(Fail::Core(Error::invalid("inputs need at least one column")));
    }
    let samples = xs
        .chunks(cols)
        .zip(ls)
        .map(|(r, &label)| Sample { input: r.to_vec(), label })
        .collect();
    Ok(Dataset::new(samples, None)?)
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn closer_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn closer_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Randomly initialized encoder with layer widths `dims[0..n_dims]`
/// (input first, embedding last).
///
/// # Safety
/// `dims` must point to `n_dims` values and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn closer_encoder_new(
    dims: *const usize,
    n_dims: usize,
    seed: u64,
    out_encoder: *mut *mut CloserEncoder,
) -> CloserStatus {
    guard(|| {
        let dims = slice(dims, n_dims, "dims")?;
        let o = out(out_encoder, "out_encoder")?;
        let inner = EncoderParams::init(dims, seed)?;
        *o = Box::into_raw(Box::new(CloserEncoder { inner }));
        Ok(())
    })
}

/// Loads an encoder checkpoint (JSON).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_encoder` writable.
#[no_mangle]
pub unsafe extern "C" fn closer_encoder_load(path: *const c_char, out_encoder: *mut *mut CloserEncoder) -> CloserStatus {
    guard(|| {
        let p = PathBuf::from(cstr(path, "path")?);
        let o = out(out_encoder, "out_encoder")?;
        let inner = EncoderParams::load(&p)?;
        *o = Box::into_raw(Box::new(CloserEncoder { inner }));
        Ok(())
    })
}

/// Writes an encoder checkpoint (JSON).
///
/// # Safety
/// `encoder` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn closer_encoder_save(encoder: *const CloserEncoder, path: *const c_char) -> CloserStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or(Fail::Null("encoder"))?;
        e.inner.save(&PathBuf::from(cstr(path, "path")?))?;
        Ok(())
    })
}

/// Releases an encoder. Null is ignored.
///
/// # Safety
/// `encoder` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn closer_encoder_free(encoder: *mut CloserEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Input and embedding widths of an encoder.
///
/// # Safety
/// `encoder` must be a live handle; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn closer_encoder_dims(
    encoder: *const CloserEncoder,
    out_input_dim: *mut usize,
    out_embed_dim: *mut usize,
) -> CloserStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or(Fail::Null("encoder"))?;
        *out(out_input_dim, "out_input_dim")? = e.inner.input_dim();
        *out(out_embed_dim, "out_embed_dim")? = e.inner.embed_dim();
        Ok(())
    })
}

/// Embeds `rows` inputs of width `cols` into unit vectors written to
/// `out_features` (`rows * embed_dim` values).
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn closer_encoder_embed(
    encoder: *const CloserEncoder,
    x: *const f64,
    rows: usize,
    cols: usize,
    out_features: *mut f64,
    out_len: usize,
) -> CloserStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or(Fail::Null("encoder"))?;
        let z = e.inner.embed(&matrix(x, rows, cols, "x")?)?;
        if out_len != z.len() {
            return Err(Fail::Core(Error::invalid(format!(
                "output buffer holds {out_len} values, need {}",
                z.len()
            ))));
        }
        slice_mut(out_features, out_len, "out_features")?.copy_from_slice(z.data());
        Ok(())
    })
}

/// Classifier replacement: one class-mean prototype per distinct label.
///
/// # Safety
/// `x` holds `rows * cols` values, `labels` holds `rows` values.
#[no_mangle]
pub unsafe extern "C" fn closer_bank_new(
    encoder: *const CloserEncoder,
    x: *const f64,
    labels: *const usize,
    rows: usize,
    cols: usize,
    out_bank: *mut *mut CloserPrototypeBank,
) -> CloserStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or(Fail::Null("encoder"))?;
        let o = out(out_bank, "out_bank")?;
        let d = dataset(x, labels, rows, cols)?;
        let inner = classifier_replace(&e.inner, &d, &d.classes())?;
        *o = Box::into_raw(Box::new(CloserPrototypeBank { inner }));
        Ok(())
    })
}

/// Adds prototypes for new classes. Fails without modifying the bank if a
/// class already has a prototype or the encoder differs from the one that
/// built the bank.
///
/// # Safety
/// Handles must be live; buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn closer_bank_update(
    bank: *mut CloserPrototypeBank,
    encoder: *const CloserEncoder,
    x: *const f64,
    labels: *const usize,
    rows: usize,
    cols: usize,
) -> CloserStatus {
    guard(|| {
        let b = bank.as_mut().ok_or(Fail::Null("bank"))?;
        let e = encoder.as_ref().ok_or(Fail::Null("encoder"))?;
        if rows == 0 {
            return Ok(());
        }
        let d = dataset(x, labels, rows, cols)?;
        b.inner = b.inner.incremental_update(&e.inner, &d)?;
        Ok(())
    })
}

/// Number of prototypes in the bank.
///
/// # Safety
/// `bank` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn closer_bank_len(bank: *const CloserPrototypeBank, out_len: *mut usize) -> CloserStatus {
    guard(|| {
        let b = bank.as_ref().ok_or(Fail::Null("bank"))?;
        *out(out_len, "out_len")? = b.inner.len();
        Ok(())
    })
}

/// Predicts the class of one input. `out_scores` (optional, may be null)
/// receives one cosine score per prototype in bank order.
///
/// # Safety
/// `x` holds `cols` values; `out_scores`, if non-null, `scores_len` values.
#[no_mangle]
pub unsafe extern "C" fn closer_bank_classify(
    bank: *const CloserPrototypeBank,
    encoder: *const CloserEncoder,
    x: *const f64,
    cols: usize,
    out_class: *mut usize,
    out_scores: *mut f64,
    scores_len: usize,
) -> CloserStatus {
    guard(|| {
        let b = bank.as_ref().ok_or(Fail::Null("bank"))?;
        let e = encoder.as_ref().ok_or(Fail::Null("encoder"))?;
        let x = slice(x, cols, "x")?;
        let (class, scores) = closer_core::protocol::classify(&e.inner, &b.inner, x)?;
        *out(out_class, "out_class")? = class;
        if !out_scores.is_null() {
            if scores_len != scores.len() {
                return Err(Fail::Core(Error::invalid(format!(
                    "score buffer holds {scores_len} values, bank has {}",
                    scores.len()
                ))));
            }
            slice_mut(out_scores, scores_len, "out_scores")?.copy_from_slice(&scores);
        }
        Ok(())
    })
}

/// Releases a bank. Null is ignored.
///
/// # Safety
/// `bank` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn closer_bank_free(bank: *mut CloserPrototypeBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Cosine-softmax cross-entropy of `n` features (`n * d`) against a `c * d`
/// classifier, with temperature `tau` and additive margin `margin`.
///
/// # Safety
/// Buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn closer_sce_loss(
    features: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    classifier: *const f64,
    c: usize,
    tau: f64,
    margin: f64,
    out_loss: *mut f64,
) -> CloserStatus {
    guard(|| {
        let f = matrix(features, n, d, "features")?;
        let w = matrix(classifier, c, d, "classifier")?;
        let l = slice(labels, n, "labels")?;
        *out(out_loss, "out_loss")? = sce_loss_value(&f, l, &w, tau, margin)?;
        Ok(())
    })
}

/// Contrastive loss over `2 * b` stacked rows where row `i` and row `b + i`
/// are two views of the same sample.
///
/// # Safety
/// `features` holds `2 * b * d` values.
#[no_mangle]
pub unsafe extern "C" fn closer_ssc_loss(
    features: *const f64,
    b: usize,
    d: usize,
    tau: f64,
    out_loss: *mut f64,
) -> CloserStatus {
    guard(|| {
        let f = matrix(features, 2 * b, d, "features")?;
        *out(out_loss, "out_loss")? = ssc_loss_value(&f, &view_pairs(b), tau)?;
        Ok(())
    })
}

/// Negative mean cosine over different-class pairs.
///
/// # Safety
/// Buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn closer_inter_loss(
    features: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    out_loss: *mut f64,
) -> CloserStatus {
    guard(|| {
        let f = matrix(features, n, d, "features")?;
        *out(out_loss, "out_loss")? = inter_loss_value(&f, slice(labels, n, "labels")?)?;
        Ok(())
    })
}

/// Negative mean cosine over same-class pairs.
///
/// # Safety
/// Buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn closer_intra_loss(
    features: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    out_loss: *mut f64,
) -> CloserStatus {
    guard(|| {
        let f = matrix(features, n, d, "features")?;
        *out(out_loss, "out_loss")? = intra_loss_value(&f, slice(labels, n, "labels")?)?;
        Ok(())
    })
}

/// Transferability of `n` new-class features against `p` base prototypes.
///
/// # Safety
/// `prototypes` holds `p * d` values and `features` `n * d`.
#[no_mangle]
pub unsafe extern "C" fn closer_transferability(
    prototypes: *const f64,
    p: usize,
    features: *const f64,
    n: usize,
    d: usize,
    out_value: *mut f64,
) -> CloserStatus {
    guard(|| {
        let protos: Vec<Vec<f64>> = slice(prototypes, p * d, "prototypes")?
            .chunks(d.max(1))
            .map(<[f64]>::to_vec)
            .collect();
        let f = matrix(features, n, d, "features")?;
        *out(out_value, "out_value")? = transferability_from_features(&protos, &f)?;
        Ok(())
    })
}

/// Closed-form information-bottleneck bound from covariance
/// log-determinants. Returns `CLOSER_STATUS_NOT_IN_LEMMA_REGIME` when
/// the bound does not apply.
///
/// # Safety
/// `log_det_within` holds `classes` values.
#[no_mangle]
pub unsafe extern "C" fn closer_ib_lower_bound(
    dim: usize,
    log_det_within: *const f64,
    classes: usize,
    log_det_total: f64,
    out_bound: *mut f64,
) -> CloserStatus {
    guard(|| {
        let w = slice(log_det_within, classes, "log_det_within")?.to_vec();
        let s = CovarianceSummary::from_log_dets(dim, w, log_det_total)?;
        *out(out_bound, "out_bound")? = ib_lower_bound(&s)?;
        Ok(())
    })
}

/// Runs a full experiment from a JSON config and writes its reports to
/// `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn closer_run_config(config_json: *const c_char, out_dir: *const c_char) -> CloserStatus {
    guard(|| {
        let config = ExperimentConfig::from_json(&cstr(config_json, "config_json")?)?;
        let dir = PathBuf::from(cstr(out_dir, "out_dir")?);
        let result = run(&config)?;
        write_run(&result, &dir)?;
        Ok(())
    })
}
