//! C ABI for the reprel reliability-scoring library.
//!
//! The surface follows the usual opaque-handle pattern: build an ensemble
//! by adding one (reference, test) member at a time, run scores into
//! caller-allocated `double` buffers, and free the handle when done. Every
//! function returns a [`ReprelStatus`]; `REPREL_STATUS_OK` is 0.
//!
//! All pointers must be valid for the documented lengths; the library never
//! takes ownership of caller buffers. Handles are not thread-safe for
//! concurrent mutation, but a finished ensemble is read-only and may be
//! scored from several threads at once.

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use reprel::{
    consistency, DistanceMetric, EnsembleEmbeddings, Error, MemberPair, NcScale, SetSimilarity,
};

/// Status code returned by every API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReprelStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A parameter is outside its domain (zero sizes, bad enum value, ...).
    InvalidArgument = 2,
    /// Dimensions or lengths do not line up.
    ShapeMismatch = 3,
    /// A zero vector was used where a direction is required.
    DegenerateInput = 4,
    /// The operation needs at least two ensemble members.
    EnsembleTooSmall = 5,
    /// Rank correlation is undefined (constant input).
    UndefinedCorrelation = 6,
    /// Values violate a domain invariant (non-finite entries, ...).
    InvalidData = 7,
    /// Unexpected internal failure.
    InternalError = 8,
}

fn status_of(e: &Error) -> ReprelStatus {
    match e {
        Error::InvalidInput(_) | Error::Parameter(_) => ReprelStatus::InvalidArgument,
        Error::DegenerateVector { .. } => ReprelStatus::DegenerateInput,
        Error::Shape(_) => ReprelStatus::ShapeMismatch,
        Error::EnsembleTooSmall(_) => ReprelStatus::EnsembleTooSmall,
        Error::UndefinedCorrelation(_) => ReprelStatus::UndefinedCorrelation,
        Error::InvalidData(_) | Error::Polarity(_) | Error::TaskData(_) => ReprelStatus::InvalidData,
        Error::Format(_) | Error::Corrupt(_) | Error::Io(_) => ReprelStatus::InternalError,
    }
}

/// Distance metric selector.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum ReprelMetric {
    Euclidean = 0,
    Cosine = 1,
}

impl From<ReprelMetric> for DistanceMetric {
    fn from(m: ReprelMetric) -> Self {
        match m {
            ReprelMetric::Euclidean => DistanceMetric::Euclidean,
            ReprelMetric::Cosine => DistanceMetric::Cosine,
        }
    }
}

/// Neighbor-set similarity selector.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum ReprelSimilarity {
    Jaccard = 0,
    Overlap = 1,
}

impl From<ReprelSimilarity> for SetSimilarity {
    fn from(s: ReprelSimilarity) -> Self {
        match s {
            ReprelSimilarity::Jaccard => SetSimilarity::Jaccard,
            ReprelSimilarity::Overlap => SetSimilarity::Overlap,
        }
    }
}

/// Incremental ensemble constructor (opaque).
pub struct ReprelBuilder {
    n_ref: usize,
    n_test: usize,
    dim: usize,
    members: Vec<MemberPair>,
}

/// Finished, immutable ensemble (opaque).
pub struct ReprelEnsemble {
    inner: EnsembleEmbeddings,
}

fn guard<F: FnOnce() -> ReprelStatus>(f: F) -> ReprelStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(ReprelStatus::InternalError)
}

/// Creates a builder for an ensemble of `n_ref x dim` reference matrices and
/// `n_test x dim` test matrices. Returns null when a size is zero.
#[no_mangle]
pub extern "C" fn reprel_builder_new(
    n_ref: usize,
    n_test: usize,
    dim: usize,
) -> *mut ReprelBuilder {
    if n_ref == 0 || n_test == 0 || dim == 0 {
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(ReprelBuilder { n_ref, n_test, dim, members: Vec::new() }))
}

/// Adds one member from row-major buffers of `n_ref*dim` and `n_test*dim`
/// doubles.
///
/// # Safety
/// `builder` must come from [`reprel_builder_new`] and not be freed;
/// `reference` and `test` must point to the documented number of readable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn reprel_builder_add_member(
    builder: *mut ReprelBuilder,
    reference: *const f64,
    test: *const f64,
) -> ReprelStatus {
    if builder.is_null() || reference.is_null() || test.is_null() {
        return ReprelStatus::NullArgument;
    }
    let b = &mut *builder;
    let ref_slice = std::slice::from_raw_parts(reference, b.n_ref * b.dim);
    let test_slice = std::slice::from_raw_parts(test, b.n_test * b.dim);
    guard(|| {
        let build = || -> Result<MemberPair, Error> {
            let r = reprel::EmbeddingMatrix::new(b.n_ref, b.dim, ref_slice.to_vec())?;
            let t = reprel::EmbeddingMatrix::new(b.n_test, b.dim, test_slice.to_vec())?;
            MemberPair::new(r, t)
        };
        match build() {
            Ok(m) => {
                b.members.push(m);
                ReprelStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Finishes the builder into an immutable ensemble. On success the builder
/// is consumed (do not free it again) and `*out` owns the ensemble.
///
/// # Safety
/// `builder` must come from [`reprel_builder_new`]; `out` must be a valid
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn reprel_builder_finish(
    builder: *mut ReprelBuilder,
    out: *mut *mut ReprelEnsemble,
) -> ReprelStatus {
    if builder.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    let b = Box::from_raw(builder);
    guard(|| match EnsembleEmbeddings::new(b.members.clone()) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(ReprelEnsemble { inner }));
            ReprelStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// Frees a builder that was not consumed by [`reprel_builder_finish`].
///
/// # Safety
/// `builder` must come from [`reprel_builder_new`] and not already be freed
/// or consumed.
#[no_mangle]
pub unsafe extern "C" fn reprel_builder_free(builder: *mut ReprelBuilder) {
    if !builder.is_null() {
        drop(Box::from_raw(builder));
    }
}

/// Frees an ensemble handle.
///
/// # Safety
/// `ensemble` must come from [`reprel_builder_finish`] and not already be
/// freed.
#[no_mangle]
pub unsafe extern "C" fn reprel_ensemble_free(ensemble: *mut ReprelEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of test rows scored per call; the output buffer length.
///
/// # Safety
/// `ensemble` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn reprel_ensemble_test_rows(ensemble: *const ReprelEnsemble) -> usize {
    if ensemble.is_null() {
        return 0;
    }
    (*ensemble).inner.test_rows()
}

/// Number of members in the ensemble.
///
/// # Safety
/// `ensemble` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn reprel_ensemble_members(ensemble: *const ReprelEnsemble) -> usize {
    if ensemble.is_null() {
        return 0;
    }
    (*ensemble).inner.num_members()
}

unsafe fn write_scores(
    out: *mut f64,
    result: Result<reprel::ScoreVector, Error>,
) -> ReprelStatus {
    match result {
        Ok(scores) => {
            let slot = std::slice::from_raw_parts_mut(out, scores.len());
            slot.copy_from_slice(scores.values());
            ReprelStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// k-NN neighborhood-consistency score for every test row (higher is more
/// reliable). `out` must hold `reprel_ensemble_test_rows` doubles. With
/// `normalized` the score is rescaled by the member-pair count to saturate
/// at 1 instead of (M-1)/(2M).
///
/// # Safety
/// `ensemble` must be a live handle and `out` a writable buffer of
/// `reprel_ensemble_test_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn reprel_nc_k_scores(
    ensemble: *const ReprelEnsemble,
    k: usize,
    metric: ReprelMetric,
    sim: ReprelSimilarity,
    normalized: bool,
    out: *mut f64,
) -> ReprelStatus {
    if ensemble.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    let ens = &(*ensemble).inner;
    let scale = if normalized { NcScale::MeanPairwise } else { NcScale::Standard };
    guard(|| {
        write_scores(
            out,
            consistency::nc_k_batch_scaled(ens, k, metric.into(), sim.into(), scale),
        )
    })
}

/// ε-neighborhood consistency score for every test row.
///
/// # Safety
/// As for [`reprel_nc_k_scores`].
#[no_mangle]
pub unsafe extern "C" fn reprel_nc_eps_scores(
    ensemble: *const ReprelEnsemble,
    eps: f64,
    metric: ReprelMetric,
    sim: ReprelSimilarity,
    normalized: bool,
    out: *mut f64,
) -> ReprelStatus {
    if ensemble.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    let ens = &(*ensemble).inner;
    let scale = if normalized { NcScale::MeanPairwise } else { NcScale::Standard };
    guard(|| {
        write_scores(
            out,
            consistency::nc_eps_batch_scaled(ens, eps, metric.into(), sim.into(), scale),
        )
    })
}

/// Mean k-minimum-distance score for one member (lower is more reliable).
///
/// # Safety
/// As for [`reprel_nc_k_scores`].
#[no_mangle]
pub unsafe extern "C" fn reprel_dist_k_scores(
    ensemble: *const ReprelEnsemble,
    member: usize,
    k: usize,
    metric: ReprelMetric,
    out: *mut f64,
) -> ReprelStatus {
    if ensemble.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    let ens = &(*ensemble).inner;
    if member >= ens.num_members() {
        return ReprelStatus::InvalidArgument;
    }
    let pair = ens.member(member);
    guard(|| {
        write_scores(
            out,
            reprel::dist_k_scores(&pair.reference, &pair.test, k, metric.into()),
        )
    })
}

/// L2 norm of each (unnormalized) test representation for one member
/// (higher is more reliable).
///
/// # Safety
/// As for [`reprel_nc_k_scores`].
#[no_mangle]
pub unsafe extern "C" fn reprel_norm_scores(
    ensemble: *const ReprelEnsemble,
    member: usize,
    out: *mut f64,
) -> ReprelStatus {
    if ensemble.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    let ens = &(*ensemble).inner;
    if member >= ens.num_members() {
        return ReprelStatus::InvalidArgument;
    }
    guard(|| write_scores(out, reprel::norm_scores(&ens.member(member).test)))
}

/// Cross-member representation variance per test row (lower is more
/// reliable).
///
/// # Safety
/// As for [`reprel_nc_k_scores`].
#[no_mangle]
pub unsafe extern "C" fn reprel_feature_variance_scores(
    ensemble: *const ReprelEnsemble,
    out: *mut f64,
) -> ReprelStatus {
    if ensemble.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    guard(|| write_scores(out, reprel::feature_variance_batch(&(*ensemble).inner)))
}

/// Kendall tau-b between two equal-length samples.
///
/// # Safety
/// `x` and `y` must point to `len` readable doubles, `out` to one writable
/// double.
#[no_mangle]
pub unsafe extern "C" fn reprel_kendall_tau_b(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> ReprelStatus {
    if x.is_null() || y.is_null() || out.is_null() {
        return ReprelStatus::NullArgument;
    }
    let xs = std::slice::from_raw_parts(x, len);
    let ys = std::slice::from_raw_parts(y, len);
    guard(|| match reprel::kendall_tau_b(xs, ys) {
        Ok(tau) => {
            *out = tau;
            ReprelStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn reprel_status_message(status: ReprelStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        ReprelStatus::Ok => b"ok\0",
        ReprelStatus::NullArgument => b"null pointer argument\0",
        ReprelStatus::InvalidArgument => b"invalid argument\0",
        ReprelStatus::ShapeMismatch => b"shape mismatch\0",
        ReprelStatus::DegenerateInput => b"degenerate (zero-norm) input\0",
        ReprelStatus::EnsembleTooSmall => b"ensemble needs at least two members\0",
        ReprelStatus::UndefinedCorrelation => b"correlation undefined for constant input\0",
        ReprelStatus::InvalidData => b"invalid data\0",
        ReprelStatus::InternalError => b"internal error\0",
    };
    msg.as_ptr() as *const c_char
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn reprel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
