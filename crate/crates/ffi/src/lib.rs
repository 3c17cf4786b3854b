//! C ABI over `fairinfl`.
//!
//! Datasets and model snapshots cross the boundary as opaque handles created
//! by `fi_*` constructors and released with the matching `*_free` function.
//! Every fallible call returns an [`FiStatus`]; on failure a description is
//! available from [`fi_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fairinfl::data::{self, CsvOptions, SyntheticParams, TabularParams};
use fairinfl::influence::{self, InfluenceConfig};
use fairinfl::pipeline;
use fairinfl::training::{self, TrainConfig};
use fairinfl::{Architecture, Dataset, Error, Label, ModelParams, ModelSnapshot, SurrogateKind, SurrogateSpec};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Parse = 5,
    EmptyCell = 6,
    NonFinite = 7,
    Degenerate = 8,
    Panic = 9,
}

/// Opaque dataset handle.
pub struct FiDataset {
    inner: Dataset,
}

/// Opaque model snapshot handle.
pub struct FiSnapshot {
    inner: ModelSnapshot,
}

/// Training options; obtain defaults from [`fi_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FiTrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    /// 0 trains the affine model.
    pub hidden: usize,
    pub lambda: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => FiStatus::Shape,
            Error::Io(_) => FiStatus::Io,
            Error::Csv { .. } | Error::Json(_) | Error::InvalidLabel(_) => FiStatus::Parse,
            Error::EmptyCell(_) | Error::NonBinaryGroups { .. } => FiStatus::EmptyCell,
            Error::NonFinite { .. } => FiStatus::NonFinite,
            Error::DegenerateVariance(_) => FiStatus::Degenerate,
            _ => FiStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            FiStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FiStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

unsafe fn surrogate_arg(kind: *const c_char, lambda: f64) -> Result<SurrogateSpec, Failure> {
    let kind: SurrogateKind = str_arg(kind, "surrogate")?.parse()?;
    Ok(SurrogateSpec::new(kind, lambda)?)
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next `fi_*` call on the same thread.
#[no_mangle]
pub extern "C" fn fi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from row-major `n x d` features, labels in {-1, +1} and
/// group ids.
///
/// # Safety
/// `features` must point to `n * d` doubles, `labels` and `groups` to `n`
/// values each, `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_new(
    features: *const f64,
    n: usize,
    d: usize,
    labels: *const i8,
    groups: *const u32,
    out: *mut *mut FiDataset,
) -> FiStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or_else(|| Failure(FiStatus::InvalidArgument, "n * d overflows".into()))?;
        let features = slice(features, len, "features")?.to_vec();
        let labels = slice(labels, n, "labels")?
            .iter()
            .map(|&y| Label::try_from(y))
            .collect::<Result<Vec<_>, _>>()?;
        let groups = slice(groups, n, "groups")?.to_vec();
        let inner = Dataset::new(features, d, labels, groups, None)?;
        put(out, FiDataset { inner })
    })
}

/// Loads a `feature_0..,label,group` CSV.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_load_csv(path: *const c_char, coerce_labels: bool, out: *mut *mut FiDataset) -> FiStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = data::load_csv(Path::new(path), CsvOptions { coerce_labels })?;
        put(out, FiDataset { inner })
    })
}

/// One-dimensional Gaussian cells with the default ordered means.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_synthetic(n_per_cell: usize, seed: u64, out: *mut *mut FiDataset) -> FiStatus {
    guard(|| {
        let p = SyntheticParams {
            n_per_cell,
            ..Default::default()
        };
        put(out, FiDataset { inner: data::generate_synthetic(&p, seed)? })
    })
}

/// The census-style tabular stand-in.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_tabular(n_per_cell: usize, dim: usize, seed: u64, out: *mut *mut FiDataset) -> FiStatus {
    guard(|| {
        let p = TabularParams { n_per_cell, dim };
        put(out, FiDataset { inner: data::generate_tabular(&p, seed)? })
    })
}

/// Random split into a training part of `floor(n * train_fraction)` rows and the rest.
///
/// # Safety
/// `data` must be a live handle; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_split(
    data: *const FiDataset,
    train_fraction: f64,
    seed: u64,
    out_train: *mut *mut FiDataset,
    out_test: *mut *mut FiDataset,
) -> FiStatus {
    guard(|| {
        let d = handle(data, "dataset")?;
        if out_train.is_null() || out_test.is_null() {
            return Err(null("output handle"));
        }
        let (a, b) = data::split(&d.inner, train_fraction, seed)?;
        put(out_train, FiDataset { inner: a })?;
        put(out_test, FiDataset { inner: b })
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_len(data: *const FiDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.len())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_dim(data: *const FiDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fi_dataset_free(data: *mut FiDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

#[no_mangle]
pub extern "C" fn fi_train_options_default() -> FiTrainOptions {
    let c = TrainConfig::default();
    FiTrainOptions {
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        batch_size: c.batch_size,
        hidden: c.hidden,
        lambda: c.lambda,
        seed: c.seed,
    }
}

/// Trains with Adam. `surrogate` may be null for unregularized training,
/// otherwise one of "dp", "tpr", "fpr", "eo", "cov", "mine".
///
/// # Safety
/// `data` and `options` must be valid, `surrogate` null or nul-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fi_train(
    data: *const FiDataset,
    options: *const FiTrainOptions,
    surrogate: *const c_char,
    out: *mut *mut FiSnapshot,
) -> FiStatus {
    guard(|| {
        let d = handle(data, "dataset")?;
        let o = handle(options, "options")?;
        let cfg = TrainConfig {
            learning_rate: o.learning_rate,
            epochs: o.epochs,
            batch_size: o.batch_size,
            hidden: o.hidden,
            lambda: o.lambda,
            seed: o.seed,
            ..TrainConfig::default()
        };
        let spec = if surrogate.is_null() {
            None
        } else {
            Some(surrogate_arg(surrogate, o.lambda)?)
        };
        let (snapshot, _) = training::train(&d.inner, None, &cfg, spec.as_ref())?;
        put(out, FiSnapshot { inner: snapshot })
    })
}

/// Snapshot from flat parameters. `hidden = 0` selects the affine model
/// (`w`, then `b`); otherwise the layout is `W1` row-major, `b1`, `W2`, `b2`.
///
/// # Safety
/// `values` must point to `len` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fi_snapshot_from_params(
    input_dim: usize,
    hidden: usize,
    values: *const f64,
    len: usize,
    out: *mut *mut FiSnapshot,
) -> FiStatus {
    guard(|| {
        let arch = Architecture::from_dims(input_dim, hidden);
        let params = ModelParams::from_flat(arch, slice(values, len, "values")?.to_vec())?;
        put(out, FiSnapshot { inner: ModelSnapshot::new(params, "ffi") })
    })
}

/// Parameter count, or 0 for a null handle.
///
/// # Safety
/// `snapshot` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fi_snapshot_num_params(snapshot: *const FiSnapshot) -> usize {
    snapshot.as_ref().map_or(0, |s| s.inner.num_params())
}

/// Copies the flat parameters into `out` (capacity `len`, must equal the parameter count).
///
/// # Safety
/// `snapshot` live, `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fi_snapshot_params(snapshot: *const FiSnapshot, out: *mut f64, len: usize) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        let values = s.inner.params().as_slice();
        if len != values.len() {
            return Err(Error::Shape {
                what: "parameter buffer",
                expected: values.len(),
                got: len,
            }
            .into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(values);
        Ok(())
    })
}

/// # Safety
/// `snapshot` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fi_snapshot_free(snapshot: *mut FiSnapshot) {
    if !snapshot.is_null() {
        drop(Box::from_raw(snapshot));
    }
}

/// Model output `f(x)`.
///
/// # Safety
/// `x` must point to `d` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fi_forward(snapshot: *const FiSnapshot, x: *const f64, d: usize, out: *mut f64) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        write(out, s.inner.forward(slice(x, d, "x")?)?)
    })
}

/// Gradient of `f(x)` with respect to the flat parameters.
///
/// # Safety
/// `x` must point to `d` doubles, `out` to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fi_output_gradient(
    snapshot: *const FiSnapshot,
    x: *const f64,
    d: usize,
    out: *mut f64,
    len: usize,
) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        let g = s.inner.output_gradient(slice(x, d, "x")?)?;
        if len != g.len() {
            return Err(Error::Shape {
                what: "gradient buffer",
                expected: g.len(),
                got: len,
            }
            .into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Empirical NTK between two inputs.
///
/// # Safety
/// `xi` and `xj` must each point to `d` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fi_ntk(snapshot: *const FiSnapshot, xi: *const f64, xj: *const f64, d: usize, out: *mut f64) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        write(out, influence::ntk(&s.inner, slice(xi, d, "xi")?, slice(xj, d, "xj")?)?)
    })
}

/// Aggregated fairness score and loss influence of every row of `data`.
/// The surrogate is resolved at `snapshot` over `data`; `n` in the step
/// weight is the dataset size.
///
/// # Safety
/// Handles live, `surrogate` nul-terminated, both outputs writable for `len`
/// doubles where `len` equals the dataset size.
#[no_mangle]
pub unsafe extern "C" fn fi_aggregated_scores(
    snapshot: *const FiSnapshot,
    data: *const FiDataset,
    surrogate: *const c_char,
    eta: f64,
    lambda: f64,
    out_fairness: *mut f64,
    out_loss: *mut f64,
    len: usize,
) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        let d = handle(data, "dataset")?;
        if len != d.inner.len() {
            return Err(Error::Shape {
                what: "score buffer",
                expected: d.inner.len(),
                got: len,
            }
            .into());
        }
        let spec = surrogate_arg(surrogate, lambda)?.resolve(&s.inner, &d.inner)?;
        let cfg = InfluenceConfig::new(eta, lambda, d.inner.len())?;
        let table = influence::aggregated_fairness_score(&cfg, &s.inner, &spec, &d.inner)?;
        let fair = slice_mut(out_fairness, len, "out_fairness")?;
        for (o, r) in fair.iter_mut().zip(&table.records) {
            *o = r.fairness_score;
        }
        let loss = slice_mut(out_loss, len, "out_loss")?;
        for (o, r) in loss.iter_mut().zip(&table.records) {
            *o = r.loss_score;
        }
        Ok(())
    })
}

/// Pearson correlation between predicted and actual output changes over
/// `pairs` random (train, target) pairs. `surrogate` may be null.
///
/// # Safety
/// Handles live, `surrogate` null or nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fi_verify(
    snapshot: *const FiSnapshot,
    train: *const FiDataset,
    targets: *const FiDataset,
    surrogate: *const c_char,
    eta: f64,
    lambda: f64,
    pairs: usize,
    seed: u64,
    out: *mut f64,
) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        let tr = handle(train, "train")?;
        let te = handle(targets, "targets")?;
        let spec = if surrogate.is_null() {
            None
        } else {
            Some(surrogate_arg(surrogate, lambda)?.resolve(&s.inner, &tr.inner)?)
        };
        let cfg = InfluenceConfig::new(eta, lambda, tr.inner.len())?;
        let report = influence::verify_first_order(&cfg, &s.inner, spec.as_ref(), &tr.inner, &te.inner, pairs, seed)?;
        write(out, report.correlation)
    })
}

/// Fraction of rows whose predicted label matches.
///
/// # Safety
/// Handles live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fi_accuracy(snapshot: *const FiSnapshot, data: *const FiDataset, out: *mut f64) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        let d = handle(data, "dataset")?;
        write(out, pipeline::accuracy(&s.inner, &d.inner)?)
    })
}

/// Largest acceptance-rate gap between groups.
///
/// # Safety
/// Handles live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fi_fairness_violation(snapshot: *const FiSnapshot, data: *const FiDataset, out: *mut f64) -> FiStatus {
    guard(|| {
        let s = handle(snapshot, "snapshot")?;
        let d = handle(data, "dataset")?;
        write(out, pipeline::fairness_violation(&s.inner, &d.inner)?)
    })
}
