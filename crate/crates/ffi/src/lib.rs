//! C ABI over `regsel`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns a
//! [`RegselStatus`]; on failure [`regsel_last_error_message`] describes the
//! error. Arrays are row-major `double` buffers sized by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use regsel::bench::{self, RunConfig};
use regsel::select::{rank_features, Aggregation};
use regsel::trees::{rf_fit, ForestParams, TreeParams};
use regsel::{
    ingest, metrics, Dataset, Error, ErrorKind, LogRegModel, Matrix, PenaltySpec, RandomForest,
};
use regsel::{PenaltyKind, SagaConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    SolverError = 4,
    IoError = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegselPenalty {
    L1 = 0,
    L2 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegselAggregation {
    MeanAbs = 0,
    MaxAbs = 1,
    L2Norm = 2,
    MaxSigned = 3,
}

/// Labelled feature matrix.
pub struct RegselDataset(Dataset);

/// Fitted multinomial logistic regression.
pub struct RegselModel(LogRegModel);

/// Fitted random forest.
pub struct RegselForest(RandomForest);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(RegselStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match (&e, e.kind()) {
            (Error::Io { .. }, _) => RegselStatus::IoError,
            (_, ErrorKind::Usage) => RegselStatus::InvalidArgument,
            (_, ErrorKind::Solver) => RegselStatus::SolverError,
            (_, ErrorKind::Data) => RegselStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RegselStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RegselStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RegselStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RegselStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RegselStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn matrix_arg(x: *const f64, n_rows: usize, n_cols: usize) -> Result<Matrix, Failure> {
    let len = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| invalid("matrix size overflows"))?;
    let data = slice_arg(x, len, "x")?.to_vec();
    Ok(Matrix::from_vec(n_rows, n_cols, data)?)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn regsel_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn regsel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and cleans a CSV export. `drop_columns` may be null when
/// `n_drop` is 0.
///
/// # Safety
/// String arguments must be nul-terminated; `drop_columns` must hold
/// `n_drop` valid strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn regsel_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    drop_columns: *const *const c_char,
    n_drop: usize,
    out: *mut *mut RegselDataset,
) -> RegselStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let label = str_arg(label_column, "label_column")?;
        let drops = slice_arg(drop_columns, n_drop, "drop_columns")?
            .iter()
            .map(|&p| str_arg(p, "drop_columns[i]"))
            .collect::<Result<Vec<_>, _>>()?;
        if out.is_null() {
            return Err(null("out"));
        }
        let raw = ingest::load_csv(path)?;
        let ds = ingest::clean(&raw, label, &drops)?;
        put(out, Box::into_raw(Box::new(RegselDataset(ds))), "out")
    })
}

/// Builds a dataset from a row-major `n_rows x n_cols` matrix and labels
/// in `0..n_classes`. Features and classes get generic names.
///
/// # Safety
/// `x` must hold `n_rows * n_cols` values, `y` `n_rows` labels.
#[no_mangle]
pub unsafe extern "C" fn regsel_dataset_from_arrays(
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    y: *const usize,
    n_classes: usize,
    out: *mut *mut RegselDataset,
) -> RegselStatus {
    guard(|| {
        let x = matrix_arg(x, n_rows, n_cols)?;
        let y = slice_arg(y, n_rows, "y")?.to_vec();
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = Dataset::new(
            x,
            y,
            (0..n_cols).map(|j| format!("f{j}")).collect(),
            (0..n_classes).map(|c| format!("class{c}")).collect(),
        )?;
        put(out, Box::into_raw(Box::new(RegselDataset(ds))), "out")
    })
}

/// Writes row, feature and class counts; any output pointer may be null.
///
/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn regsel_dataset_shape(
    ds: *const RegselDataset,
    n_samples: *mut usize,
    n_features: *mut usize,
    n_classes: *mut usize,
) -> RegselStatus {
    guard(|| {
        let ds = &ref_arg(ds, "ds")?.0;
        for (p, v) in [
            (n_samples, ds.n_samples()),
            (n_features, ds.n_features()),
            (n_classes, ds.n_classes()),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn regsel_dataset_free(ds: *mut RegselDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits L1- or L2-penalized multinomial logistic regression on every
/// feature with an automatic step size.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn regsel_logreg_fit(
    ds: *const RegselDataset,
    penalty: RegselPenalty,
    c: f64,
    max_epochs: usize,
    tolerance: f64,
    seed: u64,
    out: *mut *mut RegselModel,
) -> RegselStatus {
    guard(|| {
        let ds = &ref_arg(ds, "ds")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match penalty {
            RegselPenalty::L1 => PenaltyKind::L1,
            RegselPenalty::L2 => PenaltyKind::L2,
        };
        let penalty = PenaltySpec::new(kind, c)?;
        let cfg = SagaConfig {
            max_epochs,
            tolerance,
            seed,
            ..SagaConfig::default()
        };
        let all: Vec<usize> = (0..ds.n_features()).collect();
        let model = LogRegModel::fit(ds, &all, &penalty, &cfg)?;
        put(out, Box::into_raw(Box::new(RegselModel(model))), "out")
    })
}

/// Number of classes and of input features the model expects.
///
/// # Safety
/// `model` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn regsel_model_shape(
    model: *const RegselModel,
    n_classes: *mut usize,
    n_features: *mut usize,
) -> RegselStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        if !n_classes.is_null() {
            n_classes.write(m.class_names.len());
        }
        if !n_features.is_null() {
            n_features.write(m.source_width);
        }
        Ok(())
    })
}

/// Predicted labels for `n_rows` rows into `out_labels`.
///
/// # Safety
/// `x` must hold `n_rows * n_cols` values and `out_labels` `n_rows` slots.
#[no_mangle]
pub unsafe extern "C" fn regsel_model_predict(
    model: *const RegselModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out_labels: *mut usize,
) -> RegselStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let x = matrix_arg(x, n_rows, n_cols)?;
        let labels = m.predict(&x)?;
        out_slice(out_labels, n_rows, "out_labels")?.copy_from_slice(&labels);
        Ok(())
    })
}

/// Class probabilities, `n_rows x n_classes`, into `out`.
///
/// # Safety
/// `x` must hold `n_rows * n_cols` values and `out` `n_rows * n_classes`.
#[no_mangle]
pub unsafe extern "C" fn regsel_model_predict_proba(
    model: *const RegselModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> RegselStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let x = matrix_arg(x, n_rows, n_cols)?;
        let p = m.predict_proba(&x)?;
        out_slice(out, p.as_slice().len(), "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Coefficients, `n_classes x n_features`, into `out` of length `len`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn regsel_model_coefficients(
    model: *const RegselModel,
    out: *mut f64,
    len: usize,
) -> RegselStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let w = m.weights.coefficients.as_slice();
        if len != w.len() {
            return Err(invalid(format!("need {} slots, got {len}", w.len())));
        }
        out_slice(out, len, "out")?.copy_from_slice(w);
        Ok(())
    })
}

/// Feature indices ordered from most to least important.
///
/// # Safety
/// `out_order` must hold `len` slots, `len` equal to the feature count.
#[no_mangle]
pub unsafe extern "C" fn regsel_model_rank_features(
    model: *const RegselModel,
    aggregation: RegselAggregation,
    out_order: *mut usize,
    len: usize,
) -> RegselStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let agg = match aggregation {
            RegselAggregation::MeanAbs => Aggregation::MeanAbs,
            RegselAggregation::MaxAbs => Aggregation::MaxAbs,
            RegselAggregation::L2Norm => Aggregation::L2Norm,
            RegselAggregation::MaxSigned => Aggregation::MaxSigned,
        };
        let order = rank_features(&m.weights.coefficients, agg, m.penalty.kind)?.order();
        if len != order.len() {
            return Err(invalid(format!("need {} slots, got {len}", order.len())));
        }
        out_slice(out_order, len, "out_order")?.copy_from_slice(&order);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn regsel_model_free(model: *mut RegselModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fits a bootstrap random forest of Gini trees. `max_depth` 0 means
/// unlimited.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn regsel_forest_fit(
    ds: *const RegselDataset,
    n_trees: usize,
    max_depth: usize,
    seed: u64,
    out: *mut *mut RegselForest,
) -> RegselStatus {
    guard(|| {
        let ds = &ref_arg(ds, "ds")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = ForestParams {
            n_trees,
            tree: TreeParams {
                max_depth: (max_depth > 0).then_some(max_depth),
                ..TreeParams::default()
            },
            seed,
            ..ForestParams::default()
        };
        let forest = rf_fit(ds, &params)?;
        put(out, Box::into_raw(Box::new(RegselForest(forest))), "out")
    })
}

/// # Safety
/// As for [`regsel_model_predict`].
#[no_mangle]
pub unsafe extern "C" fn regsel_forest_predict(
    forest: *const RegselForest,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out_labels: *mut usize,
) -> RegselStatus {
    guard(|| {
        let f = &ref_arg(forest, "forest")?.0;
        let x = matrix_arg(x, n_rows, n_cols)?;
        let labels = f.predict(&x)?;
        out_slice(out_labels, n_rows, "out_labels")?.copy_from_slice(&labels);
        Ok(())
    })
}

/// # Safety
/// `forest` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn regsel_forest_free(forest: *mut RegselForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

/// Confusion counts, `n_classes x n_classes` with actual classes as rows.
///
/// # Safety
/// Label arrays must hold `n` values, `out` `n_classes * n_classes`.
#[no_mangle]
pub unsafe extern "C" fn regsel_confusion(
    y_true: *const usize,
    y_pred: *const usize,
    n: usize,
    n_classes: usize,
    out: *mut usize,
) -> RegselStatus {
    guard(|| {
        let t = slice_arg(y_true, n, "y_true")?;
        let p = slice_arg(y_pred, n, "y_pred")?;
        let cm = metrics::confusion(t, p, n_classes)?;
        let dst = out_slice(out, n_classes * n_classes, "out")?;
        for (d, s) in dst.iter_mut().zip(cm.counts.iter().flatten()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Fraction of matching labels; fails on empty input.
///
/// # Safety
/// Label arrays must hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn regsel_accuracy(
    y_true: *const usize,
    y_pred: *const usize,
    n: usize,
    out: *mut f64,
) -> RegselStatus {
    guard(|| {
        let t = slice_arg(y_true, n, "y_true")?;
        let p = slice_arg(y_pred, n, "y_pred")?;
        let k = t.iter().chain(p).max().map_or(1, |m| m + 1);
        let acc = metrics::accuracy(&metrics::confusion(t, p, k)?)?;
        put(out, acc, "out")
    })
}

/// Runs the full pipeline described by a JSON config and writes its
/// reports. `output_dir` may be null to use the config's own.
///
/// # Safety
/// String arguments must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn regsel_run_grid(
    config_path: *const c_char,
    output_dir: *const c_char,
) -> RegselStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let mut cfg = RunConfig::load(path.as_ref())?;
        if !output_dir.is_null() {
            cfg.output_dir = PathBuf::from(str_arg(output_dir, "output_dir")?);
        }
        bench::run_grid(&cfg)?;
        Ok(())
    })
}
