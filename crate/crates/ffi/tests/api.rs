use std::ffi::{CStr, CString};
use std::ptr;

use regsel_ffi::*;

fn last_error() -> String {
    let p = regsel_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Two well separated classes on feature 0; feature 1 is constant.
fn toy() -> (Vec<f64>, Vec<usize>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let c = i % 2;
        x.push(if c == 0 { -2.0 } else { 2.0 } + (i as f64 * 0.37).sin() * 0.3);
        x.push(1.0);
        y.push(c);
    }
    (x, y)
}

fn dataset() -> *mut RegselDataset {
    let (x, y) = toy();
    let mut ds = ptr::null_mut();
    let st = unsafe { regsel_dataset_from_arrays(x.as_ptr(), 40, 2, y.as_ptr(), 2, &mut ds) };
    assert_eq!(st, RegselStatus::Ok);
    ds
}

#[test]
fn logreg_round_trip() {
    let (x, y) = toy();
    let ds = dataset();
    let (mut n, mut m, mut k) = (0, 0, 0);
    assert_eq!(
        unsafe { regsel_dataset_shape(ds, &mut n, &mut m, &mut k) },
        RegselStatus::Ok
    );
    assert_eq!((n, m, k), (40, 2, 2));

    let mut model = ptr::null_mut();
    let st = unsafe { regsel_logreg_fit(ds, RegselPenalty::L1, 1.0, 100, 1e-4, 3, &mut model) };
    assert_eq!(st, RegselStatus::Ok);

    let mut labels = vec![9usize; 40];
    let st = unsafe { regsel_model_predict(model, x.as_ptr(), 40, 2, labels.as_mut_ptr()) };
    assert_eq!(st, RegselStatus::Ok);
    assert_eq!(labels, y);

    let mut proba = vec![0.0; 80];
    let st = unsafe { regsel_model_predict_proba(model, x.as_ptr(), 40, 2, proba.as_mut_ptr()) };
    assert_eq!(st, RegselStatus::Ok);
    for row in proba.chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
    }

    let mut coef = vec![0.0; 4];
    let st = unsafe { regsel_model_coefficients(model, coef.as_mut_ptr(), 4) };
    assert_eq!(st, RegselStatus::Ok);
    assert!(coef[0].abs() > 0.0);
    let st = unsafe { regsel_model_coefficients(model, coef.as_mut_ptr(), 3) };
    assert_eq!(st, RegselStatus::InvalidArgument);

    let mut order = vec![0usize; 2];
    let st = unsafe {
        regsel_model_rank_features(model, RegselAggregation::MeanAbs, order.as_mut_ptr(), 2)
    };
    assert_eq!(st, RegselStatus::Ok);
    assert_eq!(order, [0, 1]);

    let mut acc = 0.0;
    let st = unsafe { regsel_accuracy(y.as_ptr(), labels.as_ptr(), 40, &mut acc) };
    assert_eq!(st, RegselStatus::Ok);
    assert_eq!(acc, 1.0);

    unsafe {
        regsel_model_free(model);
        regsel_dataset_free(ds);
    }
}

#[test]
fn forest_and_confusion() {
    let (x, y) = toy();
    let ds = dataset();
    let mut forest = ptr::null_mut();
    assert_eq!(
        unsafe { regsel_forest_fit(ds, 10, 0, 5, &mut forest) },
        RegselStatus::Ok
    );
    let mut labels = vec![0usize; 40];
    let st = unsafe { regsel_forest_predict(forest, x.as_ptr(), 40, 2, labels.as_mut_ptr()) };
    assert_eq!(st, RegselStatus::Ok);
    let mut cm = [0usize; 4];
    let st = unsafe { regsel_confusion(y.as_ptr(), labels.as_ptr(), 40, 2, cm.as_mut_ptr()) };
    assert_eq!(st, RegselStatus::Ok);
    assert_eq!(cm, [20, 0, 0, 20]);
    unsafe {
        regsel_forest_free(forest);
        regsel_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported() {
    let mut ds = ptr::null_mut();
    let st = unsafe { regsel_dataset_from_arrays(ptr::null(), 2, 2, ptr::null(), 2, &mut ds) };
    assert_eq!(st, RegselStatus::NullPointer);
    assert!(last_error().contains("x"));

    let path = CString::new("/no/such/file.csv").unwrap();
    let label = CString::new("Label").unwrap();
    let st =
        unsafe { regsel_dataset_load_csv(path.as_ptr(), label.as_ptr(), ptr::null(), 0, &mut ds) };
    assert_eq!(st, RegselStatus::IoError);
    assert!(last_error().contains("/no/such/file.csv"));

    let ds = dataset();
    let mut model = ptr::null_mut();
    let st = unsafe { regsel_logreg_fit(ds, RegselPenalty::L2, -1.0, 100, 1e-4, 0, &mut model) };
    assert_eq!(st, RegselStatus::InvalidArgument);
    assert!(model.is_null());

    let st = unsafe { regsel_model_predict(ptr::null(), ptr::null(), 0, 0, ptr::null_mut()) };
    assert_eq!(st, RegselStatus::NullPointer);

    let mut acc = 0.0;
    let st = unsafe { regsel_accuracy(ptr::null(), ptr::null(), 0, &mut acc) };
    assert_eq!(st, RegselStatus::DataError);
    unsafe {
        regsel_dataset_free(ds);
        regsel_dataset_free(ptr::null_mut());
    }
}

#[test]
fn load_csv_and_run_grid() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");
    let path = CString::new(format!("{fixtures}/flows.csv")).unwrap();
    let label = CString::new("Label").unwrap();
    let drop = [CString::new("Timestamp").unwrap()];
    let drops: Vec<_> = drop.iter().map(|c| c.as_ptr()).collect();
    let mut ds = ptr::null_mut();
    let st = unsafe {
        regsel_dataset_load_csv(path.as_ptr(), label.as_ptr(), drops.as_ptr(), 1, &mut ds)
    };
    assert_eq!(st, RegselStatus::Ok);
    let (mut n, mut m, mut k) = (0, 0, 0);
    unsafe { regsel_dataset_shape(ds, &mut n, &mut m, &mut k) };
    assert_eq!((m, k), (17, 5));
    assert!(n > 500);
    unsafe { regsel_dataset_free(ds) };

    let out = tempfile::tempdir().unwrap();
    let cfg = CString::new(format!("{fixtures}/run.json")).unwrap();
    let dir = CString::new(out.path().to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { regsel_run_grid(cfg.as_ptr(), dir.as_ptr()) },
        RegselStatus::Ok
    );
    assert!(out.path().join("accuracy_grid.csv").is_file());
    assert!(out.path().join("manifest.json").is_file());
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(regsel_version()) }
        .to_str()
        .unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
