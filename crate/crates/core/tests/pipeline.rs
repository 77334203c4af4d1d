use std::path::{Path, PathBuf};

use regsel::bench::{
    self, BaselineReference, ExperimentSelection, ExperimentSpec, FeatureSetKind, GridResult,
    ModelKind, RunConfig,
};
use regsel::select::RankingSource;
use regsel::synthetic::{self, SyntheticSpec};
use regsel::{ingest, Error};

fn fixture_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/run.json");
    RunConfig::load(&path).unwrap()
}

fn run(cfg: &RunConfig) -> GridResult {
    bench::run_pipeline(cfg).unwrap().0
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(
        r.records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect()),
    );
    rows
}

#[test]
fn full_grid_has_every_cell() {
    let g = run(&fixture_config());
    assert_eq!(g.rows.len(), 24);
    for spec in ExperimentSpec::named() {
        assert!(g.row(spec).is_some(), "{spec} missing");
    }
    for row in &g.rows {
        let acc = row.outcome.as_ref().unwrap().accuracy;
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn feature_sets_follow_rankings() {
    let g = run(&fixture_config());
    let a = g.analysis.as_ref().unwrap();
    let m = g.data.as_ref().unwrap().feature_names.len();
    let set = |model, fs| {
        let mut f = g
            .row(ExperimentSpec::new(model, fs))
            .unwrap()
            .features
            .clone();
        f.sort_unstable();
        f
    };
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    assert_eq!(
        set(ModelKind::Rf, FeatureSetKind::A),
        sorted(a.ranking_l1.top(a.max_l1))
    );
    assert_eq!(
        set(ModelKind::Rf, FeatureSetKind::B),
        sorted(a.ranking_l2.top(a.max_l2))
    );
    assert_eq!(
        set(ModelKind::Dt, FeatureSetKind::C),
        sorted(a.common.order())
    );
    assert!(a.common.len() <= a.max_l1.min(a.max_l2));
    let top = a.common.len().min(m);
    assert_eq!(set(ModelKind::LrL2, FeatureSetKind::TopL1).len(), top);
    assert_eq!(set(ModelKind::LrL2, FeatureSetKind::TopL2).len(), top);
    assert_eq!(set(ModelKind::LrL1, FeatureSetKind::All).len(), m);
}

#[test]
fn curve_points_match_grid_cells() {
    let g = run(&fixture_config());
    let a = g.analysis.as_ref().unwrap();
    let m = g.data.as_ref().unwrap().feature_names.len();
    let l1 = a.curve(RankingSource::L1, "lr-l1").unwrap();
    assert_eq!(
        l1.at(m),
        g.accuracy(ExperimentSpec::new(ModelKind::LrL1, FeatureSetKind::All))
    );
    assert_eq!(
        l1.at(a.max_l1),
        g.accuracy(ExperimentSpec::new(ModelKind::LrL1, FeatureSetKind::A))
    );
    let l2 = a.curve(RankingSource::L2, "lr-l2").unwrap();
    assert_eq!(
        l2.at(a.max_l2),
        g.accuracy(ExperimentSpec::new(ModelKind::LrL2, FeatureSetKind::B))
    );
    assert_eq!(a.full_accuracy_l1, l1.at(m).unwrap());
    assert!(l1.at(a.max_l1).unwrap() >= a.baseline);
}

#[test]
fn curve_max_reference_never_lowers_the_baseline() {
    let mut cfg = fixture_config();
    cfg.experiments = ExperimentSelection::Preset("none".into());
    let full = run(&cfg).analysis.unwrap();
    cfg.baseline_reference = BaselineReference::CurveMax;
    let max = run(&cfg).analysis.unwrap();
    assert!(max.baseline >= full.baseline);
    assert!(max.max_l1 >= full.max_l1);
}

#[test]
fn emitted_accuracy_matches_emitted_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config();
    cfg.output_dir = dir.path().to_path_buf();
    let (g, _) = bench::run_grid(&cfg).unwrap();
    let grid = read_csv(&dir.path().join("accuracy_grid.csv"));
    let n_common = g.analysis.as_ref().unwrap().common.len();
    assert_eq!(
        grid[0],
        [
            "model",
            "all",
            "A",
            "B",
            "C",
            &format!("top{n_common}-L1"),
            &format!("top{n_common}-L2")
        ]
    );
    assert_eq!(grid.len(), 5);
    for (r, model) in grid[1..].iter().zip(ModelKind::ALL) {
        assert_eq!(r[0], model.label());
        for (cell, set) in r[1..].iter().zip(FeatureSetKind::ALL) {
            let slug = ExperimentSpec::new(model, set).slug();
            let cm = read_csv(&dir.path().join(format!("confusion_{slug}.csv")));
            let counts: Vec<Vec<usize>> = cm[1..]
                .iter()
                .map(|row| row[1..].iter().map(|v| v.parse().unwrap()).collect())
                .collect();
            let total: usize = counts.iter().flatten().sum();
            let trace: usize = (0..counts.len()).map(|i| counts[i][i]).sum();
            assert_eq!(
                cell.parse::<f64>().unwrap(),
                trace as f64 / total as f64,
                "{slug}"
            );
        }
    }
    let metrics = read_csv(&dir.path().join("metrics.csv"));
    assert_eq!(metrics.len(), 25);
    let focus = read_csv(&dir.path().join("recall_focus.csv"));
    assert_eq!(focus.len(), 1 + 4 * 2);
    let sub = read_csv(&dir.path().join("submatrix_rf-C.csv"));
    assert_eq!(sub[0][1..], ["DoS attacks-SlowHTTPTest", "FTP-BruteForce"]);
    for name in ["curves_l1.csv", "curves_l2.csv", "curves_common.csv"] {
        let c = read_csv(&dir.path().join(name));
        assert_eq!(c[0], ["k", "feature_index", "feature", "lr_l1", "lr_l2"]);
    }
    assert_eq!(
        read_csv(&dir.path().join("curves_common.csv")).len(),
        n_common + 1
    );
}

#[test]
fn empty_spec_list_keeps_rankings_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config();
    cfg.experiments = ExperimentSelection::List(Vec::new());
    cfg.output_dir = dir.path().to_path_buf();
    let (g, files) = bench::run_grid(&cfg).unwrap();
    assert!(g.rows.is_empty());
    assert!(g.analysis.is_some());
    assert!(files.contains(&"ranking_l1.csv".to_string()));
    assert!(files.contains(&"curves_l2.csv".to_string()));
    assert!(!files.contains(&"accuracy_grid.csv".to_string()));
}

#[test]
fn report_from_cache_reproduces_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config();
    cfg.output_dir = dir.path().join("a");
    bench::run_grid(&cfg).unwrap();
    let cached = bench::load_result(&cfg.output_dir.join("grid_result.json")).unwrap();
    let b = dir.path().join("b");
    bench::emit_reports(&cached, None, &b).unwrap();
    for entry in std::fs::read_dir(&b).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(b.join(&name)).unwrap(),
            std::fs::read(cfg.output_dir.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn solver_failure_leaves_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config();
    cfg.solver.step_size = regsel::StepSize::Fixed(1e200);
    cfg.output_dir = dir.path().to_path_buf();
    let err = bench::run_grid(&cfg).unwrap_err();
    assert_eq!(err.kind(), regsel::ErrorKind::Solver);
    let marker: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("FAILED.json")).unwrap())
            .unwrap();
    assert_eq!(marker["stage"], "rank");
}

#[test]
fn missing_dataset_names_the_path() {
    let mut cfg = fixture_config();
    cfg.dataset_paths
        .push(PathBuf::from("/missing/flows-2.csv"));
    let err = bench::run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/missing/flows-2.csv"));
}

#[test]
fn problematic_toggle_changes_the_class_set() {
    let mut cfg = fixture_config();
    cfg.experiments = ExperimentSelection::Preset("none".into());
    cfg.include_problematic = false;
    let excluded = bench::prepare(&cfg).unwrap();
    cfg.include_problematic = true;
    let included = bench::prepare(&cfg).unwrap();
    assert_eq!(excluded.sample.n_classes() + 1, included.sample.n_classes());
    assert!(excluded
        .sample
        .class_index("DoS attacks-SlowHTTPTest")
        .is_none());
    assert_eq!(
        included.sample.n_samples() - excluded.sample.n_samples(),
        100
    );
}

#[test]
fn informative_features_lead_both_rankings() {
    let spec = SyntheticSpec {
        n_informative: 3,
        n_noise: 7,
        n_samples: 300,
        ..SyntheticSpec::default()
    };
    let (data, informative) = synthetic::informative_mix(&spec);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mix.csv");
    data.write_csv(std::fs::File::create(&csv).unwrap(), "Label")
        .unwrap();
    let cfg = RunConfig {
        dataset_paths: vec![csv],
        drop_columns: Vec::new(),
        seed: 3,
        experiments: ExperimentSelection::Preset("named".into()),
        ..RunConfig::default()
    };
    let g = run(&cfg);
    let a = g.analysis.as_ref().unwrap();
    let mut expected = informative.clone();
    expected.sort_unstable();
    for ranking in [&a.ranking_l1, &a.ranking_l2] {
        let mut top = ranking.top(3);
        top.sort_unstable();
        assert_eq!(top, expected);
    }
    for entry in &a.common.entries {
        assert!(informative.contains(&entry.feature));
    }
    assert_eq!(g.rows.len(), 12);
    let prepared = bench::prepare(&cfg).unwrap();
    let reloaded = ingest::load_csv(&cfg.dataset_paths[0]).unwrap();
    assert_eq!(reloaded.rows.len(), prepared.sample.n_samples());
}
