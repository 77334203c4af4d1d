//! Config-driven experiment runner.
//!
//! A run ingests and samples the data, fits full L1 and L2 models, ranks
//! features by both, traces accuracy-vs-top-k curves, derives the `MAX_L1` /
//! `MAX_L2` cut-offs and the common feature set, and finally evaluates every
//! requested (model, feature set) pair. [`emit_reports`] writes the results
//! as CSV/JSON files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::{self, Dataset, SampleManifest, SamplingPlan, ScalerParams, SplitPair};
use crate::linear::LogRegModel;
use crate::metrics::{self, csv_field, ConfusionMatrix, Report};
use crate::optim::{PenaltyKind, PenaltySpec, SagaConfig};
use crate::select::{
    self, accuracy_curve, common_features, find_max_k, rank_features, rank_statistics,
    AccuracyCurve, Aggregation, CommonFeatureSet, FeatureRanking, ModelFamily, RankStatistics,
    RankingSource,
};
use crate::trees::{ForestParams, TreeParams};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub per_class_cap: usize,
    pub excluded_classes: Vec<String>,
    pub problematic_class: Option<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            per_class_cap: 5000,
            excluded_classes: Vec::new(),
            problematic_class: None,
        }
    }
}

/// Every knob of a run. Stage seeds are derived from `seed`; the `seed`
/// fields inside `solver`, `tree` and `forest` are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_paths: Vec<PathBuf>,
    pub label_column: String,
    pub drop_columns: Vec<String>,
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub include_problematic: bool,
    pub split_ratio: f64,
    pub standardize: bool,
    /// Inverse regularization strength for both penalties.
    pub c: f64,
    pub solver: SagaConfig,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub aggregation: Aggregation,
    /// `MAX_L1` and `MAX_L2` target this fraction of the reference accuracy.
    pub baseline_fraction: f64,
    pub baseline_reference: BaselineReference,
    /// Class confused with the problematic one; reported alongside it.
    pub confounding_class: Option<String>,
    pub experiments: ExperimentSelection,
    /// Where reports go. Not serialized, so it never affects the config
    /// hash or the recorded results.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_paths: Vec::new(),
            label_column: "Label".into(),
            drop_columns: vec!["Timestamp".into()],
            seed: 0,
            sampling: SamplingConfig::default(),
            include_problematic: false,
            split_ratio: 0.7,
            standardize: true,
            c: 0.5,
            solver: SagaConfig::default(),
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            aggregation: Aggregation::MeanAbs,
            baseline_fraction: 0.95,
            baseline_reference: BaselineReference::AllFeatures,
            confounding_class: None,
            experiments: ExperimentSelection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative dataset and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for p in &mut cfg.dataset_paths {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_paths.is_empty() {
            return Err(Error::Config("dataset_paths is empty".into()));
        }
        if !(self.baseline_fraction > 0.0 && self.baseline_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "baseline_fraction {} not in (0, 1]",
                self.baseline_fraction
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "split_ratio {} not in (0, 1]",
                self.split_ratio
            )));
        }
        if self.sampling.per_class_cap == 0 {
            return Err(Error::Config("per_class_cap must be >= 1".into()));
        }
        PenaltySpec::l1(self.c).map_err(|e| Error::Config(e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for p in &self.dataset_paths {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::derive(self.seed)
    }

    fn sampling_plan(&self, seeds: &StageSeeds) -> SamplingPlan {
        SamplingPlan {
            per_class_cap: self.sampling.per_class_cap,
            excluded_classes: self.sampling.excluded_classes.clone(),
            problematic_class: self.sampling.problematic_class.clone(),
            include_problematic: self.include_problematic,
            seed: seeds.sample,
        }
    }

    pub fn family(&self, model: ModelKind, seeds: &StageSeeds) -> Result<ModelFamily> {
        let logreg = |kind, seed| -> Result<ModelFamily> {
            Ok(ModelFamily::LogReg {
                penalty: PenaltySpec::new(kind, self.c)?,
                solver: SagaConfig {
                    seed,
                    ..self.solver
                },
            })
        };
        match model {
            ModelKind::LrL1 => logreg(PenaltyKind::L1, seeds.lr_l1),
            ModelKind::LrL2 => logreg(PenaltyKind::L2, seeds.lr_l2),
            ModelKind::Dt => Ok(ModelFamily::Tree(TreeParams {
                seed: seeds.dt,
                ..self.tree.clone()
            })),
            ModelKind::Rf => Ok(ModelFamily::Forest(ForestParams {
                seed: seeds.rf,
                ..self.forest.clone()
            })),
        }
    }

    /// Problematic and confounding classes, when configured.
    fn focus_class_names(&self) -> Vec<String> {
        self.sampling
            .problematic_class
            .iter()
            .chain(self.confounding_class.iter())
            .cloned()
            .collect()
    }
}

/// Accuracy the baseline fraction is taken of.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineReference {
    /// LR+L1 accuracy with every feature.
    #[default]
    AllFeatures,
    /// Highest point of the LR+L1 curve over the L1 ranking.
    CurveMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub sample: u64,
    pub split: u64,
    pub lr_l1: u64,
    pub lr_l2: u64,
    pub dt: u64,
    pub rf: u64,
}

impl StageSeeds {
    pub fn derive(master: u64) -> Self {
        StageSeeds {
            master,
            sample: seed::derive(master, "sample"),
            split: seed::derive(master, "split"),
            lr_l1: seed::derive(master, "lr-l1"),
            lr_l2: seed::derive(master, "lr-l2"),
            dt: seed::derive(master, "dt"),
            rf: seed::derive(master, "rf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lr-l1")]
    LrL1,
    #[serde(rename = "lr-l2")]
    LrL2,
    #[serde(rename = "rf")]
    Rf,
    #[serde(rename = "dt")]
    Dt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LrL1,
        ModelKind::LrL2,
        ModelKind::Rf,
        ModelKind::Dt,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::LrL1 => "LR+L1",
            ModelKind::LrL2 => "LR+L2",
            ModelKind::Rf => "RF",
            ModelKind::Dt => "DT",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::LrL1 => "lr-l1",
            ModelKind::LrL2 => "lr-l2",
            ModelKind::Rf => "rf",
            ModelKind::Dt => "dt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.slug() == s)
    }
}

/// Feature sets of the grid. `A`, `B` and `C` are the top-`MAX_L1` L1
/// features, the top-`MAX_L2` L2 features and the common set; the `Top*`
/// sets take as many top-ranked features as the common set holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSetKind {
    #[serde(rename = "all")]
    All,
    A,
    B,
    C,
    #[serde(rename = "top-l1")]
    TopL1,
    #[serde(rename = "top-l2")]
    TopL2,
}

impl FeatureSetKind {
    pub const ALL: [FeatureSetKind; 6] = [
        FeatureSetKind::All,
        FeatureSetKind::A,
        FeatureSetKind::B,
        FeatureSetKind::C,
        FeatureSetKind::TopL1,
        FeatureSetKind::TopL2,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            FeatureSetKind::All => "all",
            FeatureSetKind::A => "A",
            FeatureSetKind::B => "B",
            FeatureSetKind::C => "C",
            FeatureSetKind::TopL1 => "top-l1",
            FeatureSetKind::TopL2 => "top-l2",
        }
    }

    /// Column header; `n` is the common-set size.
    pub fn column(self, n: usize) -> String {
        match self {
            FeatureSetKind::TopL1 => format!("top{n}-L1"),
            FeatureSetKind::TopL2 => format!("top{n}-L2"),
            other => other.slug().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelKind,
    pub feature_set: FeatureSetKind,
}

impl ExperimentSpec {
    pub fn new(model: ModelKind, feature_set: FeatureSetKind) -> Self {
        ExperimentSpec { model, feature_set }
    }

    /// `LR+L1-A` style name.
    pub fn name(&self) -> String {
        format!("{}-{}", self.model.label(), self.feature_set.slug())
    }

    pub fn slug(&self) -> String {
        format!("{}-{}", self.model.slug(), self.feature_set.slug())
    }

    /// The twelve named experiments: every model on sets A, B and C.
    pub fn named() -> Vec<ExperimentSpec> {
        ModelKind::ALL
            .into_iter()
            .flat_map(|m| {
                [FeatureSetKind::A, FeatureSetKind::B, FeatureSetKind::C]
                    .map(|f| ExperimentSpec::new(m, f))
            })
            .collect()
    }

    /// Every model on every feature set.
    pub fn full_grid() -> Vec<ExperimentSpec> {
        ModelKind::ALL
            .into_iter()
            .flat_map(|m| FeatureSetKind::ALL.map(|f| ExperimentSpec::new(m, f)))
            .collect()
    }
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentSelection {
    /// `"all"` (24 cells), `"named"` (12) or `"none"`.
    Preset(String),
    List(Vec<ExperimentSpec>),
}

impl Default for ExperimentSelection {
    fn default() -> Self {
        ExperimentSelection::Preset("all".into())
    }
}

impl ExperimentSelection {
    pub fn specs(&self) -> Result<Vec<ExperimentSpec>> {
        match self {
            ExperimentSelection::Preset(p) => match p.as_str() {
                "all" => Ok(ExperimentSpec::full_grid()),
                "named" => Ok(ExperimentSpec::named()),
                "none" => Ok(Vec::new()),
                other => Err(Error::Config(format!(
                    "experiments must be \"all\", \"named\", \"none\" or a list, got {other:?}"
                ))),
            },
            ExperimentSelection::List(l) => Ok(l.clone()),
        }
    }
}

/// Cleaned, sampled and split data ready for modelling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source_rows: usize,
    pub plan: SamplingPlan,
    pub sample: Dataset,
    pub manifest: SampleManifest,
    /// Standardized when the config asks for it.
    pub split: SplitPair,
    pub scaler: Option<ScalerParams>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let seeds = cfg.seeds();
    let parts = cfg
        .dataset_paths
        .iter()
        .map(|p| {
            let raw = ingest::load_csv(p)?;
            ingest::clean(&raw, &cfg.label_column, &cfg.drop_columns).map_err(|e| match e {
                Error::Io { .. } => e,
                other => Error::Csv(format!("{}: {other}", p.display())),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("ingest"))?;
    let source = Dataset::merge(parts).map_err(|e| e.in_stage("ingest"))?;
    let plan = cfg.sampling_plan(&seeds);
    let sample = ingest::sample_per_class(&source, &plan).map_err(|e| e.in_stage("sample"))?;
    let manifest = SampleManifest::new(&plan, &source, &sample);
    let split =
        ingest::split(&sample, cfg.split_ratio, seeds.split).map_err(|e| e.in_stage("split"))?;
    let (split, scaler) = if cfg.standardize {
        let (s, p) = ingest::standardize(&split).map_err(|e| e.in_stage("scale"))?;
        (s, Some(p))
    } else {
        (split, None)
    };
    Ok(Prepared {
        source_rows: source.n_samples(),
        plan,
        sample,
        manifest,
        split,
        scaler,
    })
}

/// Full-feature L1 and L2 models with the rankings derived from them.
#[derive(Debug, Clone)]
pub struct Rankings {
    pub model_l1: LogRegModel,
    pub model_l2: LogRegModel,
    pub ranking_l1: FeatureRanking,
    pub ranking_l2: FeatureRanking,
}

fn fit_full(split: &SplitPair, family: &ModelFamily) -> Result<LogRegModel> {
    let m = split.train.n_features();
    let ModelFamily::LogReg { penalty, solver } = family.with_seed_offset(m) else {
        unreachable!("full fits are logistic regressions")
    };
    let all: Vec<usize> = (0..m).collect();
    LogRegModel::fit(&split.train, &all, &penalty, &solver)
}

pub fn fit_rankings(cfg: &RunConfig, prepared: &Prepared) -> Result<Rankings> {
    let seeds = cfg.seeds();
    let fam_l1 = cfg.family(ModelKind::LrL1, &seeds)?;
    let fam_l2 = cfg.family(ModelKind::LrL2, &seeds)?;
    let (m1, m2) = rayon::join(
        || fit_full(&prepared.split, &fam_l1),
        || fit_full(&prepared.split, &fam_l2),
    );
    let attach = |m: LogRegModel| match &prepared.scaler {
        Some(s) => m.with_scaler(s.clone()),
        None => Ok(m),
    };
    let model_l1 = attach(m1?)?;
    let model_l2 = attach(m2?)?;
    let ranking_l1 = rank_features(
        &model_l1.weights.coefficients,
        cfg.aggregation,
        PenaltyKind::L1,
    )?;
    let ranking_l2 = rank_features(
        &model_l2.weights.coefficients,
        cfg.aggregation,
        PenaltyKind::L2,
    )?;
    Ok(Rankings {
        model_l1,
        model_l2,
        ranking_l1,
        ranking_l2,
    })
}

/// Everything derived from the rankings before the grid runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAnalysis {
    pub ranking_l1: FeatureRanking,
    pub ranking_l2: FeatureRanking,
    /// LR+L1 and LR+L2 curves over the L1 order, the L2 order and the
    /// common set, in that order.
    pub curves: Vec<AccuracyCurve>,
    pub full_accuracy_l1: f64,
    pub baseline: f64,
    pub max_l1: usize,
    /// False when no `k` reached the baseline and `max_l1` fell back to `m`.
    pub max_l1_reached: bool,
    pub max_l2: usize,
    pub max_l2_reached: bool,
    pub common: CommonFeatureSet,
    pub rank_stats: Option<RankStatistics>,
}

impl SelectionAnalysis {
    pub fn curve(&self, source: RankingSource, family: &str) -> Option<&AccuracyCurve> {
        self.curves
            .iter()
            .find(|c| c.ranking_used == source && c.model_family == family)
    }

    pub fn feature_set(&self, kind: FeatureSetKind, m: usize) -> Vec<usize> {
        let top = self.common.len().min(m);
        match kind {
            FeatureSetKind::All => (0..m).collect(),
            FeatureSetKind::A => self.ranking_l1.top(self.max_l1),
            FeatureSetKind::B => self.ranking_l2.top(self.max_l2),
            FeatureSetKind::C => self.common.order(),
            FeatureSetKind::TopL1 => self.ranking_l1.top(top),
            FeatureSetKind::TopL2 => self.ranking_l2.top(top),
        }
    }
}

pub fn analyze(
    cfg: &RunConfig,
    split: &SplitPair,
    rankings: &Rankings,
) -> Result<SelectionAnalysis> {
    let seeds = cfg.seeds();
    let m = split.train.n_features();
    let fam_l1 = cfg.family(ModelKind::LrL1, &seeds)?;
    let fam_l2 = cfg.family(ModelKind::LrL2, &seeds)?;
    let all_k: Vec<usize> = (1..=m).collect();
    let order_l1 = rankings.ranking_l1.order();
    let order_l2 = rankings.ranking_l2.order();

    let jobs = [
        (&order_l1, &fam_l1, RankingSource::L1),
        (&order_l1, &fam_l2, RankingSource::L1),
        (&order_l2, &fam_l1, RankingSource::L2),
        (&order_l2, &fam_l2, RankingSource::L2),
    ];
    let mut curves = jobs
        .par_iter()
        .map(|(order, fam, src)| accuracy_curve(split, order, fam, &all_k, *src))
        .collect::<Result<Vec<_>>>()?;

    let full_accuracy_l1 = curves[0].at(m).expect("curve covers k = m");
    let reference = match cfg.baseline_reference {
        BaselineReference::AllFeatures => full_accuracy_l1,
        BaselineReference::CurveMax => curves[0].max_accuracy().expect("curve is non-empty"),
    };
    let baseline = cfg.baseline_fraction * reference;
    let (max_l1, max_l1_reached) = match find_max_k(&curves[0], baseline) {
        Some(k) => (k, true),
        None => (m, false),
    };
    let (max_l2, max_l2_reached) = match find_max_k(&curves[3], baseline) {
        Some(k) => (k, true),
        None => (m, false),
    };
    if !max_l2_reached {
        log::warn!("no L2-ranked prefix reached the baseline {baseline}; MAX_L2 falls back to {m}");
    }
    let common = common_features(&rankings.ranking_l1, max_l1, &rankings.ranking_l2, max_l2)?;
    let rank_stats = rank_statistics(&common).ok();
    if !common.is_empty() {
        let order = common.order();
        let ks: Vec<usize> = (1..=order.len()).collect();
        let (a, b) = rayon::join(
            || accuracy_curve(split, &order, &fam_l1, &ks, RankingSource::Common),
            || accuracy_curve(split, &order, &fam_l2, &ks, RankingSource::Common),
        );
        curves.push(a?);
        curves.push(b?);
    }
    Ok(SelectionAnalysis {
        ranking_l1: rankings.ranking_l1.clone(),
        ranking_l2: rankings.ranking_l2.clone(),
        curves,
        full_accuracy_l1,
        baseline,
        max_l1,
        max_l1_reached,
        max_l2,
        max_l2_reached,
        common,
        rank_stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub accuracy: f64,
    pub report: Report,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub spec: ExperimentSpec,
    pub name: String,
    pub features: Vec<usize>,
    pub outcome: Option<Outcome>,
    /// Reason the cell was not evaluated.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub source_rows: usize,
    pub sample_rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_class_counts: Vec<usize>,
    pub test_class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: StageSeeds,
    pub data: Option<DataSummary>,
    pub analysis: Option<SelectionAnalysis>,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn empty(config: RunConfig) -> Self {
        GridResult {
            config_hash: config.hash(),
            seeds: config.seeds(),
            config,
            data: None,
            analysis: None,
            rows: Vec::new(),
        }
    }

    pub fn row(&self, spec: ExperimentSpec) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.spec == spec)
    }

    pub fn accuracy(&self, spec: ExperimentSpec) -> Option<f64> {
        self.row(spec)?.outcome.as_ref().map(|o| o.accuracy)
    }

    /// Indices of the configured problematic and confounding classes that
    /// are present in the data.
    pub fn focus_classes(&self) -> Vec<usize> {
        let Some(data) = &self.data else {
            return Vec::new();
        };
        self.config
            .focus_class_names()
            .iter()
            .filter_map(|n| data.class_names.iter().position(|c| c == n))
            .collect()
    }
}

/// Wall-clock seconds per stage and per grid cell. Kept apart from
/// [`GridResult`] so that results are reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    pub cells: BTreeMap<String, f64>,
}

pub fn run_specs(
    cfg: &RunConfig,
    split: &SplitPair,
    analysis: &SelectionAnalysis,
    specs: &[ExperimentSpec],
    timings: &mut Timings,
) -> Result<Vec<GridRow>> {
    let seeds = cfg.seeds();
    let m = split.train.n_features();
    let results = specs
        .par_iter()
        .map(|&spec| {
            let start = Instant::now();
            let features = analysis.feature_set(spec.feature_set, m);
            let row = if features.is_empty() {
                GridRow {
                    spec,
                    name: spec.name(),
                    features,
                    outcome: None,
                    skipped: Some("empty feature set".into()),
                }
            } else {
                let family = cfg.family(spec.model, &seeds)?;
                let eval = select::evaluate(split, &features, &family)?;
                let report = metrics::prf1(&eval.confusion)?;
                GridRow {
                    spec,
                    name: spec.name(),
                    features: eval.features,
                    outcome: Some(Outcome {
                        accuracy: eval.accuracy,
                        report,
                        confusion: eval.confusion,
                    }),
                    skipped: None,
                }
            };
            Ok((row, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(results.len());
    for (row, secs) in results {
        timings.cells.insert(row.name.clone(), secs);
        rows.push(row);
    }
    Ok(rows)
}

fn timed<T>(
    timings: &mut Timings,
    stage: &'static str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    timings
        .stages
        .insert(stage.to_string(), start.elapsed().as_secs_f64());
    out
}

/// Runs every stage in order and returns the results with their timings.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(GridResult, Timings)> {
    cfg.validate()?;
    let specs = cfg.experiments.specs()?;
    let mut timings = Timings::default();
    let mut result = GridResult::empty(cfg.clone());

    let prepared = timed(&mut timings, "prepare", || prepare(cfg))?;
    let split = &prepared.split;
    result.data = Some(DataSummary {
        feature_names: split.train.feature_names.clone(),
        class_names: split.train.class_names.clone(),
        source_rows: prepared.source_rows,
        sample_rows: prepared.sample.n_samples(),
        train_rows: split.train.n_samples(),
        test_rows: split.test.n_samples(),
        train_class_counts: split.train.class_counts(),
        test_class_counts: split.test.class_counts(),
    });
    if split.test.is_empty() {
        return Err(Error::Empty("test split is empty".into()).in_stage("split"));
    }
    let rankings = timed(&mut timings, "rank", || fit_rankings(cfg, &prepared))?;
    let analysis = timed(&mut timings, "curves", || analyze(cfg, split, &rankings))?;
    let rows = timed(&mut timings, "grid", || {
        let mut t = Timings::default();
        let rows = run_specs(cfg, split, &analysis, &specs, &mut t);
        Ok((rows?, t))
    })?;
    timings.cells = rows.1.cells;
    result.rows = rows.0;
    result.analysis = Some(analysis);
    Ok((result, timings))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: &'a str,
    seeds: &'a StageSeeds,
    config: &'a RunConfig,
    data: Option<&'a DataSummary>,
    files: Vec<String>,
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(name.to_string());
    Ok(())
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the result files into `dir` and returns their names. Timings,
/// when given, go to `timings.json`, the only file that differs between
/// identical runs.
pub fn emit_reports(
    result: &GridResult,
    timings: Option<&Timings>,
    dir: &Path,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let names: &[String] = result
        .data
        .as_ref()
        .map_or(&[], |d| d.feature_names.as_slice());
    let empty = result.data.is_none() && result.analysis.is_none() && result.rows.is_empty();
    if !empty {
        write(dir, "grid_result.json", &json(result)?, &mut files)?;
    }

    let common_len = result.analysis.as_ref().map_or(0, |a| a.common.len());
    if let Some(a) = &result.analysis {
        write(
            dir,
            "ranking_l1.csv",
            &a.ranking_l1.to_csv(names),
            &mut files,
        )?;
        write(
            dir,
            "ranking_l2.csv",
            &a.ranking_l2.to_csv(names),
            &mut files,
        )?;
        write(
            dir,
            "common_features.csv",
            &a.common.to_csv(names),
            &mut files,
        )?;
        for (src, order, file) in [
            (RankingSource::L1, a.ranking_l1.order(), "curves_l1.csv"),
            (RankingSource::L2, a.ranking_l2.order(), "curves_l2.csv"),
            (RankingSource::Common, a.common.order(), "curves_common.csv"),
        ] {
            let c1 = a.curve(src, "lr-l1");
            let c2 = a.curve(src, "lr-l2");
            let mut text = String::from("k,feature_index,feature,lr_l1,lr_l2\n");
            for (i, &f) in order.iter().enumerate() {
                let k = i + 1;
                text.push_str(&format!(
                    "{k},{f},{},{},{}\n",
                    csv_field(&names[f]),
                    opt(c1.and_then(|c| c.at(k))),
                    opt(c2.and_then(|c| c.at(k)))
                ));
            }
            write(dir, file, &text, &mut files)?;
        }
        let selection = serde_json::json!({
            "full_accuracy_l1": a.full_accuracy_l1,
            "baseline_fraction": result.config.baseline_fraction,
            "baseline_reference": result.config.baseline_reference,
            "baseline": a.baseline,
            "max_l1": a.max_l1,
            "max_l1_reached": a.max_l1_reached,
            "max_l2": a.max_l2,
            "max_l2_reached": a.max_l2_reached,
            "common_count": a.common.len(),
            "common_features": a.common.entries.iter().map(|e| serde_json::json!({
                "feature": names[e.feature],
                "l1_rank": e.l1_rank,
                "l2_rank": e.l2_rank,
            })).collect::<Vec<_>>(),
            "rank_statistics": a.rank_stats,
        });
        write(dir, "selection.json", &json(&selection)?, &mut files)?;
    }

    if !result.rows.is_empty() {
        let sets: Vec<FeatureSetKind> = FeatureSetKind::ALL
            .into_iter()
            .filter(|f| result.rows.iter().any(|r| r.spec.feature_set == *f))
            .collect();
        let models: Vec<ModelKind> = ModelKind::ALL
            .into_iter()
            .filter(|m| result.rows.iter().any(|r| r.spec.model == *m))
            .collect();
        let header = |first: &str| {
            let mut h = first.to_string();
            for s in &sets {
                h.push(',');
                h.push_str(&s.column(common_len));
            }
            h + "\n"
        };

        let mut grid = header("model");
        for &m in &models {
            grid.push_str(m.label());
            for &s in &sets {
                grid.push(',');
                grid.push_str(&opt(result.accuracy(ExperimentSpec::new(m, s))));
            }
            grid.push('\n');
        }
        write(dir, "accuracy_grid.csv", &grid, &mut files)?;

        let mut table = String::from(
            "experiment,model,feature_set,n_features,accuracy,precision_macro,recall_macro,f1_macro,precision_weighted,recall_weighted,f1_weighted,zero_division\n",
        );
        for row in &result.rows {
            let Some(o) = &row.outcome else { continue };
            let (ma, wa) = (o.report.macro_avg, o.report.weighted_avg);
            table.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.name,
                row.spec.model.label(),
                row.spec.feature_set.column(common_len),
                row.features.len(),
                o.accuracy,
                ma.precision,
                ma.recall,
                ma.f1,
                wa.precision,
                wa.recall,
                wa.f1,
                o.report.zero_division
            ));
        }
        write(dir, "metrics.csv", &table, &mut files)?;

        let focus = result.focus_classes();
        for row in &result.rows {
            let Some(o) = &row.outcome else { continue };
            let slug = row.spec.slug();
            write(
                dir,
                &format!("confusion_{slug}.csv"),
                &o.confusion.to_csv(),
                &mut files,
            )?;
            if !focus.is_empty() {
                let sub = metrics::submatrix(&o.confusion, &focus)?;
                write(
                    dir,
                    &format!("submatrix_{slug}.csv"),
                    &sub.to_csv(),
                    &mut files,
                )?;
            }
        }

        if !focus.is_empty() {
            let class_names = &result.data.as_ref().expect("rows imply data").class_names;
            let mut text = header("model,class");
            for &m in &models {
                for &c in &focus {
                    text.push_str(&format!("{},{}", m.label(), csv_field(&class_names[c])));
                    for &s in &sets {
                        let recall = result
                            .row(ExperimentSpec::new(m, s))
                            .and_then(|r| r.outcome.as_ref())
                            .and_then(|o| metrics::class_recall(&o.confusion, c).ok());
                        text.push(',');
                        text.push_str(&opt(recall));
                    }
                    text.push('\n');
                }
            }
            write(dir, "recall_focus.csv", &text, &mut files)?;
        }
    }

    if let Some(t) = timings {
        write(dir, "timings.json", &json(t)?, &mut files)?;
    }
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: "regsel",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: &result.config_hash,
        seeds: &result.seeds,
        config: &result.config,
        data: result.data.as_ref(),
        files: files
            .iter()
            .filter(|f| *f != "timings.json")
            .cloned()
            .collect(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, json(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(files)
}

/// Runs the pipeline and writes its reports to `cfg.output_dir`. On failure
/// a `FAILED.json` marker naming the error is written instead.
pub fn run_grid(cfg: &RunConfig) -> Result<(GridResult, Vec<String>)> {
    let dir = &cfg.output_dir;
    let _ = std::fs::remove_file(dir.join("FAILED.json"));
    match run_pipeline(cfg) {
        Ok((result, timings)) => {
            let files = emit_reports(&result, Some(&timings), dir)?;
            Ok((result, files))
        }
        Err(e) => {
            if std::fs::create_dir_all(dir).is_ok() {
                let stage = match &e {
                    Error::Stage { stage, .. } => *stage,
                    _ => "config",
                };
                let marker = serde_json::json!({ "status": "failed", "stage": stage, "error": e.to_string() });
                let _ = std::fs::write(
                    dir.join("FAILED.json"),
                    serde_json::to_string_pretty(&marker).unwrap_or_default() + "\n",
                );
            }
            Err(e)
        }
    }
}

/// Reads a `grid_result.json` written by [`emit_reports`].
pub fn load_result(path: &Path) -> Result<GridResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
