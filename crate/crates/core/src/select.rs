//! Coefficient-based feature ranking, accuracy-vs-top-k curves, threshold
//! search and the intersection of two rankings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::SplitPair;
use crate::linear::LogRegModel;
use crate::matrix::Matrix;
use crate::metrics::{self, ConfusionMatrix};
use crate::optim::{PenaltyKind, PenaltySpec, SagaConfig};
use crate::trees::{dt_fit, rf_fit, ForestParams, TreeParams};
use crate::{Error, Result};

/// How the `K` per-class coefficients of a feature collapse into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    MeanAbs,
    MaxAbs,
    L2Norm,
    /// Largest signed coefficient over classes. Scores can be negative.
    MaxSigned,
}

impl Aggregation {
    fn score(self, column: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregation::MeanAbs => {
                let (sum, n) = column.fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
                sum / n.max(1) as f64
            }
            Aggregation::MaxAbs => column.map(f64::abs).fold(0.0, f64::max),
            Aggregation::L2Norm => column.map(|v| v * v).sum::<f64>().sqrt(),
            Aggregation::MaxSigned => column.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub ordered: Vec<RankedFeature>,
    pub aggregation: Aggregation,
    pub penalty_kind: PenaltyKind,
}

impl FeatureRanking {
    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    /// Feature indices, best first.
    pub fn order(&self) -> Vec<usize> {
        self.ordered.iter().map(|r| r.index).collect()
    }

    pub fn top(&self, k: usize) -> Vec<usize> {
        self.ordered.iter().take(k).map(|r| r.index).collect()
    }

    /// 1-based rank of every feature, indexed by feature.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.ordered.len()];
        for (pos, r) in self.ordered.iter().enumerate() {
            ranks[r.index] = pos + 1;
        }
        ranks
    }

    pub fn to_csv(&self, feature_names: &[String]) -> String {
        let mut out = String::from("rank,feature_index,feature,score\n");
        for (pos, r) in self.ordered.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                pos + 1,
                r.index,
                metrics::csv_field(&feature_names[r.index]),
                r.score
            ));
        }
        out
    }
}

/// Scores each feature column of a `K x m` coefficient matrix and sorts
/// descending. Equal scores keep ascending feature order.
pub fn rank_features(
    coefficients: &Matrix,
    aggregation: Aggregation,
    penalty_kind: PenaltyKind,
) -> Result<FeatureRanking> {
    if coefficients.rows() == 0 || coefficients.cols() == 0 {
        return Err(Error::Empty("coefficient matrix is empty".into()));
    }
    if !coefficients.is_finite() {
        return Err(Error::InvalidArgument("non-finite coefficient".into()));
    }
    let mut ordered: Vec<RankedFeature> = (0..coefficients.cols())
        .map(|j| RankedFeature {
            index: j,
            score: aggregation.score((0..coefficients.rows()).map(|k| coefficients.get(k, j))),
        })
        .collect();
    ordered.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(FeatureRanking {
        ordered,
        aggregation,
        penalty_kind,
    })
}

/// A classifier family evaluated on feature subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelFamily {
    LogReg {
        penalty: PenaltySpec,
        solver: SagaConfig,
    },
    Tree(TreeParams),
    Forest(ForestParams),
}

impl ModelFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelFamily::LogReg { penalty, .. } => match penalty.kind {
                PenaltyKind::L1 => "lr-l1",
                PenaltyKind::L2 => "lr-l2",
            },
            ModelFamily::Tree(_) => "dt",
            ModelFamily::Forest(_) => "rf",
        }
    }

    /// The family with its seed offset by `k`.
    pub fn with_seed_offset(&self, k: usize) -> ModelFamily {
        let k = k as u64;
        match self {
            ModelFamily::LogReg { penalty, solver } => ModelFamily::LogReg {
                penalty: *penalty,
                solver: SagaConfig {
                    seed: solver.seed.wrapping_add(k),
                    ..*solver
                },
            },
            ModelFamily::Tree(p) => ModelFamily::Tree(TreeParams {
                seed: p.seed.wrapping_add(k),
                ..p.clone()
            }),
            ModelFamily::Forest(p) => ModelFamily::Forest(ForestParams {
                seed: p.seed.wrapping_add(k),
                ..p.clone()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub features: Vec<usize>,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
}

/// Fits `family` on the train half restricted to `features` and scores the
/// test half. The feature set is fitted in ascending index order with the
/// family's seed offset by the set size, so the same set always gives the
/// same model regardless of how it was ranked.
pub fn evaluate(split: &SplitPair, features: &[usize], family: &ModelFamily) -> Result<Evaluation> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("feature set is empty".into()));
    }
    let mut subset = features.to_vec();
    subset.sort_unstable();
    let family = family.with_seed_offset(subset.len());
    let predictions = match &family {
        ModelFamily::LogReg { penalty, solver } => {
            LogRegModel::fit(&split.train, &subset, penalty, solver)?.predict(&split.test.x)?
        }
        ModelFamily::Tree(p) => {
            let train = split.train.select_features(&subset)?;
            let test = split.test.x.select_columns(&subset);
            dt_fit(&train, p)?.predict(&test)?
        }
        ModelFamily::Forest(p) => {
            let train = split.train.select_features(&subset)?;
            let test = split.test.x.select_columns(&subset);
            rf_fit(&train, p)?.predict(&test)?
        }
    };
    let confusion =
        metrics::confusion_named(&split.test.y, &predictions, split.test.class_names.clone())?;
    let accuracy = metrics::accuracy(&confusion)?;
    Ok(Evaluation {
        features: subset,
        predictions,
        confusion,
        accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingSource {
    L1,
    L2,
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<CurvePoint>,
    pub model_family: String,
    pub ranking_used: RankingSource,
}

impl AccuracyCurve {
    pub fn max_accuracy(&self) -> Option<f64> {
        self.points.iter().map(|p| p.accuracy).reduce(f64::max)
    }

    pub fn at(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.k == k).map(|p| p.accuracy)
    }
}

/// Retrains `family` on the top-k prefix of `order` for each `k` and records
/// test accuracy. Points are independent and computed in parallel.
pub fn accuracy_curve(
    split: &SplitPair,
    order: &[usize],
    family: &ModelFamily,
    k_values: &[usize],
    ranking_used: RankingSource,
) -> Result<AccuracyCurve> {
    for w in k_values.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument(
                "k values must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0 || k > order.len()) {
        return Err(Error::InvalidArgument(format!(
            "k = {bad} outside [1, {}]",
            order.len()
        )));
    }
    let points = k_values
        .par_iter()
        .map(|&k| {
            evaluate(split, &order[..k], family).map(|e| CurvePoint {
                k,
                accuracy: e.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyCurve {
        points,
        model_family: family.tag().to_string(),
        ranking_used,
    })
}

/// Smallest `k` whose accuracy reaches `target`.
pub fn find_max_k(curve: &AccuracyCurve, target: f64) -> Option<usize> {
    curve
        .points
        .iter()
        .filter(|p| p.accuracy >= target)
        .map(|p| p.k)
        .min()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonEntry {
    pub feature: usize,
    pub l1_rank: usize,
    pub l2_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommonFeatureSet {
    pub entries: Vec<CommonEntry>,
}

impl CommonFeatureSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feature indices by ascending L1 rank.
    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.feature).collect()
    }

    pub fn to_csv(&self, feature_names: &[String]) -> String {
        let mut out = String::from("l1_rank,l2_rank,feature_index,feature\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.l1_rank,
                e.l2_rank,
                e.feature,
                metrics::csv_field(&feature_names[e.feature])
            ));
        }
        out
    }
}

/// Features in both the top `max_l1` of the L1 ranking and the top `max_l2`
/// of the L2 ranking, ordered by L1 rank.
pub fn common_features(
    rank_l1: &FeatureRanking,
    max_l1: usize,
    rank_l2: &FeatureRanking,
    max_l2: usize,
) -> Result<CommonFeatureSet> {
    if rank_l1.len() != rank_l2.len() {
        return Err(Error::Dimension(
            "rankings cover different feature counts".into(),
        ));
    }
    let m = rank_l1.len();
    for (name, v) in [("max_l1", max_l1), ("max_l2", max_l2)] {
        if v == 0 || v > m {
            return Err(Error::InvalidArgument(format!(
                "{name} = {v} outside [1, {m}]"
            )));
        }
    }
    let l2_ranks = rank_l2.ranks();
    let entries = rank_l1
        .ordered
        .iter()
        .take(max_l1)
        .enumerate()
        .filter(|(_, r)| l2_ranks[r.index] <= max_l2)
        .map(|(pos, r)| CommonEntry {
            feature: r.index,
            l1_rank: pos + 1,
            l2_rank: l2_ranks[r.index],
        })
        .collect();
    Ok(CommonFeatureSet { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStatistics {
    pub count: usize,
    pub l1_rank_mean: f64,
    pub l2_rank_mean: f64,
    pub l1_span: (usize, usize),
    pub l2_span: (usize, usize),
}

pub fn rank_statistics(common: &CommonFeatureSet) -> Result<RankStatistics> {
    if common.is_empty() {
        return Err(Error::Empty("common feature set is empty".into()));
    }
    let n = common.len() as f64;
    let span = |f: fn(&CommonEntry) -> usize| {
        let it = common.entries.iter().map(f);
        (it.clone().min().unwrap_or(0), it.max().unwrap_or(0))
    };
    Ok(RankStatistics {
        count: common.len(),
        l1_rank_mean: common.entries.iter().map(|e| e.l1_rank as f64).sum::<f64>() / n,
        l2_rank_mean: common.entries.iter().map(|e| e.l2_rank as f64).sum::<f64>() / n,
        l1_span: span(|e| e.l1_rank),
        l2_span: span(|e| e.l2_rank),
    })
}
