//! CART classification trees (Gini impurity) and random forests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Dataset;
use crate::matrix::{argmax_count, Matrix};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
                TreeNode::Leaf { counts } => return argmax_count(counts),
            }
        }
    }

    /// Number of split levels; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<&[usize]> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                TreeNode::Leaf { counts } => out.push(counts.as_slice()),
                TreeNode::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub criterion: Criterion,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            criterion: Criterion::Gini,
            seed: 0,
        }
    }
}

impl TreeParams {
    fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidArgument(
                "min_samples_split must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `round(sqrt(m))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            features_per_split: None,
            bootstrap: true,
            tree: TreeParams::default(),
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn resolved_features_per_split(&self, m: usize) -> Result<usize> {
        let k = self
            .features_per_split
            .unwrap_or_else(|| ((m as f64).sqrt().round() as usize).clamp(1, m.max(1)));
        if k == 0 || k > m {
            return Err(Error::InvalidArgument(format!(
                "features_per_split {k} not in [1, {m}]"
            )));
        }
        Ok(k)
    }
}

/// `1 - sum_k (c_k / n)^2`.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("gini of an empty node".into()));
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub n_features: usize,
    pub n_classes: usize,
}

fn check_width(x: &Matrix, n_features: usize) -> Result<()> {
    if x.rows() > 0 && x.cols() != n_features {
        return Err(Error::Dimension(format!(
            "expected rows of width {n_features}, got {}",
            x.cols()
        )));
    }
    Ok(())
}

impl DecisionTree {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        check_width(x, self.n_features)?;
        Ok(x.iter_rows().map(|r| self.root.predict_row(r)).collect())
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    k: usize,
    params: &'a TreeParams,
    /// Random feature subsampling: (rng, candidates per split).
    sampler: Option<(ChaCha8Rng, usize)>,
    pairs: Vec<(f64, usize)>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < self.params.min_samples_split {
            return TreeNode::Leaf { counts };
        }
        let Some(best) = self.choose_split(idx) else {
            return TreeNode::Leaf { counts };
        };
        let mut left: Vec<usize> = Vec::with_capacity(idx.len());
        let mut right: Vec<usize> = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            if self.x.get(i, best.feature) <= best.threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        debug_assert!(!left.is_empty() && !right.is_empty());
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(l),
            right: Box::new(r),
        }
    }

    fn choose_split(&mut self, idx: &[usize]) -> Option<SplitChoice> {
        let m = self.x.cols();
        match self.sampler.as_mut() {
            None => self.best_over((0..m).collect(), idx),
            Some((rng, per_split)) => {
                let per_split = *per_split;
                let mut order: Vec<usize> = (0..m).collect();
                order.shuffle(rng);
                let (first, rest) = order.split_at(per_split);
                let (mut first, mut rest) = (first.to_vec(), rest.to_vec());
                first.sort_unstable();
                if let Some(s) = self.best_over(first, idx) {
                    return Some(s);
                }
                // every sampled feature was constant here: widen the search
                rest.sort_unstable();
                self.best_over(rest, idx)
            }
        }
    }

    /// Lowest weighted child Gini over midpoints of consecutive distinct
    /// values. Features are scanned in ascending order and thresholds in
    /// ascending order, replacing only on strict improvement.
    fn best_over(&mut self, features: Vec<usize>, idx: &[usize]) -> Option<SplitChoice> {
        let n = idx.len() as f64;
        let total = self.counts(idx);
        let total_sq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
        let mut best: Option<SplitChoice> = None;
        for f in features {
            self.pairs.clear();
            self.pairs
                .extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.pairs[0].0 == self.pairs[self.pairs.len() - 1].0 {
                continue;
            }
            let mut left = vec![0usize; self.k];
            let mut right = total.clone();
            let (mut left_sq, mut right_sq) = (0.0, total_sq);
            for j in 0..self.pairs.len() - 1 {
                let c = self.pairs[j].1;
                left_sq += (2 * left[c] + 1) as f64;
                left[c] += 1;
                right_sq -= (2 * right[c] - 1) as f64;
                right[c] -= 1;
                let (v, next) = (self.pairs[j].0, self.pairs[j + 1].0);
                if v == next {
                    continue;
                }
                let nl = (j + 1) as f64;
                let nr = n - nl;
                let impurity = (nl - left_sq / nl + nr - right_sq / nr) / n;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

fn grow(
    train: &Dataset,
    rows: &mut [usize],
    params: &TreeParams,
    sampler: Option<(ChaCha8Rng, usize)>,
) -> DecisionTree {
    let mut builder = Builder {
        x: &train.x,
        y: &train.y,
        k: train.n_classes(),
        params,
        sampler,
        pairs: Vec::with_capacity(rows.len()),
    };
    DecisionTree {
        root: builder.build(rows, 0),
        n_features: train.n_features(),
        n_classes: train.n_classes(),
    }
}

/// Greedy CART on all features. Ties between candidate splits go to the
/// lowest feature index, then the lowest threshold.
pub fn dt_fit(train: &Dataset, params: &TreeParams) -> Result<DecisionTree> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("cannot fit a tree on zero rows".into()));
    }
    let mut rows: Vec<usize> = (0..train.n_samples()).collect();
    Ok(grow(train, &mut rows, params, None))
}

pub fn dt_predict(tree: &DecisionTree, x: &Matrix) -> Result<Vec<usize>> {
    tree.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Tree `t` uses the seed `params.seed + t`, so the forest does not depend
/// on how trees are scheduled across threads.
pub fn rf_fit(train: &Dataset, params: &ForestParams) -> Result<RandomForest> {
    params.tree.validate()?;
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("cannot fit a forest on zero rows".into()));
    }
    let m = train.n_features();
    let per_split = params.resolved_features_per_split(m)?;
    let n = train.n_samples();
    let tree_seeds: Vec<u64> = (0..params.n_trees as u64)
        .map(|t| params.seed.wrapping_add(t))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seed::rng(s);
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let sampler = (per_split < m).then_some((rng, per_split));
            grow(train, &mut rows, &params.tree, sampler)
        })
        .collect();
    Ok(RandomForest {
        trees,
        tree_seeds,
        n_features: m,
        n_classes: train.n_classes(),
    })
}

impl RandomForest {
    /// Per-row vote counts over classes.
    pub fn votes(&self, x: &Matrix) -> Result<Vec<Vec<usize>>> {
        check_width(x, self.n_features)?;
        Ok(x.iter_rows()
            .map(|row| {
                let mut tally = vec![0usize; self.n_classes];
                for t in &self.trees {
                    tally[t.root.predict_row(row)] += 1;
                }
                tally
            })
            .collect())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.votes(x)?.iter().map(|v| argmax_count(v)).collect())
    }
}

/// Unweighted majority vote; ties go to the lowest class index.
pub fn rf_predict(forest: &RandomForest, x: &Matrix) -> Result<Vec<usize>> {
    forest.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use approx::assert_abs_diff_eq;

    fn ds(rows: &[[f64; 2]], y: &[usize]) -> Dataset {
        let k = y.iter().max().map_or(1, |m| m + 1);
        Dataset::new(
            Matrix::from_rows(rows).unwrap(),
            y.to_vec(),
            vec!["a".into(), "b".into()],
            (0..k).map(|c| c.to_string()).collect(),
        )
        .unwrap()
    }

    fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[10, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[5, 5]).unwrap(), 0.5);
        assert_abs_diff_eq!(gini(&[1, 2, 3]).unwrap(), 11.0 / 18.0, epsilon = 1e-15);
        assert!(gini(&[0, 0]).is_err());
    }

    #[test]
    fn one_dimensional_threshold() {
        let d = ds(
            &[[0.0, 5.0], [1.0, 3.0], [2.0, 9.0], [3.0, 1.0], [4.0, 0.0]],
            &[0, 0, 0, 1, 1],
        );
        let t = dt_fit(&d, &TreeParams::default()).unwrap();
        assert_eq!(t.root.depth(), 1);
        match &t.root {
            TreeNode::Split {
                feature, threshold, ..
            } => assert_eq!((*feature, *threshold), (0, 2.5)),
            _ => panic!("expected a split"),
        }
        assert_eq!(dt_predict(&t, &d.x).unwrap(), d.y);
    }

    #[test]
    fn xor_needs_two_levels() {
        // Every first split leaves (1,1) on both sides, so the root split has
        // zero gain; the lowest feature and threshold (a <= 0.5) is chosen,
        // then each side splits on b.
        let d = ds(
            &[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            &[0, 1, 1, 0],
        );
        let t = dt_fit(&d, &TreeParams::default()).unwrap();
        assert_eq!(t.root.depth(), 2);
        assert_eq!(dt_predict(&t, &d.x).unwrap(), d.y);
        match &t.root {
            TreeNode::Split {
                feature, threshold, ..
            } => assert_eq!((*feature, *threshold), (0, 0.5)),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn consistent_data_is_fit_exactly() {
        let d = synthetic::gaussian_blobs(200, 3, 4, 0.5, 3);
        let t = dt_fit(&d, &TreeParams::default()).unwrap();
        assert_eq!(accuracy(&dt_predict(&t, &d.x).unwrap(), &d.y), 1.0);
        for leaf in t.root.leaves() {
            assert!(leaf.iter().sum::<usize>() >= 1);
        }
    }

    #[test]
    fn depth_limit_is_respected() {
        let d = synthetic::gaussian_blobs(200, 3, 4, 0.5, 3);
        for depth in 0..4 {
            let t = dt_fit(
                &d,
                &TreeParams {
                    max_depth: Some(depth),
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(t.root.depth() <= depth);
        }
    }

    #[test]
    fn single_leaf_predicts_majority() {
        let d = ds(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], &[1, 0, 1]);
        let t = dt_fit(
            &d,
            &TreeParams {
                max_depth: Some(0),
                ..Default::default()
            },
        )
        .unwrap();
        let probe = Matrix::from_rows(&[[-5.0, 100.0], [7.0, 7.0]]).unwrap();
        assert_eq!(dt_predict(&t, &probe).unwrap(), [1, 1]);
        assert!(dt_predict(&t, &Matrix::zeros(0, 2)).unwrap().is_empty());
        assert!(dt_predict(&t, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn leaf_tie_goes_to_lowest_class() {
        let leaf = TreeNode::Leaf {
            counts: vec![0, 2, 2],
        };
        assert_eq!(leaf.predict_row(&[]), 1);
    }

    #[test]
    fn weighted_gini_never_increases() {
        fn walk(node: &TreeNode, d: &Dataset, idx: Vec<usize>) {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = node
            {
                let counts = |ix: &[usize]| {
                    let mut c = vec![0; d.n_classes()];
                    ix.iter().for_each(|&i| c[d.y[i]] += 1);
                    c
                };
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .iter()
                    .partition(|&&i| d.x.get(i, *feature) <= *threshold);
                let n = idx.len() as f64;
                let child = (l.len() as f64 * gini(&counts(&l)).unwrap()
                    + r.len() as f64 * gini(&counts(&r)).unwrap())
                    / n;
                assert!(child <= gini(&counts(&idx)).unwrap() + 1e-12);
                walk(left, d, l);
                walk(right, d, r);
            }
        }
        let d = synthetic::gaussian_blobs(150, 4, 3, 1.0, 9);
        let t = dt_fit(&d, &TreeParams::default()).unwrap();
        walk(&t.root, &d, (0..d.n_samples()).collect());
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let d = synthetic::gaussian_blobs(150, 5, 3, 0.7, 12);
        let tree = dt_fit(&d, &TreeParams::default()).unwrap();
        let forest = rf_fit(
            &d,
            &ForestParams {
                n_trees: 1,
                bootstrap: false,
                features_per_split: Some(5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(forest.trees[0].root, tree.root);
        let probe = synthetic::gaussian_blobs(80, 5, 3, 0.7, 13);
        assert_eq!(
            rf_predict(&forest, &probe.x).unwrap(),
            dt_predict(&tree, &probe.x).unwrap()
        );
    }

    #[test]
    fn forest_is_reproducible_across_thread_counts() {
        let d = synthetic::gaussian_blobs(120, 6, 3, 0.8, 21);
        let params = ForestParams {
            n_trees: 16,
            seed: 5,
            ..Default::default()
        };
        let fit_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| rf_fit(&d, &params).unwrap())
        };
        let a = fit_with(1);
        let b = fit_with(4);
        assert_eq!(a, b);
        assert_eq!(a.tree_seeds, (5..21).collect::<Vec<u64>>());
    }

    #[test]
    fn votes_match_per_tree_recount() {
        let d = synthetic::gaussian_blobs(100, 4, 3, 0.6, 30);
        let f = rf_fit(
            &d,
            &ForestParams {
                n_trees: 9,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let probe = synthetic::gaussian_blobs(40, 4, 3, 0.6, 31);
        let votes = f.votes(&probe.x).unwrap();
        let pred = rf_predict(&f, &probe.x).unwrap();
        for (r, row) in probe.x.iter_rows().enumerate() {
            let mut tally = vec![0; 3];
            for t in &f.trees {
                tally[dt_predict(t, &Matrix::from_rows(&[row]).unwrap()).unwrap()[0]] += 1;
            }
            assert_eq!(votes[r], tally);
            let best = (0..3).fold(0, |b, c| if tally[c] > tally[b] { c } else { b });
            assert_eq!(pred[r], best);
        }
    }

    #[test]
    fn majority_and_tie_votes() {
        let leaf = |c: usize| DecisionTree {
            root: TreeNode::Leaf {
                counts: (0..2).map(|k| usize::from(k == c)).collect(),
            },
            n_features: 1,
            n_classes: 2,
        };
        let forest = |classes: &[usize]| RandomForest {
            trees: classes.iter().map(|&c| leaf(c)).collect(),
            tree_seeds: vec![0; classes.len()],
            n_features: 1,
            n_classes: 2,
        };
        let x = Matrix::from_rows(&[[0.0]]).unwrap();
        assert_eq!(rf_predict(&forest(&[0, 0, 1]), &x).unwrap(), [0]);
        assert_eq!(rf_predict(&forest(&[1, 1, 0]), &x).unwrap(), [1]);
        assert_eq!(rf_predict(&forest(&[1, 0]), &x).unwrap(), [0]);
    }

    #[test]
    fn forest_not_worse_than_tree_under_label_noise() {
        for s in 0..5 {
            let mut train = synthetic::gaussian_blobs(300, 6, 3, 1.2, 100 + s);
            let test = synthetic::gaussian_blobs(300, 6, 3, 1.2, 200 + s);
            let mut rng = seed::rng(s);
            for y in &mut train.y {
                if rng.gen::<f64>() < 0.1 {
                    *y = rng.gen_range(0..3);
                }
            }
            let tree = dt_fit(&train, &TreeParams::default()).unwrap();
            let forest = rf_fit(
                &train,
                &ForestParams {
                    seed: s,
                    ..Default::default()
                },
            )
            .unwrap();
            let a_tree = accuracy(&dt_predict(&tree, &test.x).unwrap(), &test.y);
            let a_forest = accuracy(&rf_predict(&forest, &test.x).unwrap(), &test.y);
            assert!(a_forest >= a_tree - 0.01, "seed {s}: {a_forest} < {a_tree}");
        }
    }

    #[test]
    fn invalid_params() {
        let d = synthetic::gaussian_blobs(10, 2, 2, 1.0, 1);
        assert!(dt_fit(
            &d,
            &TreeParams {
                min_samples_split: 1,
                ..Default::default()
            }
        )
        .is_err());
        assert!(rf_fit(
            &d,
            &ForestParams {
                n_trees: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(rf_fit(
            &d,
            &ForestParams {
                features_per_split: Some(3),
                ..Default::default()
            }
        )
        .is_err());
        assert!(dt_fit(&d.select_rows(&[]), &TreeParams::default()).is_err());
    }

    #[test]
    fn tree_json_round_trip() {
        let d = synthetic::gaussian_blobs(30, 2, 2, 1.0, 4);
        let t = dt_fit(&d, &TreeParams::default()).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"node\":\"split\""));
        let back: DecisionTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }
}
