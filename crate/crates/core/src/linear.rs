//! Multinomial logistic regression restricted to a feature subset.

use serde::{Deserialize, Serialize};

use crate::ingest::{check_subset, Dataset, ScalerParams};
use crate::matrix::{argmax, Matrix};
use crate::optim::{
    saga_fit, softmax_in_place, PenaltySpec, SagaConfig, WeightDocument, WeightMatrix,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: WeightMatrix,
    /// Source column of each coefficient column.
    pub feature_subset: Vec<usize>,
    pub source_width: usize,
    /// When set, raw-scale rows passed to `predict` are standardized first.
    pub scaler: Option<ScalerParams>,
    pub penalty: PenaltySpec,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

/// Coefficients labelled with class and feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Matrix,
}

impl LogRegModel {
    /// Fits on the columns `subset` of `train`, in that order.
    pub fn fit(
        train: &Dataset,
        subset: &[usize],
        penalty: &PenaltySpec,
        cfg: &SagaConfig,
    ) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("feature subset is empty".into()));
        }
        let sliced = train.select_features(subset)?;
        let weights = saga_fit(&sliced, penalty, cfg)?;
        Ok(LogRegModel {
            weights,
            feature_subset: subset.to_vec(),
            source_width: train.n_features(),
            scaler: None,
            penalty: *penalty,
            seed: cfg.seed,
            class_names: train.class_names.clone(),
            feature_names: sliced.feature_names,
        })
    }

    pub fn with_scaler(mut self, scaler: ScalerParams) -> Result<Self> {
        if scaler.width() != self.source_width {
            return Err(Error::Dimension(format!(
                "scaler covers {} features, model source has {}",
                scaler.width(),
                self.source_width
            )));
        }
        self.scaler = Some(scaler);
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.rows() > 0 && x.cols() != self.source_width {
            return Err(Error::Dimension(format!(
                "model expects rows of width {}, got {}",
                self.source_width,
                x.cols()
            )));
        }
        Ok(())
    }

    fn row_scores(&self, row: &[f64], buf: &mut Vec<f64>, scores: &mut [f64]) {
        buf.clear();
        match &self.scaler {
            Some(s) => buf.extend(
                self.feature_subset
                    .iter()
                    .map(|&f| (row[f] - s.means[f]) / s.std_devs[f]),
            ),
            None => buf.extend(self.feature_subset.iter().map(|&f| row[f])),
        }
        self.weights.scores_into(buf, scores);
    }

    /// Class scores `W x + b` for every row.
    pub fn decision_function(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let k = self.n_classes();
        let mut out = Matrix::zeros(x.rows(), k);
        let mut buf = Vec::with_capacity(self.feature_subset.len());
        for r in 0..x.rows() {
            let mut scores = vec![0.0; k];
            self.row_scores(x.row(r), &mut buf, &mut scores);
            out.row_mut(r).copy_from_slice(&scores);
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut scores = self.decision_function(x)?;
        for r in 0..scores.rows() {
            softmax_in_place(scores.row_mut(r));
        }
        Ok(scores)
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let scores = self.decision_function(x)?;
        Ok(scores.iter_rows().map(argmax).collect())
    }

    pub fn coefficients(&self) -> CoefficientTable {
        CoefficientTable {
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            values: self.weights.coefficients.clone(),
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            weights: WeightDocument::new(
                &self.weights,
                &self.class_names,
                &self.feature_names,
                &self.penalty,
                self.seed,
            ),
            feature_subset: self.feature_subset.clone(),
            source_width: self.source_width,
            scaler: self.scaler.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let weights = doc.weights.weights()?;
        check_subset(&doc.feature_subset, doc.source_width)?;
        if doc.feature_subset.len() != weights.n_features() {
            return Err(Error::Dimension(
                "feature subset length differs from coefficient columns".into(),
            ));
        }
        let model = LogRegModel {
            weights,
            feature_subset: doc.feature_subset,
            source_width: doc.source_width,
            scaler: None,
            penalty: doc.weights.penalty()?,
            seed: doc.weights.seed,
            class_names: doc.weights.class_names,
            feature_names: doc.weights.feature_names,
        };
        match doc.scaler {
            Some(s) => model.with_scaler(s),
            None => Ok(model),
        }
    }
}

/// JSON form of a model: the weight document plus subset and scaler blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(flatten)]
    pub weights: WeightDocument,
    pub feature_subset: Vec<usize>,
    pub source_width: usize,
    #[serde(default)]
    pub scaler: Option<ScalerParams>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::PenaltyKind;
    use crate::synthetic;
    use approx::assert_abs_diff_eq;

    fn hand_model() -> LogRegModel {
        LogRegModel {
            weights: WeightMatrix {
                coefficients: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]).unwrap(),
                intercepts: vec![0.0; 3],
            },
            feature_subset: vec![0, 1],
            source_width: 2,
            scaler: None,
            penalty: PenaltySpec::l2(1.0).unwrap(),
            seed: 0,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            feature_names: vec!["x".into(), "y".into()],
        }
    }

    #[test]
    fn hand_built_three_class() {
        let m = hand_model();
        let x = Matrix::from_rows(&[[2.0, 1.0], [-1.0, 0.5]]).unwrap();
        // scores (2, 1, -3) and (-1, 0.5, 0.5): the tie goes to class 1
        assert_eq!(m.predict(&x).unwrap(), [0, 1]);
        let p = m.predict_proba(&x).unwrap();
        let e = std::f64::consts::E;
        let z = e.powi(2) + e + e.powi(-3);
        assert_abs_diff_eq!(p.get(0, 0), e.powi(2) / z, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(1, 1), p.get(1, 2), epsilon = 1e-15);
    }

    #[test]
    fn zero_weights() {
        let mut m = hand_model();
        m.weights = WeightMatrix::zeros(3, 2);
        let x = Matrix::from_rows(&[[5.0, -3.0], [0.1, 9.0]]).unwrap();
        for r in m.predict_proba(&x).unwrap().iter_rows() {
            for v in r {
                assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
        m.weights.intercepts = vec![0.1, 0.7, 0.3];
        assert_eq!(m.predict(&x).unwrap(), [1, 1]);
    }

    #[test]
    fn intercept_shift_leaves_probabilities() {
        let m = hand_model();
        let mut shifted = m.clone();
        shifted
            .weights
            .intercepts
            .iter_mut()
            .for_each(|b| *b += 3.5);
        let x = Matrix::from_rows(&[[0.3, -0.2], [1.0, 2.0]]).unwrap();
        let a = m.predict_proba(&x).unwrap();
        let b = shifted.predict_proba(&x).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn predict_agrees_with_proba() {
        let data = synthetic::gaussian_blobs(60, 4, 3, 1.0, 2);
        let m = LogRegModel::fit(
            &data,
            &[0, 1, 2, 3],
            &PenaltySpec::l2(0.5).unwrap(),
            &SagaConfig::default(),
        )
        .unwrap();
        let labels = m.predict(&data.x).unwrap();
        let p = m.predict_proba(&data.x).unwrap();
        for (r, &l) in p.iter_rows().zip(&labels) {
            assert_eq!(argmax(r), l);
            assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(labels, m.predict(&data.x).unwrap());
    }

    #[test]
    fn single_separating_feature() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            rows.push([if c == 0 { -1.0 } else { 1.0 }, (i as f64).sin()]);
            y.push(c);
        }
        let data = Dataset::new(
            Matrix::from_rows(&rows).unwrap(),
            y.clone(),
            vec!["sep".into(), "junk".into()],
            vec!["neg".into(), "pos".into()],
        )
        .unwrap();
        let m = LogRegModel::fit(
            &data,
            &[0],
            &PenaltySpec::l2(100.0).unwrap(),
            &SagaConfig::default(),
        )
        .unwrap();
        assert_eq!(m.predict(&data.x).unwrap(), y);
        let p = m.predict_proba(&data.x).unwrap();
        for (r, &c) in p.iter_rows().zip(&y) {
            assert!(r[c] >= 0.99, "{r:?}");
        }
    }

    #[test]
    fn invalid_subsets() {
        let data = synthetic::gaussian_blobs(20, 3, 2, 1.0, 2);
        let p = PenaltySpec::l1(0.5).unwrap();
        let cfg = SagaConfig::default();
        assert!(LogRegModel::fit(&data, &[0, 0], &p, &cfg).is_err());
        assert!(LogRegModel::fit(&data, &[3], &p, &cfg).is_err());
        assert!(LogRegModel::fit(&data, &[], &p, &cfg).is_err());
        let m = LogRegModel::fit(&data, &[2], &p, &cfg).unwrap();
        assert!(m.predict(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn coefficient_table() {
        let data = synthetic::gaussian_blobs(30, 4, 3, 1.0, 4);
        let m = LogRegModel::fit(
            &data,
            &[3, 1],
            &PenaltySpec::l1(1e-9).unwrap(),
            &SagaConfig::default(),
        )
        .unwrap();
        let t = m.coefficients();
        assert_eq!((t.values.rows(), t.values.cols()), (3, 2));
        assert_eq!(t.feature_names, ["f3", "f1"]);
        assert!(t.values.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn subset_fit_equals_presliced_fit() {
        let data = synthetic::gaussian_blobs(50, 5, 3, 1.0, 6);
        let subset = [4, 0, 2];
        let cfg = SagaConfig {
            seed: 17,
            ..Default::default()
        };
        let p = PenaltySpec::new(PenaltyKind::L1, 0.5).unwrap();
        let a = LogRegModel::fit(&data, &subset, &p, &cfg).unwrap();
        let sliced = data.select_features(&subset).unwrap();
        let b = LogRegModel::fit(&sliced, &[0, 1, 2], &p, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn scaler_applies_to_raw_rows() {
        let data = synthetic::gaussian_blobs(40, 3, 2, 2.0, 8);
        let mut raw = data.clone();
        for v in raw.x.as_mut_slice() {
            *v = *v * 10.0 + 5.0;
        }
        let scaler = ScalerParams::fit(&raw.x).unwrap();
        let scaled = Dataset {
            x: scaler.transform(&raw.x).unwrap(),
            ..raw.clone()
        };
        let p = PenaltySpec::l2(0.5).unwrap();
        let m = LogRegModel::fit(&scaled, &[0, 2], &p, &SagaConfig::default()).unwrap();
        let expect = m.predict(&scaled.x).unwrap();
        let m = m.with_scaler(scaler).unwrap();
        assert_eq!(m.predict(&raw.x).unwrap(), expect);

        let text = serde_json::to_string(&m.to_document()).unwrap();
        let back = LogRegModel::from_document(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
