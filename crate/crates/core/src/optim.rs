//! Penalized multinomial cross-entropy and a SAGA solver.
//!
//! The objective is a sum over samples,
//!
//! ```text
//! F(W, b) = sum_i -log softmax(W x_i + b)[y_i] + (1/C) * R(W)
//! ```
//!
//! with `R(W) = sum |W_kj|` (L1) or `sum W_kj^2` (L2). Intercepts `b` are
//! never penalized.
//!
//! SAGA runs on the per-sample view `F/n = (1/n) sum_i f_i` with
//! `f_i = loss_i + R/(C n)`. For softmax regression the gradient of
//! `loss_i` is `(p_i - e_{y_i}) x_i^T`, so the gradient table only needs the
//! `K` residuals `p_i - e_{y_i}` per sample rather than a full `K x m` block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::Dataset;
use crate::matrix::Matrix;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L1,
    L2,
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PenaltyKind::L1 => f.write_str("L1"),
            PenaltyKind::L2 => f.write_str("L2"),
        }
    }
}

/// Penalty kind plus inverse strength `C`; the penalty weight is `1/C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub c: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, c: f64) -> Result<Self> {
        let p = PenaltySpec { kind, c };
        p.validate()?;
        Ok(p)
    }

    pub fn l1(c: f64) -> Result<Self> {
        Self::new(PenaltyKind::L1, c)
    }

    pub fn l2(c: f64) -> Result<Self> {
        Self::new(PenaltyKind::L2, c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c > 0.0 && self.c.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "inverse regularization strength C must be positive, got {}",
                self.c
            )))
        }
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        1.0 / self.c
    }

    /// `R(W)` without the `1/C` factor.
    pub fn raw_penalty(&self, coefficients: &Matrix) -> f64 {
        let w = coefficients.as_slice().iter();
        match self.kind {
            PenaltyKind::L1 => w.map(|v| v.abs()).sum(),
            PenaltyKind::L2 => w.map(|v| v * v).sum(),
        }
    }
}

/// Per-class coefficient rows (`K x m`) and intercepts (`K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub coefficients: Matrix,
    pub intercepts: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        WeightMatrix {
            coefficients: Matrix::zeros(n_classes, n_features),
            intercepts: vec![0.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.cols()
    }

    /// Writes `W x + b` into `out`.
    #[inline]
    pub fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.intercepts[k] + dot(self.coefficients.row(k), x);
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes()];
        self.scores_into(x, &mut out);
        out
    }

    fn check_against(&self, data: &Dataset) -> Result<()> {
        if self.coefficients.rows() != self.intercepts.len() {
            return Err(Error::Dimension(format!(
                "{} coefficient rows but {} intercepts",
                self.coefficients.rows(),
                self.intercepts.len()
            )));
        }
        if self.n_classes() != data.n_classes() || self.n_features() != data.n_features() {
            return Err(Error::Dimension(format!(
                "weights are {}x{}, data has {} classes and {} features",
                self.n_classes(),
                self.n_features(),
                data.n_classes(),
                data.n_features()
            )));
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log(sum(exp(s)))`, stable for large scores.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Proximal operator of `t * |w|`.
#[inline]
pub fn soft_threshold(w: f64, t: f64) -> f64 {
    if w > t {
        w - t
    } else if w < -t {
        w + t
    } else {
        0.0
    }
}

/// Sum of per-sample cross-entropy losses.
pub fn data_loss(w: &WeightMatrix, data: &Dataset) -> Result<f64> {
    w.check_against(data)?;
    let mut scores = vec![0.0; w.n_classes()];
    let mut total = 0.0;
    for (row, &y) in data.x.iter_rows().zip(&data.y) {
        w.scores_into(row, &mut scores);
        total += log_sum_exp(&scores) - scores[y];
    }
    Ok(total)
}

pub fn objective(w: &WeightMatrix, data: &Dataset, penalty: &PenaltySpec) -> Result<f64> {
    Ok(data_loss(w, data)? + penalty.lambda() * penalty.raw_penalty(&w.coefficients))
}

/// Gradient of [`objective`]. For L1 only the data term is differentiated;
/// the solver handles the non-smooth part with a proximal step.
pub fn gradient(w: &WeightMatrix, data: &Dataset, penalty: &PenaltySpec) -> Result<WeightMatrix> {
    w.check_against(data)?;
    let k = w.n_classes();
    let mut grad = WeightMatrix::zeros(k, w.n_features());
    let mut p = vec![0.0; k];
    for (row, &y) in data.x.iter_rows().zip(&data.y) {
        w.scores_into(row, &mut p);
        softmax_in_place(&mut p);
        p[y] -= 1.0;
        for (c, &r) in p.iter().enumerate() {
            grad.intercepts[c] += r;
            for (g, &v) in grad.coefficients.row_mut(c).iter_mut().zip(row) {
                *g += r * v;
            }
        }
    }
    if penalty.kind == PenaltyKind::L2 {
        let scale = 2.0 * penalty.lambda();
        for (g, &v) in grad
            .coefficients
            .as_mut_slice()
            .iter_mut()
            .zip(w.coefficients.as_slice())
        {
            *g += scale * v;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSize {
    /// `1 / (3 L)` with `L` a bound on the per-sample smoothness constant.
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for StepSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(StepSize::Fixed(v)),
            Repr::Str(s) if s == "auto" => Ok(StepSize::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "step_size must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SagaConfig {
    pub max_epochs: usize,
    pub step_size: StepSize,
    /// Stop once the relative objective change over one epoch drops below
    /// this value.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SagaConfig {
    fn default() -> Self {
        SagaConfig {
            max_epochs: 100,
            step_size: StepSize::Auto,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl SagaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "step size must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// The automatic step: `1 / (3 L)` where
/// `L = max_i (|x_i|^2 + 1) * (K - 1) / K`, plus `2 / (C n)` under L2.
/// The `+ 1` accounts for the intercept column.
pub fn auto_step_size(data: &Dataset, penalty: &PenaltySpec) -> f64 {
    let k = data.n_classes().max(2) as f64;
    let max_sq = data
        .x
        .iter_rows()
        .map(|r| dot(r, r) + 1.0)
        .fold(0.0, f64::max);
    let mut lipschitz = max_sq * (k - 1.0) / k;
    if penalty.kind == PenaltyKind::L2 {
        lipschitz += 2.0 * penalty.lambda() / data.n_samples().max(1) as f64;
    }
    1.0 / (3.0 * lipschitz)
}

/// Coefficients this close to zero are set to exactly zero after an L1 fit.
pub const L1_SNAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SagaTrace {
    pub step_size: f64,
    /// Objective at the end of each completed epoch.
    pub epoch_objectives: Vec<f64>,
    pub converged: bool,
}

pub fn saga_fit(data: &Dataset, penalty: &PenaltySpec, cfg: &SagaConfig) -> Result<WeightMatrix> {
    saga_fit_traced(data, penalty, cfg).map(|(w, _)| w)
}

/// SAGA with a proximal step for L1. Starts from zero weights with the
/// gradient table initialized at that point. Each epoch draws `n` sample
/// indices uniformly with replacement.
pub fn saga_fit_traced(
    data: &Dataset,
    penalty: &PenaltySpec,
    cfg: &SagaConfig,
) -> Result<(WeightMatrix, SagaTrace)> {
    penalty.validate()?;
    cfg.validate()?;
    let n = data.n_samples();
    let m = data.n_features();
    let k = data.n_classes();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "need at least as many samples as classes ({n} < {k})"
        )));
    }
    let step = match cfg.step_size {
        StepSize::Auto => auto_step_size(data, penalty),
        StepSize::Fixed(s) => s,
    };
    let nf = n as f64;
    let inv_n = 1.0 / nf;
    let lambda = penalty.lambda();
    let l1_threshold = step * lambda / nf;
    let l2_scale = 2.0 * lambda / nf;
    let is_l1 = penalty.kind == PenaltyKind::L1;

    let mut w = WeightMatrix::zeros(k, m);
    // residual table and its running mean, both at W = 0
    let mut memory = vec![0.0; n * k];
    let mut avg_coef = Matrix::zeros(k, m);
    let mut avg_icpt = vec![0.0; k];
    let uniform = 1.0 / k as f64;
    for (i, (row, &y)) in data.x.iter_rows().zip(&data.y).enumerate() {
        let r = &mut memory[i * k..(i + 1) * k];
        r.fill(uniform);
        r[y] -= 1.0;
        for c in 0..k {
            avg_icpt[c] += r[c] / nf;
            for (a, &v) in avg_coef.row_mut(c).iter_mut().zip(row) {
                *a += r[c] * v / nf;
            }
        }
    }

    let mut rng = seed::rng(cfg.seed);
    let mut p = vec![0.0; k];
    let mut delta = vec![0.0; k];
    let mut prev = objective(&w, data, penalty)?;
    let mut trace = SagaTrace {
        step_size: step,
        epoch_objectives: Vec::new(),
        converged: false,
    };

    for epoch in 0..cfg.max_epochs {
        for _ in 0..n {
            let j = rng.gen_range(0..n);
            let xj = data.x.row(j);
            w.scores_into(xj, &mut p);
            softmax_in_place(&mut p);
            p[data.y[j]] -= 1.0;
            let stored = &mut memory[j * k..(j + 1) * k];
            for c in 0..k {
                delta[c] = p[c] - stored[c];
            }
            stored.copy_from_slice(&p);

            for c in 0..k {
                let d = delta[c];
                let d_n = d * inv_n;
                let coef = w.coefficients.row_mut(c);
                let avg = avg_coef.row_mut(c);
                let cells = coef.iter_mut().zip(avg.iter_mut()).zip(xj);
                if is_l1 {
                    for ((wv, a), &xv) in cells {
                        *wv = soft_threshold(*wv - step * (d * xv + *a), l1_threshold);
                        *a += d_n * xv;
                    }
                } else {
                    for ((wv, a), &xv) in cells {
                        *wv -= step * (d * xv + *a + l2_scale * *wv);
                        *a += d_n * xv;
                    }
                }
                w.intercepts[c] -= step * (d + avg_icpt[c]);
                avg_icpt[c] += d_n;
            }
        }

        let obj = objective(&w, data, penalty)?;
        if !obj.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                step_size: step,
            });
        }
        trace.epoch_objectives.push(obj);
        let scale = prev.abs().max(obj.abs()).max(f64::MIN_POSITIVE);
        if (prev - obj).abs() / scale < cfg.tolerance {
            trace.converged = true;
            break;
        }
        prev = obj;
    }

    if is_l1 {
        for v in w.coefficients.as_mut_slice() {
            if v.abs() < L1_SNAP {
                *v = 0.0;
            }
        }
    }
    Ok((w, trace))
}

/// Portable JSON form of a fitted weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDocument {
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub penalty: PenaltyKind,
    #[serde(rename = "C")]
    pub c: f64,
    pub seed: u64,
}

impl WeightDocument {
    pub fn new(
        w: &WeightMatrix,
        class_names: &[String],
        feature_names: &[String],
        penalty: &PenaltySpec,
        seed: u64,
    ) -> Self {
        WeightDocument {
            class_names: class_names.to_vec(),
            feature_names: feature_names.to_vec(),
            coefficients: w.coefficients.iter_rows().map(<[f64]>::to_vec).collect(),
            intercepts: w.intercepts.clone(),
            penalty: penalty.kind,
            c: penalty.c,
            seed,
        }
    }

    pub fn weights(&self) -> Result<WeightMatrix> {
        let coefficients = if self.coefficients.is_empty() {
            Matrix::zeros(0, self.feature_names.len())
        } else {
            Matrix::from_rows(&self.coefficients)?
        };
        if coefficients.rows() != self.intercepts.len()
            || coefficients.rows() != self.class_names.len()
            || coefficients.cols() != self.feature_names.len()
        {
            return Err(Error::Dimension(
                "weight document shape disagrees with its names".into(),
            ));
        }
        Ok(WeightMatrix {
            coefficients,
            intercepts: self.intercepts.clone(),
        })
    }

    pub fn penalty(&self) -> Result<PenaltySpec> {
        PenaltySpec::new(self.penalty, self.c)
    }
}
