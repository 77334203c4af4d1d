//! Confusion matrices and accuracy / precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> usize {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> usize {
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// Grid with a header row and column of class names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual\\predicted");
        for name in &self.class_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(&csv_field(name));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    confusion_named(y_true, y_pred, (0..k).map(|c| c.to_string()).collect())
}

pub fn confusion_named(
    y_true: &[usize],
    y_pred: &[usize],
    class_names: Vec<String>,
) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = class_names.len();
    let mut counts = vec![vec![0; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {k} classes",
                t.max(p)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names,
    })
}

fn check_nonempty(cm: &ConfusionMatrix) -> Result<usize> {
    match cm.total() {
        0 => Err(Error::Empty("confusion matrix has no samples".into())),
        n => Ok(n),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = check_nonempty(cm)?;
    Ok(cm.trace() as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    /// Unweighted mean over classes.
    pub macro_avg: Averages,
    /// Mean weighted by class support.
    pub weighted_avg: Averages,
    /// Set when some precision or recall had an empty denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf1(cm: &ConfusionMatrix) -> Result<Report> {
    let n = check_nonempty(cm)?;
    let k = cm.n_classes();
    let mut zero_division = false;
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.col_sum(c), &mut zero_division);
            let recall = ratio(tp, cm.row_sum(c), &mut zero_division);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
            }
        })
        .collect();
    let kf = k.max(1) as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|s| s.precision).sum::<f64>() / kf,
        recall: per_class.iter().map(|s| s.recall).sum::<f64>() / kf,
        f1: per_class.iter().map(|s| s.f1).sum::<f64>() / kf,
    };
    let w = |f: fn(&ClassScores) -> f64| {
        per_class
            .iter()
            .map(|s| f(s) * s.support as f64)
            .sum::<f64>()
            / n as f64
    };
    let weighted_avg = Averages {
        precision: w(|s| s.precision),
        recall: w(|s| s.recall),
        f1: w(|s| s.f1),
    };
    Ok(Report {
        accuracy: cm.trace() as f64 / n as f64,
        per_class,
        macro_avg,
        weighted_avg,
        zero_division,
    })
}

/// Restricts rows and columns to `classes`, in the given order.
pub fn submatrix(cm: &ConfusionMatrix, classes: &[usize]) -> Result<ConfusionMatrix> {
    let k = cm.n_classes();
    let mut seen = vec![false; k];
    for &c in classes {
        if c >= k || std::mem::replace(&mut seen[c], true) {
            return Err(Error::InvalidArgument(format!(
                "invalid or repeated class {c} in submatrix selection"
            )));
        }
    }
    Ok(ConfusionMatrix {
        counts: classes
            .iter()
            .map(|&r| classes.iter().map(|&c| cm.counts[r][c]).collect())
            .collect(),
        class_names: classes.iter().map(|&c| cm.class_names[c].clone()).collect(),
    })
}

pub fn class_recall(cm: &ConfusionMatrix, class: usize) -> Result<f64> {
    if class >= cm.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range"
        )));
    }
    match cm.row_sum(class) {
        0 => Err(Error::Empty(format!(
            "class `{}` has no samples",
            cm.class_names[class]
        ))),
        row => Ok(cm.counts[class][class] as f64 / row as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example() -> ConfusionMatrix {
        confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap()
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(example().counts, [[1, 1], [0, 2]]);
        let perfect = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(perfect.counts, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
        assert_eq!(confusion(&[], &[], 2).unwrap().counts, [[0, 0], [0, 0]]);
        assert!(confusion(&[0], &[], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let diag = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(accuracy(&diag).unwrap(), 1.0);
        assert_eq!(accuracy(&example()).unwrap(), 0.75);
        assert_eq!(accuracy(&confusion(&[0], &[1], 2).unwrap()).unwrap(), 0.0);
        assert!(accuracy(&confusion(&[], &[], 2).unwrap()).is_err());
    }

    #[test]
    fn prf1_examples() {
        let r = prf1(&example()).unwrap();
        let c0 = r.per_class[0];
        let c1 = r.per_class[1];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert_abs_diff_eq!(c0.f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c1.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(c1.recall, 1.0);
        assert_abs_diff_eq!(c1.f1, 0.8, epsilon = 1e-15);
        assert!(!r.zero_division);

        let diag = prf1(&confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap()).unwrap();
        assert_eq!(
            diag.macro_avg,
            Averages {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn never_predicted_class_sets_flag() {
        let r = prf1(&confusion(&[0, 1], &[0, 0], 2).unwrap()).unwrap();
        assert!(r.zero_division);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
    }

    #[test]
    fn submatrix_examples() {
        let cm = ConfusionMatrix {
            counts: vec![vec![5, 0, 1], vec![0, 1482, 0], vec![2, 1490, 0]],
            class_names: vec!["a".into(), "prb".into(), "cls-9".into()],
        };
        let sub = submatrix(&cm, &[1, 2]).unwrap();
        assert_eq!(sub.counts, [[1482, 0], [1490, 0]]);
        assert_eq!(sub.class_names, ["prb", "cls-9"]);
        assert_eq!(submatrix(&cm, &[0, 1, 2]).unwrap(), cm);
        assert_eq!(submatrix(&cm, &[0]).unwrap().counts, [[5]]);
        assert!(submatrix(&cm, &[1, 1]).is_err());
        assert_eq!(class_recall(&sub, 0).unwrap(), 1.0);
        assert_eq!(class_recall(&sub, 1).unwrap(), 0.0);
    }

    #[test]
    fn recall_of_pure_row() {
        let cm = confusion(&[1, 1, 0], &[1, 1, 1], 2).unwrap();
        assert_eq!(class_recall(&cm, 1).unwrap(), 1.0);
        let empty = confusion(&[1], &[1], 2).unwrap();
        assert!(class_recall(&empty, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let text = example().to_csv();
        assert_eq!(text, "actual\\predicted,0,1\n0,1,1\n1,0,2\n");
    }

    fn labels() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
        (1usize..=5, 1usize..=30).prop_flat_map(|(k, n)| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
            )
        })
    }

    proptest! {
        #[test]
        fn prevalence_weighted_recall_is_accuracy((k, t, p) in labels()) {
            let cm = confusion(&t, &p, k).unwrap();
            let acc = accuracy(&cm).unwrap();
            let n = t.len() as f64;
            let weighted: f64 = (0..k)
                .filter(|&c| cm.row_sum(c) > 0)
                .map(|c| class_recall(&cm, c).unwrap() * cm.row_sum(c) as f64 / n)
                .sum();
            prop_assert!((acc - weighted).abs() <= 1e-12);
            for c in 0..k {
                prop_assert_eq!(cm.row_sum(c), t.iter().filter(|&&v| v == c).count());
                prop_assert_eq!(cm.col_sum(c), p.iter().filter(|&&v| v == c).count());
            }
        }
    }
}
