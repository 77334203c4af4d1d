//! Flow-record ingestion: CSV loading, cleaning, per-class sampling,
//! train/test splitting and z-score standardization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{seed, Error, Result};

/// Header plus unparsed string cells, exactly as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based source line of each row, for error messages.
    pub lines: Vec<usize>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(Error::RaggedRow {
                    line: i + 2,
                    expected: header.len(),
                    found: row.len(),
                });
            }
        }
        let lines = (2..rows.len() + 2).collect();
        Ok(RawTable {
            header,
            rows,
            lines,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Numeric samples with class labels. Every stage downstream of cleaning
/// works on this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        y: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if x.cols() != feature_names.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} feature names",
                x.cols(),
                feature_names.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if !x.is_finite() {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            class_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Restricts to the given feature columns, in the given order.
    pub fn select_features(&self, features: &[usize]) -> Result<Dataset> {
        check_subset(features, self.n_features())?;
        Ok(Dataset {
            x: self.x.select_columns(features),
            y: self.y.clone(),
            feature_names: features
                .iter()
                .map(|&f| self.feature_names[f].clone())
                .collect(),
            class_names: self.class_names.clone(),
        })
    }

    /// Concatenates datasets with identical feature columns. Class names are
    /// unioned and re-sorted, labels remapped accordingly.
    pub fn merge(parts: Vec<Dataset>) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("no datasets to merge".into()))?;
        let feature_names = first.feature_names.clone();
        let classes: BTreeSet<String> = parts
            .iter()
            .flat_map(|p| p.class_names.iter().cloned())
            .collect();
        let class_names: Vec<String> = classes.into_iter().collect();
        let mut data = Vec::new();
        let mut y = Vec::new();
        for p in &parts {
            if p.feature_names != feature_names {
                return Err(Error::Dimension(
                    "merged datasets have different feature columns".into(),
                ));
            }
            let remap: Vec<usize> = p
                .class_names
                .iter()
                .map(|c| class_names.binary_search(c).expect("class in union"))
                .collect();
            data.extend_from_slice(p.x.as_slice());
            y.extend(p.y.iter().map(|&c| remap[c]));
        }
        let x = Matrix::from_vec(y.len(), feature_names.len(), data)?;
        Dataset::new(x, y, feature_names, class_names)
    }

    /// Serializes back into a raw table with the label as the last column.
    pub fn to_raw_table(&self, label_column: &str) -> RawTable {
        let mut header = self.feature_names.clone();
        header.push(label_column.to_string());
        let rows = self
            .x
            .iter_rows()
            .zip(&self.y)
            .map(|(row, &c)| {
                let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                cells.push(self.class_names[c].clone());
                cells
            })
            .collect();
        RawTable::new(header, rows).expect("rows match header")
    }

    pub fn write_csv<W: Write>(&self, writer: W, label_column: &str) -> Result<()> {
        let table = self.to_raw_table(label_column);
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn check_subset(features: &[usize], width: usize) -> Result<()> {
    let mut seen = vec![false; width];
    for &f in features {
        if f >= width {
            return Err(Error::InvalidArgument(format!(
                "feature index {f} out of range for {width} features"
            )));
        }
        if std::mem::replace(&mut seen[f], true) {
            return Err(Error::InvalidArgument(format!(
                "duplicate feature index {f}"
            )));
        }
    }
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(file))
}

/// Parses CSV text with a header line. Cells and header names are trimmed.
pub fn read_csv<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec?.iter().map(|h| h.trim().to_string()).collect(),
        None => return Err(Error::MissingHeader),
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::MissingHeader);
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        lines.push(line);
    }
    Ok(RawTable {
        header,
        rows,
        lines,
    })
}

/// Cell values treated as missing or non-finite.
fn is_missing_token(cell: &str) -> bool {
    let c = cell.trim().to_ascii_lowercase();
    matches!(
        c.as_str(),
        "" | "nan" | "inf" | "+inf" | "-inf" | "infinity" | "+infinity" | "-infinity"
    )
}

/// Parses numeric columns and drops unusable rows: any missing or non-finite
/// feature cell, an empty label, or a label equal to the label column's own
/// name (header lines repeated inside concatenated exports). Columns named in
/// `drop_columns` are skipped; names absent from the header are ignored.
///
/// Class indices follow byte-wise alphabetical order of the class names.
pub fn clean<S: AsRef<str>>(
    raw: &RawTable,
    label_column: &str,
    drop_columns: &[S],
) -> Result<Dataset> {
    let label_idx = raw
        .column_index(label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let dropped: BTreeSet<&str> = drop_columns.iter().map(|s| s.as_ref()).collect();
    let feature_cols: Vec<usize> = (0..raw.header.len())
        .filter(|&i| i != label_idx && !dropped.contains(raw.header[i].as_str()))
        .collect();
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&i| raw.header[i].clone())
        .collect();

    let mut data = Vec::new();
    let mut labels: Vec<&str> = Vec::new();
    let mut values = Vec::with_capacity(feature_cols.len());
    'rows: for (row, &line) in raw.rows.iter().zip(&raw.lines) {
        let label = row[label_idx].as_str();
        if label.is_empty() || label == label_column {
            continue;
        }
        values.clear();
        for &c in &feature_cols {
            let cell = row[c].as_str();
            if is_missing_token(cell) {
                continue 'rows;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NotNumeric {
                line,
                column: raw.header[c].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                continue 'rows;
            }
            values.push(v);
        }
        data.extend_from_slice(&values);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Empty("no rows survived cleaning".into()));
    }

    let class_names: Vec<String> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<&str>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let y = labels.iter().map(|l| index[l]).collect::<Vec<_>>();
    let x = Matrix::from_vec(y.len(), feature_names.len(), data)?;
    Dataset::new(x, y, feature_names, class_names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub per_class_cap: usize,
    pub excluded_classes: Vec<String>,
    /// Class held out unless `include_problematic` is set.
    pub problematic_class: Option<String>,
    pub include_problematic: bool,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            per_class_cap: 5000,
            excluded_classes: Vec::new(),
            problematic_class: None,
            include_problematic: false,
            seed: 0,
        }
    }
}

impl SamplingPlan {
    /// Classes removed from the sample: the explicit exclusions, plus the
    /// problematic class when it is not included.
    pub fn effective_exclusions(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.excluded_classes.iter().cloned().collect();
        if !self.include_problematic {
            if let Some(p) = &self.problematic_class {
                out.insert(p.clone());
            }
        }
        out
    }
}

/// Draws up to `per_class_cap` rows from every retained class, uniformly
/// without replacement. Output rows are grouped by class in class order; the
/// excluded classes are removed from `class_names` and labels re-indexed.
pub fn sample_per_class(data: &Dataset, plan: &SamplingPlan) -> Result<Dataset> {
    if plan.per_class_cap == 0 {
        return Err(Error::InvalidArgument("per_class_cap must be >= 1".into()));
    }
    let excluded = plan.effective_exclusions();
    for name in &excluded {
        if data.class_index(name).is_none() {
            return Err(Error::UnknownClass(name.clone()));
        }
    }
    let kept: Vec<usize> = (0..data.n_classes())
        .filter(|&c| !excluded.contains(&data.class_names[c]))
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty("every class is excluded".into()));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (i, &c) in data.y.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = seed::rng(plan.seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (new_idx, &c) in kept.iter().enumerate() {
        let members = &mut by_class[c];
        let take = plan.per_class_cap.min(members.len());
        let (chosen, _) = members.partial_shuffle(&mut rng, take);
        rows.extend_from_slice(chosen);
        y.extend(std::iter::repeat_n(new_idx, take));
    }
    let class_names = kept.iter().map(|&c| data.class_names[c].clone()).collect();
    if rows.is_empty() {
        return Err(Error::Empty("sample is empty".into()));
    }
    Dataset::new(
        data.x.select_rows(&rows),
        y,
        data.feature_names.clone(),
        class_names,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub ratio: f64,
    pub seed: u64,
}

/// Uniform (non-stratified) random split; the training part receives
/// `round(ratio * n)` rows.
pub fn split(data: &Dataset, ratio: f64, seed: u64) -> Result<SplitPair> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} not in (0, 1]"
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    let n = data.n_samples();
    let n_train = ((ratio * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (train_rows, test_rows) = order.split_at(n_train);
    Ok(SplitPair {
        train: data.select_rows(train_rows),
        test: data.select_rows(test_rows),
        ratio,
        seed,
    })
}

/// Per-feature z-score parameters estimated on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

impl ScalerParams {
    /// Population mean and standard deviation per column. Constant columns
    /// get mean 0 and std 1 so the transform leaves them untouched.
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("cannot fit scaler on zero rows".into()));
        }
        let n = x.rows() as f64;
        let mut means = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std_devs = Vec::with_capacity(x.cols());
        for (mean, var) in means.iter_mut().zip(vars) {
            let sd = (var / n).sqrt();
            if sd <= 1e-12 * mean.abs().max(1.0) {
                *mean = 0.0;
                std_devs.push(1.0);
            } else {
                std_devs.push(sd);
            }
        }
        Ok(ScalerParams { means, std_devs })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.width() {
            return Err(Error::Dimension(format!(
                "scaler fitted on {} columns, got {}",
                self.width(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            self.transform_row(out.row_mut(r));
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.std_devs) {
            *v = (*v - m) / s;
        }
    }
}

/// Standardizes both halves of a split with statistics from the training
/// half only.
pub fn standardize(pair: &SplitPair) -> Result<(SplitPair, ScalerParams)> {
    let scaler = ScalerParams::fit(&pair.train.x)?;
    let mut out = pair.clone();
    out.train.x = scaler.transform(&pair.train.x)?;
    out.test.x = scaler.transform(&pair.test.x)?;
    Ok((out, scaler))
}

/// Sidecar record written next to a cached, sampled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub per_class_cap: usize,
    pub excluded_classes: Vec<String>,
    pub include_problematic: bool,
    pub source_rows: usize,
    pub total_rows: usize,
    pub rows_per_class: BTreeMap<String, usize>,
}

impl SampleManifest {
    pub fn new(plan: &SamplingPlan, source: &Dataset, sample: &Dataset) -> Self {
        SampleManifest {
            seed: plan.seed,
            per_class_cap: plan.per_class_cap,
            excluded_classes: plan.effective_exclusions().into_iter().collect(),
            include_problematic: plan.include_problematic,
            source_rows: source.n_samples(),
            total_rows: sample.n_samples(),
            rows_per_class: sample
                .class_names
                .iter()
                .cloned()
                .zip(sample.class_counts())
                .collect(),
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.manifest.json` into `dir`.
pub fn write_cache(
    dir: &Path,
    stem: &str,
    data: &Dataset,
    label_column: &str,
    manifest: &SampleManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    data.write_csv(std::io::BufWriter::new(file), label_column)?;
    let json_path = dir.join(format!("{stem}.manifest.json"));
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}
