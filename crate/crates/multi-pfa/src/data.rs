//! Feature-matrix datasets with a nominal label column: CSV ingestion,
//! row normalization, and invariant reporting.
//!
//! A [`Dataset`] holds an `n x p` matrix of finite reals together with a
//! length-`n` response of category codes in `1..=q`. Category codes are
//! assigned by first appearance in the file unless the label column already
//! carries the integers `1..=q`. The baseline category defaults to code `q`
//! and can be changed to any category; the fitting pipeline reorders codes
//! so that the baseline always sits last.

use ndarray::Array2;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column '{name}' not found in header")]
    MissingLabelColumn { name: String },
    #[error("label column '{name}' matches more than one column")]
    AmbiguousLabelColumn { name: String },
    #[error("non-numeric feature cell at data row {row}, column '{column}': '{value}'")]
    NonNumericCell { row: usize, column: String, value: String },
    #[error("non-finite feature value at data row {row}, column '{column}'")]
    NonFiniteValue { row: usize, column: String },
    #[error("need at least 2 response categories, found {found}")]
    TooFewCategories { found: usize },
    #[error("category '{label}' has zero occurrences")]
    EmptyCategory { label: String },
    #[error("response code {code} at row {row} outside 1..={q}")]
    ResponseOutOfRange { row: usize, code: usize, q: usize },
    #[error("need n >= q + 2 rows for any marginal fit (n = {n}, q = {q})")]
    TooFewRows { n: usize, q: usize },
    #[error("duplicate feature name '{name}'")]
    DuplicateFeatureName { name: String },
    #[error("feature matrix is {rows}x{cols} but {expect} was expected")]
    ShapeMismatch { rows: usize, cols: usize, expect: String },
    #[error("baseline '{given}' does not match any category label or code")]
    BaselineNotFound { given: String },
    #[error("negative entry at row {row}, column {col}; TIC normalization needs non-negative data")]
    NegativeEntry { row: usize, col: usize },
    #[error("row {row} sums to zero; TIC normalization undefined")]
    ZeroSumRow { row: usize },
}

/// An `n x p` feature matrix with a nominal response in `1..=q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    response: Vec<usize>,
    q: usize,
    feature_names: Vec<String>,
    category_labels: Vec<String>,
    baseline: usize,
    label_name: String,
}

impl Dataset {
    /// Build a dataset and enforce every type invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        features: Array2<f64>,
        response: Vec<usize>,
        q: usize,
        feature_names: Vec<String>,
        category_labels: Vec<String>,
        baseline: usize,
        label_name: String,
    ) -> Result<Self, DataError> {
        let d = Self::from_parts_unchecked(
            features,
            response,
            q,
            feature_names,
            category_labels,
            baseline,
            label_name,
        );
        d.check_invariants()?;
        Ok(d)
    }

    fn check_invariants(&self) -> Result<(), DataError> {
        if self.q < 2 {
            return Err(DataError::TooFewCategories { found: self.q });
        }
        let n = self.n();
        let p = self.p();
        if self.response.len() != n || self.feature_names.len() != p {
            return Err(DataError::ShapeMismatch {
                rows: n,
                cols: p,
                expect: format!(
                    "{} response entries and {} feature names",
                    self.response.len(),
                    self.feature_names.len()
                ),
            });
        }
        for ((i, j), v) in self.features.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    row: i + 1,
                    column: self.feature_names[j].clone(),
                });
            }
        }
        let mut counts = vec![0usize; self.q];
        for (i, &c) in self.response.iter().enumerate() {
            if c == 0 || c > self.q {
                return Err(DataError::ResponseOutOfRange { row: i, code: c, q: self.q });
            }
            counts[c - 1] += 1;
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                let label = self
                    .category_labels
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| (c + 1).to_string());
                return Err(DataError::EmptyCategory { label });
            }
        }
        if n < self.q + 2 {
            return Err(DataError::TooFewRows { n, q: self.q });
        }
        let mut sorted = self.feature_names.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(DataError::DuplicateFeatureName { name: w[0].clone() });
            }
        }
        if self.baseline == 0 || self.baseline > self.q {
            return Err(DataError::BaselineNotFound { given: self.baseline.to_string() });
        }
        Ok(())
    }

    /// Build a dataset without checking invariants. [`validate`] reports
    /// violations instead of refusing construction.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts_unchecked(
        features: Array2<f64>,
        response: Vec<usize>,
        q: usize,
        feature_names: Vec<String>,
        category_labels: Vec<String>,
        baseline: usize,
        label_name: String,
    ) -> Self {
        Dataset { features, response, q, feature_names, category_labels, baseline, label_name }
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn response(&self) -> &[usize] {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn category_labels(&self) -> &[String] {
        &self.category_labels
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn with_baseline(mut self, baseline: usize) -> Result<Self, DataError> {
        if baseline == 0 || baseline > self.q {
            return Err(DataError::BaselineNotFound { given: baseline.to_string() });
        }
        self.baseline = baseline;
        Ok(self)
    }

    /// Response recoded so that the baseline category carries code `q`,
    /// together with the matching label order. Non-baseline categories keep
    /// their relative order. Identity when the baseline already is `q`.
    pub fn baseline_ordering(&self) -> (Vec<usize>, Vec<String>) {
        if self.baseline == self.q {
            return (self.response.clone(), self.category_labels.clone());
        }
        // old code -> new code: baseline -> q, others close ranks
        let map: Vec<usize> = (1..=self.q)
            .map(|c| {
                if c == self.baseline {
                    self.q
                } else if c < self.baseline {
                    c
                } else {
                    c - 1
                }
            })
            .collect();
        let response = self.response.iter().map(|&c| map[c - 1]).collect();
        let mut labels = vec![String::new(); self.q];
        for (old, &new) in map.iter().enumerate() {
            labels[new - 1] = self.category_labels[old].clone();
        }
        (response, labels)
    }

    /// Write the dataset back to CSV: feature columns in order, label column
    /// last. Values print in shortest round-trip form, so a reload
    /// reproduces the dataset exactly.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        let mut header = self.feature_names.join(",");
        let _ = write!(header, ",{}", self.label_name);
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for i in 0..self.n() {
            line.clear();
            for j in 0..self.p() {
                let _ = write!(line, "{},", self.features[[i, j]]);
            }
            let _ = write!(line, "{}", self.category_labels[self.response[i] - 1]);
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Load a CSV with a header row into a [`Dataset`].
///
/// Every column other than `label_column` must parse as a finite real.
/// `baseline` accepts a category label or a numeric code; `None` selects
/// the last category code `q`.
pub fn load_dataset(
    path: &Path,
    label_column: &str,
    baseline: Option<&str>,
) -> Result<Dataset, DataError> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let label_matches: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h == label_column)
        .map(|(i, _)| i)
        .collect();
    let label_idx = match label_matches.len() {
        0 => return Err(DataError::MissingLabelColumn { name: label_column.to_string() }),
        1 => label_matches[0],
        _ => return Err(DataError::AmbiguousLabelColumn { name: label_column.to_string() }),
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                labels.push(cell.trim().to_string());
            } else {
                let name_idx = if col < label_idx { col } else { col - 1 };
                let v: f64 = cell.trim().parse().map_err(|_| DataError::NonNumericCell {
                    row,
                    column: feature_names[name_idx].clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonFiniteValue {
                        row,
                        column: feature_names[name_idx].clone(),
                    });
                }
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let p = feature_names.len();
    let features = Array2::from_shape_vec((n, p), values)
        .map_err(|_| DataError::ShapeMismatch { rows: n, cols: p, expect: format!("{n}x{p}") })?;

    let (response, q, category_labels) = encode_labels(&labels)?;
    let baseline_code = match baseline {
        None => q,
        Some(s) => resolve_baseline(s, &category_labels)?,
    };
    Dataset::from_parts(
        features,
        response,
        q,
        feature_names,
        category_labels,
        baseline_code,
        label_column.to_string(),
    )
}

/// Map label strings to codes. Labels that already are the integers
/// `1..=q` keep their numeric values; anything else is coded by first
/// appearance.
fn encode_labels(labels: &[String]) -> Result<(Vec<usize>, usize, Vec<String>), DataError> {
    let mut distinct: Vec<String> = Vec::new();
    for l in labels {
        if !distinct.contains(l) {
            distinct.push(l.clone());
        }
    }
    let q = distinct.len();
    if q < 2 {
        return Err(DataError::TooFewCategories { found: q });
    }

    let as_ints: Option<Vec<usize>> = labels.iter().map(|l| l.parse::<usize>().ok()).collect();
    if let Some(ints) = as_ints {
        let mut seen = vec![false; q + 1];
        let integer_coded = ints.iter().all(|&v| {
            if v >= 1 && v <= q {
                seen[v] = true;
                true
            } else {
                false
            }
        }) && seen[1..=q].iter().all(|&s| s);
        if integer_coded {
            let category_labels = (1..=q).map(|c| c.to_string()).collect();
            return Ok((ints, q, category_labels));
        }
    }

    let response = labels
        .iter()
        .map(|l| distinct.iter().position(|d| d == l).unwrap() + 1)
        .collect();
    Ok((response, q, distinct))
}

fn resolve_baseline(given: &str, category_labels: &[String]) -> Result<usize, DataError> {
    if let Some(pos) = category_labels.iter().position(|l| l == given) {
        return Ok(pos + 1);
    }
    if let Ok(code) = given.parse::<usize>() {
        if code >= 1 && code <= category_labels.len() {
            return Ok(code);
        }
    }
    Err(DataError::BaselineNotFound { given: given.to_string() })
}

/// Divide every row by its row sum (total ion count). Requires
/// non-negative entries and a positive sum in every row.
pub fn tic_normalize(d: &Dataset) -> Result<Dataset, DataError> {
    let mut features = d.features.clone();
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let mut sum = 0.0;
        for (j, v) in row.iter().enumerate() {
            if *v < 0.0 {
                return Err(DataError::NegativeEntry { row: i, col: j });
            }
            sum += *v;
        }
        if sum <= 0.0 {
            return Err(DataError::ZeroSumRow { row: i });
        }
        row.mapv_inplace(|v| v / sum);
    }
    Ok(Dataset {
        features,
        response: d.response.clone(),
        q: d.q,
        feature_names: d.feature_names.clone(),
        category_labels: d.category_labels.clone(),
        baseline: d.baseline,
        label_name: d.label_name.clone(),
    })
}

/// One violated invariant, with enough detail to locate the offending cell
/// or category.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantFailure {
    pub invariant: String,
    pub detail: String,
}

impl InvariantFailure {
    fn new(invariant: &str, detail: String) -> Self {
        InvariantFailure { invariant: invariant.to_string(), detail }
    }
}

/// Pass/fail per dataset invariant plus category counts and the list of
/// constant feature columns (which cannot carry association signal).
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<InvariantFailure>,
    pub category_counts: BTreeMap<String, usize>,
    pub constant_columns: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Check every [`Dataset`] invariant and flag constant columns. Purely a
/// reporting operation; the input is never modified.
pub fn validate(d: &Dataset) -> ValidationReport {
    let mut failures = Vec::new();
    let n = d.n();
    let p = d.p();

    if d.q < 2 {
        failures.push(InvariantFailure::new("category-count", format!("q = {} < 2", d.q)));
    }

    let mut bad_cells = Vec::new();
    for ((i, j), v) in d.features.indexed_iter() {
        if !v.is_finite() {
            bad_cells.push((i, j));
        }
    }
    if !bad_cells.is_empty() {
        let shown: Vec<String> =
            bad_cells.iter().take(16).map(|(i, j)| format!("({i},{j})")).collect();
        failures.push(InvariantFailure::new(
            "finite-features",
            format!("{} non-finite cell(s) at {}", bad_cells.len(), shown.join(" ")),
        ));
    }

    let mut counts = vec![0usize; d.q];
    for (i, &c) in d.response.iter().enumerate() {
        if c == 0 || c > d.q {
            failures.push(InvariantFailure::new(
                "response-range",
                format!("code {c} at row {i} outside 1..={}", d.q),
            ));
        } else {
            counts[c - 1] += 1;
        }
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            let label = d
                .category_labels
                .get(c)
                .cloned()
                .unwrap_or_else(|| (c + 1).to_string());
            failures.push(InvariantFailure::new(
                "category-occupancy",
                format!("category '{label}' (code {}) has zero occurrences", c + 1),
            ));
        }
    }
    if d.response.len() != n {
        failures.push(InvariantFailure::new(
            "response-length",
            format!("response has {} entries for {} rows", d.response.len(), n),
        ));
    }

    if n < d.q + 2 {
        failures.push(InvariantFailure::new(
            "minimum-rows",
            format!("n = {n} < q + 2 = {}", d.q + 2),
        ));
    }

    if d.feature_names.len() != p {
        failures.push(InvariantFailure::new(
            "feature-names",
            format!("{} names for {} columns", d.feature_names.len(), p),
        ));
    } else {
        let mut sorted = d.feature_names.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                failures
                    .push(InvariantFailure::new("feature-names", format!("duplicate '{}'", w[0])));
                break;
            }
        }
    }

    if d.baseline == 0 || d.baseline > d.q {
        failures.push(InvariantFailure::new(
            "baseline",
            format!("baseline code {} outside 1..={}", d.baseline, d.q),
        ));
    }

    let mut constant_columns = Vec::new();
    for j in 0..p {
        let col = d.features.column(j);
        if n > 0 {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                constant_columns.push(j);
            }
        }
    }

    let mut category_counts = BTreeMap::new();
    for (c, &cnt) in counts.iter().enumerate() {
        let label =
            d.category_labels.get(c).cloned().unwrap_or_else(|| (c + 1).to_string());
        category_counts.insert(label, cnt);
    }

    ValidationReport { failures, category_counts, constant_columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write as IoWrite;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_string_labels_by_first_appearance() {
        let f = write_temp(
            "mz1,mz2,subtype\n1.0,2.0,adc\n1.5,2.5,sqcc\n0.5,0.25,panc\n2.0,1.0,adc\n3.0,4.0,sqcc\n0.1,0.2,panc\n",
        );
        let d = load_dataset(f.path(), "subtype", None).unwrap();
        assert_eq!((d.n(), d.p(), d.q()), (6, 2, 3));
        assert_eq!(d.response(), &[1, 2, 3, 1, 2, 3]);
        assert_eq!(d.category_labels(), &["adc", "sqcc", "panc"]);
        assert_eq!(d.baseline(), 3);
        assert_eq!(d.feature_names(), &["mz1", "mz2"]);
    }

    #[test]
    fn keeps_integer_codes() {
        let f = write_temp("x,y\n0.0,2\n1.0,1\n2.0,2\n3.0,1\n4.0,2\n5.0,1\n");
        let d = load_dataset(f.path(), "y", None).unwrap();
        assert_eq!(d.response(), &[2, 1, 2, 1, 2, 1]);
        assert_eq!(d.q(), 2);
    }

    #[test]
    fn rejects_single_category() {
        let f = write_temp("x,y\n0.0,a\n1.0,a\n2.0,a\n3.0,a\n");
        match load_dataset(f.path(), "y", None) {
            Err(DataError::TooFewCategories { found: 1 }) => {}
            other => panic!("expected TooFewCategories, got {other:?}"),
        }
    }

    #[test]
    fn reports_bad_cell_position() {
        let f = write_temp("x,z,y\n0.0,1.0,a\n1.0,oops,b\n2.0,2.0,a\n3.0,1.0,b\n");
        match load_dataset(f.path(), "y", None) {
            Err(DataError::NonNumericCell { row: 2, column, .. }) => assert_eq!(column, "z"),
            other => panic!("expected NonNumericCell, got {other:?}"),
        }
    }

    #[test]
    fn missing_label_column() {
        let f = write_temp("x,y\n0.0,a\n1.0,b\n");
        assert!(matches!(
            load_dataset(f.path(), "label", None),
            Err(DataError::MissingLabelColumn { .. })
        ));
    }

    #[test]
    fn baseline_by_label_and_code() {
        let f = write_temp("x,y\n0.0,a\n1.0,b\n2.0,c\n3.0,a\n4.0,b\n5.0,c\n");
        let d = load_dataset(f.path(), "y", Some("a")).unwrap();
        assert_eq!(d.baseline(), 1);
        let d2 = load_dataset(f.path(), "y", Some("2")).unwrap();
        assert_eq!(d2.baseline(), 2);
        assert!(load_dataset(f.path(), "y", Some("nope")).is_err());
    }

    #[test]
    fn baseline_ordering_moves_baseline_last() {
        let f = write_temp("x,y\n0.0,a\n1.0,b\n2.0,c\n3.0,a\n4.0,b\n5.0,c\n");
        let d = load_dataset(f.path(), "y", Some("a")).unwrap();
        let (recoded, labels) = d.baseline_ordering();
        // a -> 3 (baseline), b -> 1, c -> 2
        assert_eq!(recoded, vec![3, 1, 2, 3, 1, 2]);
        assert_eq!(labels, vec!["b", "c", "a"]);
    }

    #[test]
    fn tic_normalizes_rows() {
        let d = Dataset::from_parts(
            array![[2.0, 3.0, 5.0], [1.0, 1.0, 0.0], [0.0, 4.0, 0.0], [1.0, 0.0, 1.0]],
            vec![1, 2, 1, 2],
            2,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
            2,
            "label".into(),
        )
        .unwrap();
        let t = tic_normalize(&d).unwrap();
        assert_eq!(t.features().row(0).to_vec(), vec![0.2, 0.3, 0.5]);
        for i in 0..t.n() {
            let s: f64 = t.features().row(i).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // idempotent
        let tt = tic_normalize(&t).unwrap();
        for (a, b) in tt.features().iter().zip(t.features().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tic_rejects_bad_rows() {
        let mk = |rows: Array2<f64>| {
            Dataset::from_parts_unchecked(
                rows,
                vec![1, 2, 1, 2],
                2,
                vec!["a".into(), "b".into()],
                vec!["x".into(), "y".into()],
                2,
                "label".into(),
            )
        };
        assert!(matches!(
            tic_normalize(&mk(array![[1.0, -0.5], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])),
            Err(DataError::NegativeEntry { row: 0, col: 1 })
        ));
        assert!(matches!(
            tic_normalize(&mk(array![[1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])),
            Err(DataError::ZeroSumRow { row: 1 })
        ));
    }

    #[test]
    fn validate_flags_constants_and_nan() {
        let d = Dataset::from_parts_unchecked(
            array![[1.0, 7.0, 0.0], [2.0, 7.0, f64::NAN], [3.0, 7.0, 1.0], [4.0, 7.0, 0.5]],
            vec![1, 2, 1, 2],
            2,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
            2,
            "label".into(),
        );
        let before: Vec<u64> = d.features().iter().map(|v| v.to_bits()).collect();
        let r = validate(&d);
        assert!(!r.is_valid());
        assert_eq!(r.constant_columns, vec![1]);
        assert!(r.failures.iter().any(|f| f.invariant == "finite-features"
            && f.detail.contains("(1,2)")));
        assert_eq!(r.category_counts["x"], 2);
        let after: Vec<u64> = d.features().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after, "validate must not mutate");
    }

    #[test]
    fn validate_passes_clean_dataset() {
        let d = Dataset::from_parts(
            array![[1.0, 0.0], [2.0, 1.0], [3.0, 0.5], [4.0, -1.0], [5.0, 2.0]],
            vec![1, 2, 3, 1, 2],
            3,
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into(), "z".into()],
            3,
            "label".into(),
        )
        .unwrap();
        let r = validate(&d);
        assert!(r.is_valid());
        assert!(r.constant_columns.is_empty());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("failures").is_some());
        assert!(json.get("category_counts").is_some());
        assert!(json.get("constant_columns").is_some());
    }

    #[test]
    fn csv_round_trip() {
        let f = write_temp(
            "mz1,mz2,subtype\n1.25,2.0,adc\n1.5,-2.5,sqcc\n0.5,0.25,panc\n2.0,1.0,adc\n3.125,4.0,sqcc\n0.1,0.2,panc\n",
        );
        let d = load_dataset(f.path(), "subtype", None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(out.path()).unwrap();
        let d2 = load_dataset(out.path(), "subtype", None).unwrap();
        assert_eq!(d, d2);
    }
}
