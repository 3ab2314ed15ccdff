//! Dataset cleaning and preparation ahead of model training.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has no labels")]
    NoLabels,
    #[error("dataset contains a single class")]
    SingleClass,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
}

/// Numeric feature matrix with optional binary labels. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self, PreprocessError> {
        let width = feature_names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(PreprocessError::Shape(format!(
                "row {i} has {} values, expected {width}",
                rows[i].len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(PreprocessError::Shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows.len()
                )));
            }
            if l.iter().any(|&y| y > 1) {
                return Err(PreprocessError::Shape("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            feature_names,
            rows,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn labels(&self) -> Result<&[u8], PreprocessError> {
        self.labels.as_deref().ok_or(PreprocessError::NoLabels)
    }

    /// Row subset in the order given by `idx`.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Column subset in the order given by `cols`.
    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            feature_names: cols.iter().map(|&j| self.feature_names[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&j| r[j]).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn class_counts(&self) -> Result<[usize; 2], PreprocessError> {
        let mut c = [0usize; 2];
        for &y in self.labels()? {
            c[y as usize] += 1;
        }
        Ok(c)
    }

    /// Reads a headered CSV. Empty, `NA` and `NaN` cells become NaN; `target`
    /// names the label column when present.
    pub fn from_csv<R: Read>(reader: R, target: Option<&str>) -> Result<Self, PreprocessError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| PreprocessError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let target_idx = match target {
            Some(t) => Some(
                header
                    .iter()
                    .position(|h| h == t)
                    .ok_or_else(|| PreprocessError::MissingColumn(t.to_string()))?,
            ),
            None => None,
        };
        let feature_names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != target_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PreprocessError::Csv(e.to_string()))?;
            let mut row = Vec::with_capacity(feature_names.len());
            for (i, field) in rec.iter().enumerate() {
                if Some(i) == target_idx {
                    let y: u8 = field.parse().ok().filter(|y| *y <= 1).ok_or_else(|| {
                        PreprocessError::Csv(format!("row {}: bad label `{field}`", n + 1))
                    })?;
                    labels.push(y);
                } else if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                    row.push(f64::NAN);
                } else {
                    row.push(field.parse().map_err(|_| {
                        PreprocessError::Csv(format!("row {}: `{field}` is not numeric", n + 1))
                    })?);
                }
            }
            rows.push(row);
        }
        Dataset::new(feature_names, rows, target_idx.map(|_| labels))
    }

    pub fn to_csv<W: Write>(&self, writer: W, target: &str) -> Result<(), PreprocessError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| PreprocessError::Csv(e.to_string());
        let mut header = self.feature_names.clone();
        if self.labels.is_some() {
            header.push(target.to_string());
        }
        w.write_record(&header).map_err(err)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| PreprocessError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub duplicates_removed: usize,
    pub values_imputed: usize,
    pub outlier_rows_removed: usize,
    pub features_kept: Vec<String>,
    pub seed: u64,
    /// Scaling fitted on the prepared rows, restricted to the kept features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<Normalizer>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

fn row_key(row: &[f64], label: Option<u8>) -> (Vec<u64>, Option<u8>) {
    // NaN payloads are canonicalised so two missing cells compare equal.
    let bits = row
        .iter()
        .map(|v| if v.is_nan() { f64::NAN.to_bits() } else { (v + 0.0).to_bits() })
        .collect();
    (bits, label)
}

/// Drops exact duplicate rows (first occurrence kept), then imputes missing
/// cells with the per-feature median of the remaining rows.
pub fn clean(d: &Dataset) -> Result<(Dataset, PreprocessReport), PreprocessError> {
    let mut seen = HashSet::new();
    let mut keep = Vec::new();
    for (i, row) in d.rows.iter().enumerate() {
        let label = d.labels.as_ref().map(|l| l[i]);
        if seen.insert(row_key(row, label)) {
            keep.push(i);
        }
    }
    let mut out = d.subset(&keep);
    if out.rows.is_empty() {
        return Err(PreprocessError::EmptyDataset);
    }
    let mut imputed = 0;
    for j in 0..out.n_features() {
        let mut present: Vec<f64> = out.rows.iter().map(|r| r[j]).filter(|v| !v.is_nan()).collect();
        if present.len() == out.rows.len() {
            continue;
        }
        // An all-missing column has no median; fall back to zero.
        let fill = median(&mut present).unwrap_or(0.0);
        for row in &mut out.rows {
            if row[j].is_nan() {
                row[j] = fill;
                imputed += 1;
            }
        }
    }
    let report = PreprocessReport {
        duplicates_removed: d.n_rows() - out.n_rows(),
        values_imputed: imputed,
        outlier_rows_removed: 0,
        features_kept: out.feature_names.clone(),
        seed: 0,
        normalizer: None,
    };
    Ok((out, report))
}

/// Per-feature z-score parameters. Population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero spread; these pass through unscaled.
    pub constant: Vec<bool>,
}

impl Normalizer {
    /// Keeps only the listed feature positions, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            mean: idx.iter().map(|&j| self.mean[j]).collect(),
            std: idx.iter().map(|&j| self.std[j]).collect(),
            constant: idx.iter().map(|&j| self.constant[j]).collect(),
        }
    }

    pub fn fit(d: &Dataset) -> Self {
        let n = d.n_rows().max(1) as f64;
        let mut mean = vec![0.0; d.n_features()];
        let mut std = vec![0.0; d.n_features()];
        for j in 0..d.n_features() {
            let m = d.rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = d.rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        let constant = std
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s <= 1e-12 * m.abs().max(1.0))
            .collect();
        Self { mean, std, constant }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.constant[j] {
                    x
                } else {
                    (x - self.mean[j]) / self.std[j]
                }
            })
            .collect()
    }

    pub fn transform(&self, d: &Dataset) -> Dataset {
        Dataset {
            feature_names: d.feature_names.clone(),
            rows: d.rows.iter().map(|r| self.transform_row(r)).collect(),
            labels: d.labels.clone(),
        }
    }
}

pub fn normalize(d: &Dataset) -> (Dataset, Normalizer) {
    let norm = Normalizer::fit(d);
    (norm.transform(d), norm)
}

/// Removes rows with any feature |z| above `z_max`. Returns the removed indices.
pub fn remove_outliers(d: &Dataset, z_max: f64) -> Result<(Dataset, Vec<usize>), PreprocessError> {
    if !(z_max > 0.0) {
        return Err(PreprocessError::InvalidArgument(format!("z_max must be > 0, got {z_max}")));
    }
    let norm = Normalizer::fit(d);
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for (i, row) in d.rows.iter().enumerate() {
        let outlier = row.iter().enumerate().any(|(j, &x)| {
            !norm.constant[j] && ((x - norm.mean[j]) / norm.std[j]).abs() > z_max
        });
        if outlier {
            removed.push(i);
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(PreprocessError::EmptyDataset);
    }
    Ok((d.subset(&keep), removed))
}

pub const MI_BINS: usize = 10;

/// Equal-width bin index for each value over the column's [min, max] range.
pub fn equal_width_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    values
        .iter()
        .map(|&v| {
            if !(width > 0.0) {
                0
            } else {
                (((v - lo) / width) as usize).min(bins - 1)
            }
        })
        .collect()
}

/// Mutual information (nats) between a binned feature and a binary label.
pub fn mutual_information(values: &[f64], labels: &[u8]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let bins = equal_width_bins(values, MI_BINS);
    let mut joint = [[0usize; 2]; MI_BINS];
    for (&b, &y) in bins.iter().zip(labels) {
        joint[b][y as usize] += 1;
    }
    let nf = n as f64;
    let py = [0, 1].map(|y| joint.iter().map(|r| r[y]).sum::<usize>() as f64 / nf);
    let mut mi = 0.0;
    for row in &joint {
        let pb = (row[0] + row[1]) as f64 / nf;
        for y in 0..2 {
            if row[y] == 0 {
                continue;
            }
            let pj = row[y] as f64 / nf;
            mi += pj * (pj / (pb * py[y])).ln();
        }
    }
    mi.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub index: usize,
    pub score: f64,
}

/// Ranks features by mutual information with the label and keeps the top `k`
/// (kept columns stay in their original order).
pub fn select_features(d: &Dataset, k: usize) -> Result<(Dataset, Vec<FeatureScore>), PreprocessError> {
    let labels = d.labels()?;
    if k == 0 || k > d.n_features() {
        return Err(PreprocessError::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            d.n_features()
        )));
    }
    let mut ranking: Vec<FeatureScore> = (0..d.n_features())
        .map(|j| FeatureScore {
            name: d.feature_names[j].clone(),
            index: j,
            score: mutual_information(&d.column(j), labels),
        })
        .collect();
    // Stable sort keeps original order among ties.
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<usize> = ranking[..k].iter().map(|f| f.index).collect();
    kept.sort_unstable();
    Ok((d.select_columns(&kept), ranking))
}

/// Subsamples the majority class, uniformly without replacement, down to the
/// minority count. Retained rows keep their original relative order.
pub fn undersample_majority(d: &Dataset, seed: u64) -> Result<Dataset, PreprocessError> {
    let labels = d.labels()?;
    let counts = d.class_counts()?;
    if counts[0] == 0 || counts[1] == 0 {
        return Err(PreprocessError::SingleClass);
    }
    if counts[0] == counts[1] {
        return Ok(d.clone());
    }
    let majority = if counts[0] > counts[1] { 0u8 } else { 1u8 };
    let minority_n = counts[1 - majority as usize];
    let majority_idx: Vec<usize> = (0..d.n_rows()).filter(|&i| labels[i] == majority).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> = sample(&mut rng, majority_idx.len(), minority_n)
        .into_iter()
        .map(|p| majority_idx[p])
        .collect();
    let keep: Vec<usize> = (0..d.n_rows())
        .filter(|i| labels[*i] != majority || chosen.contains(i))
        .collect();
    Ok(d.subset(&keep))
}

/// Order of the preparation steps applied before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub remove_outliers: Option<f64>,
    pub normalize: bool,
    pub select_k: Option<usize>,
    pub undersample: bool,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            remove_outliers: Some(3.0),
            normalize: true,
            select_k: None,
            undersample: false,
            seed: 1,
        }
    }
}

/// clean -> undersample -> outliers -> normalize -> feature selection.
pub fn prepare(d: &Dataset, opts: &PrepareOptions) -> Result<(Dataset, PreprocessReport), PreprocessError> {
    let (mut data, mut report) = clean(d)?;
    report.seed = opts.seed;
    if opts.undersample {
        data = undersample_majority(&data, opts.seed)?;
    }
    if let Some(z) = opts.remove_outliers {
        let (kept, removed) = remove_outliers(&data, z)?;
        report.outlier_rows_removed = removed.len();
        data = kept;
    }
    if opts.normalize {
        let (scaled, n) = normalize(&data);
        data = scaled;
        report.normalizer = Some(n);
    }
    if let Some(k) = opts.select_k {
        let before = data.feature_names.clone();
        data = select_features(&data, k.min(data.n_features()))?.0;
        let kept: Vec<usize> = data
            .feature_names
            .iter()
            .map(|f| before.iter().position(|b| b == f).expect("kept feature exists"))
            .collect();
        report.normalizer = report.normalizer.map(|n| n.select(&kept));
    }
    report.features_kept = data.feature_names.clone();
    Ok((data, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> Dataset {
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        Dataset::new(names, rows, labels).unwrap()
    }

    #[test]
    fn duplicate_rows_removed() {
        let d = ds(vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, 4.0]], None);
        let (out, rep) = clean(&d).unwrap();
        assert_eq!(out.n_rows(), 2);
        assert_eq!(rep.duplicates_removed, 1);
    }

    #[test]
    fn missing_value_takes_median() {
        let d = ds(vec![vec![1.0], vec![f64::NAN], vec![3.0]], None);
        let (out, rep) = clean(&d).unwrap();
        assert_eq!(out.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(rep.values_imputed, 1);
    }

    #[test]
    fn zscore_of_two_four_six() {
        let d = ds(vec![vec![2.0], vec![4.0], vec![6.0]], None);
        let (out, norm) = normalize(&d);
        assert!((norm.mean[0] - 4.0).abs() < 1e-12);
        assert!((norm.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let z = out.column(0);
        for (got, want) in z.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_feature_flagged_and_untouched() {
        let d = ds(vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]], None);
        let (out, norm) = normalize(&d);
        assert_eq!(norm.constant, vec![true, false]);
        assert_eq!(out.column(0), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn normalized_columns_are_a_fixpoint() {
        let d = ds(vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]], None);
        let (out, _) = normalize(&d);
        for (a, b) in out.column(0).iter().zip(d.column(0)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn outlier_removed_when_z_exceeds_three() {
        let mut rows: Vec<Vec<f64>> = vec![vec![1.0]; 4];
        rows.push(vec![100.0]);
        let d = ds(rows.clone(), None);
        let (_, removed) = remove_outliers(&d, 3.0).unwrap();
        let n = rows.len() as f64;
        let m = rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let s = (rows.iter().map(|r| (r[0] - m).powi(2)).sum::<f64>() / n).sqrt();
        let z = (100.0 - m) / s;
        // With five points the largest attainable |z| is (n-1)/sqrt(n-1) = 2.
        assert!((z - 2.0).abs() < 1e-12);
        assert!(removed.is_empty());

        let mut rows: Vec<Vec<f64>> = vec![vec![1.0]; 20];
        rows.push(vec![100.0]);
        let (out, removed) = remove_outliers(&ds(rows, None), 3.0).unwrap();
        assert_eq!(removed, vec![20]);
        assert_eq!(out.n_rows(), 20);
    }

    #[test]
    fn outlier_edge_cases() {
        let d = ds(vec![vec![2.0, 2.0]; 5], None);
        assert!(remove_outliers(&d, 3.0).unwrap().1.is_empty());
        let d = ds(vec![vec![1.0], vec![50.0], vec![3.0]], None);
        assert_eq!(remove_outliers(&d, f64::INFINITY).unwrap().0, d);
        assert!(remove_outliers(&d, 0.0).is_err());
    }

    #[test]
    fn label_copy_feature_wins_selection() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| vec![((i * 7919) % 13) as f64, y as f64])
            .collect();
        let d = ds(rows, Some(labels));
        let (out, ranking) = select_features(&d, 1).unwrap();
        assert_eq!(out.feature_names, vec!["f1"]);
        assert_eq!(ranking[0].name, "f1");
    }

    #[test]
    fn select_all_keeps_columns() {
        let d = ds(vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0]], Some(vec![0, 1, 0]));
        let (out, ranking) = select_features(&d, 2).unwrap();
        assert_eq!(out.feature_names, d.feature_names);
        assert_eq!(ranking.len(), 2);
        assert!(matches!(select_features(&ds(vec![vec![1.0]], None), 1), Err(PreprocessError::NoLabels)));
    }

    #[test]
    fn undersample_balances_classes() {
        let rows = (0..120).map(|i| vec![i as f64]).collect();
        let labels = (0..120).map(|i| (i >= 100) as u8).collect();
        let d = ds(rows, Some(labels));
        let a = undersample_majority(&d, 7).unwrap();
        assert_eq!(a.class_counts().unwrap(), [20, 20]);
        assert_eq!(a, undersample_majority(&d, 7).unwrap());
        let b = undersample_majority(&d, 8).unwrap();
        assert_eq!(b.class_counts().unwrap(), [20, 20]);
    }

    #[test]
    fn undersample_balanced_and_single_class() {
        let d = ds(vec![vec![0.0], vec![1.0]], Some(vec![0, 1]));
        assert_eq!(undersample_majority(&d, 1).unwrap(), d);
        let d = ds(vec![vec![0.0], vec![1.0]], Some(vec![1, 1]));
        assert_eq!(undersample_majority(&d, 1), Err(PreprocessError::SingleClass));
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let text = "a,b,label\n1,,0\n2,3.5,1\n";
        let d = Dataset::from_csv(text.as_bytes(), Some("label")).unwrap();
        assert!(d.rows[0][1].is_nan());
        assert_eq!(d.labels, Some(vec![0, 1]));
        assert!(Dataset::from_csv(text.as_bytes(), Some("target")).is_err());
    }
}
