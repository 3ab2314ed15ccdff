//! Model zoo, k-fold comparison, grid tuning and scored prediction.
//!
//! The workflow mirrors a typical AutoML session: every model in the zoo is
//! cross-validated on the same stratified folds, the table is ranked by
//! accuracy, the winner is grid-tuned on a chosen objective and refit on the
//! full dataset, and the fitted model scores new rows.

pub mod artifact;
pub mod exact;
pub mod metrics;
pub mod models;
pub mod split;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::{Dataset, Normalizer};
pub use metrics::{metrics_from_confusion, ConfusionMatrix, MetricRecord};
use models::knn::Knn;
use models::logistic::LogisticRegression;
use models::mlp::{Mlp, MlpConfig};
use models::naive_bayes::GaussianNb;
use models::tree::{DecisionTree, TreeConfig};
use models::BinaryClassifier;
pub use split::kfold_split;

#[derive(Debug, Error, PartialEq)]
pub enum AutomlError {
    #[error("{rows} rows cannot be split into {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("dataset has no labels")]
    NoLabels,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature names do not match the fitted model")]
    FeatureMismatch,
    #[error("invalid hyperparameter for {kind}: {reason}")]
    InvalidHyperparameter { kind: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model zoo is empty")]
    EmptyZoo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DecisionTree,
    Knn,
    GaussianNb,
    LogisticRegression,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::DecisionTree,
        ModelKind::Knn,
        ModelKind::GaussianNb,
        ModelKind::LogisticRegression,
        ModelKind::Mlp,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "Decision Tree Classifier",
            ModelKind::Knn => "K Neighbors Classifier",
            ModelKind::GaussianNb => "Naive Bayes",
            ModelKind::LogisticRegression => "Logistic Regression",
            ModelKind::Mlp => "MLP Classifier",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "dt",
            ModelKind::Knn => "knn",
            ModelKind::GaussianNb => "nb",
            ModelKind::LogisticRegression => "lr",
            ModelKind::Mlp => "mlp",
        }
    }

    fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            ModelKind::DecisionTree => &["max_depth", "min_samples_split"],
            ModelKind::Knn => &["k"],
            ModelKind::GaussianNb => &["var_smoothing"],
            ModelKind::LogisticRegression => &["learning_rate", "epochs"],
            ModelKind::Mlp => &["hidden", "learning_rate", "epochs", "batch_size"],
        }
    }

    /// Default tuning grid, one hyperparameter map per cell.
    pub fn default_grid(self) -> Vec<Hyperparams> {
        let cell = |pairs: &[(&str, Value)]| -> Hyperparams {
            pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
        };
        match self {
            ModelKind::DecisionTree => {
                let depths = [Value::from(2), Value::from(4), Value::from(6), Value::from(8), Value::Null];
                depths
                    .iter()
                    .flat_map(|d| {
                        [2, 10].map(|s| cell(&[("max_depth", d.clone()), ("min_samples_split", Value::from(s))]))
                    })
                    .collect()
            }
            ModelKind::Knn => [3, 5, 9].iter().map(|&k| cell(&[("k", Value::from(k))])).collect(),
            ModelKind::GaussianNb => vec![Hyperparams::new()],
            ModelKind::LogisticRegression => [0.01, 0.1]
                .iter()
                .map(|&lr| cell(&[("learning_rate", Value::from(lr))]))
                .collect(),
            ModelKind::Mlp => [8, 16].iter().map(|&h| cell(&[("hidden", Value::from(h))])).collect(),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = AutomlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.short_name() == s || serde_json::to_value(k).ok() == Some(Value::from(s)))
            .ok_or_else(|| AutomlError::InvalidArgument(format!("unknown model kind `{s}`")))
    }
}

pub type Hyperparams = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self {
            kind,
            hyperparams: Hyperparams::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.hyperparams.insert(key.to_string(), value.into());
        self
    }

    /// Overlays `cell` onto this spec's hyperparameters.
    pub fn merged(&self, cell: &Hyperparams) -> Self {
        let mut out = self.clone();
        out.hyperparams.extend(cell.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    fn invalid(&self, reason: impl Into<String>) -> AutomlError {
        AutomlError::InvalidHyperparameter {
            kind: self.kind.short_name().into(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<(), AutomlError> {
        let allowed = self.kind.allowed_keys();
        if let Some(k) = self.hyperparams.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(self.invalid(format!("unknown key `{k}`")));
        }
        self.build_config().map(|_| ())
    }

    fn usize_param(&self, key: &str, default: usize, min: usize) -> Result<usize, AutomlError> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => match v.as_u64() {
                Some(x) if x as usize >= min => Ok(x as usize),
                _ => Err(self.invalid(format!("`{key}` must be an integer ≥ {min}, got {v}"))),
            },
        }
    }

    fn f64_param(&self, key: &str, default: f64) -> Result<f64, AutomlError> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => Err(self.invalid(format!("`{key}` must be a positive number, got {v}"))),
            },
        }
    }

    fn build_config(&self) -> Result<KindConfig, AutomlError> {
        Ok(match self.kind {
            ModelKind::DecisionTree => KindConfig::Tree(TreeConfig {
                max_depth: match self.hyperparams.get("max_depth") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(self.usize_param("max_depth", 0, 1)?),
                },
                min_samples_split: self.usize_param("min_samples_split", 2, 2)?,
            }),
            ModelKind::Knn => KindConfig::Knn(self.usize_param("k", 5, 1)?),
            ModelKind::GaussianNb => KindConfig::Nb(self.f64_param("var_smoothing", 1e-9)?),
            ModelKind::LogisticRegression => KindConfig::Logistic {
                lr: self.f64_param("learning_rate", 0.1)?,
                epochs: self.usize_param("epochs", 500, 1)?,
            },
            ModelKind::Mlp => {
                let d = MlpConfig::default();
                KindConfig::Mlp(MlpConfig {
                    hidden: self.usize_param("hidden", d.hidden, 1)?,
                    learning_rate: self.f64_param("learning_rate", d.learning_rate)?,
                    epochs: self.usize_param("epochs", d.epochs, 1)?,
                    batch_size: self.usize_param("batch_size", d.batch_size, 1)?,
                })
            }
        })
    }
}

enum KindConfig {
    Tree(TreeConfig),
    Knn(usize),
    Nb(f64),
    Logistic { lr: f64, epochs: usize },
    Mlp(MlpConfig),
}

/// The zoo with default hyperparameters, in declaration order.
pub fn default_zoo(seed: u64) -> Vec<ModelSpec> {
    ModelKind::ALL.iter().map(|&k| ModelSpec::new(k, seed)).collect()
}

/// Learned parameters, one variant per model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Parameters {
    DecisionTree(DecisionTree),
    Knn(Knn),
    GaussianNb(GaussianNb),
    LogisticRegression(LogisticRegression),
    Mlp(Mlp),
}

impl Parameters {
    fn classifier(&self) -> &dyn BinaryClassifier {
        match self {
            Parameters::DecisionTree(m) => m,
            Parameters::Knn(m) => m,
            Parameters::GaussianNb(m) => m,
            Parameters::LogisticRegression(m) => m,
            Parameters::Mlp(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub parameters: Parameters,
    pub feature_names: Vec<String>,
    /// SHA-256 over the training data (names, cell bits, labels).
    pub training_fingerprint: String,
    /// Applied to incoming rows before the classifier when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<NormalizerParams>,
}

/// Serializable form of [`Normalizer`] with exact float encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerParams {
    #[serde(with = "exact::vec")]
    pub mean: Vec<f64>,
    #[serde(with = "exact::vec")]
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl From<&Normalizer> for NormalizerParams {
    fn from(n: &Normalizer) -> Self {
        Self {
            mean: n.mean.clone(),
            std: n.std.clone(),
            constant: n.constant.clone(),
        }
    }
}

impl NormalizerParams {
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| if self.constant[j] { x } else { (x - self.mean[j]) / self.std[j] })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    /// Estimated probability of the predicted label, in [0.5, 1].
    pub score: f64,
    /// Estimated probability of class 1.
    pub proba: f64,
}

impl Prediction {
    pub fn from_proba(p1: f64) -> Self {
        let label = u8::from(p1 > 0.5);
        Self {
            label,
            score: if label == 1 { p1 } else { 1.0 - p1 },
            proba: p1,
        }
    }
}

impl FittedModel {
    pub fn with_normalizer(mut self, n: &Normalizer) -> Self {
        self.normalizer = Some(n.into());
        self
    }

    pub fn predict_row(&self, row: &[f64]) -> Prediction {
        let p = match &self.normalizer {
            Some(n) => self.parameters.classifier().proba(&n.transform_row(row)),
            None => self.parameters.classifier().proba(row),
        };
        Prediction::from_proba(p)
    }
}

pub fn dataset_fingerprint(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for name in &d.feature_names {
        h.update(name.as_bytes());
        h.update([0]);
    }
    for row in &d.rows {
        for v in row {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    if let Some(l) = &d.labels {
        h.update(l);
    }
    hex::encode(h.finalize())
}

fn check_finite(d: &Dataset) -> Result<(), AutomlError> {
    for (i, row) in d.rows.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(AutomlError::NonFiniteFeature { row: i, col: j });
        }
    }
    Ok(())
}

/// Fits `spec` on the full dataset. Deterministic for a fixed seed.
pub fn train(spec: &ModelSpec, d: &Dataset) -> Result<FittedModel, AutomlError> {
    spec.validate()?;
    let labels = d.labels.as_deref().ok_or(AutomlError::NoLabels)?;
    check_finite(d)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if (pos == 0 || pos == labels.len()) && spec.kind != ModelKind::GaussianNb {
        return Err(AutomlError::SingleClass);
    }
    if labels.is_empty() {
        return Err(AutomlError::SingleClass);
    }
    let rows = &d.rows;
    let parameters = match spec.build_config()? {
        KindConfig::Tree(cfg) => Parameters::DecisionTree(DecisionTree::fit(rows, labels, &cfg)),
        KindConfig::Knn(k) => Parameters::Knn(Knn::fit(rows, labels, k)),
        KindConfig::Nb(s) => Parameters::GaussianNb(GaussianNb::fit(rows, labels, s)),
        KindConfig::Logistic { lr, epochs } => {
            Parameters::LogisticRegression(LogisticRegression::fit(rows, labels, lr, epochs))
        }
        KindConfig::Mlp(cfg) => Parameters::Mlp(Mlp::fit(rows, labels, &cfg, spec.seed)),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        parameters,
        feature_names: d.feature_names.clone(),
        training_fingerprint: dataset_fingerprint(d),
        normalizer: None,
    })
}

pub fn predict_with_scores(m: &FittedModel, rows: &Dataset) -> Result<Vec<Prediction>, AutomlError> {
    if rows.feature_names != m.feature_names {
        return Err(AutomlError::FeatureMismatch);
    }
    Ok(rows.rows.iter().map(|r| m.predict_row(r)).collect())
}

/// Cross-validation summary for one model, in comparison-table column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelSpec,
    pub accuracy: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub kappa: f64,
    pub mcc: f64,
    pub train_time_s: f64,
    /// Held-out accuracy of each fold.
    pub fold_scores: Vec<f64>,
    #[serde(default)]
    pub degenerate: bool,
}

impl ModelReport {
    pub fn metric(&self, name: Objective) -> f64 {
        match name {
            Objective::Accuracy => self.accuracy,
            Objective::F1 => self.f1,
            Objective::Recall => self.recall,
            Objective::Precision => self.precision,
        }
    }

    pub const CSV_HEADER: &'static str = "Model,Name,Accuracy,AUC,Recall,Prec.,F1,Kappa,MCC,TT (Sec)";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.model.kind.short_name(),
            self.model.kind.display_name(),
            self.accuracy,
            self.auc,
            self.recall,
            self.precision,
            self.f1,
            self.kappa,
            self.mcc,
            self.train_time_s
        )
    }
}

pub fn reports_to_csv(reports: &[ModelReport]) -> String {
    let mut out = String::from(ModelReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Human-readable comparison table.
pub fn reports_to_table(reports: &[ModelReport]) -> String {
    let mut out = format!(
        "{:<6} {:<26} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "", "Model", "Accuracy", "AUC", "Recall", "Prec.", "F1", "Kappa", "MCC", "TT (Sec)"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<6} {:<26} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            r.model.kind.short_name(),
            r.model.kind.display_name(),
            r.accuracy,
            r.auc,
            r.recall,
            r.precision,
            r.f1,
            r.kappa,
            r.mcc,
            r.train_time_s
        ));
    }
    out
}

fn evaluate_on_folds(spec: &ModelSpec, d: &Dataset, folds: &[Vec<usize>]) -> Result<ModelReport, AutomlError> {
    let start = Instant::now();
    let per_fold: Vec<Result<MetricRecord, AutomlError>> = (0..folds.len())
        .into_par_iter()
        .map(|i| {
            let train_set = d.subset(&split::training_indices(folds, i));
            let test_set = d.subset(&folds[i]);
            let model = train(spec, &train_set)?;
            let truth = test_set.labels.as_deref().ok_or(AutomlError::NoLabels)?;
            let preds: Vec<Prediction> = test_set.rows.iter().map(|r| model.predict_row(r)).collect();
            let predicted: Vec<u8> = preds.iter().map(|p| p.label).collect();
            let scores: Vec<(f64, u8)> = preds.iter().map(|p| p.proba).zip(truth.iter().copied()).collect();
            let cm = ConfusionMatrix::from_predictions(truth, &predicted);
            Ok(metrics_from_confusion(&cm, Some(&scores)))
        })
        .collect();
    let fold_metrics = per_fold.into_iter().collect::<Result<Vec<_>, _>>()?;
    let k = fold_metrics.len() as f64;
    let mean = |f: fn(&MetricRecord) -> f64| fold_metrics.iter().map(f).sum::<f64>() / k;
    Ok(ModelReport {
        model: spec.clone(),
        accuracy: mean(|m| m.accuracy),
        auc: mean(|m| m.auc),
        recall: mean(|m| m.recall),
        precision: mean(|m| m.precision),
        f1: mean(|m| m.f1),
        kappa: mean(|m| m.kappa),
        mcc: mean(|m| m.mcc),
        train_time_s: start.elapsed().as_secs_f64(),
        fold_scores: fold_metrics.iter().map(|m| m.accuracy).collect(),
        degenerate: fold_metrics.iter().any(|m| m.degenerate),
    })
}

/// k-fold cross-validation: train on k−1 folds, score the held-out fold,
/// average fold metrics.
pub fn cross_validate(spec: &ModelSpec, d: &Dataset, k: usize, seed: u64) -> Result<ModelReport, AutomlError> {
    spec.validate()?;
    let labels = d.labels.as_deref().ok_or(AutomlError::NoLabels)?;
    let folds = kfold_split(d.n_rows(), k, seed, Some(labels))?;
    evaluate_on_folds(spec, d, &folds)
}

/// Cross-validates every zoo entry on shared folds and ranks by accuracy,
/// then F1, then declaration order.
pub fn compare_models(d: &Dataset, zoo: &[ModelSpec], k: usize, seed: u64) -> Result<Vec<ModelReport>, AutomlError> {
    if zoo.is_empty() {
        return Err(AutomlError::EmptyZoo);
    }
    for spec in zoo {
        spec.validate()?;
    }
    let labels = d.labels.as_deref().ok_or(AutomlError::NoLabels)?;
    let folds = kfold_split(d.n_rows(), k, seed, Some(labels))?;
    let mut reports = zoo
        .iter()
        .map(|spec| evaluate_on_folds(spec, d, &folds))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then(b.f1.total_cmp(&a.f1)));
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Accuracy,
    F1,
    Recall,
    Precision,
}

impl std::str::FromStr for Objective {
    type Err = AutomlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" => Ok(Objective::Accuracy),
            "f1" => Ok(Objective::F1),
            "recall" => Ok(Objective::Recall),
            "precision" | "prec" => Ok(Objective::Precision),
            other => Err(AutomlError::InvalidArgument(format!("unknown objective `{other}`"))),
        }
    }
}

/// Grid search over `grid`, each cell cross-validated on the same folds.
/// The best cell (first on ties) is refit on the full dataset.
pub fn tune_model_with_grid(
    best: &ModelSpec,
    d: &Dataset,
    k: usize,
    objective: Objective,
    grid: &[Hyperparams],
) -> Result<(FittedModel, ModelReport), AutomlError> {
    let labels = d.labels.as_deref().ok_or(AutomlError::NoLabels)?;
    let folds = kfold_split(d.n_rows(), k, best.seed, Some(labels))?;
    let cells: Vec<ModelSpec> = if grid.is_empty() {
        vec![best.clone()]
    } else {
        grid.iter().map(|c| best.merged(c)).collect()
    };
    let mut winner: Option<ModelReport> = None;
    for cell in &cells {
        cell.validate()?;
        let report = evaluate_on_folds(cell, d, &folds)?;
        let better = winner
            .as_ref()
            .map_or(true, |w| report.metric(objective) > w.metric(objective));
        if better {
            winner = Some(report);
        }
    }
    let report = winner.expect("at least one grid cell");
    let fitted = train(&report.model, d)?;
    Ok((fitted, report))
}

pub fn tune_model(best: &ModelSpec, d: &Dataset, k: usize, objective: Objective) -> Result<(FittedModel, ModelReport), AutomlError> {
    tune_model_with_grid(best, d, k, objective, &best.kind.default_grid())
}
