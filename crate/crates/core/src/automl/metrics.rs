//! Binary classification metrics from a confusion matrix.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Self {
        let mut cm = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => cm.tp += 1,
                (0, 1) => cm.fp += 1,
                (0, 0) => cm.tn += 1,
                _ => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub accuracy: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub kappa: f64,
    pub mcc: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, with tied
/// scores sharing their average rank. `None` when a class is absent.
pub fn auc_from_scores(scores: &[(f64, u8)]) -> Option<f64> {
    let n_pos = scores.iter().filter(|s| s.1 == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| scores[k].1 == 1).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Metrics for one confusion matrix. `scores` pairs the model's class-1
/// probability with the true label; without scores AUC is reported as 0.
pub fn metrics_from_confusion(cm: &ConfusionMatrix, scores: Option<&[(f64, u8)]>) -> MetricRecord {
    let mut degenerate = false;
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let n = tp + fp + tn + fn_;
    let accuracy = ratio(tp + tn, n, &mut degenerate);
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = f1_score(precision, recall);

    let p_e = if n > 0.0 {
        ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n)
    } else {
        0.0
    };
    let kappa = ratio(accuracy - p_e, 1.0 - p_e, &mut degenerate);

    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den, &mut degenerate).clamp(-1.0, 1.0);

    let auc = match scores {
        Some(s) => auc_from_scores(s).unwrap_or_else(|| {
            degenerate = true;
            0.0
        }),
        None => 0.0,
    };
    MetricRecord {
        accuracy,
        auc,
        recall,
        precision,
        f1,
        kappa,
        mcc,
        degenerate,
    }
}
