//! Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use super::BinaryClassifier;
use crate::automl::exact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    #[serde(with = "exact::vec")]
    pub priors: Vec<f64>,
    #[serde(with = "exact::matrix")]
    pub means: Vec<Vec<f64>>,
    #[serde(with = "exact::matrix")]
    pub variances: Vec<Vec<f64>>,
}

impl GaussianNb {
    /// Variances are smoothed by `var_smoothing` times the largest feature
    /// variance. A class absent from training gets prior 0.
    pub fn fit(rows: &[Vec<f64>], labels: &[u8], var_smoothing: f64) -> Self {
        let f = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut max_var: f64 = 0.0;
        for j in 0..f {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            max_var = max_var.max(v);
        }
        let eps = var_smoothing * max_var.max(f64::MIN_POSITIVE);
        let mut priors = vec![0.0; 2];
        let mut means = vec![vec![0.0; f]; 2];
        let mut variances = vec![vec![eps; f]; 2];
        for c in 0..2u8 {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &y)| y == c).map(|(r, _)| r).collect();
            let nc = members.len() as f64;
            priors[c as usize] = nc / n;
            if members.is_empty() {
                continue;
            }
            for j in 0..f {
                let m = members.iter().map(|r| r[j]).sum::<f64>() / nc;
                let v = members.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / nc;
                means[c as usize][j] = m;
                variances[c as usize][j] = v + eps;
            }
        }
        Self { priors, means, variances }
    }

    fn log_joint(&self, c: usize, row: &[f64]) -> f64 {
        if self.priors[c] == 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut lj = self.priors[c].ln();
        for (j, &x) in row.iter().enumerate() {
            let v = self.variances[c][j];
            lj -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - self.means[c][j]).powi(2) / v);
        }
        lj
    }
}

impl BinaryClassifier for GaussianNb {
    fn proba(&self, row: &[f64]) -> f64 {
        let (l0, l1) = (self.log_joint(0, row), self.log_joint(1, row));
        if l1 == f64::NEG_INFINITY {
            return 0.0;
        }
        if l0 == f64::NEG_INFINITY {
            return 1.0;
        }
        super::sigmoid(l1 - l0)
    }
}
