//! Logistic regression fitted by full-batch gradient descent on log loss.

use serde::{Deserialize, Serialize};

use super::{sigmoid, BinaryClassifier};
use crate::automl::exact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    #[serde(with = "exact::vec")]
    pub weights: Vec<f64>,
    #[serde(with = "exact::scalar")]
    pub bias: f64,
}

impl LogisticRegression {
    pub fn fit(rows: &[Vec<f64>], labels: &[u8], lr: f64, epochs: usize) -> Self {
        let f = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut m = Self {
            weights: vec![0.0; f],
            bias: 0.0,
        };
        let mut grad = vec![0.0; f];
        for _ in 0..epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (r, &y) in rows.iter().zip(labels) {
                let err = m.proba(r) - y as f64;
                for (g, x) in grad.iter_mut().zip(r) {
                    *g += err * x;
                }
                grad_b += err;
            }
            for (w, g) in m.weights.iter_mut().zip(&grad) {
                *w -= lr * g / n;
            }
            m.bias -= lr * grad_b / n;
        }
        m
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }
}

impl BinaryClassifier for LogisticRegression {
    fn proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.logit(row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_is_even_odds() {
        let m = LogisticRegression {
            weights: vec![1.0],
            bias: 0.0,
        };
        assert_eq!(m.proba(&[0.0]), 0.5);
    }
}
