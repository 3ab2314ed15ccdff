//! k-nearest neighbours, Euclidean distance, majority vote.

use serde::{Deserialize, Serialize};

use super::BinaryClassifier;
use crate::automl::exact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    #[serde(with = "exact::matrix")]
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Knn {
    pub fn fit(rows: &[Vec<f64>], labels: &[u8], k: usize) -> Self {
        Self {
            k: k.max(1),
            rows: rows.to_vec(),
            labels: labels.to_vec(),
        }
    }
}

impl BinaryClassifier for Knn {
    /// Fraction of class-1 labels among the k nearest rows; equal distances
    /// resolve by training order.
    fn proba(&self, row: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let k = self.k.min(dist.len());
        if k == 0 {
            return 0.0;
        }
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let pos = dist[..k].iter().filter(|(_, i)| self.labels[*i] == 1).count();
        pos as f64 / k as f64
    }
}
