//! One-hidden-layer perceptron with sigmoid units, trained by
//! backpropagation with mini-batch gradient descent on log loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, BinaryClassifier};
use crate::automl::exact;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.5,
            epochs: 100,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// hidden × features
    #[serde(with = "exact::matrix")]
    pub w1: Vec<Vec<f64>>,
    #[serde(with = "exact::vec")]
    pub b1: Vec<f64>,
    #[serde(with = "exact::vec")]
    pub w2: Vec<f64>,
    #[serde(with = "exact::scalar")]
    pub b2: f64,
}

impl Mlp {
    /// Uniform Glorot initialisation.
    pub fn init(features: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let a1 = (6.0 / (features + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        Self {
            w1: (0..hidden)
                .map(|_| (0..features).map(|_| rng.gen_range(-a1..a1)).collect())
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.gen_range(-a2..a2)).collect(),
            b2: 0.0,
        }
    }

    fn hidden(&self, row: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| sigmoid(b + w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>()))
            .collect()
    }

    fn output(&self, h: &[f64]) -> f64 {
        sigmoid(self.b2 + self.w2.iter().zip(h).map(|(a, x)| a * x).sum::<f64>())
    }

    /// Mean binary cross-entropy over the given rows.
    pub fn loss(&self, rows: &[Vec<f64>], labels: &[u8]) -> f64 {
        let eps = 1e-15;
        rows.iter()
            .zip(labels)
            .map(|(r, &y)| {
                let o = self.proba(r).clamp(eps, 1.0 - eps);
                if y == 1 {
                    -o.ln()
                } else {
                    -(1.0 - o).ln()
                }
            })
            .sum::<f64>()
            / rows.len().max(1) as f64
    }

    /// Gradient of `loss` with respect to every parameter, shaped like `self`.
    pub fn gradients(&self, rows: &[Vec<f64>], labels: &[u8]) -> Mlp {
        let mut g = Mlp {
            w1: vec![vec![0.0; self.w1.first().map_or(0, Vec::len)]; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: 0.0,
        };
        let n = rows.len().max(1) as f64;
        for (r, &y) in rows.iter().zip(labels) {
            let h = self.hidden(r);
            let o = self.output(&h);
            let dz2 = (o - y as f64) / n;
            g.b2 += dz2;
            for j in 0..h.len() {
                g.w2[j] += dz2 * h[j];
                let dz1 = dz2 * self.w2[j] * h[j] * (1.0 - h[j]);
                g.b1[j] += dz1;
                for (gw, x) in g.w1[j].iter_mut().zip(r) {
                    *gw += dz1 * x;
                }
            }
        }
        g
    }

    fn step(&mut self, g: &Mlp, lr: f64) {
        for (row, grow) in self.w1.iter_mut().zip(&g.w1) {
            for (w, d) in row.iter_mut().zip(grow) {
                *w -= lr * d;
            }
        }
        for (w, d) in self.b1.iter_mut().zip(&g.b1) {
            *w -= lr * d;
        }
        for (w, d) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * d;
        }
        self.b2 -= lr * g.b2;
    }

    /// Every parameter in a fixed order: w1 row-major, b1, w2, b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().flatten().copied().collect();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn unflatten(&self, v: &[f64]) -> Mlp {
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("parameter vector length matches");
        let w1 = self.w1.iter().map(|r| r.iter().map(|_| next()).collect()).collect();
        let b1 = self.b1.iter().map(|_| next()).collect();
        let w2 = self.w2.iter().map(|_| next()).collect();
        let b2 = next();
        Mlp { w1, b1, w2, b2 }
    }

    pub fn fit(rows: &[Vec<f64>], labels: &[u8], cfg: &MlpConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = rows.first().map_or(0, Vec::len);
        let mut m = Mlp::init(features, cfg.hidden.max(1), &mut rng);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let batch = cfg.batch_size.max(1);
        let mut br = Vec::with_capacity(batch);
        let mut bl = Vec::with_capacity(batch);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                br.clear();
                bl.clear();
                br.extend(chunk.iter().map(|&i| rows[i].clone()));
                bl.extend(chunk.iter().map(|&i| labels[i]));
                let g = m.gradients(&br, &bl);
                m.step(&g, cfg.learning_rate);
            }
        }
        m
    }
}

impl BinaryClassifier for Mlp {
    fn proba(&self, row: &[f64]) -> f64 {
        self.output(&self.hidden(row))
    }
}
