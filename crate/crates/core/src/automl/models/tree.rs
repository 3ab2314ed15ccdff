//! CART decision tree with Gini impurity.

use serde::{Deserialize, Serialize};

use super::BinaryClassifier;
use crate::automl::exact;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        #[serde(with = "exact::scalar")]
        p1: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        #[serde(with = "exact::scalar")]
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Best {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn best_split(rows: &[Vec<f64>], labels: &[u8], idx: &[usize]) -> Option<Best> {
    let n = idx.len();
    let total_pos = idx.iter().filter(|&&i| labels[i] == 1).count();
    let parent = gini(total_pos, n);
    let mut best: Option<Best> = None;
    let n_features = rows.first().map_or(0, Vec::len);
    let mut order = idx.to_vec();
    for f in 0..n_features {
        order.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
        let mut left_pos = 0;
        for i in 1..n {
            left_pos += labels[order[i - 1]] as usize;
            let (lo, hi) = (rows[order[i - 1]][f], rows[order[i]][f]);
            if lo == hi {
                continue;
            }
            let weighted = (i as f64 * gini(left_pos, i)
                + (n - i) as f64 * gini(total_pos - left_pos, n - i))
                / n as f64;
            let improves = weighted < parent - 1e-12;
            if improves && best.as_ref().map_or(true, |b| weighted < b.impurity - 1e-15) {
                best = Some(Best {
                    feature: f,
                    threshold: lo + (hi - lo) / 2.0,
                    impurity: weighted,
                });
            }
        }
    }
    best
}

impl DecisionTree {
    pub fn fit(rows: &[Vec<f64>], labels: &[u8], cfg: &TreeConfig) -> Self {
        let mut nodes = vec![Node::Leaf { p1: 0.0, samples: 0 }];
        // (node slot, row indices, depth)
        let mut stack = vec![(0usize, (0..rows.len()).collect::<Vec<_>>(), 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let n = idx.len();
            let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
            let leaf = Node::Leaf {
                p1: if n == 0 { 0.0 } else { pos as f64 / n as f64 },
                samples: n,
            };
            let can_split = n >= cfg.min_samples_split.max(2)
                && pos != 0
                && pos != n
                && cfg.max_depth.map_or(true, |d| depth < d);
            let split = if can_split { best_split(rows, labels, &idx) } else { None };
            match split {
                None => nodes[slot] = leaf,
                Some(b) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| rows[i][b.feature] <= b.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { p1: 0.0, samples: 0 });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { p1: 0.0, samples: 0 });
                    nodes[slot] = Node::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        Self { nodes }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl BinaryClassifier for DecisionTree {
    fn proba(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p1, .. } => return p1,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memorises_separable_points() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let labels = [0, 0, 1, 1];
        let t = DecisionTree::fit(&rows, &labels, &TreeConfig::default());
        for (r, &y) in rows.iter().zip(&labels) {
            assert_eq!((t.proba(r) > 0.5) as u8, y);
        }
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let t = DecisionTree::fit(&rows, &labels, &TreeConfig { max_depth: Some(3), min_samples_split: 2 });
        assert!(t.depth() <= 3);
    }
}
