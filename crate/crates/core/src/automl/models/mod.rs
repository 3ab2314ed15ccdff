pub mod knn;
pub mod logistic;
pub mod mlp;
pub mod naive_bayes;
pub mod tree;

/// A trained binary classifier exposing its class-1 probability.
pub trait BinaryClassifier {
    fn proba(&self, row: &[f64]) -> f64;
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
