use dtf_core::automl::metrics::{auc_from_scores, f1_score};
use dtf_core::automl::{metrics_from_confusion, ConfusionMatrix};
use proptest::prelude::*;

struct Brute {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    kappa: f64,
    mcc: f64,
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Metrics straight from the label vectors, without a confusion matrix.
fn brute(truth: &[u8], pred: &[u8]) -> Brute {
    let n = truth.len() as f64;
    let agree = truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64;
    let pred_pos = pred.iter().filter(|&&p| p == 1).count() as f64;
    let true_pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    let hits = truth.iter().zip(pred).filter(|(&t, &p)| t == 1 && p == 1).count() as f64;
    let accuracy = div(agree, n);
    let precision = div(hits, pred_pos);
    let recall = div(hits, true_pos);
    let f1 = if precision == 0.0 || recall == 0.0 {
        0.0
    } else {
        2.0 / (1.0 / precision + 1.0 / recall)
    };
    // Chance agreement from the marginal class frequencies.
    let pe: f64 = (0..=1u8)
        .map(|c| {
            let a = truth.iter().filter(|&&t| t == c).count() as f64 / n;
            let b = pred.iter().filter(|&&p| p == c).count() as f64 / n;
            a * b
        })
        .sum();
    let kappa = div(accuracy - pe, 1.0 - pe);
    // Pearson correlation of the two 0/1 vectors.
    let mt = true_pos / n;
    let mp = pred_pos / n;
    let cov: f64 = truth.iter().zip(pred).map(|(&t, &p)| (t as f64 - mt) * (p as f64 - mp)).sum();
    let vt: f64 = truth.iter().map(|&t| (t as f64 - mt).powi(2)).sum();
    let vp: f64 = pred.iter().map(|&p| (p as f64 - mp).powi(2)).sum();
    let mcc = div(cov, (vt * vp).sqrt());
    Brute { accuracy, precision, recall, f1, kappa, mcc }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

#[test]
fn f1_from_published_precision_recall() {
    let f1 = f1_score(0.9757, 0.9093);
    assert!((f1 - 0.9413).abs() <= 5e-4, "F1 = {f1}");
}

#[test]
fn perfect_predictions() {
    let t = [0, 1, 1, 0, 1];
    let m = metrics_from_confusion(&ConfusionMatrix::from_predictions(&t, &t), None);
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1, m.kappa, m.mcc), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 1..300)) {
        let truth: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(&truth, &pred);
        let m = metrics_from_confusion(&cm, None);
        let b = brute(&truth, &pred);
        prop_assert!(close(m.accuracy, b.accuracy), "accuracy {} {}", m.accuracy, b.accuracy);
        prop_assert!(close(m.precision, b.precision), "precision {} {}", m.precision, b.precision);
        prop_assert!(close(m.recall, b.recall), "recall {} {}", m.recall, b.recall);
        prop_assert!(close(m.f1, b.f1), "f1 {} {}", m.f1, b.f1);
        prop_assert!(close(m.kappa, b.kappa), "kappa {} {}", m.kappa, b.kappa);
        prop_assert!(close(m.mcc, b.mcc), "mcc {} {}", m.mcc, b.mcc);
    }

    #[test]
    fn auc_matches_pairwise_count(scored in prop::collection::vec((0u8..20, 0u8..=1), 2..120)) {
        let s: Vec<(f64, u8)> = scored.iter().map(|&(x, y)| (x as f64 / 20.0, y)).collect();
        let pos: Vec<f64> = s.iter().filter(|p| p.1 == 1).map(|p| p.0).collect();
        let neg: Vec<f64> = s.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
        let got = auc_from_scores(&s);
        if pos.is_empty() || neg.is_empty() {
            prop_assert!(got.is_none());
        } else {
            let mut wins = 0.0;
            for p in &pos {
                for q in &neg {
                    wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
                }
            }
            let oracle = wins / (pos.len() * neg.len()) as f64;
            prop_assert!(close(got.unwrap(), oracle));
        }
    }
}
