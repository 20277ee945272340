//! Split-conformal prediction sets over the label space.
//!
//! Calibration uses positive label instances only: every true label of a
//! calibration admission contributes the score `1 − p̂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores `1 − p̂` at the true labels of one admission.
pub fn nonconformity(probs: &[f64], true_labels: &[usize]) -> Vec<f64> {
    true_labels
        .iter()
        .filter_map(|&j| probs.get(j))
        .map(|p| (1.0 - p).clamp(0.0, 1.0))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalCalibrator {
    scores: Vec<f64>,
    epsilon: f64,
    tau: f64,
}

/// 1-based rank `⌈(N + 1)(1 − ε)⌉`.
pub fn quantile_rank(n: usize, epsilon: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - epsilon);
    // Products such as 10 × 0.9 can land one ulp above an integer.
    (x - x * 1e-12).ceil() as usize
}

/// Sorts `scores` and picks the threshold at rank `⌈(N + 1)(1 − ε)⌉`, or
/// `+∞` when that rank exceeds `N`.
pub fn calibrate(mut scores: Vec<f64>, epsilon: f64) -> Result<ConformalCalibrator> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Parameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if scores.is_empty() {
        return Err(Error::Calibration("no calibration scores".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Calibration(format!("score {bad} outside [0, 1]")));
    }
    scores.sort_by(f64::total_cmp);
    let k = quantile_rank(scores.len(), epsilon);
    let tau = if k > scores.len() {
        f64::INFINITY
    } else {
        scores[k.max(1) - 1]
    };
    Ok(ConformalCalibrator { scores, epsilon, tau })
}

impl ConformalCalibrator {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// May be `+∞`, meaning every label is predicted.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same scores at a different miscoverage level.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        calibrate(self.scores.clone(), epsilon)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub labels: Vec<usize>,
    pub tau: f64,
}

/// `{ j : 1 − p̂_j ≤ τ }`, in label order.
pub fn predict_set(probs: &[f64], calibrator: &ConformalCalibrator) -> PredictionSet {
    predict_set_at(probs, calibrator.tau)
}

pub fn predict_set_at(probs: &[f64], tau: f64) -> PredictionSet {
    PredictionSet {
        labels: (0..probs.len()).filter(|&j| 1.0 - probs[j] <= tau).collect(),
        tau,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalMetrics {
    /// Fraction of true label instances inside their admission's set.
    pub coverage: f64,
    /// Mean of `|set| / L` over admissions.
    pub miw: f64,
    /// `1 / miw`; `None` when every set is empty.
    pub ie: Option<f64>,
}

pub fn conformal_metrics(sets: &[PredictionSet], truth: &[Vec<usize>], n_labels: usize) -> Result<ConformalMetrics> {
    if sets.is_empty() {
        return Err(Error::Evaluation("no test admissions".into()));
    }
    if sets.len() != truth.len() {
        return Err(Error::Dimension {
            op: "conformal_metrics",
            left: (sets.len(), 1),
            right: (truth.len(), 1),
        });
    }
    if n_labels == 0 {
        return Err(Error::Config("label space is empty".into()));
    }
    let (mut covered, mut total) = (0usize, 0usize);
    for (s, t) in sets.iter().zip(truth) {
        total += t.len();
        covered += t.iter().filter(|j| s.labels.binary_search(j).is_ok()).count();
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("coverage needs at least one true label".into()));
    }
    let miw = sets
        .iter()
        .map(|s| s.labels.len() as f64 / n_labels as f64)
        .sum::<f64>()
        / sets.len() as f64;
    Ok(ConformalMetrics {
        coverage: covered as f64 / total as f64,
        miw,
        ie: (miw > 0.0).then(|| 1.0 / miw),
    })
}

/// One line of the prediction-set export. An infinite threshold is written
/// as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSetRecord {
    pub patient_id: String,
    pub labels: Vec<String>,
    pub tau: Option<f64>,
    pub epsilon: f64,
}

impl PredictionSetRecord {
    pub fn new(patient_id: &str, set: &PredictionSet, vocab: &[String], epsilon: f64) -> Self {
        Self {
            patient_id: patient_id.to_string(),
            labels: set.labels.iter().map(|&j| vocab[j].clone()).collect(),
            tau: set.tau.is_finite().then_some(set.tau),
            epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn scores_from_positive_labels() {
        assert_eq!(nonconformity(&[0.95, 0.3], &[0]), vec![1.0 - 0.95]);
        assert!(nonconformity(&[0.95, 0.3], &[]).is_empty());
    }

    #[test]
    fn threshold_ranks() {
        let nine: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(calibrate(nine, 0.1).unwrap().tau(), 0.9);
        assert_eq!(calibrate(vec![0.4, 0.1, 0.3, 0.2], 0.2).unwrap().tau(), 0.4);
        assert_eq!(calibrate(vec![0.1, 0.2, 0.3], 0.05).unwrap().tau(), f64::INFINITY);
        assert_eq!(quantile_rank(99, 0.1), 90);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(calibrate(vec![], 0.1), Err(Error::Calibration(_))));
        assert!(matches!(calibrate(vec![0.1], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(calibrate(vec![0.1], 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn set_membership() {
        assert_eq!(predict_set_at(&[0.95, 0.6, 0.2], 0.5).labels, vec![0, 1]);
        assert_eq!(predict_set_at(&[0.95, 0.6, 0.2], f64::INFINITY).labels, vec![0, 1, 2]);
        assert!(predict_set_at(&[0.95, 0.6, 0.2], 0.0).labels.is_empty());
        assert_eq!(predict_set_at(&[1.0, 0.6], 0.0).labels, vec![0]);
    }

    #[test]
    fn metric_arithmetic() {
        let full = PredictionSet {
            labels: (0..4).collect(),
            tau: f64::INFINITY,
        };
        let m = conformal_metrics(&[full.clone(), full], &[vec![0], vec![1, 3]], 4).unwrap();
        assert_eq!((m.coverage, m.miw, m.ie), (1.0, 1.0, Some(1.0)));

        let a = PredictionSet {
            labels: vec![0, 1],
            tau: 0.5,
        };
        let b = PredictionSet {
            labels: vec![0, 1, 2, 3],
            tau: 0.5,
        };
        let m = conformal_metrics(&[a, b], &[vec![0, 5], vec![9]], 10).unwrap();
        assert!((m.miw - 0.3).abs() < 1e-15);
        assert!((m.ie.unwrap() - 10.0 / 3.0).abs() < 1e-12);
        assert!((m.coverage - 1.0 / 3.0).abs() < 1e-15);

        let empty = PredictionSet {
            labels: vec![],
            tau: 0.0,
        };
        assert_eq!(conformal_metrics(&[empty], &[vec![1]], 3).unwrap().ie, None);
        assert!(matches!(conformal_metrics(&[], &[], 3), Err(Error::Evaluation(_))));
    }

    #[test]
    fn infinite_tau_serializes_as_null() {
        let set = PredictionSet {
            labels: vec![1],
            tau: f64::INFINITY,
        };
        let rec = PredictionSetRecord::new("p1", &set, &["a".into(), "b".into()], 0.05);
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(json, r#"{"patient_id":"p1","labels":["b"],"tau":null,"epsilon":0.05}"#);
    }

    #[test]
    fn coverage_on_exchangeable_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for eps in [0.05, 0.1, 0.2] {
            let mut cov = 0.0;
            for _ in 0..20 {
                let cal: Vec<f64> = (0..2000).map(|_| rng.random::<f64>().powi(3)).collect();
                let c = calibrate(cal, eps).unwrap();
                let test: Vec<f64> = (0..2000).map(|_| rng.random::<f64>().powi(3)).collect();
                cov += test.iter().filter(|s| **s <= c.tau()).count() as f64 / 2000.0;
            }
            cov /= 20.0;
            assert!(cov >= 1.0 - eps - 0.02 && cov <= 1.0 - eps + 0.03, "eps {eps}: {cov}");
        }
    }

    proptest! {
        #[test]
        fn smaller_epsilon_never_shrinks(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..60),
            e1 in 0.01f64..0.99,
            e2 in 0.01f64..0.99,
            probs in proptest::collection::vec(0.0f64..=1.0, 1..20),
        ) {
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let a = calibrate(scores.clone(), lo).unwrap();
            let b = calibrate(scores, hi).unwrap();
            prop_assert!(a.tau() >= b.tau());
            let sa = predict_set(&probs, &a).labels;
            let sb = predict_set(&probs, &b).labels;
            prop_assert!(sb.iter().all(|j| sa.contains(j)));
        }

        #[test]
        fn label_permutation_commutes(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..20),
            tau in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let mut perm: Vec<usize> = (0..probs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted: Vec<f64> = perm.iter().map(|&j| probs[j]).collect();
            let original = predict_set_at(&probs, tau).labels;
            let mut mapped: Vec<usize> = predict_set_at(&permuted, tau).labels.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(original, mapped);
        }

        #[test]
        fn ie_is_reciprocal_of_miw(sizes in proptest::collection::vec(1usize..50, 1..30)) {
            let sets: Vec<PredictionSet> = sizes
                .iter()
                .map(|&s| PredictionSet { labels: (0..s).collect(), tau: 0.5 })
                .collect();
            let truth = vec![vec![0]; sets.len()];
            let m = conformal_metrics(&sets, &truth, 50).unwrap();
            prop_assert!((m.ie.unwrap() * m.miw - 1.0).abs() < 1e-12);
        }
    }
}
