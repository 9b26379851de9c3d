//! Utility metrics: the workload error Δ(D, D̂) and the downstream logistic
//! regression evaluation, plus the metrics report schema.

use serde::{Deserialize, Serialize};

use crate::aim::{PhaseOps, PhaseSeconds};
use crate::encode::{one_hot, Dataset};
use crate::protocols::{plaintext_marginal, Clique};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("schema mismatch between real and synthetic datasets")]
    SchemaMismatch,
    #[error("target attribute {0} is not binary")]
    TargetNotBinary(usize),
}

/// Workload error Δ(D, D̂): mean over W of the L1 distance between
/// frequency-normalized marginals, so identical distributions give 0
/// regardless of |D̂|.
pub fn workload_error(
    real: &Dataset,
    synthetic: &Dataset,
    cliques: &[Clique],
) -> Result<f64, MetricsError> {
    if real.schema.sizes() != synthetic.schema.sizes() {
        return Err(MetricsError::SchemaMismatch);
    }
    let sizes = real.schema.sizes();
    let n_real = real.record_count() as f64;
    let n_synth = synthetic.record_count() as f64;
    let total: f64 = cliques
        .iter()
        .map(|w| {
            let q = plaintext_marginal(&real.rows, &sizes, w);
            let q_hat = plaintext_marginal(&synthetic.rows, &sizes, w);
            q.iter()
                .zip(&q_hat)
                .map(|(a, b)| (a / n_real - b / n_synth).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(total / cliques.len() as f64)
}

pub const LR_EPOCHS: usize = 500;
pub const LR_STEP: f64 = 0.1;
pub const LR_L2: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// training data held a single class; the reported numbers are those of
    /// the majority predictor
    pub single_class_training: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic regression over one-hot features of every non-target attribute,
/// full-batch gradient descent with fixed hyperparameters; accuracy and
/// macro-averaged F1 on the test set.
pub fn train_eval_classifier(
    train: &Dataset,
    test: &Dataset,
    target: usize,
) -> Result<ClassifierEval, MetricsError> {
    if train.schema.sizes() != test.schema.sizes() {
        return Err(MetricsError::SchemaMismatch);
    }
    if train.schema.sizes()[target] != 2 {
        return Err(MetricsError::TargetNotBinary(target));
    }
    let features = |ds: &Dataset| -> (Vec<Vec<f64>>, Vec<f64>) {
        let ohe = one_hot(ds);
        let width = ohe.total_bins();
        let t_off = ohe.offsets[target];
        let t_sz = ohe.sizes[target];
        let xs: Vec<Vec<f64>> = (0..ds.record_count())
            .map(|r| {
                let row = &ohe.bits[r * width..(r + 1) * width];
                let mut x: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i < t_off || *i >= t_off + t_sz)
                    .map(|(_, &b)| b as f64)
                    .collect();
                x.push(1.0); // bias
                x
            })
            .collect();
        let ys: Vec<f64> = ds.rows.iter().map(|r| r[target] as f64).collect();
        (xs, ys)
    };
    let (xs, ys) = features(train);
    let (xt, yt) = features(test);
    let n = xs.len() as f64;
    let dim = xs[0].len();

    let single_class = ys.iter().all(|&y| y == ys[0]);
    let predictions: Vec<f64> = if single_class {
        vec![ys[0]; xt.len()]
    } else {
        let mut w = vec![0.0f64; dim];
        for _ in 0..LR_EPOCHS {
            let mut grad = vec![0.0f64; dim];
            for (x, &y) in xs.iter().zip(&ys) {
                let p = sigmoid(x.iter().zip(&w).map(|(a, b)| a * b).sum());
                let err = p - y;
                for (g, &xi) in grad.iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= LR_STEP * (g / n + LR_L2 * *wi);
            }
        }
        xt.iter()
            .map(|x| {
                let p = sigmoid(x.iter().zip(&w).map(|(a, b)| a * b).sum());
                if p >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    };

    let correct = predictions.iter().zip(&yt).filter(|(p, y)| p == y).count();
    let accuracy = correct as f64 / yt.len() as f64;

    let f1_of = |class: f64| -> f64 {
        let tp = predictions.iter().zip(&yt).filter(|&(&p, &y)| p == class && y == class).count();
        let fp = predictions.iter().zip(&yt).filter(|&(&p, &y)| p == class && y != class).count();
        let fn_ = predictions.iter().zip(&yt).filter(|&(&p, &y)| p != class && y == class).count();
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let macro_f1 = (f1_of(0.0) + f1_of(1.0)) / 2.0;
    Ok(ClassifierEval { accuracy, macro_f1, single_class_training: single_class })
}

/// The metrics report emitted by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub single_class_training: bool,
    pub norm: String,
    pub backend: String,
    pub phase_ops: PhaseOps,
    pub phase_seconds: PhaseSeconds,
    pub rounds_executed: usize,
    pub gauss_consumed: usize,
    pub gumbel_consumed: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{AttributeDomain, AttributeKind, DatasetSchema};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn schema(sizes: &[usize]) -> Arc<DatasetSchema> {
        let attributes = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| AttributeDomain {
                name: format!("a{i}"),
                kind: AttributeKind::Categorical {
                    labels: (0..s).map(|v| v.to_string()).collect(),
                },
            })
            .collect();
        Arc::new(DatasetSchema::new(attributes).unwrap())
    }

    #[test]
    fn workload_error_identity() {
        let sizes = [2usize, 3];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let rows: Vec<Vec<u32>> = (0..50)
            .map(|_| vec![rng.gen_range(0..2), rng.gen_range(0..3)])
            .collect();
        let ds = Dataset::new(schema(&sizes), rows).unwrap();
        let w = vec![Clique::one(0), Clique::one(1), Clique::two(0, 1)];
        assert_eq!(workload_error(&ds, &ds, &w).unwrap(), 0.0);
    }

    #[test]
    fn workload_error_uniform_vs_point_mass() {
        let sizes = [2usize];
        let uniform = Dataset::new(schema(&sizes), vec![vec![0], vec![1]]).unwrap();
        let point = Dataset::new(schema(&sizes), vec![vec![0], vec![0]]).unwrap();
        // |0.5−1| + |0.5−0| = 1.0
        let d = workload_error(&uniform, &point, &[Clique::one(0)]).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn workload_error_duplication_invariant() {
        let sizes = [2usize, 2];
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rows_a: Vec<Vec<u32>> =
            (0..30).map(|_| vec![rng.gen_range(0..2), rng.gen_range(0..2)]).collect();
        let rows_b: Vec<Vec<u32>> =
            (0..20).map(|_| vec![rng.gen_range(0..2), rng.gen_range(0..2)]).collect();
        let a = Dataset::new(schema(&sizes), rows_a.clone()).unwrap();
        let b = Dataset::new(schema(&sizes), rows_b.clone()).unwrap();
        let a2 = Dataset::new(schema(&sizes), [rows_a.clone(), rows_a].concat()).unwrap();
        let b2 = Dataset::new(schema(&sizes), [rows_b.clone(), rows_b].concat()).unwrap();
        let w = vec![Clique::one(0), Clique::two(0, 1)];
        let d1 = workload_error(&a, &b, &w).unwrap();
        let d2 = workload_error(&a2, &b2, &w).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn workload_error_schema_mismatch() {
        let a = Dataset::new(schema(&[2]), vec![vec![0]]).unwrap();
        let b = Dataset::new(schema(&[3]), vec![vec![0]]).unwrap();
        assert!(matches!(
            workload_error(&a, &b, &[Clique::one(0)]),
            Err(MetricsError::SchemaMismatch)
        ));
    }

    #[test]
    fn classifier_separable_data() {
        // target equals attribute 0 exactly
        let sizes = [2usize, 3, 2];
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let rows: Vec<Vec<u32>> = (0..200)
            .map(|_| {
                let a = rng.gen_range(0..2u32);
                vec![a, rng.gen_range(0..3), a]
            })
            .collect();
        let ds = Dataset::new(schema(&sizes), rows).unwrap();
        let (train, test) = ds.split(0.8, 42);
        let eval = train_eval_classifier(&train, &test, 2).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert!(!eval.single_class_training);
    }

    #[test]
    fn classifier_label_permuted_is_chance() {
        let sizes = [3usize, 3, 2];
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        // balanced labels correlated with features, then shuffled labels in train
        let rows: Vec<Vec<u32>> = (0..1000)
            .map(|i| vec![rng.gen_range(0..3), rng.gen_range(0..3), (i % 2) as u32])
            .collect();
        let ds = Dataset::new(schema(&sizes), rows).unwrap();
        let (mut train, test) = ds.split(0.8, 42);
        let mut labels: Vec<u32> = train.rows.iter().map(|r| r[2]).collect();
        labels.shuffle(&mut rng);
        for (row, l) in train.rows.iter_mut().zip(labels) {
            row[2] = l;
        }
        let eval = train_eval_classifier(&train, &test, 2).unwrap();
        assert!((eval.accuracy - 0.5).abs() < 0.06, "accuracy {}", eval.accuracy);
    }

    #[test]
    fn classifier_single_class_flagged() {
        let sizes = [2usize, 2];
        let train =
            Dataset::new(schema(&sizes), vec![vec![0, 1], vec![1, 1], vec![0, 1]]).unwrap();
        let test = Dataset::new(schema(&sizes), vec![vec![0, 1], vec![1, 0]]).unwrap();
        let eval = train_eval_classifier(&train, &test, 1).unwrap();
        assert!(eval.single_class_training);
        assert_eq!(eval.accuracy, 0.5);
    }

    #[test]
    fn classifier_rejects_non_binary_target() {
        let sizes = [2usize, 3];
        let ds = Dataset::new(schema(&sizes), vec![vec![0, 0], vec![1, 2]]).unwrap();
        assert!(matches!(
            train_eval_classifier(&ds, &ds, 1),
            Err(MetricsError::TargetNotBinary(1))
        ));
    }
}
