//! Weighted L2-regularized logistic regression fitted by damped Newton steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, LearnerError, Result, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub max_iterations: usize,
    pub l2: f64,
    /// Stop once the max-norm of the gradient drops below this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { max_iterations: 100, l2: 1e-4, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub standardizer: Standardizer,
    /// Coefficients on standardized inputs.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.coefficients.len();
        let xs = self.standardizer.transform(x);
        xs.chunks_exact(d)
            .map(|r| sigmoid(self.intercept + r.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()))
            .collect()
    }
}

/// Objective and gradient for parameters `[coefficients..., intercept]`:
/// `Σ wᵢ·logloss(zᵢ, yᵢ) / Σ wᵢ + l2/2 · ‖coefficients‖²`.
pub fn loss_and_gradient(params: &[f64], x: &[f64], d: usize, y: &[f64], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let total: f64 = w.iter().sum();
    let (beta, b) = (&params[..d], params[d]);
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for ((row, &yi), &wi) in x.chunks_exact(d.max(1)).zip(y).zip(w) {
        let z = b + row.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>();
        loss += wi * (softplus(z) - yi * z);
        let r = wi * (sigmoid(z) - yi);
        for j in 0..d {
            grad[j] += r * row[j];
        }
        grad[d] += r;
    }
    loss /= total;
    grad.iter_mut().for_each(|g| *g /= total);
    for j in 0..d {
        loss += 0.5 * l2 * beta[j] * beta[j];
        grad[j] += l2 * beta[j];
    }
    (loss, grad)
}

fn hessian(params: &[f64], x: &[f64], d: usize, w: &[f64], l2: f64) -> DMatrix<f64> {
    let total: f64 = w.iter().sum();
    let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut aug = vec![1.0; d + 1];
    for (row, &wi) in x.chunks_exact(d).zip(w) {
        aug[..d].copy_from_slice(row);
        let z = params[d] + row.iter().zip(&params[..d]).map(|(a, c)| a * c).sum::<f64>();
        let p = sigmoid(z);
        let s = wi * p * (1.0 - p) / total;
        for i in 0..=d {
            let si = s * aug[i];
            for j in 0..=i {
                h[(i, j)] += si * aug[j];
            }
        }
    }
    for i in 0..=d {
        for j in 0..i {
            h[(j, i)] = h[(i, j)];
        }
    }
    for j in 0..d {
        h[(j, j)] += l2;
    }
    h
}

pub(super) fn fit(c: &LogisticConfig, x: &[f64], d: usize, y: &[f64], w: &[f64]) -> Result<LogisticModel> {
    if c.l2 < 0.0 || !c.l2.is_finite() || c.max_iterations == 0 {
        return Err(LearnerError::Config("logistic needs l2 ≥ 0 and max_iterations ≥ 1".into()));
    }
    let standardizer = Standardizer::fit(x, d, w);
    let xs = standardizer.transform(x);
    let mut params = vec![0.0; d + 1];
    let (mut loss, mut grad) = loss_and_gradient(&params, &xs, d, y, w, c.l2);
    let mut iterations = 0;
    while iterations < c.max_iterations {
        if !loss.is_finite() {
            return Err(LearnerError::Diverged { epoch: iterations, message: "non-finite logistic loss".into() });
        }
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < c.tolerance {
            break;
        }
        iterations += 1;
        let mut h = hessian(&params, &xs, d, w, c.l2);
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                for i in 0..=d {
                    h[(i, i)] += 1e-8;
                }
                match h.cholesky() {
                    Some(ch) => ch.solve(&g),
                    None => g.clone(),
                }
            }
        };
        let slope: f64 = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - t * s).collect();
            let (l, gr) = loss_and_gradient(&trial, &xs, d, y, w, c.l2);
            if l <= loss - 1e-4 * t * slope {
                // stalled: the decrease is at rounding level
                accepted = loss - l > 1e-15 * loss.abs().max(1.0);
                params = trial;
                loss = l;
                grad = gr;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let intercept = params.pop().expect("intercept");
    Ok(LogisticModel { standardizer, coefficients: params, intercept, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnRole, ColumnSpec, DataTable};
    use crate::learners::{fit as fit_classifier, LearnerConfig, LearnerKind};

    fn table(points: &[(f64, u8)]) -> DataTable {
        let schema = vec![ColumnSpec::numeric("x", ColumnRole::Feature), ColumnSpec::binary("y", "1", "0", ColumnRole::Target)];
        DataTable::from_encoded(schema, &points.iter().map(|&(x, y)| vec![x, y as f64]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn separable_line_is_fit_perfectly() {
        let pts: Vec<(f64, u8)> =
            (0..10).map(|i| (-1.0 - i as f64 * 0.3, 0)).chain((0..10).map(|i| (1.0 + i as f64 * 0.3, 1))).collect();
        let t = table(&pts);
        let m = fit_classifier(&LearnerConfig::default_for(LearnerKind::Logistic), &t, None).unwrap();
        let labels = m.predict_labels(&t, 0.5).unwrap();
        assert_eq!(labels, t.target().unwrap());
    }

    #[test]
    fn symmetric_points_score_half_at_origin() {
        let t = table(&[(-1.0, 0), (1.0, 1)]);
        let m = fit_classifier(&LearnerConfig::default_for(LearnerKind::Logistic), &t, None).unwrap();
        let s = m.predict_matrix(&[0.0]);
        assert!((s[0] - 0.5).abs() < 1e-12, "{}", s[0]);
    }

    #[test]
    fn zero_parameters_score_half() {
        let m = LogisticModel {
            standardizer: Standardizer { mean: vec![0.0, 0.0], scale: vec![1.0, 1.0] },
            coefficients: vec![0.0, 0.0],
            intercept: 0.0,
            iterations: 0,
        };
        assert!(m.predict(&[3.0, -2.0, 0.1, 7.0]).iter().all(|&s| s == 0.5));
    }
}
