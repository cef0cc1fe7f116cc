//! Adversarial debiasing: an MLP predictor trained against a logistic
//! adversary that tries to recover the protected group from the
//! predictor's logit (and, for equalized odds, the true label).
//!
//! On every batch the adversary is refit by a few Newton steps, then the
//! predictor steps along `g_P - proj(g_P on g_A) - alpha * g_A`, where `g_A`
//! is the gradient of the adversary loss with respect to the predictor
//! parameters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MitigationError, Result};
use crate::dataset::DataTable;
use crate::learners::mlp::{self, BatchView, GradientHook, MlpConfig};
use crate::learners::{sigmoid, softplus, Classifier, LearnerConfig, LearnerError, Model, StratifiedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialConstraint {
    Dp,
    Eo,
    Cdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub constraint: AdversarialConstraint,
    /// Adversary strength; 0 trains the plain predictor.
    pub alpha: f64,
    pub predictor: MlpConfig,
    /// Newton steps refitting the adversary on every batch.
    pub adversary_steps: usize,
    pub seed: u64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            constraint: AdversarialConstraint::Dp,
            alpha: 5.0,
            predictor: MlpConfig::default(),
            adversary_steps: 3,
            seed: 0,
        }
    }
}

struct Adversary {
    eo: bool,
    alpha: f64,
    steps: usize,
    z: Vec<f64>,
    y: Vec<f64>,
    /// Weights on [`Adversary::inputs`].
    params: Vec<f64>,
}

impl Adversary {
    fn new(eo: bool, alpha: f64, steps: usize, z: Vec<f64>, y: Vec<f64>) -> Self {
        let k = if eo { 4 } else { 2 };
        Adversary { eo, alpha, steps, z, y, params: vec![0.0; k] }
    }

    /// Adversary features of one row, with the intercept input last. The
    /// EO variant has a logit slope per true class and its own label term,
    /// so the label's link to the group is not read off the logit.
    fn inputs(&self, logit: f64, y: f64) -> Vec<f64> {
        if self.eo {
            vec![logit * y, logit * (1.0 - y), y, 1.0]
        } else {
            vec![logit, 1.0]
        }
    }

    /// Newton steps on the batch log-loss, warm-started.
    fn refit(&mut self, feats: &[Vec<f64>], z: &[f64]) {
        let k = self.params.len();
        let m = feats.len() as f64;
        for _ in 0..self.steps {
            let mut g = DVector::<f64>::zeros(k);
            let mut h = DMatrix::<f64>::identity(k, k) * ADVERSARY_RIDGE;
            for (f, &zi) in feats.iter().zip(z) {
                let a: f64 = f.iter().zip(&self.params).map(|(x, u)| x * u).sum();
                let p = sigmoid(a);
                for i in 0..k {
                    g[i] += (p - zi) * f[i] / m;
                    for j in 0..k {
                        h[(i, j)] += p * (1.0 - p) * f[i] * f[j] / m;
                    }
                }
            }
            for i in 0..k {
                g[i] += ADVERSARY_RIDGE * self.params[i];
            }
            let Some(ch) = h.cholesky() else { break };
            let step = ch.solve(&g);
            let norm = step.norm();
            let scale = if norm > MAX_ADVERSARY_STEP { MAX_ADVERSARY_STEP / norm } else { 1.0 };
            for i in 0..k {
                self.params[i] -= scale * step[i];
            }
        }
    }
}

const ADVERSARY_RIDGE: f64 = 1e-4;
const MAX_ADVERSARY_STEP: f64 = 5.0;

impl GradientHook for Adversary {
    fn adjust(&mut self, batch: &BatchView<'_>, grad: &mut [f64]) -> crate::learners::Result<()> {
        let m = batch.rows.len() as f64;
        let feats: Vec<Vec<f64>> =
            batch.rows.iter().enumerate().map(|(r, &i)| self.inputs(batch.cache.logits[r], self.y[i])).collect();
        let z: Vec<f64> = batch.rows.iter().map(|&i| self.z[i]).collect();
        self.refit(&feats, &z);
        let mut dlogit = vec![0.0; batch.rows.len()];
        let mut loss = 0.0;
        for (r, &i) in batch.rows.iter().enumerate() {
            let a: f64 = feats[r].iter().zip(&self.params).map(|(x, u)| x * u).sum();
            loss += softplus(a) - z[r] * a;
            let resid = (sigmoid(a) - z[r]) / m;
            // derivative of the adversary input with respect to the logit
            let da = if self.eo {
                self.params[0] * self.y[i] + self.params[1] * (1.0 - self.y[i])
            } else {
                self.params[0]
            };
            dlogit[r] = resid * da;
        }
        if !loss.is_finite() || self.params.iter().any(|u| !u.is_finite()) {
            return Err(LearnerError::Diverged { epoch: batch.epoch, message: "non-finite adversary loss".into() });
        }
        let ga = batch.net.backward(batch.params, batch.cache, &dlogit);
        let norm2: f64 = ga.iter().map(|g| g * g).sum();
        if norm2 > 0.0 {
            let dot: f64 = grad.iter().zip(&ga).map(|(g, a)| g * a).sum();
            for (g, a) in grad.iter_mut().zip(&ga) {
                *g -= (dot / norm2) * a + self.alpha * a;
            }
        }
        Ok(())
    }
}

fn fit_pair(c: &AdversarialConfig, table: &DataTable, eo: bool) -> Result<Classifier> {
    let names = table.input_names();
    let x = table.matrix(&names)?;
    let y: Vec<f64> = table.target()?.into_iter().map(f64::from).collect();
    let z: Vec<f64> = table.protected()?.into_iter().map(f64::from).collect();
    let d = names.len();
    if d == 0 {
        return Err(LearnerError::Schema("no input features".into()).into());
    }
    if !(y.contains(&0.0) && y.contains(&1.0)) {
        return Err(LearnerError::DegenerateTarget("target has a single class".into()).into());
    }
    let w = vec![1.0; y.len()];
    let pc = MlpConfig { seed: c.seed, ..c.predictor.clone() };
    let model = if c.alpha == 0.0 {
        mlp::fit(&pc, &x, d, &y, &w, None)?
    } else {
        let mut adv = Adversary::new(eo, c.alpha, c.adversary_steps, z, y.clone());
        mlp::fit(&pc, &x, d, &y, &w, Some(&mut adv))?
    };
    Ok(Classifier { feature_names: names, config: Some(LearnerConfig::Mlp(pc)), model: Model::Mlp(model) })
}

/// Trains a debiased predictor. The CDP variant trains one independent
/// pair per stratum and routes rows by stratum at prediction time.
pub fn adversarial_fit(table: &DataTable, config: &AdversarialConfig) -> Result<Classifier> {
    if !(config.alpha >= 0.0) || !config.alpha.is_finite() {
        return Err(MitigationError::Config("alpha must be a non-negative finite number".into()));
    }
    if config.adversary_steps == 0 {
        return Err(MitigationError::Config("adversary_steps must be at least 1".into()));
    }
    match config.constraint {
        AdversarialConstraint::Dp => fit_pair(config, table, false),
        AdversarialConstraint::Eo => fit_pair(config, table, true),
        AdversarialConstraint::Cdp => {
            let strata = table
                .strata()
                .ok_or_else(|| MitigationError::Precondition("CDP variant needs a stratum column".into()))?;
            let stratum_column = table.stratum_name().expect("strata present").to_string();
            let mut by: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, &s) in strata.iter().enumerate() {
                by.entry(s).or_default().push(i);
            }
            let fitted: Vec<(u32, Classifier)> = by
                .into_par_iter()
                .map(|(s, rows)| fit_pair(config, &table.select_rows(&rows), false).map(|m| (s, m)))
                .collect::<Result<_>>()?;
            let feature_names = table.input_names();
            Ok(Classifier {
                feature_names,
                config: Some(LearnerConfig::Mlp(config.predictor.clone())),
                model: Model::Stratified(StratifiedModel { stratum_column, models: fitted.into_iter().collect() }),
            })
        }
    }
}
