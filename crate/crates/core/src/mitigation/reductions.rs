//! Reductions to cost-sensitive classification under a demographic-parity
//! constraint `|P(h=1 | priv) - P(h=1 | unpriv)| <= eps`.
//!
//! For a dual value `λ` (positive side minus negative side) the Lagrangian
//! charges `(1-y)/n + λ·s` for a positive decision and `y/n` for a negative
//! one, with `s = 1/n_priv` on privileged rows and `-1/n_unpriv` otherwise.
//! The cheaper decision becomes the training label and the cost gap its weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MitigationError, Result};
use crate::compare::tradeoff_score;
use crate::dataset::DataTable;
use crate::learners::{fit, fit_matrix, Classifier, LearnerConfig, LearnerError, LearnerKind};
use crate::metrics::demographic_parity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExponentiatedGradientConfig {
    pub eps: f64,
    pub base: LearnerConfig,
    pub max_iterations: usize,
    /// Dual bound; defaults to `1/eps`.
    pub dual_bound: Option<f64>,
    /// Multiplicative-weights step; defaults to `2/bound`.
    pub learning_rate: Option<f64>,
    pub gap_tolerance: f64,
}

impl Default for ExponentiatedGradientConfig {
    fn default() -> Self {
        ExponentiatedGradientConfig {
            eps: 0.01,
            base: LearnerConfig::default_for(LearnerKind::Logistic),
            max_iterations: 50,
            dual_bound: None,
            learning_rate: None,
            gap_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSelector {
    /// Highest trade-off score of |dp| against accuracy.
    Tradeoff,
    /// Highest accuracy among models with |dp| within `cap`.
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchConfig {
    pub grid_size: usize,
    /// Duals span `[-dual_range, dual_range]`.
    pub dual_range: f64,
    pub base: LearnerConfig,
    pub selector: GridSelector,
    pub beta: f64,
    /// Cap for the constrained selector; `None` means no cap.
    pub cap: Option<f64>,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        GridSearchConfig {
            grid_size: 50,
            dual_range: 2.0,
            base: LearnerConfig::default_for(LearnerKind::Logistic),
            selector: GridSelector::Tradeoff,
            beta: 1.0,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub classifier: Classifier,
    pub probability: f64,
}

/// A distribution over classifiers. A prediction draws one component and
/// applies its 0.5-thresholded decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub infeasible: bool,
}

impl RandomizedClassifier {
    pub fn single(classifier: Classifier) -> Self {
        RandomizedClassifier { components: vec![MixtureComponent { classifier, probability: 1.0 }], infeasible: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(MitigationError::Config("randomized classifier has no components".into()));
        }
        if self.components.iter().any(|c| !(c.probability >= 0.0)) {
            return Err(MitigationError::Config("negative component probability".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MitigationError::Config(format!("component probabilities sum to {total}")));
        }
        Ok(())
    }

    /// Probability-weighted mean of component scores.
    pub fn expected_scores(&self, table: &DataTable) -> Result<Vec<f64>> {
        let mut out = vec![0.0; table.n_rows()];
        for c in &self.components {
            for (o, s) in out.iter_mut().zip(c.classifier.predict_scores(table)?) {
                *o += c.probability * s;
            }
        }
        Ok(out)
    }

    /// Probability of a positive decision for every row.
    pub fn expected_decisions(&self, table: &DataTable) -> Result<Vec<f64>> {
        let mut out = vec![0.0; table.n_rows()];
        for c in &self.components {
            for (o, l) in out.iter_mut().zip(c.classifier.predict_labels(table, 0.5)?) {
                *o += c.probability * l as f64;
            }
        }
        Ok(out)
    }

    /// Sampled decisions; each row draws its own component.
    pub fn predict_labels(&self, table: &DataTable, seed: u64) -> Result<Vec<u8>> {
        let labels: Vec<Vec<u8>> =
            self.components.iter().map(|c| c.classifier.predict_labels(table, 0.5)).collect::<std::result::Result<_, _>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..table.n_rows())
            .map(|i| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, c) in self.components.iter().enumerate() {
                    acc += c.probability;
                    if u < acc {
                        return labels[k][i];
                    }
                }
                labels[labels.len() - 1][i]
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgIteration {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// `max(0, |dp| - eps)` of the averaged play.
    pub violation: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// The unmitigated fit already satisfied the constraint.
    Plain,
    /// Uniform average of the iterates.
    Average,
    /// Cheapest feasible mixture of at most two iterates.
    BestMixture,
    /// Nothing was feasible; the least-violating iterate.
    BestViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgReport {
    pub iterations: usize,
    pub models_trained: usize,
    pub aggregation: Aggregation,
    pub trace: Vec<EgIteration>,
    pub train_dp: f64,
    pub train_error: f64,
}

struct Problem<'a> {
    table: &'a DataTable,
    names: Vec<String>,
    x: Vec<f64>,
    y: Vec<u8>,
    sign: Vec<f64>,
    groups: Vec<u8>,
}

impl<'a> Problem<'a> {
    fn new(table: &'a DataTable) -> Result<Self> {
        let y = table.target()?;
        let groups = table.protected()?;
        let n1 = groups.iter().filter(|&&g| g == 1).count();
        let n0 = groups.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(MitigationError::Precondition("both protected groups must be present".into()));
        }
        let sign = groups.iter().map(|&g| if g == 1 { 1.0 / n1 as f64 } else { -1.0 / n0 as f64 }).collect();
        let names = table.input_names();
        let x = table.matrix(&names)?;
        Ok(Problem { table, names, x, y, sign, groups })
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// Base-learner fit for dual `lambda`.
    fn best_response(&self, base: &LearnerConfig, lambda: f64) -> Result<Classifier> {
        let n = self.n();
        let mut labels = Vec::with_capacity(self.y.len());
        let mut weights = Vec::with_capacity(self.y.len());
        for i in 0..self.y.len() {
            let c1 = (1 - self.y[i]) as f64 / n + lambda * self.sign[i];
            let c0 = self.y[i] as f64 / n;
            labels.push((c0 > c1) as u8);
            weights.push((c0 - c1).abs() * n);
        }
        let has = |l: u8| labels.iter().zip(&weights).any(|(&a, &w)| a == l && w > 0.0);
        if !has(1) || !has(0) {
            let score = if has(1) { 1.0 } else { 0.0 };
            return Ok(Classifier::constant(self.names.clone(), score));
        }
        match fit_matrix(base, self.names.clone(), &self.x, &labels, Some(&weights)) {
            Ok(c) => Ok(c),
            Err(LearnerError::DegenerateTarget(_)) => Ok(Classifier::constant(self.names.clone(), 0.0)),
            Err(e) => Err(e.into()),
        }
    }

    /// (error, dp) of a hard classifier on the training rows.
    fn moments(&self, h: &Classifier) -> Result<(Vec<f64>, f64, f64)> {
        let d: Vec<f64> = h.predict_labels(self.table, 0.5)?.into_iter().map(f64::from).collect();
        let err = d.iter().zip(&self.y).filter(|(p, &l)| **p != l as f64).count() as f64 / self.n();
        let dp = demographic_parity(&d, &self.groups)?;
        Ok((d, err, dp))
    }
}

struct Iterate {
    classifier: Classifier,
    err: f64,
    dp: f64,
}

fn lagrangian(err: f64, dp: f64, lp: f64, lm: f64, eps: f64) -> f64 {
    err + lp * (dp - eps) + lm * (-dp - eps)
}

/// Cheapest mixture of at most two iterates with |dp| <= eps.
fn best_mixture(hs: &[Iterate], eps: f64) -> Option<Vec<(usize, f64)>> {
    let mut best: Option<(f64, Vec<(usize, f64)>)> = None;
    let mut consider = |err: f64, mix: Vec<(usize, f64)>| {
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, mix));
        }
    };
    for (i, h) in hs.iter().enumerate() {
        if h.dp.abs() <= eps {
            consider(h.err, vec![(i, 1.0)]);
        }
    }
    for i in 0..hs.len() {
        for j in i + 1..hs.len() {
            let (a, b) = (&hs[i], &hs[j]);
            if a.dp == b.dp {
                continue;
            }
            // p·a.dp + (1-p)·b.dp on either boundary
            for bound in [eps, -eps] {
                let p = (bound - b.dp) / (a.dp - b.dp);
                if (0.0..=1.0).contains(&p) {
                    let err = p * a.err + (1.0 - p) * b.err;
                    consider(err, vec![(i, p), (j, 1.0 - p)]);
                }
            }
        }
    }
    best.map(|(_, m)| m)
}

/// Exponentiated-gradient reduction.
pub fn reductions_eg(table: &DataTable, config: &ExponentiatedGradientConfig) -> Result<(RandomizedClassifier, EgReport)> {
    if !(config.eps > 0.0) {
        return Err(MitigationError::Config("eps must be positive".into()));
    }
    if config.max_iterations == 0 {
        return Err(MitigationError::Config("max_iterations must be at least 1".into()));
    }
    let bound = config.dual_bound.unwrap_or(1.0 / config.eps);
    let eta = config.learning_rate.unwrap_or(2.0 / bound);
    if !(bound > 0.0) || !(eta > 0.0) {
        return Err(MitigationError::Config("dual bound and learning rate must be positive".into()));
    }
    let problem = Problem::new(table)?;
    let eps = config.eps;

    let plain = fit(&config.base, table, None)?;
    let (_, plain_err, plain_dp) = problem.moments(&plain)?;
    if plain_dp.abs() <= eps {
        let report = EgReport {
            iterations: 0,
            models_trained: 1,
            aggregation: Aggregation::Plain,
            trace: Vec::new(),
            train_dp: plain_dp,
            train_error: plain_err,
        };
        return Ok((RandomizedClassifier::single(plain), report));
    }

    let mut theta = [0.0f64; 2];
    // iterates form the averaged play; the pool adds the gap probes
    let mut played: Vec<Iterate> = Vec::new();
    let mut pool: Vec<Iterate> = Vec::new();
    let mut lambda_sum = [0.0f64; 2];
    let mut trace = Vec::new();
    let mut models_trained = 1;
    let (mut avg_err, mut avg_dp) = (0.0, 0.0);
    for t in 0..config.max_iterations {
        let e = theta.map(f64::exp);
        let z = 1.0 + e[0] + e[1];
        let (lp, lm) = (bound * e[0] / z, bound * e[1] / z);
        lambda_sum[0] += lp;
        lambda_sum[1] += lm;
        let h = problem.best_response(&config.base, lp - lm)?;
        models_trained += 1;
        let (_, err, dp) = problem.moments(&h)?;
        played.push(Iterate { classifier: h.clone(), err, dp });
        pool.push(Iterate { classifier: h, err, dp });
        let k = played.len() as f64;
        avg_err = played.iter().map(|h| h.err).sum::<f64>() / k;
        avg_dp = played.iter().map(|h| h.dp).sum::<f64>() / k;

        // duality gap of the averaged play against the averaged duals
        let (bp, bm) = (lambda_sum[0] / (t + 1) as f64, lambda_sum[1] / (t + 1) as f64);
        let l_mid = lagrangian(avg_err, avg_dp, bp, bm, eps);
        let l_high = avg_err + bound * (avg_dp.abs() - eps).max(0.0);
        let probe = problem.best_response(&config.base, bp - bm)?;
        models_trained += 1;
        let (_, err_p, dp_p) = problem.moments(&probe)?;
        pool.push(Iterate { classifier: probe, err: err_p, dp: dp_p });
        let l_low = lagrangian(err_p, dp_p, bp, bm, eps).min(l_mid);
        let gap = (l_mid - l_low).max(l_high - l_mid);
        trace.push(EgIteration { lambda_plus: lp, lambda_minus: lm, violation: (avg_dp.abs() - eps).max(0.0), gap });
        if gap < config.gap_tolerance {
            break;
        }
        theta[0] += eta * (dp - eps);
        theta[1] += eta * (-dp - eps);
    }

    let (components, aggregation, train_dp, train_error) = if avg_dp.abs() <= eps {
        let p = 1.0 / played.len() as f64;
        let comps = merge_components(played.iter().map(|h| (h.classifier.clone(), p)).collect());
        (comps, Aggregation::Average, avg_dp, avg_err)
    } else if let Some(mix) = best_mixture(&pool, eps) {
        let dp = mix.iter().map(|&(i, p)| p * pool[i].dp).sum();
        let err = mix.iter().map(|&(i, p)| p * pool[i].err).sum();
        let comps = merge_components(mix.into_iter().map(|(i, p)| (pool[i].classifier.clone(), p)).collect());
        (comps, Aggregation::BestMixture, dp, err)
    } else {
        let best = pool
            .iter()
            .min_by(|a, b| a.dp.abs().total_cmp(&b.dp.abs()).then(a.err.total_cmp(&b.err)))
            .expect("at least one iterate");
        let comps = vec![MixtureComponent { classifier: best.classifier.clone(), probability: 1.0 }];
        (comps, Aggregation::BestViolation, best.dp, best.err)
    };
    let infeasible = aggregation == Aggregation::BestViolation;
    let report = EgReport { iterations: trace.len(), models_trained, aggregation, trace, train_dp, train_error };
    Ok((RandomizedClassifier { components, infeasible }, report))
}

fn accuracy(d: &[f64], y: &[u8]) -> f64 {
    d.iter().zip(y).map(|(p, &l)| if l == 1 { *p } else { 1.0 - p }).sum::<f64>() / y.len() as f64
}

fn merge_components(items: Vec<(Classifier, f64)>) -> Vec<MixtureComponent> {
    let mut out: Vec<MixtureComponent> = Vec::new();
    for (c, p) in items {
        if p <= 0.0 {
            continue;
        }
        match out.iter_mut().find(|m| m.classifier == c) {
            Some(m) => m.probability += p,
            None => out.push(MixtureComponent { classifier: c, probability: p }),
        }
    }
    let total: f64 = out.iter().map(|m| m.probability).sum();
    out.iter_mut().for_each(|m| m.probability /= total);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub dual: f64,
    pub validation_dp: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub models_trained: usize,
    pub selector: GridSelector,
    pub selected_dual: f64,
    pub candidates: Vec<GridCandidate>,
}

pub fn grid_duals(grid_size: usize, range: f64) -> Vec<f64> {
    if grid_size == 1 {
        return vec![0.0];
    }
    (0..grid_size).map(|k| -range + 2.0 * range * k as f64 / (grid_size - 1) as f64).collect()
}

/// Grid search over the dual; the selected model maximizes the configured
/// selector on `validation`.
pub fn reductions_grid(train: &DataTable, validation: &DataTable, config: &GridSearchConfig) -> Result<(Classifier, GridReport)> {
    if config.grid_size == 0 {
        return Err(MitigationError::Config("grid_size must be at least 1".into()));
    }
    if !(config.dual_range >= 0.0) || !(config.beta > 0.0) {
        return Err(MitigationError::Config("dual_range must be non-negative and beta positive".into()));
    }
    let problem = Problem::new(train)?;
    let vy = validation.target()?;
    let vg = validation.protected()?;
    let duals = grid_duals(config.grid_size, config.dual_range);
    let fitted: Vec<(f64, Classifier, f64, f64)> = duals
        .par_iter()
        .map(|&l| {
            let h = if l == 0.0 { fit(&config.base, train, None)? } else { problem.best_response(&config.base, l)? };
            let d: Vec<f64> = h.predict_labels(validation, 0.5)?.into_iter().map(f64::from).collect();
            let dp = demographic_parity(&d, &vg)?;
            let acc = accuracy(&d, &vy);
            Ok((l, h, dp, acc))
        })
        .collect::<Result<_>>()?;
    let key = |(_, _, dp, acc): &(f64, Classifier, f64, f64)| -> Option<f64> {
        match config.selector {
            GridSelector::Tradeoff => tradeoff_score(dp.abs().min(1.0), *acc, config.beta).ok().map(|t| t.score),
            GridSelector::Constrained => (dp.abs() <= config.cap.unwrap_or(f64::INFINITY)).then_some(*acc),
        }
    };
    let chosen = fitted
        .iter()
        .enumerate()
        .filter_map(|(i, f)| key(f).map(|k| (i, k)))
        .max_by(|(i, a), (j, b)| a.total_cmp(b).then(fitted[*j].2.abs().total_cmp(&fitted[*i].2.abs())).then(j.cmp(i)))
        .map(|(i, _)| i)
        .unwrap_or_else(|| {
            // nothing within the cap: the fairest candidate
            (0..fitted.len()).min_by(|&i, &j| fitted[i].2.abs().total_cmp(&fitted[j].2.abs())).expect("grid non-empty")
        });
    let report = GridReport {
        models_trained: fitted.len(),
        selector: config.selector,
        selected_dual: fitted[chosen].0,
        candidates: fitted.iter().map(|(l, _, dp, acc)| GridCandidate { dual: *l, validation_dp: *dp, validation_accuracy: *acc }).collect(),
    };
    Ok((fitted[chosen].1.clone(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnRole, ColumnSpec};

    fn biased(n: usize) -> DataTable {
        let schema = vec![
            ColumnSpec::numeric("x", ColumnRole::Feature),
            ColumnSpec::binary("g", "a", "b", ColumnRole::Protected),
            ColumnSpec::binary("y", "1", "0", ColumnRole::Target),
        ];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let g = (i % 2) as f64;
                let x = ((i * 37 % 101) as f64 / 101.0) * 2.0 - 1.0 + 0.5 * g;
                let y = ((x + 0.1 * ((i * 13 % 7) as f64 - 3.0)) > 0.2) as u8 as f64;
                vec![x, g, y]
            })
            .collect();
        DataTable::from_encoded(schema, &rows).unwrap()
    }

    #[test]
    fn loose_eps_returns_plain_fit() {
        let t = biased(300);
        let cfg = ExponentiatedGradientConfig { eps: 0.99, ..Default::default() };
        let (rc, rep) = reductions_eg(&t, &cfg).unwrap();
        assert_eq!(rc.components.len(), 1);
        assert_eq!(rep.aggregation, Aggregation::Plain);
        assert_eq!(rc.components[0].classifier, fit(&cfg.base, &t, None).unwrap());
    }

    #[test]
    fn eg_meets_bound_on_training_rows() {
        let t = biased(400);
        let (rc, rep) = reductions_eg(&t, &ExponentiatedGradientConfig::default()).unwrap();
        rc.validate().unwrap();
        let e = rc.expected_decisions(&t).unwrap();
        let dp = demographic_parity(&e, &t.protected().unwrap()).unwrap();
        assert!(dp.abs() <= 0.01 + 1e-9, "{dp} {rep:?}");
        for it in &rep.trace {
            assert!(it.lambda_plus >= 0.0 && it.lambda_minus >= 0.0 && it.lambda_plus + it.lambda_minus <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn expected_score_is_weighted_mean() {
        let t = biased(100);
        let a = Classifier::constant(t.input_names(), 0.2);
        let b = Classifier::constant(t.input_names(), 0.8);
        let rc = RandomizedClassifier {
            components: vec![MixtureComponent { classifier: a, probability: 0.25 }, MixtureComponent { classifier: b, probability: 0.75 }],
            infeasible: false,
        };
        assert!(rc.expected_scores(&t).unwrap().iter().all(|&s| s == 0.25 * 0.2 + 0.75 * 0.8));
        assert!(rc.expected_decisions(&t).unwrap().iter().all(|&s| s == 0.75));
        assert_eq!(rc.predict_labels(&t, 9).unwrap(), rc.predict_labels(&t, 9).unwrap());
    }

    #[test]
    fn grid_of_one_is_plain_fit() {
        let t = biased(200);
        let cfg = GridSearchConfig { grid_size: 1, ..Default::default() };
        let (m, rep) = reductions_grid(&t, &t, &cfg).unwrap();
        assert_eq!(rep.models_trained, 1);
        assert_eq!(m, fit(&cfg.base, &t, None).unwrap());
    }

    #[test]
    fn positive_dual_favors_unprivileged() {
        let t = biased(400);
        let p = Problem::new(&t).unwrap();
        let base = LearnerConfig::default_for(LearnerKind::Logistic);
        let g = t.protected().unwrap();
        let rate = |l: f64| {
            let d = p.best_response(&base, l).unwrap().predict_labels(&t, 0.5).unwrap();
            let idx: Vec<usize> = (0..g.len()).filter(|&i| g[i] == 0).collect();
            idx.iter().map(|&i| d[i] as f64).sum::<f64>() / idx.len() as f64
        };
        assert!(rate(1.0) > rate(0.0));
    }

    #[test]
    fn grid_trains_requested_count() {
        let t = biased(200);
        let (_, rep) = reductions_grid(&t, &t, &GridSearchConfig { grid_size: 7, ..Default::default() }).unwrap();
        assert_eq!(rep.models_trained, 7);
        assert_eq!(grid_duals(3, 2.0), vec![-2.0, 0.0, 2.0]);
    }
}
