//! Seeded synthetic credit-lending data with a known structural model.
//!
//! ```text
//! citizenship ─► income ─► credit_risk ◄─ age
//!      │           └─────► amount
//!      └──────────────────────────────► repaid ◄─ credit_risk, amount, duration
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::CausalGraph;
use crate::dataset::{ColumnRole, ColumnSpec, DataTable, DatasetError};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub const PROTECTED: &str = "citizenship";
pub const TARGET: &str = "repaid";
pub const STRATUM: &str = "credit_risk";
pub const RISK_LEVELS: [&str; 3] = ["low", "medium", "high"];

/// Slope of `amount` on `income`.
pub const AMOUNT_PER_INCOME: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n: usize,
    /// Share of the privileged (domestic) group.
    pub p_protected: f64,
    /// Weight of the protected attribute in the repayment score.
    pub direct_effect: f64,
    /// Income shift of the privileged group.
    pub proxy_strength: f64,
    /// Probability of flipping a deprived-group positive label to negative.
    pub label_bias: f64,
    pub income_noise: f64,
    pub amount_noise: f64,
    pub risk_noise: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 20_000,
            p_protected: 0.7,
            direct_effect: 0.4,
            proxy_strength: 4.0,
            label_bias: 0.0,
            income_noise: 10.0,
            amount_noise: 2.0,
            risk_noise: 0.6,
            label_noise: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.into()));
        if self.n < 100 {
            return bad("n must be at least 100");
        }
        if !(self.p_protected > 0.0 && self.p_protected < 1.0) {
            return bad("p_protected must lie in (0,1)");
        }
        if !(0.0..1.0).contains(&self.label_bias) {
            return bad("label_bias must lie in [0,1)");
        }
        let noises = [self.income_noise, self.amount_noise, self.risk_noise, self.label_noise];
        if noises.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise scales must be finite and non-negative");
        }
        if noises.iter().all(|s| *s == 0.0) {
            return bad("all noise scales are zero");
        }
        if !self.direct_effect.is_finite() || !self.proxy_strength.is_finite() {
            return bad("effects must be finite");
        }
        Ok(())
    }
}

pub fn schema() -> Vec<ColumnSpec> {
    vec![
        ColumnSpec::binary(PROTECTED, "domestic", "foreign", ColumnRole::Protected),
        ColumnSpec::numeric("age", ColumnRole::Feature),
        ColumnSpec::numeric("income", ColumnRole::Feature),
        ColumnSpec::ordinal(STRATUM, &RISK_LEVELS, ColumnRole::Stratum),
        ColumnSpec::numeric("amount", ColumnRole::Feature),
        ColumnSpec::numeric("duration", ColumnRole::Feature),
        ColumnSpec::binary(TARGET, "yes", "no", ColumnRole::Target),
    ]
}

/// The generating DAG.
pub fn ground_truth_graph() -> CausalGraph {
    CausalGraph::from_edges(&[
        (PROTECTED, "income"),
        (PROTECTED, TARGET),
        ("income", STRATUM),
        ("income", "amount"),
        ("age", STRATUM),
        (STRATUM, TARGET),
        ("amount", TARGET),
        ("duration", TARGET),
    ])
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

/// Draws the table and returns it with the generating graph.
pub fn generate(config: &GenConfig) -> Result<(DataTable, CausalGraph), GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (inc, amt, risk, lab) =
        (normal(config.income_noise), normal(config.amount_noise), normal(config.risk_noise), normal(config.label_noise));
    let ages: Normal<f64> = Normal::new(40.0, 11.0).expect("valid");
    let mut rows = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let c = rng.random_bool(config.p_protected) as u8 as f64;
        let age = ages.sample(&mut rng).round().clamp(18.0, 80.0);
        let income = 30.0 + config.proxy_strength * c + inc.sample(&mut rng);
        let latent = -0.08 * (income - 30.0) - 0.03 * (age - 40.0) + risk.sample(&mut rng);
        let level = if latent < -0.4 {
            0.0
        } else if latent > 0.4 {
            2.0
        } else {
            1.0
        };
        let amount = 5.0 + AMOUNT_PER_INCOME * income + amt.sample(&mut rng);
        let duration = rng.random_range(6..=60) as f64;
        let score = 1.6 - 0.9 * level - 0.08 * (amount - 11.0) - 0.01 * (duration - 33.0)
            + config.direct_effect * c
            + lab.sample(&mut rng);
        let mut y = (score > 0.0) as u8;
        let flip: f64 = rng.random();
        if c == 0.0 && y == 1 && flip < config.label_bias {
            y = 0;
        }
        rows.push(vec![c, age, income, level, amount, duration, y as f64]);
    }
    Ok((DataTable::from_encoded(schema(), &rows)?, ground_truth_graph()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRates {
    pub stratum: String,
    pub size: usize,
    /// Positive label rate of `[unprivileged, privileged]`; `None` if empty.
    pub rates: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub n: usize,
    pub group_sizes: [usize; 2],
    pub positive_rates: [f64; 2],
    pub label_dp: f64,
    pub di_ratio: f64,
    pub passes_four_fifths: bool,
    pub strata: Vec<StratumRates>,
}

/// Label-level bias summary of a table.
pub fn bias_profile(table: &DataTable) -> Result<BiasProfile, DatasetError> {
    let y = table.target()?;
    let g = table.protected()?;
    let mut sizes = [0usize; 2];
    let mut pos = [0usize; 2];
    for (&gi, &yi) in g.iter().zip(&y) {
        sizes[gi as usize] += 1;
        pos[gi as usize] += yi as usize;
    }
    if sizes.contains(&0) {
        return Err(DatasetError::Invalid("both protected groups must be present".into()));
    }
    let rates = [pos[0] as f64 / sizes[0] as f64, pos[1] as f64 / sizes[1] as f64];
    let di_ratio = if rates[1] == 0.0 {
        if rates[0] == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        rates[0] / rates[1]
    };
    let mut strata = Vec::new();
    if let Some(s) = table.strata() {
        let labels = table.stratum_labels();
        for (k, label) in labels.iter().enumerate() {
            let mut n = [0usize; 2];
            let mut p = [0usize; 2];
            for i in 0..y.len() {
                if s[i] as usize == k {
                    n[g[i] as usize] += 1;
                    p[g[i] as usize] += y[i] as usize;
                }
            }
            let rate = |j: usize| (n[j] > 0).then(|| p[j] as f64 / n[j] as f64);
            strata.push(StratumRates { stratum: label.clone(), size: n[0] + n[1], rates: [rate(0), rate(1)] });
        }
    }
    Ok(BiasProfile {
        n: y.len(),
        group_sizes: sizes,
        positive_rates: rates,
        label_dp: rates[1] - rates[0],
        di_ratio,
        passes_four_fifths: di_ratio >= crate::metrics::FOUR_FIFTHS,
        strata,
    })
}
