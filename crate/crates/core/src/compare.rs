//! Model selection across strategies: the trade-off score, constrained
//! performance, and ranked comparison documents.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricRecord;

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("invalid selector: {0}")]
    Selector(String),
    #[error("value outside the score domain: {0}")]
    Domain(String),
    #[error("no entries to compare")]
    Empty,
    #[error("entries are not comparable: {0}")]
    Comparability(String),
}

pub type Result<T> = std::result::Result<T, CompareError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NoMitigation,
    Pre,
    In,
    Post,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub strategy: String,
    pub family: Family,
    /// Fingerprint of the evaluation split; entries must agree when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub metrics: MetricRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessMetric {
    Dp,
    Eo,
    Eopp,
    Pp,
    Cdp,
}

impl FairnessMetric {
    pub fn of(self, m: &MetricRecord) -> Option<f64> {
        match self {
            FairnessMetric::Dp => m.dp,
            FairnessMetric::Eo => m.eo,
            FairnessMetric::Eopp => m.eopp,
            FairnessMetric::Pp => m.pp,
            FairnessMetric::Cdp => m.cdp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceMetric {
    Accuracy,
    F1,
    Auroc,
    Precision,
    Recall,
}

impl PerformanceMetric {
    pub fn of(self, m: &MetricRecord) -> Option<f64> {
        match self {
            PerformanceMetric::Accuracy => m.accuracy,
            PerformanceMetric::F1 => m.f1,
            PerformanceMetric::Auroc => m.auroc,
            PerformanceMetric::Precision => m.precision,
            PerformanceMetric::Recall => m.recall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMode {
    Tradeoff,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub phi_metric: FairnessMetric,
    pub pi_metric: PerformanceMetric,
    pub beta: f64,
    /// Fairness cap for constrained mode; `None` means no cap.
    pub cap: Option<f64>,
    pub mode: SelectorMode,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            phi_metric: FairnessMetric::Dp,
            pi_metric: PerformanceMetric::F1,
            beta: 1.0,
            cap: None,
            mode: SelectorMode::Tradeoff,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(CompareError::Selector(format!("beta must be positive, got {}", self.beta)));
        }
        if let Some(c) = self.cap {
            if c.is_nan() || c < 0.0 {
                return Err(CompareError::Selector(format!("cap must be non-negative, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub score: f64,
    /// Set when the denominator vanished and the score defaulted to 0.
    pub degenerate: bool,
}

/// `(1+β²)(1−|φ|)π / (β²(1−|φ|) + π)`.
pub fn tradeoff_score(phi: f64, pi: f64, beta: f64) -> Result<Tradeoff> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(CompareError::Domain(format!("performance {pi} outside [0,1]")));
    }
    if !(phi.abs() <= 1.0) {
        return Err(CompareError::Domain(format!("fairness {phi} outside [-1,1]")));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(CompareError::Domain(format!("beta {beta} must be positive")));
    }
    let f = 1.0 - phi.abs();
    let b2 = beta * beta;
    let den = b2 * f + pi;
    if den == 0.0 {
        return Ok(Tradeoff { score: 0.0, degenerate: true });
    }
    Ok(Tradeoff { score: (1.0 + b2) * f * pi / den, degenerate: false })
}

fn check_comparable(entries: &[ModelEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(CompareError::Empty);
    }
    let mut prints = entries.iter().filter_map(|e| e.fingerprint.as_deref());
    if let Some(first) = prints.next() {
        if let Some(other) = prints.find(|p| *p != first) {
            return Err(CompareError::Comparability(format!("split fingerprints {first} and {other} differ")));
        }
    }
    Ok(())
}

/// An entry projected on the fairness-performance plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub strategy: String,
    pub family: Family,
    pub phi_abs: f64,
    pub pi: f64,
}

fn project(entries: &[ModelEntry], c: &SelectorConfig) -> (Vec<PlanePoint>, Vec<String>) {
    let mut points = Vec::new();
    let mut missing = Vec::new();
    for e in entries {
        match (c.phi_metric.of(&e.metrics), c.pi_metric.of(&e.metrics)) {
            (Some(phi), Some(pi)) => {
                points.push(PlanePoint { strategy: e.strategy.clone(), family: e.family, phi_abs: phi.abs(), pi })
            }
            _ => missing.push(e.strategy.clone()),
        }
    }
    (points, missing)
}

/// Higher π, then lower |φ|, then strategy id.
fn by_performance(a: &PlanePoint, b: &PlanePoint) -> Ordering {
    b.pi.total_cmp(&a.pi).then(a.phi_abs.total_cmp(&b.phi_abs)).then(a.strategy.cmp(&b.strategy))
}

/// Lower |φ|, then higher π, then strategy id.
fn by_fairness(a: &PlanePoint, b: &PlanePoint) -> Ordering {
    a.phi_abs.total_cmp(&b.phi_abs).then(b.pi.total_cmp(&a.pi)).then(a.strategy.cmp(&b.strategy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub feasible: Vec<String>,
    pub winner: Option<String>,
    /// Nearest-to-feasible entry when nothing satisfies the cap.
    pub suggestion: Option<String>,
}

/// Best performance among entries whose |φ| is within the cap.
pub fn constrained_best(entries: &[ModelEntry], config: &SelectorConfig) -> Result<Selection> {
    config.validate()?;
    check_comparable(entries)?;
    let (points, _) = project(entries, config);
    let cap = config.cap.unwrap_or(f64::INFINITY);
    let mut feasible: Vec<&PlanePoint> = points.iter().filter(|p| p.phi_abs <= cap).collect();
    feasible.sort_by(|a, b| by_performance(a, b));
    let winner = feasible.first().map(|p| p.strategy.clone());
    let suggestion = if winner.is_none() {
        points.iter().min_by(|a, b| by_fairness(a, b)).map(|p| p.strategy.clone())
    } else {
        None
    };
    let mut ids: Vec<String> = feasible.iter().map(|p| p.strategy.clone()).collect();
    ids.sort();
    Ok(Selection { feasible: ids, winner, suggestion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub position: usize,
    #[serde(flatten)]
    pub point: PlanePoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<bool>,
}

/// Ordered entries. Entries lacking either selected metric are left out.
pub fn rank(entries: &[ModelEntry], config: &SelectorConfig) -> Result<Vec<RankedEntry>> {
    config.validate()?;
    check_comparable(entries)?;
    let (points, _) = project(entries, config);
    let mut ranked: Vec<RankedEntry> = match config.mode {
        SelectorMode::Tradeoff => {
            let mut scored = points
                .into_iter()
                .map(|p| {
                    let s = tradeoff_score(p.phi_abs, p.pi, config.beta).map(|t| t.score)?;
                    Ok((p, s))
                })
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|(a, sa), (b, sb)| {
                sb.total_cmp(sa).then(a.phi_abs.total_cmp(&b.phi_abs)).then(a.strategy.cmp(&b.strategy))
            });
            scored.into_iter().map(|(p, s)| RankedEntry { position: 0, point: p, score: Some(s), feasible: None }).collect()
        }
        SelectorMode::Constrained => {
            let cap = config.cap.unwrap_or(f64::INFINITY);
            let (mut ok, mut bad): (Vec<_>, Vec<_>) = points.into_iter().partition(|p| p.phi_abs <= cap);
            ok.sort_by(by_performance);
            bad.sort_by(by_fairness);
            ok.into_iter()
                .map(|p| RankedEntry { position: 0, point: p, score: None, feasible: Some(true) })
                .chain(bad.into_iter().map(|p| RankedEntry { position: 0, point: p, score: None, feasible: Some(false) }))
                .collect()
        }
    };
    for (i, r) in ranked.iter_mut().enumerate() {
        r.position = i + 1;
    }
    Ok(ranked)
}

/// The comparison document served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub selector: SelectorConfig,
    pub entries: Vec<ModelEntry>,
    pub ranking: Vec<RankedEntry>,
    pub feasible: Vec<String>,
    pub winner: Option<String>,
    pub suggestion: Option<String>,
    /// Strategies lacking one of the selected metrics.
    pub excluded: Vec<String>,
}

pub fn compare(entries: &[ModelEntry], config: &SelectorConfig) -> Result<Comparison> {
    let ranking = rank(entries, config)?;
    let (_, excluded) = project(entries, config);
    let (feasible, winner, suggestion) = match config.mode {
        SelectorMode::Constrained => {
            let s = constrained_best(entries, config)?;
            (s.feasible, s.winner, s.suggestion)
        }
        SelectorMode::Tradeoff => {
            let mut all: Vec<String> = ranking.iter().map(|r| r.point.strategy.clone()).collect();
            all.sort();
            (all, ranking.first().map(|r| r.point.strategy.clone()), None)
        }
    };
    Ok(Comparison { selector: *config, entries: entries.to_vec(), ranking, feasible, winner, suggestion, excluded })
}

/// Published credit-lending results, one row per strategy: DP, EO, EOpp,
/// PP, AUROC (absent for randomized or thresholded models), accuracy, F1.
pub fn credit_benchmark_entries() -> Vec<ModelEntry> {
    type Row = (&'static str, Family, [f64; 4], Option<f64>, f64, f64);
    const ROWS: [Row; 17] = [
        ("Logistic", Family::NoMitigation, [0.324, 0.272, 0.272, 0.032], Some(0.817), 0.761, 0.823),
        ("RandomForest", Family::NoMitigation, [0.221, 0.202, -0.104, 0.068], Some(0.838), 0.804, 0.875),
        ("NeuralNetwork", Family::NoMitigation, [0.219, 0.198, 0.104, 0.072], Some(0.830), 0.811, 0.876),
        ("FTU", Family::Pre, [0.164, 0.124, 0.058, 0.095], Some(0.838), 0.812, 0.876),
        ("Suppression", Family::Pre, [0.099, -0.053, 0.065, 0.152], Some(0.753), 0.748, 0.840),
        ("Massaging", Family::Pre, [-0.004, 0.062, 0.062, 0.163], Some(0.818), 0.868, 0.803),
        ("Sampling", Family::Pre, [0.080, 0.012, 0.012, 0.115], Some(0.835), 0.791, 0.851),
        ("CFF", Family::Causal, [0.218, 0.192, 0.104, 0.070], Some(0.832), 0.810, 0.874),
        ("AdvDP", Family::In, [-0.034, 0.073, 0.063, 0.176], Some(0.823), 0.802, 0.869),
        ("AdvEO", Family::In, [0.102, 0.029, -0.010, 0.148], Some(0.819), 0.805, 0.871),
        ("AdvCDP", Family::In, [0.147, 0.101, -0.050, 0.112], Some(0.830), 0.807, 0.872),
        ("ReductionsGS", Family::In, [0.012, 0.077, 0.049, 0.159], Some(0.812), 0.794, 0.864),
        ("ReductionsEG", Family::In, [0.007, 0.084, 0.051, 0.161], None, 0.794, 0.864),
        ("ThreshDP", Family::Post, [0.003, 0.099, 0.056, 0.164], None, 0.805, 0.872),
        ("ThreshEO", Family::Post, [0.082, 0.006, 0.006, 0.138], None, 0.812, 0.873),
        ("ThreshEOpp", Family::Post, [0.100, 0.048, 0.005, 0.119], None, 0.809, 0.874),
        ("ThreshCDP", Family::Post, [0.186, 0.159, 0.072, 0.083], None, 0.810, 0.875),
    ];
    ROWS.iter()
        .map(|&(name, family, [dp, eo, eopp, pp], auroc, accuracy, f1)| ModelEntry {
            strategy: name.to_string(),
            family,
            fingerprint: None,
            metrics: MetricRecord {
                dp: Some(dp),
                eo: Some(eo),
                eopp: Some(eopp),
                pp: Some(pp),
                auroc,
                accuracy: Some(accuracy),
                f1: Some(f1),
                ..Default::default()
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, dp: f64, f1: f64) -> ModelEntry {
        ModelEntry {
            strategy: id.into(),
            family: Family::In,
            fingerprint: None,
            metrics: MetricRecord { dp: Some(dp), f1: Some(f1), ..Default::default() },
        }
    }

    #[test]
    fn score_identities() {
        assert_eq!(tradeoff_score(0.0, 1.0, 1.0).unwrap().score, 1.0);
        assert_eq!(tradeoff_score(1.0, 0.7, 1.0).unwrap().score, 0.0);
        assert_eq!(tradeoff_score(-1.0, 0.7, 2.0).unwrap().score, 0.0);
        let d = tradeoff_score(1.0, 0.0, 1.0).unwrap();
        assert!(d.degenerate && d.score == 0.0);
        let s = tradeoff_score(0.003, 0.872, 1.0).unwrap().score;
        assert!((s - 0.9303).abs() < 1e-4, "{s}");
        assert!(tradeoff_score(0.1, 1.2, 1.0).is_err());
        assert!(tradeoff_score(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn cap_zero_gives_suggestion() {
        let e = [entry("a", 0.1, 0.9), entry("b", -0.05, 0.7)];
        let c = SelectorConfig { cap: Some(0.0), mode: SelectorMode::Constrained, ..Default::default() };
        let s = constrained_best(&e, &c).unwrap();
        assert!(s.feasible.is_empty() && s.winner.is_none());
        assert_eq!(s.suggestion.as_deref(), Some("b"));
    }

    #[test]
    fn no_cap_picks_best_performance() {
        let s = constrained_best(&credit_benchmark_entries(), &SelectorConfig { mode: SelectorMode::Constrained, ..Default::default() }).unwrap();
        assert_eq!(s.winner.as_deref(), Some("FTU"));
    }

    #[test]
    fn ties_prefer_fairer_then_id() {
        let e = [entry("b", 0.02, 0.8), entry("a", 0.02, 0.8), entry("c", 0.01, 0.8)];
        let c = SelectorConfig { cap: Some(0.05), mode: SelectorMode::Constrained, ..Default::default() };
        assert_eq!(constrained_best(&e, &c).unwrap().winner.as_deref(), Some("c"));
        let e = [entry("b", 0.02, 0.8), entry("a", 0.02, 0.8)];
        assert_eq!(constrained_best(&e, &c).unwrap().winner.as_deref(), Some("a"));
    }

    #[test]
    fn dominant_entry_first_in_both_modes() {
        let e = [entry("weak", 0.2, 0.6), entry("strong", 0.01, 0.9)];
        for mode in [SelectorMode::Tradeoff, SelectorMode::Constrained] {
            let r = rank(&e, &SelectorConfig { mode, cap: Some(0.5), ..Default::default() }).unwrap();
            assert_eq!(r[0].point.strategy, "strong");
            assert_eq!((r[1].point.phi_abs, r[1].point.pi), (0.2, 0.6));
        }
    }

    #[test]
    fn large_beta_orders_by_performance() {
        let e = [entry("x", 0.3, 0.9), entry("y", 0.0, 0.7), entry("z", 0.1, 0.8)];
        let r = rank(&e, &SelectorConfig { beta: 100.0, ..Default::default() }).unwrap();
        let order: Vec<&str> = r.iter().map(|r| r.point.strategy.as_str()).collect();
        assert_eq!(order, ["x", "z", "y"]);
    }

    #[test]
    fn mismatched_fingerprints_rejected() {
        let mut a = entry("a", 0.1, 0.8);
        let mut b = entry("b", 0.1, 0.8);
        a.fingerprint = Some("1".into());
        b.fingerprint = Some("2".into());
        assert!(matches!(constrained_best(&[a, b], &SelectorConfig::default()), Err(CompareError::Comparability(_))));
    }

    #[test]
    fn missing_metric_excluded() {
        let c = SelectorConfig { pi_metric: PerformanceMetric::Auroc, ..Default::default() };
        let doc = compare(&credit_benchmark_entries(), &c).unwrap();
        assert_eq!(doc.excluded.len(), 5);
        assert_eq!(doc.ranking.len(), 12);
    }
}
