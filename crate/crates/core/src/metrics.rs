//! Group fairness and predictive performance metrics.
//!
//! Decisions are passed as reals in `[0, 1]`: hard labels are `0.0`/`1.0`,
//! and randomized classifiers pass their expected decision so every metric
//! is evaluated in expectation rather than by sampling. Group ids are `1`
//! for the privileged group and `0` otherwise; every signed difference is
//! `privileged - unprivileged`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn undefined(metric: &'static str, reason: impl Into<String>) -> MetricError {
    MetricError::Undefined { metric, reason: reason.into() }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(MetricError::Length(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Converts hard labels to decision values.
pub fn as_decisions(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| l as f64).collect()
}

/// Per-group (expected) counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub n: f64,
    pub predicted_positive: f64,
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

impl GroupOutcome {
    pub fn positive_rate(&self) -> Option<f64> {
        (self.n > 0.0).then(|| self.predicted_positive / self.n)
    }

    pub fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0.0).then(|| self.tp / p)
    }

    pub fn fpr(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0.0).then(|| self.fp / n)
    }

    pub fn ppv(&self) -> Option<f64> {
        let pp = self.tp + self.fp;
        (pp > 0.0).then(|| self.tp / pp)
    }
}

/// Counts for groups `[unprivileged, privileged]`.
pub fn group_outcomes(preds: &[f64], groups: &[u8], y: Option<&[u8]>) -> Result<[GroupOutcome; 2]> {
    check_len(preds.len(), groups.len(), "preds/groups")?;
    if let Some(y) = y {
        check_len(preds.len(), y.len(), "preds/y")?;
    }
    let mut out = [GroupOutcome::default(); 2];
    for (i, (&p, &g)) in preds.iter().zip(groups).enumerate() {
        if g > 1 {
            return Err(MetricError::Invalid(format!("group id {g} is not binary")));
        }
        let o = &mut out[g as usize];
        o.n += 1.0;
        o.predicted_positive += p;
        if let Some(y) = y {
            if y[i] == 1 {
                o.tp += p;
                o.fn_ += 1.0 - p;
            } else {
                o.fp += p;
                o.tn += 1.0 - p;
            }
        }
    }
    Ok(out)
}

fn both_rates(preds: &[f64], groups: &[u8], metric: &'static str) -> Result<(f64, f64)> {
    let [u, p] = group_outcomes(preds, groups, None)?;
    let ru = u.positive_rate().ok_or_else(|| undefined(metric, "unprivileged group is empty"))?;
    let rp = p.positive_rate().ok_or_else(|| undefined(metric, "privileged group is empty"))?;
    Ok((rp, ru))
}

/// Difference of positive-decision rates.
pub fn demographic_parity(preds: &[f64], groups: &[u8]) -> Result<f64> {
    let (rp, ru) = both_rates(preds, groups, "demographic parity")?;
    Ok(rp - ru)
}

/// Threshold of the four-fifths rule.
pub const FOUR_FIFTHS: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparateImpact {
    pub ratio: f64,
    pub passes: bool,
}

/// `rate(unprivileged) / rate(privileged)`, passing iff the ratio is at
/// least 0.8.
pub fn disparate_impact(preds: &[f64], groups: &[u8]) -> Result<DisparateImpact> {
    let (rp, ru) = both_rates(preds, groups, "disparate impact")?;
    if rp == 0.0 {
        return Err(undefined("disparate impact", "privileged positive rate is 0"));
    }
    let ratio = ru / rp;
    Ok(DisparateImpact { ratio, passes: ratio >= FOUR_FIFTHS })
}

fn outcomes_with_truth(preds: &[f64], groups: &[u8], y: &[u8]) -> Result<[GroupOutcome; 2]> {
    if y.iter().any(|&l| l > 1) {
        return Err(MetricError::Invalid("labels must be 0 or 1".into()));
    }
    group_outcomes(preds, groups, Some(y))
}

/// True-positive-rate difference.
pub fn equal_opportunity(preds: &[f64], groups: &[u8], y: &[u8]) -> Result<f64> {
    let [u, p] = outcomes_with_truth(preds, groups, y)?;
    let tp = p.tpr().ok_or_else(|| undefined("equal opportunity", "privileged group has no actual positives"))?;
    let tu = u.tpr().ok_or_else(|| undefined("equal opportunity", "unprivileged group has no actual positives"))?;
    Ok(tp - tu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualizedOdds {
    pub tpr_diff: f64,
    pub fpr_diff: f64,
    /// Whichever component has the larger magnitude (TPR on ties), signed.
    pub scalar: f64,
}

pub fn equalized_odds(preds: &[f64], groups: &[u8], y: &[u8]) -> Result<EqualizedOdds> {
    let [u, p] = outcomes_with_truth(preds, groups, y)?;
    let tpr_diff = match (p.tpr(), u.tpr()) {
        (Some(a), Some(b)) => a - b,
        _ => return Err(undefined("equalized odds", "a group has no actual positives")),
    };
    let fpr_diff = match (p.fpr(), u.fpr()) {
        (Some(a), Some(b)) => a - b,
        _ => return Err(undefined("equalized odds", "a group has no actual negatives")),
    };
    let scalar = if fpr_diff.abs() > tpr_diff.abs() { fpr_diff } else { tpr_diff };
    Ok(EqualizedOdds { tpr_diff, fpr_diff, scalar })
}

/// Positive-predictive-value difference.
pub fn predictive_parity(preds: &[f64], groups: &[u8], y: &[u8]) -> Result<f64> {
    let [u, p] = outcomes_with_truth(preds, groups, y)?;
    let a = p.ppv().ok_or_else(|| undefined("predictive parity", "privileged group has no predicted positives"))?;
    let b = u.ppv().ok_or_else(|| undefined("predictive parity", "unprivileged group has no predicted positives"))?;
    Ok(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionFairness {
    pub eopp: f64,
    pub eo: EqualizedOdds,
    pub pp: f64,
}

/// EOpp, EO and PP together; fails if any of them is undefined.
pub fn confusion_fairness(preds: &[f64], groups: &[u8], y: &[u8]) -> Result<ConfusionFairness> {
    Ok(ConfusionFairness {
        eopp: equal_opportunity(preds, groups, y)?,
        eo: equalized_odds(preds, groups, y)?,
        pp: predictive_parity(preds, groups, y)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumParity {
    pub stratum: u32,
    pub size: usize,
    /// `None` when one of the groups is absent from the stratum.
    pub dp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalParity {
    pub strata: Vec<StratumParity>,
    /// Size-weighted mean of |dp| over defined strata.
    pub weighted_mean_abs: f64,
    pub max_abs: f64,
    pub warnings: Vec<String>,
}

/// Demographic parity within each stratum.
pub fn conditional_dp(preds: &[f64], groups: &[u8], strata: &[u32]) -> Result<ConditionalParity> {
    check_len(preds.len(), groups.len(), "preds/groups")?;
    check_len(preds.len(), strata.len(), "preds/strata")?;
    let mut by_stratum: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        by_stratum.entry(s).or_default().push(i);
    }
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let (mut wsum, mut total, mut max_abs) = (0.0, 0usize, 0.0f64);
    for (s, rows) in by_stratum {
        let p: Vec<f64> = rows.iter().map(|&i| preds[i]).collect();
        let g: Vec<u8> = rows.iter().map(|&i| groups[i]).collect();
        let dp = demographic_parity(&p, &g).ok();
        match dp {
            Some(d) => {
                wsum += rows.len() as f64 * d.abs();
                total += rows.len();
                max_abs = max_abs.max(d.abs());
            }
            None => warnings.push(format!("stratum {s}: a group is empty; excluded from aggregate")),
        }
        out.push(StratumParity { stratum: s, size: rows.len(), dp });
    }
    if total == 0 {
        return Err(undefined("conditional demographic parity", "no stratum contains both groups"));
    }
    Ok(ConditionalParity { strata: out, weighted_mean_abs: wsum / total as f64, max_abs, warnings })
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auroc(scores: &[f64], y: &[u8]) -> Result<f64> {
    check_len(scores.len(), y.len(), "scores/y")?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut negatives_below, mut wins) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0.0, 0.0);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if y[idx[j]] == 1 { pos += 1.0 } else { neg += 1.0 }
            j += 1;
        }
        wins += pos * negatives_below + 0.5 * pos * neg;
        negatives_below += neg;
        i = j;
    }
    let positives = y.iter().filter(|&&l| l == 1).count() as f64;
    let negatives = y.len() as f64 - positives;
    if positives == 0.0 || negatives == 0.0 {
        return Err(undefined("auroc", "both classes must be present"));
    }
    Ok(wins / (positives * negatives))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
}

/// Performance of (expected) decisions. Precision is reported as 0 when
/// nothing is predicted positive.
pub fn performance_from_decisions(preds: &[f64], y: &[u8]) -> Result<PerformanceReport> {
    check_len(preds.len(), y.len(), "preds/y")?;
    if preds.is_empty() {
        return Err(MetricError::Invalid("empty input".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &l) in preds.iter().zip(y) {
        if l == 1 {
            tp += p;
            fn_ += 1.0 - p;
        } else {
            fp += p;
            tn += 1.0 - p;
        }
    }
    if tp + fn_ == 0.0 {
        return Err(undefined("recall", "no actual positives"));
    }
    let accuracy = (tp + tn) / preds.len() as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = tp / (tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(PerformanceReport { accuracy, precision, recall, f1, auroc: None })
}

/// Performance of scores thresholded at 0.5 (ties positive), with AUROC.
pub fn performance_from_scores(scores: &[f64], y: &[u8]) -> Result<PerformanceReport> {
    let labels: Vec<f64> = scores.iter().map(|&s| if s >= 0.5 { 1.0 } else { 0.0 }).collect();
    let mut r = performance_from_decisions(&labels, y)?;
    r.auroc = auroc(scores, y).ok();
    Ok(r)
}

/// Every fairness metric that is defined on the given decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dp: Option<f64>,
    pub di: Option<DisparateImpact>,
    pub eopp: Option<f64>,
    pub eo: Option<EqualizedOdds>,
    pub pp: Option<f64>,
    pub cdp: Option<ConditionalParity>,
}

pub fn fairness_report(preds: &[f64], groups: &[u8], y: &[u8], strata: Option<&[u32]>) -> Result<FairnessReport> {
    check_len(preds.len(), groups.len(), "preds/groups")?;
    check_len(preds.len(), y.len(), "preds/y")?;
    Ok(FairnessReport {
        dp: demographic_parity(preds, groups).ok(),
        di: disparate_impact(preds, groups).ok(),
        eopp: equal_opportunity(preds, groups, y).ok(),
        eo: equalized_odds(preds, groups, y).ok(),
        pp: predictive_parity(preds, groups, y).ok(),
        cdp: strata.and_then(|s| conditional_dp(preds, groups, s).ok()),
    })
}

/// Flat record keyed by metric name; the serialization used in reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dp: Option<f64>,
    pub eo: Option<f64>,
    pub eopp: Option<f64>,
    pub pp: Option<f64>,
    pub auroc: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdp_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub di_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eo_tpr_diff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eo_fpr_diff: Option<f64>,
}

impl MetricRecord {
    pub fn from_reports(f: &FairnessReport, p: &PerformanceReport) -> Self {
        MetricRecord {
            dp: f.dp,
            eo: f.eo.map(|e| e.scalar),
            eopp: f.eopp,
            pp: f.pp,
            auroc: p.auroc,
            accuracy: Some(p.accuracy),
            f1: Some(p.f1),
            cdp: f.cdp.as_ref().map(|c| c.weighted_mean_abs),
            cdp_max: f.cdp.as_ref().map(|c| c.max_abs),
            di_ratio: f.di.map(|d| d.ratio),
            precision: Some(p.precision),
            recall: Some(p.recall),
            eo_tpr_diff: f.eo.map(|e| e.tpr_diff),
            eo_fpr_diff: f.eo.map(|e| e.fpr_diff),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dp_hand_count() {
        // privileged [1,1,0,0], unprivileged [1,0,0,0]
        let preds = as_decisions(&[1, 1, 0, 0, 1, 0, 0, 0]);
        let groups = [1, 1, 1, 1, 0, 0, 0, 0];
        assert_eq!(demographic_parity(&preds, &groups).unwrap(), 0.25);
        assert_eq!(demographic_parity(&[1.0; 8], &groups).unwrap(), 0.0);
        assert!(demographic_parity(&preds, &[1; 8]).is_err());
    }

    #[test]
    fn disparate_impact_boundary() {
        // 2/5 vs 2/4 gives 0.4 / 0.5
        let preds = as_decisions(&[1, 1, 0, 0, 0, 1, 1, 0, 0]);
        let groups = [0, 0, 0, 0, 0, 1, 1, 1, 1];
        let di = disparate_impact(&preds, &groups).unwrap();
        assert!((di.ratio - 0.8).abs() < 1e-12);
        let fail = disparate_impact(&as_decisions(&[1, 0, 0, 0, 0, 1, 1, 0, 0]), &groups).unwrap();
        assert!((fail.ratio - 0.4).abs() < 1e-12 && !fail.passes);
        assert!(disparate_impact(&[0.0, 1.0], &[1, 0]).is_err());
    }

    #[test]
    fn disparate_impact_exact_boundary_passes() {
        // 4/10 vs 5/10 = 0.8 exactly in binary? 0.4/0.5 rounds to 0.8.
        let mut preds = vec![0.0; 20];
        let mut groups = vec![0u8; 20];
        for i in 0..4 {
            preds[i] = 1.0;
        }
        for i in 10..20 {
            groups[i] = 1;
        }
        for i in 10..15 {
            preds[i] = 1.0;
        }
        let di = disparate_impact(&preds, &groups).unwrap();
        assert_eq!(di.ratio, 0.4 / 0.5);
        assert!(di.passes);
    }

    #[test]
    fn eopp_and_pp_hand_rates() {
        // priv TP=3 FN=1, unpriv TP=1 FN=3
        let y = [1, 1, 1, 1, 1, 1, 1, 1];
        let preds = as_decisions(&[1, 1, 1, 0, 1, 0, 0, 0]);
        let groups = [1, 1, 1, 1, 0, 0, 0, 0];
        assert_eq!(equal_opportunity(&preds, &groups, &y).unwrap(), 0.5);

        // priv TP=9 FP=1, unpriv TP=6 FP=4
        let mut preds = vec![1.0; 20];
        let groups: Vec<u8> = (0..20).map(|i| (i < 10) as u8).collect();
        let mut y = vec![1u8; 20];
        y[9] = 0;
        for l in y.iter_mut().skip(16) {
            *l = 0;
        }
        let pp = predictive_parity(&preds, &groups, &y).unwrap();
        assert!((pp - 0.3).abs() < 1e-12);
        preds.iter_mut().skip(10).for_each(|p| *p = 0.0);
        assert!(predictive_parity(&preds, &groups, &y).is_err());
    }

    #[test]
    fn identical_rates_give_zero_eo() {
        // per group: 4 positives with 3 detected, 5 negatives with 1 false alarm
        let mut preds = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for g in 0..2u8 {
            for (p, l) in [(1, 1), (1, 1), (1, 1), (0, 1), (1, 0), (0, 0), (0, 0), (0, 0), (0, 0)] {
                preds.push(p as f64);
                y.push(l);
                groups.push(g);
            }
        }
        let c = confusion_fairness(&preds, &groups, &y).unwrap();
        assert_eq!(c.eopp, 0.0);
        assert_eq!(c.eo.scalar, 0.0);
    }

    #[test]
    fn eo_scalar_takes_larger_magnitude() {
        // priv: TPR 1, FPR 1/2 ; unpriv: TPR 1/2, FPR 0 → tpr_diff 0.5, fpr_diff 0.5 (tie → tpr)
        let preds = as_decisions(&[1, 1, 0, 1, 0, 0]);
        let y = [1, 0, 0, 1, 1, 0];
        let groups = [1, 1, 1, 0, 0, 0];
        let eo = equalized_odds(&preds, &groups, &y).unwrap();
        assert_eq!(eo.tpr_diff, 0.5);
        assert_eq!(eo.fpr_diff, 0.5);
        assert_eq!(eo.scalar, eo.tpr_diff);
    }

    #[test]
    fn conditional_dp_cases() {
        // Simpson-style: within each stratum equal rates, marginally unequal.
        // stratum 0: priv 8 rows (rate 3/4), unpriv 2 rows (rate 3/4 impossible) → use 4 and 4
        let mut preds = Vec::new();
        let mut groups = Vec::new();
        let mut strata = Vec::new();
        // stratum 0 (high rate 1.0): 6 priv, 2 unpriv, all positive
        for (g, n) in [(1u8, 6), (0u8, 2)] {
            for _ in 0..n {
                preds.push(1.0);
                groups.push(g);
                strata.push(0);
            }
        }
        // stratum 1 (rate 0): 2 priv, 6 unpriv, all negative
        for (g, n) in [(1u8, 2), (0u8, 6)] {
            for _ in 0..n {
                preds.push(0.0);
                groups.push(g);
                strata.push(1);
            }
        }
        let c = conditional_dp(&preds, &groups, &strata).unwrap();
        assert_eq!(c.weighted_mean_abs, 0.0);
        assert_eq!(demographic_parity(&preds, &groups).unwrap(), 0.5);

        let single = conditional_dp(&preds, &groups, &vec![0; preds.len()]).unwrap();
        assert_eq!(single.weighted_mean_abs, 0.5);

        // per-stratum dp +0.1 and -0.1, equal sizes (20 rows each)
        let mut preds = Vec::new();
        let mut groups = Vec::new();
        let mut strata = Vec::new();
        for (s, priv_pos, unpriv_pos) in [(0u32, 6, 5), (1u32, 5, 6)] {
            for k in 0..10 {
                preds.push((k < priv_pos) as u8 as f64);
                groups.push(1);
                strata.push(s);
            }
            for k in 0..10 {
                preds.push((k < unpriv_pos) as u8 as f64);
                groups.push(0);
                strata.push(s);
            }
        }
        let c = conditional_dp(&preds, &groups, &strata).unwrap();
        assert!((c.weighted_mean_abs - 0.1).abs() < 1e-12);
        assert!((c.max_abs - 0.1).abs() < 1e-12);
    }

    #[test]
    fn conditional_dp_skips_empty_cells() {
        let c = conditional_dp(&[1.0, 0.0, 1.0], &[1, 0, 1], &[0, 0, 1]).unwrap();
        assert_eq!(c.strata[1].dp, None);
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn performance_hand_counts() {
        let r = performance_from_decisions(&as_decisions(&[1, 0, 1, 1]), &[1, 0, 0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-12);
        assert!(performance_from_decisions(&[1.0, 0.0], &[0, 0]).is_err());
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }
}
