//! Post-processing: derive decisions from a fitted scorer and the protected
//! group through group-wise (and optionally stratum-wise) thresholds.
//!
//! A row is accepted by threshold `t` iff `score >= t`. Equalized odds
//! needs randomization, so a group's rule may be a mixture of thresholds;
//! all metrics of such policies are computed in expectation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MitigationError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyObjective {
    DemographicParity,
    EqualOpportunity,
    EqualizedOdds,
    ConditionalDemographicParity,
}

/// Misclassification costs; unit costs make the utility plain accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub false_positive: f64,
    pub false_negative: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { false_positive: 1.0, false_negative: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdComponent {
    pub threshold: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GroupRule {
    Threshold { threshold: f64 },
    /// Apply `components[k].threshold` with `components[k].probability`.
    Mixture { components: Vec<ThresholdComponent> },
}

impl GroupRule {
    /// Probability of a positive decision for one score.
    pub fn expected(&self, score: f64) -> f64 {
        match self {
            GroupRule::Threshold { threshold } => (score >= *threshold) as u8 as f64,
            GroupRule::Mixture { components } => {
                components.iter().filter(|c| score >= c.threshold).map(|c| c.probability).sum::<f64>().min(1.0)
            }
        }
    }

    fn draw(&self, score: f64, rng: &mut ChaCha8Rng) -> u8 {
        match self {
            GroupRule::Threshold { threshold } => (score >= *threshold) as u8,
            GroupRule::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for c in components {
                    acc += c.probability;
                    if u < acc {
                        return (score >= c.threshold) as u8;
                    }
                }
                let last = components.last().expect("non-empty mixture");
                (score >= last.threshold) as u8
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match self {
            GroupRule::Threshold { threshold } if threshold.is_nan() => Err("NaN threshold".into()),
            GroupRule::Threshold { .. } => Ok(()),
            GroupRule::Mixture { components } => {
                if components.is_empty() {
                    return Err("empty mixture".into());
                }
                if components.iter().any(|c| c.threshold.is_nan() || !(0.0..=1.0).contains(&c.probability)) {
                    return Err("mixture component out of range".into());
                }
                let total: f64 = components.iter().map(|c| c.probability).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(format!("mixture probabilities sum to {total}"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<u32>,
    pub group: u8,
    #[serde(flatten)]
    pub rule: GroupRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub objective: PolicyObjective,
    pub costs: CostWeights,
    pub cells: Vec<CellRule>,
    /// `1 - cost/n` on the fitting set (accuracy for unit costs).
    pub utility: f64,
    #[serde(default)]
    pub infeasible: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ThresholdPolicy {
    pub fn is_conditional(&self) -> bool {
        self.cells.iter().any(|c| c.stratum.is_some())
    }

    pub fn is_randomized(&self) -> bool {
        self.cells.iter().any(|c| matches!(c.rule, GroupRule::Mixture { .. }))
    }

    fn rules(&self) -> BTreeMap<(Option<u32>, u8), &GroupRule> {
        self.cells.iter().map(|c| ((c.stratum, c.group), &c.rule)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ThresholdPolicy = serde_json::from_str(s).map_err(|e| MitigationError::Config(e.to_string()))?;
        for c in &p.cells {
            c.rule.validate().map_err(MitigationError::Config)?;
            if c.group > 1 {
                return Err(MitigationError::Config(format!("group id {} is not binary", c.group)));
            }
        }
        Ok(p)
    }
}

fn cell_key(policy_conditional: bool, strata: Option<&[u32]>, i: usize) -> Result<Option<u32>> {
    if !policy_conditional {
        return Ok(None);
    }
    strata
        .map(|s| Some(s[i]))
        .ok_or_else(|| MitigationError::Precondition("conditional policy needs strata".into()))
}

/// Probability of a positive decision for every row.
pub fn expected_decisions(policy: &ThresholdPolicy, scores: &[f64], groups: &[u8], strata: Option<&[u32]>) -> Result<Vec<f64>> {
    check_lengths(scores, groups, strata)?;
    let rules = policy.rules();
    let cond = policy.is_conditional();
    (0..scores.len())
        .map(|i| {
            let key = (cell_key(cond, strata, i)?, groups[i]);
            let rule = rules.get(&key).ok_or_else(|| unknown(key))?;
            Ok(rule.expected(scores[i]))
        })
        .collect()
}

fn unknown(key: (Option<u32>, u8)) -> MitigationError {
    match key.0 {
        Some(s) => MitigationError::UnknownCell(format!("stratum {s}, group {}", key.1)),
        None => MitigationError::UnknownCell(format!("group {}", key.1)),
    }
}

/// Hard decisions; mixtures are drawn from a stream seeded by `seed`.
pub fn apply_policy(policy: &ThresholdPolicy, scores: &[f64], groups: &[u8], strata: Option<&[u32]>, seed: u64) -> Result<Vec<u8>> {
    check_lengths(scores, groups, strata)?;
    let rules = policy.rules();
    let cond = policy.is_conditional();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..scores.len())
        .map(|i| {
            let key = (cell_key(cond, strata, i)?, groups[i]);
            let rule = rules.get(&key).ok_or_else(|| unknown(key))?;
            Ok(rule.draw(scores[i], &mut rng))
        })
        .collect()
}

fn check_lengths(scores: &[f64], groups: &[u8], strata: Option<&[u32]>) -> Result<()> {
    if scores.len() != groups.len() || strata.is_some_and(|s| s.len() != scores.len()) {
        return Err(MitigationError::Precondition("scores, groups and strata differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MitigationError::Precondition("scores must be finite".into()));
    }
    Ok(())
}

/// One achievable deterministic operating point of a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Rows accepted.
    pub accepted: usize,
    pub true_positives: usize,
}

/// Scores and labels of one group, with every threshold's operating point.
#[derive(Debug, Clone)]
pub struct GroupCurve {
    pub n: usize,
    pub positives: usize,
    /// Ascending in `accepted`; the first point rejects everything.
    pub points: Vec<OperatingPoint>,
}

impl GroupCurve {
    pub fn new(scores: &[f64], y: &[u8]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let max = order.first().map(|&i| scores[i]).unwrap_or(0.0);
        let mut points = vec![OperatingPoint { threshold: max.next_up(), accepted: 0, true_positives: 0 }];
        let (mut k, mut tp) = (0, 0);
        while k < order.len() {
            let s = scores[order[k]];
            while k < order.len() && scores[order[k]] == s {
                tp += y[order[k]] as usize;
                k += 1;
            }
            points.push(OperatingPoint { threshold: s, accepted: k, true_positives: tp });
        }
        GroupCurve { n: scores.len(), positives: y.iter().filter(|&&l| l == 1).count(), points }
    }

    pub fn negatives(&self) -> usize {
        self.n - self.positives
    }

    fn rate(&self, p: &OperatingPoint) -> f64 {
        p.accepted as f64 / self.n as f64
    }

    fn tpr(&self, p: &OperatingPoint) -> f64 {
        p.true_positives as f64 / self.positives as f64
    }

    fn fpr(&self, p: &OperatingPoint) -> f64 {
        (p.accepted - p.true_positives) as f64 / self.negatives() as f64
    }

    fn cost(&self, p: &OperatingPoint, c: &CostWeights) -> f64 {
        let fp = (p.accepted - p.true_positives) as f64;
        let fn_ = (self.positives - p.true_positives) as f64;
        c.false_positive * fp + c.false_negative * fn_
    }

    /// Point whose `key` is nearest `target`; ties go to the first point.
    fn nearest<'a>(&'a self, points: &'a [OperatingPoint], target: f64, key: impl Fn(&OperatingPoint) -> f64) -> &'a OperatingPoint {
        points
            .iter()
            .min_by(|a, b| (key(a) - target).abs().total_cmp(&(key(b) - target).abs()))
            .expect("curve has points")
    }
}

fn split_groups<'a>(scores: &'a [f64], groups: &'a [u8], y: &'a [u8]) -> Result<[(Vec<f64>, Vec<u8>); 2]> {
    if scores.len() != groups.len() || scores.len() != y.len() {
        return Err(MitigationError::Precondition("scores, groups and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MitigationError::Precondition("scores must be finite".into()));
    }
    let mut out: [(Vec<f64>, Vec<u8>); 2] = Default::default();
    for i in 0..scores.len() {
        if groups[i] > 1 || y[i] > 1 {
            return Err(MitigationError::Precondition("groups and labels must be binary".into()));
        }
        out[groups[i] as usize].0.push(scores[i]);
        out[groups[i] as usize].1.push(y[i]);
    }
    for (g, (s, _)) in out.iter().enumerate() {
        if s.is_empty() {
            return Err(MitigationError::Precondition(format!("group {g} is empty")));
        }
    }
    Ok(out)
}

/// Sweep of a common target quantity; returns the chosen point per group
/// and the total cost.
fn sweep(
    curves: &[GroupCurve; 2],
    candidates: [&[OperatingPoint]; 2],
    key: impl Fn(&GroupCurve, &OperatingPoint) -> f64,
    costs: &CostWeights,
) -> ([OperatingPoint; 2], f64) {
    let mut targets: Vec<f64> = (0..2).flat_map(|g| candidates[g].iter().map(|p| key(&curves[g], p)).collect::<Vec<_>>()).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    let mut best: Option<([OperatingPoint; 2], f64, f64)> = None;
    for t in targets {
        let chosen = [0, 1].map(|g| *curves[g].nearest(candidates[g], t, |p| key(&curves[g], p)));
        let cost = curves[0].cost(&chosen[0], costs) + curves[1].cost(&chosen[1], costs);
        let gap = (key(&curves[1], &chosen[1]) - key(&curves[0], &chosen[0])).abs();
        let better = match &best {
            None => true,
            Some((_, bc, bg)) => cost < *bc || (cost == *bc && gap < *bg),
        };
        if better {
            best = Some((chosen, cost, gap));
        }
    }
    let (p, c, _) = best.expect("at least one target");
    (p, c)
}

fn threshold_cells(stratum: Option<u32>, points: &[OperatingPoint; 2]) -> Vec<CellRule> {
    (0..2u8)
        .map(|g| CellRule { stratum, group: g, rule: GroupRule::Threshold { threshold: points[g as usize].threshold } })
        .collect()
}

fn utility(cost: f64, n: usize) -> f64 {
    1.0 - cost / n as f64
}

/// Group thresholds attaining the same positive-decision rate, choosing
/// the common rate that maximizes utility.
pub fn fit_threshold_dp(scores: &[f64], groups: &[u8], y: &[u8], costs: CostWeights) -> Result<ThresholdPolicy> {
    let (cells, cost, warnings) = dp_cells(scores, groups, y, &costs, None)?;
    Ok(ThresholdPolicy {
        objective: PolicyObjective::DemographicParity,
        costs,
        cells,
        utility: utility(cost, scores.len()),
        infeasible: false,
        warnings,
    })
}

fn dp_cells(scores: &[f64], groups: &[u8], y: &[u8], costs: &CostWeights, stratum: Option<u32>) -> Result<(Vec<CellRule>, f64, Vec<String>)> {
    let parts = split_groups(scores, groups, y)?;
    let curves = parts.map(|(s, l)| GroupCurve::new(&s, &l));
    let mut warnings = Vec::new();
    if curves.iter().any(|c| c.points.len() <= 2) {
        warnings.push("degenerate scores: only all-or-nothing rates are achievable".to_string());
    }
    let (points, cost) = sweep(&curves, [&curves[0].points, &curves[1].points], |c, p| c.rate(p), costs);
    Ok((threshold_cells(stratum, &points), cost, warnings))
}

/// Rates each group can reach with a single threshold (for inspection).
pub fn thresholds_for_rate(scores: &[f64], groups: &[u8], y: &[u8], rate: f64) -> Result<[f64; 2]> {
    let parts = split_groups(scores, groups, y)?;
    let curves = parts.map(|(s, l)| GroupCurve::new(&s, &l));
    Ok([0, 1].map(|g| curves[g].nearest(&curves[g].points, rate, |p| curves[g].rate(p)).threshold))
}

/// For each true-positive count, the highest threshold reaching it.
fn positive_anchored(curve: &GroupCurve) -> Vec<OperatingPoint> {
    let mut out: Vec<OperatingPoint> = Vec::new();
    for p in &curve.points {
        if out.last().is_none_or(|q| q.true_positives != p.true_positives) {
            out.push(*p);
        }
    }
    out
}

/// Group thresholds attaining the same true-positive rate.
pub fn fit_threshold_eopp(scores: &[f64], groups: &[u8], y: &[u8], costs: CostWeights) -> Result<ThresholdPolicy> {
    let parts = split_groups(scores, groups, y)?;
    let curves = parts.map(|(s, l)| GroupCurve::new(&s, &l));
    for (g, c) in curves.iter().enumerate() {
        if c.positives == 0 {
            return Err(MitigationError::Precondition(format!("group {g} has no actual positives")));
        }
    }
    let anchored = [positive_anchored(&curves[0]), positive_anchored(&curves[1])];
    let (points, cost) = sweep(&curves, [&anchored[0], &anchored[1]], |c, p| c.tpr(p), &costs);
    Ok(ThresholdPolicy {
        objective: PolicyObjective::EqualOpportunity,
        costs,
        cells: threshold_cells(None, &points),
        utility: utility(cost, scores.len()),
        infeasible: false,
        warnings: Vec::new(),
    })
}

/// Threshold target for thresholds for a common TPR (for inspection).
pub fn thresholds_for_tpr(scores: &[f64], groups: &[u8], y: &[u8], tpr: f64) -> Result<[f64; 2]> {
    let parts = split_groups(scores, groups, y)?;
    let curves = parts.map(|(s, l)| GroupCurve::new(&s, &l));
    Ok([0, 1].map(|g| {
        let a = positive_anchored(&curves[g]);
        curves[g].nearest(&a, tpr, |p| curves[g].tpr(p)).threshold
    }))
}

/// DP sweep run independently inside each stratum.
pub fn fit_threshold_cdp(scores: &[f64], groups: &[u8], strata: &[u32], y: &[u8], costs: CostWeights) -> Result<ThresholdPolicy> {
    if strata.len() != scores.len() {
        return Err(MitigationError::Precondition("strata length differs from scores".into()));
    }
    let mut by: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        by.entry(s).or_default().push(i);
    }
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    let mut total_cost = 0.0;
    for (s, rows) in by {
        let sc: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let gr: Vec<u8> = rows.iter().map(|&i| groups[i]).collect();
        let yl: Vec<u8> = rows.iter().map(|&i| y[i]).collect();
        if !(gr.contains(&0) && gr.contains(&1)) {
            warnings.push(format!("stratum {s} lacks one of the groups; skipped"));
            continue;
        }
        let (c, cost, w) = dp_cells(&sc, &gr, &yl, &costs, Some(s))?;
        total_cost += cost;
        cells.extend(c);
        warnings.extend(w.into_iter().map(|m| format!("stratum {s}: {m}")));
    }
    if cells.is_empty() {
        return Err(MitigationError::Infeasible("no stratum contains both groups".into()));
    }
    Ok(ThresholdPolicy {
        objective: PolicyObjective::ConditionalDemographicParity,
        costs,
        cells,
        utility: utility(total_cost, scores.len()),
        infeasible: false,
        warnings,
    })
}

/// A point of a group's ROC diagram tagged with the threshold producing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// (FPR, TPR) of every deterministic threshold, including reject-all.
pub fn roc_points(scores: &[f64], y: &[u8]) -> Vec<RocPoint> {
    let c = GroupCurve::new(scores, y);
    c.points.iter().map(|p| RocPoint { threshold: p.threshold, fpr: c.fpr(p), tpr: c.tpr(p) }).collect()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of ROC points, counter-clockwise, without collinear
/// vertices (up to rounding). Coincident points keep the highest
/// threshold.
pub fn roc_hull(points: &[RocPoint]) -> Vec<RocPoint> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)).then(b.threshold.total_cmp(&a.threshold)));
    pts.dedup_by(|b, a| a.fpr == b.fpr && a.tpr == b.tpr);
    if pts.len() <= 2 {
        return pts;
    }
    let xy = |p: &RocPoint| (p.fpr, p.tpr);
    let mut lower: Vec<RocPoint> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(xy(&lower[lower.len() - 2]), xy(&lower[lower.len() - 1]), xy(p)) <= GEOM_EPS {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<RocPoint> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(xy(&upper[upper.len() - 2]), xy(&upper[upper.len() - 1]), xy(p)) <= GEOM_EPS {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

const GEOM_EPS: f64 = 1e-12;

/// Intersection of two convex CCW polygons (either may be degenerate).
fn clip(subject: &[(f64, f64)], clipper: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    let m = clipper.len();
    if m < 2 {
        return out;
    }
    let edges: Vec<((f64, f64), (f64, f64))> = if m == 2 {
        vec![(clipper[0], clipper[1]), (clipper[1], clipper[0])]
    } else {
        (0..m).map(|k| (clipper[k], clipper[(k + 1) % m])).collect()
    };
    for (a, b) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let inside = |p: (f64, f64)| cross(a, b, p) >= -GEOM_EPS;
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let (dp, dc) = (cross(a, b, prev), cross(a, b, cur));
                let t = dp / (dp - dc);
                out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

fn close(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() <= 1e-12 && (a.1 - b.1).abs() <= 1e-12
}

/// Expresses `q` as a mixture of at most three hull thresholds.
fn decompose(hull: &[RocPoint], reject_all: f64, q: (f64, f64)) -> Vec<ThresholdComponent> {
    let xy = |p: &RocPoint| (p.fpr, p.tpr);
    if let Some(v) = hull.iter().find(|p| close(xy(p), q)) {
        return vec![ThresholdComponent { threshold: v.threshold, probability: 1.0 }];
    }
    let m = hull.len();
    let edge = |k: usize| (hull[k], hull[(k + 1) % m]);
    // on an edge: mix its endpoints
    for k in 0..m {
        let (a, b) = edge(k);
        let (pa, pb) = (xy(&a), xy(&b));
        let len2 = (pb.0 - pa.0).powi(2) + (pb.1 - pa.1).powi(2);
        if len2 == 0.0 {
            continue;
        }
        if cross(pa, pb, q).abs() <= 1e-12 * len2.sqrt().max(1.0) {
            let t = ((q.0 - pa.0) * (pb.0 - pa.0) + (q.1 - pa.1) * (pb.1 - pa.1)) / len2;
            if (-1e-12..=1.0 + 1e-12).contains(&t) {
                let t = t.clamp(0.0, 1.0);
                return merge(vec![
                    ThresholdComponent { threshold: a.threshold, probability: 1.0 - t },
                    ThresholdComponent { threshold: b.threshold, probability: t },
                ]);
            }
        }
    }
    // interior: q = e/s on the ray from the reject-all corner through q
    let mut best: Option<(f64, RocPoint, RocPoint, f64)> = None;
    for k in 0..m {
        let (a, b) = edge(k);
        let (pa, pb) = (xy(&a), xy(&b));
        // solve s*q = pa + u*(pb - pa)
        let det = q.0 * (pa.1 - pb.1) - q.1 * (pa.0 - pb.0);
        if det.abs() < 1e-15 {
            continue;
        }
        let s = (pa.0 * (pa.1 - pb.1) - pa.1 * (pa.0 - pb.0)) / det;
        let u = (q.0 * pa.1 - q.1 * pa.0) / det;
        if s >= 1.0 && (-1e-12..=1.0 + 1e-12).contains(&u) && best.as_ref().is_none_or(|bb| s > bb.0) {
            best = Some((s, a, b, u.clamp(0.0, 1.0)));
        }
    }
    match best {
        Some((s, a, b, u)) => merge(vec![
            ThresholdComponent { threshold: a.threshold, probability: (1.0 - u) / s },
            ThresholdComponent { threshold: b.threshold, probability: u / s },
            ThresholdComponent { threshold: reject_all, probability: 1.0 - 1.0 / s },
        ]),
        None => vec![ThresholdComponent { threshold: reject_all, probability: 1.0 }],
    }
}

fn merge(components: Vec<ThresholdComponent>) -> Vec<ThresholdComponent> {
    let mut out: Vec<ThresholdComponent> = Vec::new();
    for c in components {
        if c.probability <= 0.0 {
            continue;
        }
        match out.iter_mut().find(|o| o.threshold == c.threshold) {
            Some(o) => o.probability += c.probability,
            None => out.push(c),
        }
    }
    let total: f64 = out.iter().map(|c| c.probability).sum();
    out.iter_mut().for_each(|c| c.probability /= total);
    out.sort_by(|a, b| b.threshold.total_cmp(&a.threshold));
    out
}

fn rule_from(components: Vec<ThresholdComponent>) -> GroupRule {
    if components.len() == 1 {
        GroupRule::Threshold { threshold: components[0].threshold }
    } else {
        GroupRule::Mixture { components }
    }
}

/// Equalized-odds post-processing.
///
/// Each group's achievable (FPR, TPR) region is the convex hull of its
/// threshold classifiers. The common operating point maximizing utility is
/// taken over the intersection of the two regions and realized per group by
/// mixing thresholds.
pub fn fit_threshold_eo(scores: &[f64], groups: &[u8], y: &[u8], costs: CostWeights) -> Result<ThresholdPolicy> {
    let parts = split_groups(scores, groups, y)?;
    let curves = [0, 1].map(|g| GroupCurve::new(&parts[g].0, &parts[g].1));
    for (g, c) in curves.iter().enumerate() {
        if c.positives == 0 || c.negatives() == 0 {
            return Err(MitigationError::Precondition(format!("group {g} needs both labels")));
        }
    }
    let rocs = [0, 1].map(|g| roc_points(&parts[g].0, &parts[g].1));
    let hulls = rocs.clone().map(|r| roc_hull(&r));
    let poly = |h: &[RocPoint]| h.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
    let region = clip(&poly(&hulls[0]), &poly(&hulls[1]));
    let (pos, neg) = ((curves[0].positives + curves[1].positives) as f64, (curves[0].negatives() + curves[1].negatives()) as f64);
    // cost at a common point: c_fp·N·fpr + c_fn·P·(1 − tpr)
    let cost_at = |p: (f64, f64)| costs.false_positive * neg * p.0 + costs.false_negative * pos * (1.0 - p.1);
    let mut warnings = Vec::new();
    let candidates = if region.is_empty() {
        warnings.push("hull intersection is empty; using the diagonal".into());
        vec![(0.0, 0.0), (1.0, 1.0)]
    } else {
        region
    };
    let target = candidates
        .iter()
        .copied()
        .min_by(|a, b| cost_at(*a).total_cmp(&cost_at(*b)).then(a.0.total_cmp(&b.0)))
        .expect("non-empty");
    let on_diagonal = (target.0 - target.1).abs() <= 1e-12;
    if on_diagonal {
        warnings.push("best common operating point is uninformative (on the diagonal)".into());
    }
    let cells = (0..2u8)
        .map(|g| {
            let reject_all = rocs[g as usize][0].threshold;
            CellRule { stratum: None, group: g, rule: rule_from(decompose(&hulls[g as usize], reject_all, target)) }
        })
        .collect();
    Ok(ThresholdPolicy {
        objective: PolicyObjective::EqualizedOdds,
        costs,
        cells,
        utility: utility(cost_at(target), scores.len()),
        infeasible: on_diagonal,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{demographic_parity, equal_opportunity, equalized_odds};

    #[test]
    fn dp_hand_sweep() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.6, 0.5, 0.4, 0.3];
        let groups = [1, 1, 1, 1, 0, 0, 0, 0];
        let y = [1, 1, 0, 0, 1, 1, 0, 0];
        assert_eq!(thresholds_for_rate(&scores, &groups, &y, 0.5).unwrap(), [0.5, 0.8]);
    }

    #[test]
    fn dp_identical_distributions() {
        let scores = [0.2, 0.4, 0.6, 0.8, 0.2, 0.4, 0.6, 0.8];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let y = [0, 0, 1, 1, 0, 0, 1, 1];
        let p = fit_threshold_dp(&scores, &groups, &y, CostWeights::default()).unwrap();
        let e = expected_decisions(&p, &scores, &groups, None).unwrap();
        assert_eq!(demographic_parity(&e, &groups).unwrap(), 0.0);
        let t: Vec<f64> = p.cells.iter().map(|c| match c.rule {
            GroupRule::Threshold { threshold } => threshold,
            _ => panic!("deterministic"),
        }).collect();
        assert_eq!(t[0], t[1]);
        assert_eq!(p.utility, 1.0);
    }

    #[test]
    fn eopp_hand_sweep() {
        let scores = [0.9, 0.7, 0.8, 0.6, 0.4, 0.5];
        let groups = [1, 1, 1, 0, 0, 0];
        let y = [1, 1, 0, 1, 1, 0];
        assert_eq!(thresholds_for_tpr(&scores, &groups, &y, 0.5).unwrap(), [0.6, 0.9]);
        let p = fit_threshold_eopp(&scores, &groups, &y, CostWeights::default()).unwrap();
        let e = expected_decisions(&p, &scores, &groups, None).unwrap();
        assert!(equal_opportunity(&e, &groups, &y).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn eopp_requires_positives() {
        assert!(fit_threshold_eopp(&[0.1, 0.2], &[0, 1], &[0, 1], CostWeights::default()).is_err());
    }

    #[test]
    fn degenerate_scores_warn() {
        let p = fit_threshold_dp(&[0.5; 4], &[0, 0, 1, 1], &[0, 1, 0, 1], CostWeights::default()).unwrap();
        assert!(!p.warnings.is_empty());
    }

    #[test]
    fn apply_deterministic_and_seeded() {
        let p = ThresholdPolicy {
            objective: PolicyObjective::DemographicParity,
            costs: CostWeights::default(),
            cells: vec![
                CellRule { stratum: None, group: 0, rule: GroupRule::Threshold { threshold: 0.5 } },
                CellRule { stratum: None, group: 1, rule: GroupRule::Mixture { components: vec![
                    ThresholdComponent { threshold: 0.5, probability: 1.0 },
                ] } },
            ],
            utility: 0.0,
            infeasible: false,
            warnings: vec![],
        };
        assert_eq!(apply_policy(&p, &[0.3, 0.7], &[0, 0], None, 1).unwrap(), vec![0, 1]);
        assert_eq!(apply_policy(&p, &[0.3, 0.7], &[1, 1], None, 1).unwrap(), vec![0, 1]);
        assert!(apply_policy(&p, &[0.3], &[2], None, 1).is_err());
        let mixed = ThresholdPolicy {
            cells: vec![CellRule { stratum: None, group: 0, rule: GroupRule::Mixture { components: vec![
                ThresholdComponent { threshold: 0.2, probability: 0.5 },
                ThresholdComponent { threshold: 0.8, probability: 0.5 },
            ] } }],
            ..p
        };
        let scores: Vec<f64> = (0..200).map(|i| (i % 10) as f64 / 10.0).collect();
        let groups = vec![0u8; 200];
        assert_eq!(apply_policy(&mixed, &scores, &groups, None, 5).unwrap(), apply_policy(&mixed, &scores, &groups, None, 5).unwrap());
    }

    #[test]
    fn hull_edge_mixture_matches_convex_combination() {
        // 6-point group: ROC vertices at thresholds .9 (0,1/3), .7 (0,2/3), .4 (1/3, 1)...
        let scores = [0.9, 0.7, 0.6, 0.4, 0.3, 0.1];
        let y = [1, 1, 0, 1, 0, 0];
        let pts = roc_points(&scores, &y);
        let hull = roc_hull(&pts);
        let a = hull.iter().find(|p| p.threshold == 0.7).unwrap();
        let b = hull.iter().find(|p| p.threshold == 0.4).unwrap();
        let p = 0.25;
        let q = (p * a.fpr + (1.0 - p) * b.fpr, p * a.tpr + (1.0 - p) * b.tpr);
        let comps = decompose(&hull, pts[0].threshold, q);
        assert_eq!(comps.len(), 2);
        let rule = GroupRule::Mixture { components: comps.clone() };
        let e: Vec<f64> = scores.iter().map(|&s| rule.expected(s)).collect();
        let tpr = e.iter().zip(&y).filter(|(_, &l)| l == 1).map(|(v, _)| v).sum::<f64>() / 3.0;
        let fpr = e.iter().zip(&y).filter(|(_, &l)| l == 0).map(|(v, _)| v).sum::<f64>() / 3.0;
        assert!((tpr - q.1).abs() < 1e-12 && (fpr - q.0).abs() < 1e-12);
        let pa = comps.iter().find(|c| c.threshold == 0.7).unwrap().probability;
        assert!((pa - p).abs() < 1e-12);
    }

    #[test]
    fn eo_identical_groups_is_deterministic() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.1, 0.4, 0.35, 0.8];
        let y = [0, 0, 1, 1, 0, 0, 1, 1];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let p = fit_threshold_eo(&scores, &groups, &y, CostWeights::default()).unwrap();
        assert!(!p.is_randomized());
        let e = expected_decisions(&p, &scores, &groups, None).unwrap();
        let eo = equalized_odds(&e, &groups, &y).unwrap();
        assert_eq!((eo.tpr_diff, eo.fpr_diff), (0.0, 0.0));
    }

    #[test]
    fn eo_unequal_groups_equalizes_in_expectation() {
        let scores = [0.9, 0.8, 0.3, 0.2, 0.7, 0.6, 0.5, 0.4, 0.65, 0.1];
        let y = [1, 1, 0, 0, 1, 0, 1, 0, 1, 0];
        let groups = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let p = fit_threshold_eo(&scores, &groups, &y, CostWeights::default()).unwrap();
        let e = expected_decisions(&p, &scores, &groups, None).unwrap();
        let eo = equalized_odds(&e, &groups, &y).unwrap();
        assert!(eo.tpr_diff.abs() < 1e-9 && eo.fpr_diff.abs() < 1e-9, "{eo:?}");
        let back = ThresholdPolicy::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn cdp_single_stratum_matches_dp() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.6, 0.5, 0.4, 0.3];
        let groups = [1, 1, 1, 1, 0, 0, 0, 0];
        let y = [1, 1, 0, 0, 1, 1, 0, 0];
        let dp = fit_threshold_dp(&scores, &groups, &y, CostWeights::default()).unwrap();
        let cdp = fit_threshold_cdp(&scores, &groups, &[0; 8], &y, CostWeights::default()).unwrap();
        let a = expected_decisions(&dp, &scores, &groups, None).unwrap();
        let b = expected_decisions(&cdp, &scores, &groups, Some(&[0; 8])).unwrap();
        assert_eq!(a, b);
        assert!(expected_decisions(&cdp, &scores, &groups, Some(&[1; 8])).is_err());
    }
}
