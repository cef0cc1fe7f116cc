//! Pre-processing mitigations: transform the training table, then fit any
//! standard learner on the result.
//!
//! Every transform returns a [`PreprocessPlan`] that replays exactly on the
//! original table.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MitigationError, Result};
use crate::dataset::{correlation_with, DataTable};
use crate::learners::{self, LearnerConfig, LearnerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMethod {
    Ftu,
    Suppression,
    Massaging,
    Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedColumn {
    pub name: String,
    /// Correlation with the protected column (absent for the protected
    /// column itself).
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relabel {
    pub row: usize,
    pub old: u8,
    pub new: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCount {
    pub group: u8,
    pub label: u8,
    pub original: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxModelRef {
    pub kind: LearnerKind,
    pub config: LearnerConfig,
}

/// Complete audit trail of a pre-processing transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub method: PreprocessMethod,
    #[serde(default)]
    pub removed_columns: Vec<RemovedColumn>,
    #[serde(default)]
    pub relabeled_rows: Vec<Relabel>,
    #[serde(default)]
    pub resampling_counts: Vec<CellCount>,
    /// Source row of every output row (sampling only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_rows: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_model: Option<AuxModelRef>,
    /// Paired relabels per direction (massaging only); `relabeled_rows`
    /// may hold a few more in one direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub massage_count: Option<usize>,
}

impl PreprocessPlan {
    fn new(method: PreprocessMethod) -> Self {
        PreprocessPlan {
            method,
            removed_columns: Vec::new(),
            relabeled_rows: Vec::new(),
            resampling_counts: Vec::new(),
            selected_rows: None,
            aux_model: None,
            massage_count: None,
        }
    }

    /// Re-applies the recorded transform to the original table.
    pub fn apply(&self, original: &DataTable) -> Result<DataTable> {
        let mut t = original.clone();
        if !self.relabeled_rows.is_empty() {
            let mut y = t.target()?;
            for r in &self.relabeled_rows {
                let cur = y.get_mut(r.row).ok_or_else(|| MitigationError::Plan(format!("row {} out of range", r.row)))?;
                if *cur != r.old {
                    return Err(MitigationError::Plan(format!("row {} has label {}, plan expects {}", r.row, cur, r.old)));
                }
                *cur = r.new;
            }
            t = t.with_target(&y)?;
        }
        if let Some(rows) = &self.selected_rows {
            if let Some(&bad) = rows.iter().find(|&&i| i >= t.n_rows()) {
                return Err(MitigationError::Plan(format!("row {bad} out of range")));
            }
            t = t.select_rows(rows);
        }
        if !self.removed_columns.is_empty() {
            let names: Vec<&str> = self.removed_columns.iter().map(|c| c.name.as_str()).collect();
            t = t.drop_columns(&names)?;
        }
        Ok(t)
    }
}

fn protected_name(table: &DataTable) -> Result<String> {
    table
        .protected_name()
        .map(String::from)
        .ok_or_else(|| MitigationError::Precondition("table has no protected column".into()))
}

/// Fairness through unawareness: drop the protected column.
pub fn ftu(table: &DataTable) -> Result<(DataTable, PreprocessPlan)> {
    let name = protected_name(table)?;
    let mut plan = PreprocessPlan::new(PreprocessMethod::Ftu);
    plan.removed_columns.push(RemovedColumn { name: name.clone(), correlation: None });
    Ok((table.drop_columns(&[&name])?, plan))
}

/// Default correlation cut-off for suppression.
pub const SUPPRESSION_THRESHOLD: f64 = 0.15;

/// Drops the protected column and every feature whose absolute correlation
/// with it is strictly above `threshold`.
pub fn suppress(table: &DataTable, threshold: f64) -> Result<(DataTable, PreprocessPlan)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MitigationError::Config(format!("suppression threshold {threshold} outside (0,1]")));
    }
    let name = protected_name(table)?;
    let corr = correlation_with(table, &name)?;
    let mut plan = PreprocessPlan::new(PreprocessMethod::Suppression);
    plan.removed_columns.push(RemovedColumn { name: name.clone(), correlation: None });
    // schema order keeps the plan stable
    for spec in table.schema() {
        if let Some(fc) = corr.features.get(&spec.name) {
            if fc.value.abs() > threshold {
                plan.removed_columns.push(RemovedColumn { name: spec.name.clone(), correlation: Some(fc.value) });
            }
        }
    }
    let out = plan.apply(table)?;
    if out.input_columns().is_empty() {
        return Err(MitigationError::Infeasible("suppression removed every feature".into()));
    }
    Ok((out, plan))
}

fn rate(labels: &[u8], rows: &[usize]) -> f64 {
    rows.iter().filter(|&&i| labels[i] == 1).count() as f64 / rows.len() as f64
}

/// Relabels training rows ranked by an auxiliary classifier so that the
/// group positive label rates differ by at most `1/n`.
///
/// `M` deprived-group negatives with the highest auxiliary scores are
/// promoted and `M` favored-group positives with the lowest scores are
/// demoted, for the largest `M` that does not overshoot. Paired swaps
/// move the gap in steps of `1/n_f + 1/n_d`, so the remainder is closed
/// with `k` further relabels inside the larger group alone, leaving at
/// most `1/(2·n_large) ≤ 1/n`. Equal scores break by row index.
pub fn massage(table: &DataTable, aux: &LearnerConfig) -> Result<(DataTable, PreprocessPlan)> {
    let groups = table.protected()?;
    let y = table.target()?;
    let n = table.n_rows();
    let members: [Vec<usize>; 2] = [0u8, 1].map(|g| (0..n).filter(|&i| groups[i] == g).collect());
    for (g, rows) in members.iter().enumerate() {
        let pos = rows.iter().filter(|&&i| y[i] == 1).count();
        if pos == 0 || pos == rows.len() {
            return Err(MitigationError::Precondition(format!("group {g} needs both labels for massaging")));
        }
    }
    let mut plan = PreprocessPlan::new(PreprocessMethod::Massaging);
    plan.aux_model = Some(AuxModelRef { kind: aux.kind(), config: aux.clone() });
    let (r0, r1) = (rate(&y, &members[0]), rate(&y, &members[1]));
    let (dep, fav) = if r0 <= r1 { (0usize, 1usize) } else { (1, 0) };
    let (nd, nf) = (members[dep].len() as f64, members[fav].len() as f64);
    let pd = members[dep].iter().filter(|&&i| y[i] == 1).count() as f64;
    let pf = members[fav].iter().filter(|&&i| y[i] == 1).count() as f64;
    let gap = |m: f64| (pf - m) / nf - (pd + m) / nd;
    let tol = 1.0 / n as f64;
    if gap(0.0) <= tol {
        plan.massage_count = Some(0);
        return Ok((table.clone(), plan));
    }
    // gap is linear in M with slope -(1/nf + 1/nd)
    let slope = 1.0 / nf + 1.0 / nd;
    let mut m = (gap(0.0) / slope).floor().max(0.0) as usize;
    while m > 0 && gap(m as f64) < 0.0 {
        m -= 1;
    }
    while gap((m + 1) as f64) >= 0.0 {
        m += 1;
    }
    // extra one-directional relabels, in the favored group when it is larger
    let (mut extra_demote, mut extra_promote) = (0usize, 0usize);
    if gap((m + 1) as f64) >= -tol {
        m += 1;
    } else if gap(m as f64) > tol {
        let r = gap(m as f64);
        if nf >= nd {
            extra_demote = (r * nf).round() as usize;
        } else {
            extra_promote = (r * nd).round() as usize;
        }
    }
    let scores = learners::fit(aux, table, None)?.predict_scores(table)?;
    let mut promote: Vec<usize> = members[dep].iter().copied().filter(|&i| y[i] == 0).collect();
    let mut demote: Vec<usize> = members[fav].iter().copied().filter(|&i| y[i] == 1).collect();
    let (up, down) = (m + extra_promote, m + extra_demote);
    if promote.len() < up || demote.len() < down {
        return Err(MitigationError::Infeasible(format!(
            "massaging needs {up} promotions and {down} demotions; candidates: {} promotable, {} demotable",
            promote.len(),
            demote.len()
        )));
    }
    promote.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    demote.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut flips: Vec<Relabel> = promote[..up]
        .iter()
        .map(|&row| Relabel { row, old: 0, new: 1 })
        .chain(demote[..down].iter().map(|&row| Relabel { row, old: 1, new: 0 }))
        .collect();
    flips.sort_by_key(|r| r.row);
    plan.relabeled_rows = flips;
    plan.massage_count = Some(m);
    Ok((plan.apply(table)?, plan))
}

/// Resamples every (group, label) cell to its independence count
/// `round(n_g · n_y / n)`: undersized cells are topped up with seeded
/// draws with replacement, oversized cells subsampled without replacement.
/// Output rows are ordered by source row.
pub fn resample(table: &DataTable, seed: u64) -> Result<(DataTable, PreprocessPlan)> {
    let groups = table.protected()?;
    let y = table.target()?;
    let n = table.n_rows();
    let mut cells: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        cells.entry((groups[i], y[i])).or_default().push(i);
    }
    for g in 0..2u8 {
        for l in 0..2u8 {
            if cells.get(&(g, l)).is_none_or(Vec::is_empty) {
                return Err(MitigationError::Infeasible(format!("cell (group={g}, label={l}) is empty")));
            }
        }
    }
    let group_n = |g: u8| cells.iter().filter(|((cg, _), _)| *cg == g).map(|(_, r)| r.len()).sum::<usize>();
    let label_n = |l: u8| cells.iter().filter(|((_, cl), _)| *cl == l).map(|(_, r)| r.len()).sum::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = PreprocessPlan::new(PreprocessMethod::Sampling);
    let mut selected = Vec::new();
    for (&(g, l), rows) in &cells {
        let target = ((group_n(g) * label_n(l)) as f64 / n as f64).round() as usize;
        plan.resampling_counts.push(CellCount { group: g, label: l, original: rows.len(), target });
        if target >= rows.len() {
            selected.extend_from_slice(rows);
            selected.extend((0..target - rows.len()).map(|_| rows[rng.random_range(0..rows.len())]));
        } else {
            let mut pool = rows.clone();
            pool.shuffle(&mut rng);
            selected.extend_from_slice(&pool[..target]);
        }
    }
    selected.sort_unstable();
    plan.selected_rows = Some(selected);
    Ok((plan.apply(table)?, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnRole, ColumnSpec};
    use crate::learners::ForestConfig;
    use crate::metrics::{as_decisions, demographic_parity};

    fn table(rows: &[(u8, f64, f64, u8)]) -> DataTable {
        let schema = vec![
            ColumnSpec::binary("a", "1", "0", ColumnRole::Protected),
            ColumnSpec::numeric("x", ColumnRole::Feature),
            ColumnSpec::numeric("z", ColumnRole::Feature),
            ColumnSpec::binary("y", "1", "0", ColumnRole::Target),
        ];
        let rows: Vec<Vec<f64>> = rows.iter().map(|&(a, x, z, y)| vec![a as f64, x, z, y as f64]).collect();
        DataTable::from_encoded(schema, &rows).unwrap()
    }

    #[test]
    fn ftu_drops_exactly_protected() {
        let t = table(&[(0, 1.0, 2.0, 0), (1, 3.0, 4.0, 1)]);
        let (out, plan) = ftu(&t).unwrap();
        assert_eq!(out.input_names(), vec!["x", "z"]);
        assert_eq!(plan.apply(&t).unwrap(), out);
        assert!(ftu(&out).is_err());
    }

    #[test]
    fn massaging_hand_example() {
        // deprived (a=0): 4 rows, 1 positive; favored (a=1): 4 rows, 3 positives
        let t = table(&[
            (0, 0.1, 0.0, 1),
            (0, 0.9, 0.0, 0),
            (0, 0.2, 0.0, 0),
            (0, 0.3, 0.0, 0),
            (1, 0.8, 0.0, 1),
            (1, 0.1, 0.0, 1),
            (1, 0.7, 0.0, 1),
            (1, 0.4, 0.0, 0),
        ]);
        let aux = LearnerConfig::Forest(ForestConfig { n_trees: 5, ..Default::default() });
        let (out, plan) = massage(&t, &aux).unwrap();
        assert_eq!(plan.massage_count, Some(1));
        assert_eq!(plan.relabeled_rows.len(), 2);
        let labels = as_decisions(&out.target().unwrap());
        assert_eq!(demographic_parity(&labels, &out.protected().unwrap()).unwrap(), 0.0);
        assert_eq!(plan.apply(&t).unwrap(), out);
    }

    #[test]
    fn massaging_closes_the_remainder_in_the_larger_group() {
        // favored 9 rows / 8 positive, deprived 3 rows / 1 positive: one
        // pair leaves a gap of 1/9, two pairs overshoot to -1/3
        let mut rows = vec![(0, 0.5, 0.0, 1), (0, 0.2, 1.0, 0), (0, 0.3, 0.0, 0)];
        rows.extend((0..8).map(|i| (1, i as f64 / 8.0, 0.0, 1)));
        rows.push((1, 0.1, 1.0, 0));
        let t = table(&rows);
        let (out, plan) = massage(&t, &LearnerConfig::default_for(LearnerKind::Logistic)).unwrap();
        assert_eq!(plan.massage_count, Some(1));
        let ups = plan.relabeled_rows.iter().filter(|r| r.new == 1).count();
        assert_eq!((ups, plan.relabeled_rows.len() - ups), (1, 2));
        let dp = demographic_parity(&as_decisions(&out.target().unwrap()), &out.protected().unwrap()).unwrap();
        assert!(dp.abs() <= 1.0 / 12.0, "{dp}");
        assert_eq!(plan.apply(&t).unwrap(), out);
    }

    #[test]
    fn massaging_identity_when_fair() {
        let t = table(&[(0, 0.1, 0.0, 1), (0, 0.2, 0.0, 0), (1, 0.3, 0.0, 1), (1, 0.4, 0.0, 0)]);
        let (out, plan) = massage(&t, &LearnerConfig::default_for(LearnerKind::Logistic)).unwrap();
        assert_eq!(out, t);
        assert_eq!(plan.massage_count, Some(0));
    }

    #[test]
    fn resampling_independence_counts() {
        let mut rows = Vec::new();
        for (a, y, k) in [(1u8, 1u8, 30), (1, 0, 10), (0, 1, 10), (0, 0, 30)] {
            for i in 0..k {
                rows.push((a, i as f64, 0.0, y));
            }
        }
        let t = table(&rows);
        let (out, plan) = resample(&t, 3).unwrap();
        assert!(plan.resampling_counts.iter().all(|c| c.target == 20));
        assert_eq!(out.n_rows(), 80);
        let dp = demographic_parity(&as_decisions(&out.target().unwrap()), &out.protected().unwrap()).unwrap();
        assert_eq!(dp, 0.0);
        assert_eq!(resample(&t, 3).unwrap().0, out);
    }

    #[test]
    fn resampling_fixed_point() {
        let mut rows = Vec::new();
        for (a, y, k) in [(1u8, 1u8, 6), (1, 0, 4), (0, 1, 3), (0, 0, 2)] {
            for i in 0..k {
                rows.push((a, i as f64, 0.0, y));
            }
        }
        let t = table(&rows);
        let (out, _) = resample(&t, 9).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn suppression_thresholds() {
        // x tracks a, z is independent
        let t = table(&[(0, 0.0, 0.0, 0), (0, 0.1, 1.0, 1), (1, 1.0, 0.0, 1), (1, 0.9, 1.0, 0)]);
        let (out, plan) = suppress(&t, SUPPRESSION_THRESHOLD).unwrap();
        assert_eq!(out.input_names(), vec!["z"]);
        assert_eq!(plan.removed_columns.len(), 2);
        let (only, _) = suppress(&t, 1.0).unwrap();
        assert_eq!(only.input_names(), vec!["x", "z"]);
        assert!(suppress(&t, 0.0).is_err());
    }

    #[test]
    fn suppression_can_remove_everything() {
        let t = table(&[(0, 0.0, 0.0, 0), (0, 0.1, 0.2, 1), (1, 1.0, 1.0, 1), (1, 0.9, 0.8, 0)]);
        assert!(matches!(suppress(&t, 0.15), Err(MitigationError::Infeasible(_))));
    }
}
