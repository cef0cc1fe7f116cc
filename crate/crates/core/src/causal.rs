//! Causal graphs over encoded columns, linear additive-error structural
//! models, counterfactual rows and the counterfactually fair classifier.
//!
//! Residuals are stored so that `f(parents) + residual` reproduces every
//! training value bit for bit; a second, usually zero, correction term
//! covers values the first sum cannot reach. A counterfactual keeps the residuals of the
//! factual row (abduction), replaces the protected value and recomputes the
//! descendants in topological order.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataTable, DatasetError};
use crate::learners::{fit_matrix, Classifier, LearnerConfig, LearnerError};

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("graph contains a cycle: {0}")]
    Cycle(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("missing residuals: {0}")]
    MissingResiduals(String),
    #[error("no usable model inputs: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

pub type Result<T> = std::result::Result<T, CausalError>;

/// Directed acyclic graph as an adjacency list (cause → effects). Isolated
/// nodes appear as keys with no effects.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub adjacency: BTreeMap<String, Vec<String>>,
}

impl CausalGraph {
    pub fn from_edges(edges: &[(&str, &str)]) -> Self {
        let mut g = CausalGraph::default();
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn add_node(&mut self, n: &str) {
        self.adjacency.entry(n.to_string()).or_default();
    }

    pub fn add_edge(&mut self, from: &str, to: &str) {
        self.adjacency.entry(from.to_string()).or_default().push(to.to_string());
        self.add_node(to);
    }

    pub fn nodes(&self) -> BTreeSet<&str> {
        self.adjacency.iter().flat_map(|(k, v)| std::iter::once(k.as_str()).chain(v.iter().map(String::as_str))).collect()
    }

    pub fn parents(&self, node: &str) -> Vec<String> {
        let mut p: Vec<String> =
            self.adjacency.iter().filter(|(_, v)| v.iter().any(|c| c == node)).map(|(k, _)| k.clone()).collect();
        p.dedup();
        p
    }

    /// Kahn's algorithm with lexicographic tie-breaking.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let nodes = self.nodes();
        let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|&n| (n, 0)).collect();
        for effects in self.adjacency.values() {
            let uniq: BTreeSet<&str> = effects.iter().map(String::as_str).collect();
            for e in uniq {
                *indeg.get_mut(e).expect("node listed") += 1;
            }
        }
        let mut ready: BTreeSet<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            let uniq: BTreeSet<&str> = self.adjacency.get(n).into_iter().flatten().map(String::as_str).collect();
            for e in uniq {
                let d = indeg.get_mut(e).expect("node listed");
                *d -= 1;
                if *d == 0 {
                    ready.insert(e);
                }
            }
        }
        if order.len() < nodes.len() {
            return Err(CausalError::Cycle(self.find_cycle().join(" -> ")));
        }
        Ok(order)
    }

    fn find_cycle(&self) -> Vec<String> {
        fn visit<'a>(
            g: &'a CausalGraph,
            n: &'a str,
            state: &mut BTreeMap<&'a str, u8>,
            stack: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            state.insert(n, 1);
            stack.push(n);
            for c in g.adjacency.get(n).into_iter().flatten() {
                match state.get(c.as_str()).copied().unwrap_or(0) {
                    1 => {
                        let start = stack.iter().position(|s| *s == c).expect("on stack");
                        let mut cyc: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                        cyc.push(c.clone());
                        return Some(cyc);
                    }
                    0 => {
                        if let Some(c) = visit(g, c, state, stack) {
                            return Some(c);
                        }
                    }
                    _ => {}
                }
            }
            stack.pop();
            state.insert(n, 2);
            None
        }
        let mut state = BTreeMap::new();
        for n in self.nodes() {
            if !state.contains_key(n) {
                if let Some(c) = visit(self, n, &mut state, &mut Vec::new()) {
                    return c;
                }
            }
        }
        Vec::new()
    }

    pub fn descendants(&self, node: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node.to_string()];
        while let Some(n) = stack.pop() {
            for c in self.adjacency.get(&n).into_iter().flatten() {
                if out.insert(c.clone()) {
                    stack.push(c.clone());
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CausalError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInfo {
    pub order: Vec<String>,
    pub protected: String,
    pub descendants: BTreeSet<String>,
    /// Table columns that are not descendants of the protected node,
    /// including columns absent from the graph.
    pub non_descendants: BTreeSet<String>,
}

/// Checks the graph against the table and locates the protected node.
pub fn validate_graph(graph: &CausalGraph, table: &DataTable) -> Result<GraphInfo> {
    let order = graph.topological_order()?;
    let known: BTreeSet<&str> = table.columns().iter().map(|c| c.name.as_str()).collect();
    if let Some(n) = order.iter().find(|n| !known.contains(n.as_str())) {
        return Err(CausalError::Schema(format!("graph node `{n}` is not a table column")));
    }
    let protected =
        table.protected_name().ok_or_else(|| CausalError::Schema("table has no protected column".into()))?.to_string();
    if !order.contains(&protected) {
        return Err(CausalError::Invalid(format!("protected column `{protected}` is not in the graph")));
    }
    let parents = graph.parents(&protected);
    if !parents.is_empty() {
        return Err(CausalError::Invalid(format!("protected node `{protected}` has parents: {}", parents.join(", "))));
    }
    let descendants = graph.descendants(&protected);
    let non_descendants = known
        .iter()
        .filter(|n| **n != protected && !descendants.contains(**n))
        .map(|n| n.to_string())
        .collect();
    Ok(GraphInfo { order, protected, descendants, non_descendants })
}

/// Linear regression of one node on its parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub parents: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// OLS standard errors `[intercept, coefficients...]`.
    pub std_errors: Vec<f64>,
}

impl NodeModel {
    pub fn eval(&self, parent_values: &[f64]) -> f64 {
        let mut s = self.intercept;
        for (c, v) in self.coefficients.iter().zip(parent_values) {
            s += c * v;
        }
        s
    }
}

/// Residual `(e, c)` with `(f + e) + c == x` in floating point. The
/// correction `c` is zero unless `x` lies off the grid that `f + e` can
/// reach, as happens when `|x|` is much smaller than `|f|`.
fn exact_residual(x: f64, f: f64) -> Option<(f64, f64)> {
    let mut e = x - f;
    for _ in 0..64 {
        let r = f + e;
        if r == x {
            return Some((e, 0.0));
        }
        let c = x - r;
        if r + c == x {
            return Some((e, c));
        }
        e = if r < x { e.next_up() } else { e.next_down() };
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSem {
    pub graph: CausalGraph,
    pub order: Vec<String>,
    pub protected: String,
    /// Encoded column layout of the fitting table.
    pub columns: Vec<String>,
    pub nodes: BTreeMap<String, NodeModel>,
    /// Residual of every node for every fitting row, by row id.
    pub residuals: BTreeMap<String, Vec<f64>>,
    /// Rounding corrections paired with `residuals`; mostly zero.
    #[serde(default)]
    pub corrections: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn ols(y: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, bool) {
    let n = y.len();
    let p = x.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[j - 1][i] });
    let target = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &target;
    let mut ridge = false;
    let chol = match xtx.clone().cholesky() {
        Some(c) => c,
        None => {
            ridge = true;
            let scale = (xtx.trace() / p as f64).max(1.0);
            (xtx + DMatrix::identity(p, p) * (1e-8 * scale)).cholesky().expect("ridge system is positive definite")
        }
    };
    let beta = chol.solve(&xty);
    let resid = &target - &design * &beta;
    let dof = n.saturating_sub(p).max(1) as f64;
    let sigma2 = resid.dot(&resid) / dof;
    let inv = chol.inverse();
    let se = (0..p).map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt()).collect();
    (beta.iter().copied().collect(), se, ridge)
}

/// Fits each graph node on its parents, in topological order.
pub fn fit_sem(table: &DataTable, graph: &CausalGraph) -> Result<FittedSem> {
    let info = validate_graph(graph, table)?;
    if table.n_rows() == 0 {
        return Err(CausalError::Invalid("no rows".into()));
    }
    let columns: Vec<String> = table.columns().iter().map(|c| c.name.clone()).collect();
    let col = |name: &str| table.column_values(table.column_index(name).expect("validated node"));
    let mut nodes = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    let mut corrections = BTreeMap::new();
    let mut warnings = Vec::new();
    for name in &info.order {
        let parents = graph.parents(name);
        let y = col(name);
        let xs: Vec<Vec<f64>> = parents.iter().map(|p| col(p)).collect();
        let (beta, std_errors, ridge) = ols(&y, &xs);
        if ridge {
            warnings.push(format!("`{name}`: singular design, ridge fallback used"));
        }
        let model = NodeModel { parents: parents.clone(), intercept: beta[0], coefficients: beta[1..].to_vec(), std_errors };
        let mut res = Vec::with_capacity(y.len());
        let mut cor = Vec::with_capacity(y.len());
        for i in 0..y.len() {
            let pv: Vec<f64> = xs.iter().map(|c| c[i]).collect();
            let (e, c) = exact_residual(y[i], model.eval(&pv))
                .ok_or_else(|| CausalError::Numeric(format!("residual of `{name}` on row {} is not representable", i + 1)))?;
            res.push(e);
            cor.push(c);
        }
        residuals.insert(name.clone(), res);
        corrections.insert(name.clone(), cor);
        nodes.insert(name.clone(), model);
    }
    Ok(FittedSem { graph: graph.clone(), order: info.order, protected: info.protected, columns, nodes, residuals, corrections, warnings })
}

/// A row paired with the residuals that generate its graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AbductedRow {
    pub values: Vec<f64>,
    /// Aligned with `FittedSem::order`.
    pub residuals: Vec<f64>,
    /// Rounding corrections, aligned with `residuals`.
    pub corrections: Vec<f64>,
}

impl AbductedRow {
    /// Residual of node slot `k` as a single number.
    pub fn residual(&self, k: usize) -> f64 {
        self.residuals[k] + self.corrections[k]
    }
}

impl FittedSem {
    fn index(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("node is a column")
    }

    fn check_layout(&self, table: &DataTable) -> Result<()> {
        let cols: Vec<&str> = table.columns().iter().map(|c| c.name.as_str()).collect();
        if cols != self.columns.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(CausalError::Schema("table layout differs from the fitting table".into()));
        }
        Ok(())
    }

    fn parent_values(&self, node: &NodeModel, values: &[f64]) -> Vec<f64> {
        node.parents.iter().map(|p| values[self.index(p)]).collect()
    }

    /// Residuals of one observed row, computed from its values.
    pub fn abduct_values(&self, values: &[f64]) -> Result<AbductedRow> {
        if values.len() != self.columns.len() {
            return Err(CausalError::Schema(format!("row has {} values, expected {}", values.len(), self.columns.len())));
        }
        let (residuals, corrections) = self
            .order
            .iter()
            .map(|n| {
                let m = &self.nodes[n];
                exact_residual(values[self.index(n)], m.eval(&self.parent_values(m, values)))
                    .ok_or_else(|| CausalError::Numeric(format!("residual of `{n}` is not representable")))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(AbductedRow { values: values.to_vec(), residuals, corrections })
    }

    /// Residuals stored for fitting row `row`.
    pub fn training_row(&self, table: &DataTable, row: usize) -> Result<AbductedRow> {
        self.check_layout(table)?;
        let missing = || CausalError::MissingResiduals(format!("no stored residuals for row {}", row + 1));
        let mut residuals = Vec::with_capacity(self.order.len());
        let mut corrections = Vec::with_capacity(self.order.len());
        for n in &self.order {
            residuals.push(*self.residuals[n].get(row).ok_or_else(missing)?);
            corrections.push(self.corrections.get(n).map_or(Some(&0.0), |c| c.get(row)).copied().ok_or_else(missing)?);
        }
        Ok(AbductedRow { values: table.row(row).to_vec(), residuals, corrections })
    }

    pub fn abduct(&self, table: &DataTable) -> Result<Vec<AbductedRow>> {
        self.check_layout(table)?;
        table.rows().map(|r| self.abduct_values(r)).collect()
    }

    /// Recomputes every non-root node from its parents and residual.
    pub fn reconstruct(&self, row: &AbductedRow) -> Vec<f64> {
        self.propagate(row, &self.order, |_| true)
    }

    /// Like [`reconstruct`](Self::reconstruct) with an explicit node order,
    /// which must be topological.
    pub fn reconstruct_in(&self, row: &AbductedRow, order: &[String]) -> Result<Vec<f64>> {
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        if pos.len() != self.order.len() || self.order.iter().any(|n| !pos.contains_key(n.as_str())) {
            return Err(CausalError::Invalid("order must list every node once".into()));
        }
        for (n, m) in &self.nodes {
            if m.parents.iter().any(|p| pos[p.as_str()] > pos[n.as_str()]) {
                return Err(CausalError::Invalid(format!("order places `{n}` before a parent")));
            }
        }
        Ok(self.propagate(row, order, |_| true))
    }

    fn propagate(&self, row: &AbductedRow, order: &[String], recompute: impl Fn(&str) -> bool) -> Vec<f64> {
        let mut v = row.values.clone();
        let slot: BTreeMap<&str, usize> = self.order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        for n in order {
            let m = &self.nodes[n];
            if m.parents.is_empty() || !recompute(n) {
                continue;
            }
            let f = m.eval(&self.parent_values(m, &v));
            let k = slot[n.as_str()];
            v[self.index(n)] = (f + row.residuals[k]) + row.corrections[k];
        }
        v
    }

    /// Sets the protected node to `value` and recomputes its descendants.
    pub fn counterfactual(&self, row: &AbductedRow, value: f64) -> AbductedRow {
        let desc = self.graph.descendants(&self.protected);
        let mut start = row.clone();
        start.values[self.index(&self.protected)] = value;
        let values = self.propagate(&start, &self.order, |n| desc.contains(n));
        AbductedRow { values, residuals: row.residuals.clone(), corrections: row.corrections.clone() }
    }

    /// Counterfactual with the binary protected value flipped.
    pub fn flip(&self, row: &AbductedRow) -> AbductedRow {
        let a = row.values[self.index(&self.protected)];
        self.counterfactual(row, 1.0 - a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sem serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CffInput {
    Value { column: String },
    Residual { node: String },
}

/// Classifier over non-descendants of the protected node and residuals of
/// its descendants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CffModel {
    pub sem: FittedSem,
    pub inputs: Vec<CffInput>,
    pub classifier: Classifier,
}

impl CffModel {
    fn features(&self, row: &AbductedRow) -> Vec<f64> {
        self.inputs
            .iter()
            .map(|i| match i {
                CffInput::Value { column } => row.values[self.sem.index(column)],
                CffInput::Residual { node } => row.residual(self.sem.order.iter().position(|n| n == node).expect("node in order")),
            })
            .collect()
    }

    pub fn score_rows(&self, rows: &[AbductedRow]) -> Vec<f64> {
        let x: Vec<f64> = rows.iter().flat_map(|r| self.features(r)).collect();
        self.classifier.predict_matrix(&x)
    }

    /// Scores observed rows; residuals are abducted from their values.
    pub fn predict_scores(&self, table: &DataTable) -> Result<Vec<f64>> {
        Ok(self.score_rows(&self.sem.abduct(table)?))
    }
}

/// Fits the structural model, then the downstream classifier.
pub fn fit_cff(table: &DataTable, graph: &CausalGraph, learner: &LearnerConfig) -> Result<CffModel> {
    let sem = fit_sem(table, graph)?;
    let desc = graph.descendants(&sem.protected);
    let mut inputs = Vec::new();
    let mut names = Vec::new();
    for name in table.input_names() {
        if name == sem.protected {
            continue;
        }
        if desc.contains(&name) {
            names.push(format!("{name}.residual"));
            inputs.push(CffInput::Residual { node: name });
        } else {
            names.push(name.clone());
            inputs.push(CffInput::Value { column: name });
        }
    }
    if inputs.is_empty() {
        return Err(CausalError::DegenerateInput("no non-descendant features and no descendant residuals".into()));
    }
    let rows: Vec<AbductedRow> = (0..table.n_rows()).map(|i| sem.training_row(table, i)).collect::<Result<_>>()?;
    let model = CffModel { sem, inputs, classifier: Classifier::constant(names.clone(), 0.5) };
    let x: Vec<f64> = rows.iter().flat_map(|r| model.features(r)).collect();
    let classifier = fit_matrix(learner, names, &x, &table.target()?, None)?;
    Ok(CffModel { classifier, ..model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnRole, ColumnSpec};
    use crate::learners::{fit, LearnerKind};

    #[test]
    fn residual_reaches_values_far_below_the_fit() {
        for (x, f) in [(0.3, 30.1), (1e-20, 30.0), (-0.0, 5.0), (12.5, 12.5), (1e300, -1e-300)] {
            let (e, c) = exact_residual(x, f).unwrap();
            assert_eq!((f + e) + c, x);
        }
        let (_, c) = exact_residual(0.3, 30.1).unwrap();
        assert_ne!(c, 0.0);
    }

    fn chain_table(noise: bool) -> DataTable {
        let schema = vec![
            ColumnSpec::binary("a", "p", "u", ColumnRole::Protected),
            ColumnSpec::numeric("income", ColumnRole::Feature),
            ColumnSpec::numeric("age", ColumnRole::Feature),
            ColumnSpec::binary("repaid", "y", "n", ColumnRole::Target),
        ];
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let a = (i % 2) as f64;
                let e = if noise { ((i * 7919) % 17) as f64 / 17.0 - 0.5 } else { 0.0 };
                let income = 2.0 * a + 1.0 + e;
                let age = 20.0 + (i % 9) as f64;
                let y = (income + 0.1 * age > 3.6) as u8 as f64;
                vec![a, income, age, y]
            })
            .collect();
        DataTable::from_encoded(schema, &rows).unwrap()
    }

    #[test]
    fn chain_order_and_descendants() {
        let g = CausalGraph::from_edges(&[("a", "income"), ("income", "repaid")]);
        assert_eq!(g.topological_order().unwrap(), ["a", "income", "repaid"]);
        assert_eq!(g.descendants("a"), BTreeSet::from(["income".to_string(), "repaid".to_string()]));
        let info = validate_graph(&g, &chain_table(true)).unwrap();
        assert!(info.non_descendants.contains("age"));
    }

    #[test]
    fn two_cycle_is_named() {
        let g = CausalGraph::from_edges(&[("a", "b"), ("b", "a")]);
        let err = g.topological_order().unwrap_err().to_string();
        assert!(err.contains("a -> b -> a"), "{err}");
    }

    #[test]
    fn unknown_node_and_protected_parent_rejected() {
        let t = chain_table(true);
        assert!(matches!(validate_graph(&CausalGraph::from_edges(&[("a", "zzz")]), &t), Err(CausalError::Schema(_))));
        assert!(validate_graph(&CausalGraph::from_edges(&[("age", "a")]), &t).is_err());
    }

    #[test]
    fn noiseless_chain_recovers_coefficient() {
        let t = chain_table(false);
        let sem = fit_sem(&t, &CausalGraph::from_edges(&[("a", "income")])).unwrap();
        let m = &sem.nodes["income"];
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6 && (m.intercept - 1.0).abs() < 1e-6);
        assert!(sem.residuals["income"].iter().all(|e| e.abs() < 1e-9));
        let root = &sem.nodes["a"];
        assert!(root.parents.is_empty() && (root.intercept - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_and_flip() {
        let t = chain_table(true);
        let mut g = CausalGraph::from_edges(&[("a", "income"), ("income", "repaid")]);
        g.add_node("age");
        let sem = fit_sem(&t, &g).unwrap();
        for i in 0..t.n_rows() {
            let r = sem.training_row(&t, i).unwrap();
            assert_eq!(sem.reconstruct(&r), t.row(i));
            assert_eq!(sem.counterfactual(&r, r.values[0]).values, r.values);
            let cf = sem.flip(&r);
            assert_eq!(cf.values[2], r.values[2]);
            let back = sem.flip(&cf);
            assert_eq!(back.values, r.values);
        }
    }

    #[test]
    fn cff_invariant_and_equals_ftu_without_descendants() {
        let t = chain_table(true);
        let g = CausalGraph::from_edges(&[("a", "income"), ("income", "repaid")]);
        let cfg = LearnerConfig::default_for(LearnerKind::Logistic);
        let cff = fit_cff(&t, &g, &cfg).unwrap();
        let rows = cff.sem.abduct(&t).unwrap();
        let flipped: Vec<AbductedRow> = rows.iter().map(|r| cff.sem.flip(r)).collect();
        assert_eq!(cff.score_rows(&rows), cff.score_rows(&flipped));

        let mut iso = CausalGraph::default();
        iso.add_node("a");
        let cff = fit_cff(&t, &iso, &cfg).unwrap();
        let ftu = fit(&cfg, &t.drop_columns(&["a"]).unwrap(), None).unwrap();
        assert_eq!(cff.classifier.model, ftu.model);
    }
}
