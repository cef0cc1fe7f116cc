//! Baseline classifiers behind a single interface.
//!
//! Every learner accepts optional per-row sample weights and produces
//! scores in `[0, 1]`. Inputs are the table's feature, stratum and protected
//! columns, addressed by name so a fitted model can score any table that
//! carries those columns.

pub mod logistic;
pub mod mlp;
pub mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataTable, DatasetError};

pub use logistic::{LogisticConfig, LogisticModel};
pub use mlp::{MlpConfig, MlpModel};
pub use tree::{DecisionTree, ForestConfig, RandomForest, TreeConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported model document version {0}")]
    Version(u32),
    #[error("serialization error: {0}")]
    Serde(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Logistic,
    Tree,
    Forest,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    Logistic(LogisticConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
    Mlp(MlpConfig),
}

impl LearnerConfig {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::Logistic => LearnerConfig::Logistic(LogisticConfig::default()),
            LearnerKind::Tree => LearnerConfig::Tree(TreeConfig::default()),
            LearnerKind::Forest => LearnerConfig::Forest(ForestConfig::default()),
            LearnerKind::Mlp => LearnerConfig::Mlp(MlpConfig::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerConfig::Logistic(_) => LearnerKind::Logistic,
            LearnerConfig::Tree(_) => LearnerKind::Tree,
            LearnerConfig::Forest(_) => LearnerKind::Forest,
            LearnerConfig::Mlp(_) => LearnerKind::Mlp,
        }
    }

    /// Same configuration with a different seed (no-op for logistic).
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        match &mut c {
            LearnerConfig::Logistic(_) => {}
            LearnerConfig::Tree(t) => t.seed = seed,
            LearnerConfig::Forest(f) => f.seed = seed,
            LearnerConfig::Mlp(m) => m.seed = seed,
        }
        c
    }
}

/// Weighted per-feature centering and scaling, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f64], d: usize, w: &[f64]) -> Self {
        let total: f64 = w.iter().sum();
        let mut mean = vec![0.0; d];
        for (row, &wi) in x.chunks_exact(d).zip(w) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += wi * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; d];
        for (row, &wi) in x.chunks_exact(d).zip(w) {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += wi * c * c;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / total).sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks_exact(d) {
            out.extend(row.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]));
        }
        out
    }
}

/// Per-stratum routing wrapper: each stratum has its own model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedModel {
    pub stratum_column: String,
    pub models: BTreeMap<u32, Classifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Logistic(LogisticModel),
    Tree(DecisionTree),
    Forest(RandomForest),
    Mlp(MlpModel),
    /// Predicts the same score for every row.
    Constant { score: f64 },
    Stratified(StratifiedModel),
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub feature_names: Vec<String>,
    pub config: Option<LearnerConfig>,
    pub model: Model,
}

/// Current model document format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    classifier: Classifier,
}

/// Validates training weights and returns them (all ones when absent).
pub fn resolve_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; n]),
        Some(w) => {
            if w.len() != n {
                return Err(LearnerError::Weights(format!("expected {n} weights, got {}", w.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(LearnerError::Weights("weights must be finite and non-negative".into()));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(LearnerError::Weights("weights are all zero".into()));
            }
            Ok(w.to_vec())
        }
    }
}

/// Fits a classifier on the table's inputs against its target.
pub fn fit(config: &LearnerConfig, table: &DataTable, weights: Option<&[f64]>) -> Result<Classifier> {
    let y = table.target()?;
    fit_labels(config, table, &y, weights)
}

/// Fits against explicit labels instead of the table's target column.
pub fn fit_labels(config: &LearnerConfig, table: &DataTable, y: &[u8], weights: Option<&[f64]>) -> Result<Classifier> {
    let names = table.input_names();
    let x = table.matrix(&names)?;
    fit_matrix(config, names, &x, y, weights)
}

/// Fits on a raw row-major design matrix.
pub fn fit_matrix(
    config: &LearnerConfig,
    feature_names: Vec<String>,
    x: &[f64],
    y: &[u8],
    weights: Option<&[f64]>,
) -> Result<Classifier> {
    let n = y.len();
    let d = feature_names.len();
    if x.len() != n * d {
        return Err(LearnerError::Schema(format!("design has {} values, expected {}", x.len(), n * d)));
    }
    if n == 0 {
        return Err(LearnerError::DegenerateTarget("no rows".into()));
    }
    if d == 0 {
        return Err(LearnerError::Schema("no input features".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(LearnerError::Numeric(format!(
            "non-finite value in row {} column `{}`",
            i / d.max(1) + 1,
            feature_names[i % d.max(1)]
        )));
    }
    let w = resolve_weights(n, weights)?;
    let positive = y.iter().zip(&w).any(|(&l, &wi)| l == 1 && wi > 0.0);
    let negative = y.iter().zip(&w).any(|(&l, &wi)| l == 0 && wi > 0.0);
    if !(positive && negative) {
        return Err(LearnerError::DegenerateTarget("target has a single class".into()));
    }
    let yf: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    let model = match config {
        LearnerConfig::Logistic(c) => Model::Logistic(logistic::fit(c, x, d, &yf, &w)?),
        LearnerConfig::Tree(c) => Model::Tree(tree::fit_tree(c, x, d, &yf, &w)?),
        LearnerConfig::Forest(c) => Model::Forest(tree::fit_forest(c, x, d, &yf, &w)?),
        LearnerConfig::Mlp(c) => Model::Mlp(mlp::fit(c, x, d, &yf, &w, None)?),
    };
    Ok(Classifier { feature_names, config: Some(config.clone()), model })
}

impl Classifier {
    pub fn constant(feature_names: Vec<String>, score: f64) -> Self {
        Classifier { feature_names, config: None, model: Model::Constant { score: score.clamp(0.0, 1.0) } }
    }

    pub fn kind(&self) -> Option<LearnerKind> {
        self.config.as_ref().map(LearnerConfig::kind)
    }

    /// Scores for every row of `table`.
    pub fn predict_scores(&self, table: &DataTable) -> Result<Vec<f64>> {
        if let Model::Stratified(s) = &self.model {
            return predict_stratified(s, table);
        }
        let x = table.matrix(&self.feature_names).map_err(|e| LearnerError::Schema(e.to_string()))?;
        Ok(self.predict_matrix(&x))
    }

    /// Scores for a row-major design laid out as `feature_names`.
    pub fn predict_matrix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.feature_names.len();
        match &self.model {
            Model::Logistic(m) => m.predict(x),
            Model::Tree(t) => x.chunks_exact(d.max(1)).map(|r| t.predict_row(r)).collect(),
            Model::Forest(f) => x.chunks_exact(d.max(1)).map(|r| f.predict_row(r)).collect(),
            Model::Mlp(m) => m.predict(x),
            Model::Constant { score } => vec![*score; if d == 0 { 0 } else { x.len() / d }],
            Model::Stratified(_) => panic!("stratified models need the stratum column; use predict_scores"),
        }
    }

    /// Hard labels: 1 iff score ≥ threshold.
    pub fn predict_labels(&self, table: &DataTable, threshold: f64) -> Result<Vec<u8>> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(LearnerError::Config(format!("threshold {threshold} outside [0,1]")));
        }
        Ok(threshold_scores(&self.predict_scores(table)?, threshold))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelDocument { format_version: MODEL_FORMAT_VERSION, classifier: self.clone() })
            .expect("classifier serializes")
    }

    pub fn from_json(s: &str) -> Result<Classifier> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| LearnerError::Serde(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(LearnerError::Version(doc.format_version));
        }
        doc.classifier.validate()?;
        Ok(doc.classifier)
    }

    /// Structural checks for deserialized models.
    pub fn validate(&self) -> Result<()> {
        let d = self.feature_names.len();
        let bad = |m: &str| Err(LearnerError::Serde(m.to_string()));
        match &self.model {
            Model::Logistic(m) => {
                if m.coefficients.len() != d || m.standardizer.mean.len() != d || m.standardizer.scale.len() != d {
                    return bad("logistic parameter arity does not match features");
                }
            }
            Model::Tree(t) => t.validate(d).map_err(LearnerError::Serde)?,
            Model::Forest(f) => {
                for t in &f.trees {
                    t.validate(d).map_err(LearnerError::Serde)?;
                }
            }
            Model::Mlp(m) => m.validate(d).map_err(LearnerError::Serde)?,
            Model::Constant { score } => {
                if !(0.0..=1.0).contains(score) {
                    return bad("constant score outside [0,1]");
                }
            }
            Model::Stratified(s) => {
                for m in s.models.values() {
                    m.validate()?;
                }
            }
        }
        Ok(())
    }
}

fn predict_stratified(s: &StratifiedModel, table: &DataTable) -> Result<Vec<f64>> {
    if table.stratum_name() != Some(s.stratum_column.as_str()) {
        return Err(LearnerError::Schema(format!("table lacks stratum column `{}`", s.stratum_column)));
    }
    let strata = table.strata().expect("stratum column present");
    let mut out = vec![0.0; table.n_rows()];
    for (&k, model) in &s.models {
        let rows: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == k).collect();
        if rows.is_empty() {
            continue;
        }
        let scores = model.predict_scores(&table.select_rows(&rows))?;
        for (i, sc) in rows.into_iter().zip(scores) {
            out[i] = sc;
        }
    }
    if let Some(i) = strata.iter().position(|k| !s.models.contains_key(k)) {
        return Err(LearnerError::Schema(format!("row {} has stratum {} with no model", i + 1, strata[i])));
    }
    Ok(out)
}

/// 1 iff score ≥ threshold (ties go to the positive class).
pub fn threshold_scores(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| (s >= threshold) as u8).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnRole, ColumnSpec};

    fn one_d(points: &[(f64, u8)]) -> DataTable {
        let schema = vec![ColumnSpec::numeric("x", ColumnRole::Feature), ColumnSpec::binary("y", "1", "0", ColumnRole::Target)];
        let rows: Vec<Vec<f64>> = points.iter().map(|&(x, y)| vec![x, y as f64]).collect();
        DataTable::from_encoded(schema, &rows).unwrap()
    }

    #[test]
    fn threshold_tie_rule() {
        assert_eq!(threshold_scores(&[0.2, 0.5, 0.9], 0.5), vec![0, 1, 1]);
        assert_eq!(threshold_scores(&[0.2, 0.5, 0.9], 0.0), vec![1, 1, 1]);
        assert_eq!(threshold_scores(&[0.2, 1.0], 1.0), vec![0, 1]);
    }

    #[test]
    fn single_class_target_is_rejected() {
        let t = one_d(&[(0.0, 1), (1.0, 1)]);
        let err = fit(&LearnerConfig::default_for(LearnerKind::Logistic), &t, None).unwrap_err();
        assert!(matches!(err, LearnerError::DegenerateTarget(_)));
    }

    #[test]
    fn weights_validated() {
        let t = one_d(&[(0.0, 0), (1.0, 1)]);
        let cfg = LearnerConfig::default_for(LearnerKind::Logistic);
        assert!(fit(&cfg, &t, Some(&[0.0, 0.0])).is_err());
        assert!(fit(&cfg, &t, Some(&[1.0, -1.0])).is_err());
        assert!(fit(&cfg, &t, Some(&[1.0])).is_err());
    }

    #[test]
    fn schema_mismatch_names_column() {
        let t = one_d(&[(0.0, 0), (1.0, 1)]);
        let m = fit(&LearnerConfig::default_for(LearnerKind::Logistic), &t, None).unwrap();
        let other = DataTable::from_encoded(
            vec![ColumnSpec::numeric("z", ColumnRole::Feature), ColumnSpec::binary("y", "1", "0", ColumnRole::Target)],
            &[vec![0.0, 0.0]],
        )
        .unwrap();
        let err = m.predict_scores(&other).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn model_document_round_trip() {
        let t = one_d(&[(-1.0, 0), (-0.5, 0), (0.5, 1), (1.0, 1)]);
        for kind in [LearnerKind::Logistic, LearnerKind::Tree, LearnerKind::Forest, LearnerKind::Mlp] {
            let m = fit(&LearnerConfig::default_for(kind), &t, None).unwrap();
            let back = Classifier::from_json(&m.to_json()).unwrap();
            assert_eq!(m.predict_scores(&t).unwrap(), back.predict_scores(&t).unwrap());
        }
        assert!(matches!(
            Classifier::from_json(r#"{"format_version":9,"classifier":{"feature_names":[],"config":null,"model":{"model":"constant","score":0.5}}}"#),
            Err(LearnerError::Version(9))
        ));
    }
}
