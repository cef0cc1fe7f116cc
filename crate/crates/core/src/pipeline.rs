//! Declarative experiment runs and their persisted results.
//!
//! A [`PipelineConfig`] names a data source, a split and a list of
//! mitigation strategies. [`run_pipeline`] resolves it into a plan, trains
//! the three unmitigated baselines plus every listed strategy, and scores
//! each on the held-out test split. A strategy that fails is recorded as
//! failed; the experiment still completes.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::causal::{fit_cff, CausalGraph};
use crate::compare::{self, Comparison, Family, ModelEntry, SelectorConfig};
use crate::dataset::{load_table, stratified_split, validate_schema, ColumnRole, ColumnSpec, DataTable, ReadOptions};
use crate::learners::{self, Classifier, ForestConfig, LearnerConfig, LearnerKind, LogisticConfig, MlpConfig};
use crate::metrics::{fairness_report, performance_from_decisions, performance_from_scores, MetricRecord};
use crate::mitigation::adversarial::{adversarial_fit, AdversarialConfig, AdversarialConstraint};
use crate::mitigation::post::{self, CostWeights, PolicyObjective};
use crate::mitigation::pre;
use crate::mitigation::reductions::{reductions_eg, reductions_grid, ExponentiatedGradientConfig, GridSearchConfig};
use crate::synthgen::{self, BiasProfile, GenConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("store error: {0}")]
    Store(String),
    #[error("experiment `{0}` not found")]
    NotFound(String),
    #[error("experiment `{0}` already stored with different content")]
    Conflict(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn config_err(m: impl Into<String>) -> PipelineError {
    PipelineError::Config(m.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Generator {
        #[serde(default)]
        generator: GenConfig,
    },
    File {
        path: PathBuf,
        schema: Vec<ColumnSpec>,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        /// Causal graph edges `[from, to]`, needed by the counterfactual
        /// strategy.
        #[serde(default)]
        graph: Vec<[String; 2]>,
    },
}

fn default_delimiter() -> char {
    ','
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generator { generator: GenConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of rows used for training; the rest is the test split.
    pub fraction: f64,
    /// Share of the training rows held out for threshold fitting and grid
    /// selection.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fraction: 0.7, validation_fraction: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub logistic: LogisticConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
}

fn default_learner() -> LearnerConfig {
    LearnerConfig::default_for(LearnerKind::Mlp)
}

fn default_aux() -> LearnerConfig {
    LearnerConfig::default_for(LearnerKind::Forest)
}

fn default_suppression() -> f64 {
    pre::SUPPRESSION_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Ftu {
        #[serde(default = "default_learner")]
        learner: LearnerConfig,
    },
    Suppression {
        #[serde(default = "default_suppression")]
        threshold: f64,
        #[serde(default = "default_learner")]
        learner: LearnerConfig,
    },
    Massaging {
        #[serde(default = "default_learner")]
        learner: LearnerConfig,
        /// Ranker used to pick the relabeled rows.
        #[serde(default = "default_aux")]
        aux: LearnerConfig,
    },
    Sampling {
        #[serde(default = "default_learner")]
        learner: LearnerConfig,
    },
    Counterfactual {
        #[serde(default = "default_learner")]
        learner: LearnerConfig,
    },
    Adversarial(AdversarialConfig),
    ExponentiatedGradient(ExponentiatedGradientConfig),
    GridSearch(GridSearchConfig),
    Threshold {
        objective: PolicyObjective,
        #[serde(default)]
        costs: CostWeights,
        /// Score model; defaults to the unmitigated network baseline.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scorer: Option<LearnerConfig>,
    },
}

impl Method {
    pub fn family(&self) -> Family {
        match self {
            Method::Ftu { .. } | Method::Suppression { .. } | Method::Massaging { .. } | Method::Sampling { .. } => Family::Pre,
            Method::Counterfactual { .. } => Family::Causal,
            Method::Adversarial(_) | Method::ExponentiatedGradient(_) | Method::GridSearch(_) => Family::In,
            Method::Threshold { .. } => Family::Post,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ftu { .. } => "ftu",
            Method::Suppression { .. } => "suppression",
            Method::Massaging { .. } => "massaging",
            Method::Sampling { .. } => "sampling",
            Method::Counterfactual { .. } => "counterfactual",
            Method::Adversarial(_) => "adversarial",
            Method::ExponentiatedGradient(_) => "exponentiated_gradient",
            Method::GridSearch(_) => "grid_search",
            Method::Threshold { .. } => "threshold",
        }
    }

    /// Report name used when the config gives no id.
    pub fn default_id(&self) -> &'static str {
        match self {
            Method::Ftu { .. } => "FTU",
            Method::Suppression { .. } => "Suppression",
            Method::Massaging { .. } => "Massaging",
            Method::Sampling { .. } => "Sampling",
            Method::Counterfactual { .. } => "CFF",
            Method::Adversarial(a) => match a.constraint {
                AdversarialConstraint::Dp => "AdvDP",
                AdversarialConstraint::Eo => "AdvEO",
                AdversarialConstraint::Cdp => "AdvCDP",
            },
            Method::ExponentiatedGradient(_) => "ReductionsEG",
            Method::GridSearch(_) => "ReductionsGS",
            Method::Threshold { objective, .. } => match objective {
                PolicyObjective::DemographicParity => "ThreshDP",
                PolicyObjective::EqualOpportunity => "ThreshEOpp",
                PolicyObjective::EqualizedOdds => "ThreshEO",
                PolicyObjective::ConditionalDemographicParity => "ThreshCDP",
            },
        }
    }

    fn needs_strata(&self) -> bool {
        matches!(
            self,
            Method::Adversarial(AdversarialConfig { constraint: AdversarialConstraint::Cdp, .. })
                | Method::Threshold { objective: PolicyObjective::ConditionalDemographicParity, .. }
        )
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be positive and finite, got {v}"))
            }
        };
        match self {
            Method::Suppression { threshold, .. } => {
                if !(*threshold > 0.0 && *threshold <= 1.0) {
                    return Err(format!("suppression threshold {threshold} outside (0,1]"));
                }
            }
            Method::Adversarial(a) => {
                if !(a.alpha >= 0.0 && a.alpha.is_finite()) {
                    return Err(format!("alpha must be non-negative and finite, got {}", a.alpha));
                }
                if a.adversary_steps == 0 {
                    return Err("adversary_steps must be at least 1".into());
                }
            }
            Method::ExponentiatedGradient(e) => {
                positive(e.eps, "eps")?;
                if e.max_iterations == 0 {
                    return Err("max_iterations must be at least 1".into());
                }
            }
            Method::GridSearch(g) => {
                if g.grid_size == 0 {
                    return Err("grid_size must be at least 1".into());
                }
                positive(g.dual_range, "dual_range")?;
                positive(g.beta, "beta")?;
            }
            Method::Threshold { costs, .. } => {
                positive(costs.false_positive, "false_positive cost")?;
                positive(costs.false_negative, "false_negative cost")?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// Optional; checked against the method when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(flatten)]
    pub method: Method,
}

impl StrategyConfig {
    pub fn new(method: Method) -> Self {
        StrategyConfig { id: None, family: None, method }
    }

    pub fn id(&self) -> &str {
        self.id.as_deref().unwrap_or(self.method.default_id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: DataSource,
    pub split: SplitConfig,
    pub baselines: BaselineConfig,
    pub strategies: Vec<StrategyConfig>,
    pub selector: SelectorConfig,
}

pub const BASELINE_IDS: [&str; 3] = ["Logistic", "RandomForest", "NeuralNetwork"];

/// One unit of work in a resolved plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStrategy {
    pub id: String,
    pub family: Family,
    /// Index into `strategies`; `None` for baselines.
    pub config_index: Option<usize>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Baseline(LearnerConfig),
    Strategy(Method),
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // data paths are relative to the config file
        if let DataSource::File { path, .. } = &mut cfg.dataset {
            if path.is_relative() {
                if let Some(dir) = p.parent() {
                    *path = dir.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    /// Every strategy of the credit benchmark with default parameters.
    pub fn full_suite() -> Self {
        let adv = |constraint| Method::Adversarial(AdversarialConfig { constraint, ..Default::default() });
        let thresh = |objective| Method::Threshold { objective, costs: CostWeights::default(), scorer: None };
        let methods = vec![
            Method::Ftu { learner: default_learner() },
            Method::Suppression { threshold: default_suppression(), learner: default_learner() },
            Method::Massaging { learner: default_learner(), aux: default_aux() },
            Method::Sampling { learner: default_learner() },
            Method::Counterfactual { learner: default_learner() },
            adv(AdversarialConstraint::Dp),
            adv(AdversarialConstraint::Eo),
            adv(AdversarialConstraint::Cdp),
            Method::GridSearch(GridSearchConfig::default()),
            Method::ExponentiatedGradient(ExponentiatedGradientConfig::default()),
            thresh(PolicyObjective::DemographicParity),
            thresh(PolicyObjective::EqualizedOdds),
            thresh(PolicyObjective::EqualOpportunity),
            thresh(PolicyObjective::ConditionalDemographicParity),
        ];
        PipelineConfig { strategies: methods.into_iter().map(StrategyConfig::new).collect(), ..Default::default() }
    }

    /// Checks the whole config and expands it into the list of fits,
    /// without touching any data.
    pub fn resolve(&self) -> Result<Vec<PlannedStrategy>> {
        let s = &self.split;
        for (v, what) in [(s.fraction, "split.fraction"), (s.validation_fraction, "split.validation_fraction")] {
            if !(v > 0.0 && v < 1.0) {
                return Err(config_err(format!("{what} must lie in (0,1), got {v}")));
            }
        }
        self.selector.validate().map_err(|e| config_err(e.to_string()))?;
        let (has_strata, has_graph) = match &self.dataset {
            DataSource::Generator { generator } => {
                generator.validate().map_err(|e| config_err(e.to_string()))?;
                (true, true)
            }
            DataSource::File { schema, delimiter, graph, .. } => {
                validate_schema(schema).map_err(|e| config_err(e.to_string()))?;
                if !delimiter.is_ascii() {
                    return Err(config_err(format!("delimiter {delimiter:?} is not ASCII")));
                }
                if !schema.iter().any(|c| c.role == ColumnRole::Protected) {
                    return Err(config_err("schema declares no protected column"));
                }
                if !graph.is_empty() {
                    let g = edges_graph(graph);
                    g.topological_order().map_err(|e| config_err(e.to_string()))?;
                    for n in g.nodes() {
                        if !schema.iter().any(|c| c.name == n) {
                            return Err(config_err(format!("graph node `{n}` is not a schema column")));
                        }
                    }
                }
                (schema.iter().any(|c| c.role == ColumnRole::Stratum), !graph.is_empty())
            }
        };
        let b = &self.baselines;
        let mut plan: Vec<PlannedStrategy> = [
            LearnerConfig::Logistic(b.logistic.clone()),
            LearnerConfig::Forest(b.forest.clone()),
            LearnerConfig::Mlp(b.mlp.clone()),
        ]
        .into_iter()
        .zip(BASELINE_IDS)
        .map(|(c, id)| PlannedStrategy { id: id.into(), family: Family::NoMitigation, config_index: None, task: Task::Baseline(c) })
        .collect();
        let mut ids: BTreeSet<String> = BASELINE_IDS.iter().map(|s| s.to_string()).collect();
        for (i, sc) in self.strategies.iter().enumerate() {
            let id = sc.id().to_string();
            let at = || format!("strategies[{i}] ({id})");
            if id.trim().is_empty() {
                return Err(config_err(format!("strategies[{i}]: empty id")));
            }
            if !ids.insert(id.clone()) {
                return Err(config_err(format!("{}: duplicate strategy id", at())));
            }
            let family = sc.method.family();
            if let Some(f) = sc.family {
                if f != family {
                    return Err(config_err(format!("{}: family {f:?} does not match method `{}`", at(), sc.method.name())));
                }
            }
            sc.method.validate().map_err(|m| config_err(format!("{}: {m}", at())))?;
            if sc.method.needs_strata() && !has_strata {
                return Err(config_err(format!("{}: needs a stratum column", at())));
            }
            if matches!(sc.method, Method::Counterfactual { .. }) && !has_graph {
                return Err(config_err(format!("{}: needs a causal graph", at())));
            }
            plan.push(PlannedStrategy { id, family, config_index: Some(i), task: Task::Strategy(sc.method.clone()) });
        }
        Ok(plan)
    }
}

fn edges_graph(edges: &[[String; 2]]) -> CausalGraph {
    let mut g = CausalGraph::default();
    for [a, b] in edges {
        g.add_edge(a, b);
    }
    g
}

/// Loads or generates the data set and its causal graph.
pub fn load_data(source: &DataSource) -> Result<(DataTable, Option<CausalGraph>)> {
    match source {
        DataSource::Generator { generator } => {
            let (t, g) = synthgen::generate(generator).map_err(|e| PipelineError::Data(e.to_string()))?;
            Ok((t, Some(g)))
        }
        DataSource::File { path, schema, delimiter, graph } => {
            let t = load_table(path, schema, ReadOptions { delimiter: *delimiter as u8 })
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            Ok((t, (!graph.is_empty()).then(|| edges_graph(graph))))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub fit_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    /// Content hash of the test split every entry is scored on.
    pub test_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: String,
    pub family: Family,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_index: Option<usize>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub format_version: u32,
    pub id: String,
    pub toolkit_version: String,
    pub config: PipelineConfig,
    pub dataset_fingerprint: String,
    pub protected: String,
    pub split: SplitRecord,
    /// Label statistics of the full data set; absent for transcribed
    /// results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_profile: Option<BiasProfile>,
    pub results: Vec<StrategyResult>,
    /// Unix seconds.
    pub created_at: u64,
    pub completed_at: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Deterministic id from the config and the data content.
pub fn experiment_id(config: &PipelineConfig, fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(fingerprint.as_bytes());
    h.update(TOOLKIT_VERSION.as_bytes());
    format!("exp-{}", &hex::encode(h.finalize())[..16])
}

impl Experiment {
    /// Completed entries, ready for comparison.
    pub fn entries(&self) -> Vec<ModelEntry> {
        self.results
            .iter()
            .filter_map(|r| {
                r.metrics.as_ref().map(|m| ModelEntry {
                    strategy: r.strategy.clone(),
                    family: r.family,
                    fingerprint: Some(self.split.test_fingerprint.clone()),
                    metrics: m.clone(),
                })
            })
            .collect()
    }

    pub fn result(&self, strategy: &str) -> Option<&StrategyResult> {
        self.results.iter().find(|r| r.strategy == strategy)
    }

    pub fn comparison(&self, selector: &SelectorConfig) -> compare::Result<Comparison> {
        compare::compare(&self.entries(), selector)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment serializes")
    }

    /// The report with timestamps cleared; identical runs give identical
    /// bytes.
    pub fn canonical_json(&self) -> String {
        Experiment { created_at: 0, completed_at: 0, ..self.clone() }.to_json()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Experiment = serde_json::from_str(s).map_err(|e| PipelineError::Store(e.to_string()))?;
        e.validate()?;
        Ok(e)
    }

    /// Structural consistency with the embedded config.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Store(format!("experiment {}: {m}", self.id)));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format version {}", self.format_version));
        }
        let plan = self.config.resolve().map_err(|e| PipelineError::Store(e.to_string()))?;
        if plan.len() != self.results.len() {
            return bad(format!("{} results for {} planned strategies", self.results.len(), plan.len()));
        }
        for (p, r) in plan.iter().zip(&self.results) {
            if p.id != r.strategy || p.config_index != r.config_index || p.family != r.family {
                return bad(format!("result `{}` does not match planned strategy `{}`", r.strategy, p.id));
            }
            if (r.status == RunStatus::Completed) != r.metrics.is_some() {
                return bad(format!("result `{}` has inconsistent status", r.strategy));
            }
        }
        Ok(())
    }

    /// Fixed-width text table, one row per strategy.
    pub fn render_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut out = format!(
            "experiment {}  data {}  test rows {}\n",
            self.id,
            &self.dataset_fingerprint[..12.min(self.dataset_fingerprint.len())],
            self.split.test_rows
        );
        out.push_str(&format!(
            "{:<16} {:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "strategy", "family", "DP", "EO", "EOpp", "PP", "AUROC", "Acc", "F1"
        ));
        for r in &self.results {
            let fam = serde_json::to_value(r.family).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            match &r.metrics {
                Some(m) => out.push_str(&format!(
                    "{:<16} {:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
                    r.strategy,
                    fam,
                    cell(m.dp),
                    cell(m.eo),
                    cell(m.eopp),
                    cell(m.pp),
                    cell(m.auroc),
                    cell(m.accuracy),
                    cell(m.f1)
                )),
                None => out.push_str(&format!(
                    "{:<16} {:<14} failed: {}\n",
                    r.strategy,
                    fam,
                    r.error.as_deref().unwrap_or("unknown error")
                )),
            }
        }
        out
    }
}

/// The three partitions a run works on. Models fit on `fit`, thresholds
/// and grid selection use `validation`, and every result is scored on
/// `test`.
pub struct Splits {
    pub fit: DataTable,
    pub validation: DataTable,
    pub test: DataTable,
    pub graph: Option<CausalGraph>,
}

impl Splits {
    pub fn new(table: &DataTable, graph: Option<CausalGraph>, s: &SplitConfig) -> Result<Self> {
        let data_err = |e: crate::dataset::DatasetError| PipelineError::Data(e.to_string());
        let outer = stratified_split(table, s.fraction, s.seed).map_err(data_err)?;
        let inner = stratified_split(&outer.train, 1.0 - s.validation_fraction, s.seed.wrapping_add(1)).map_err(data_err)?;
        Ok(Splits { fit: inner.train, validation: inner.test, test: outer.test, graph })
    }
}

/// What a fitted strategy produced on the test split.
struct Outcome {
    /// Present for deterministic score models; enables AUROC.
    scores: Option<Vec<f64>>,
    /// Expected decisions in `[0,1]`.
    decisions: Vec<f64>,
    notes: Vec<String>,
}

type TaskResult = std::result::Result<Outcome, String>;

fn scored(c: &Classifier, test: &DataTable) -> TaskResult {
    let s = c.predict_scores(test).map_err(|e| e.to_string())?;
    Ok(Outcome { decisions: s.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(), scores: Some(s), notes: Vec::new() })
}

fn run_method(m: &Method, d: &Splits, scorer: Option<&Classifier>, seed: u64) -> TaskResult {
    let e = |x: &dyn std::fmt::Display| x.to_string();
    match m {
        Method::Ftu { learner } => {
            let (t, _) = pre::ftu(&d.fit).map_err(|x| e(&x))?;
            scored(&learners::fit(learner, &t, None).map_err(|x| e(&x))?, &d.test)
        }
        Method::Suppression { threshold, learner } => {
            let (t, plan) = pre::suppress(&d.fit, *threshold).map_err(|x| e(&x))?;
            let mut out = scored(&learners::fit(learner, &t, None).map_err(|x| e(&x))?, &d.test)?;
            let names: Vec<&str> = plan.removed_columns.iter().map(|c| c.name.as_str()).collect();
            out.notes.push(format!("removed: {}", names.join(", ")));
            Ok(out)
        }
        Method::Massaging { learner, aux } => {
            let (t, plan) = pre::massage(&d.fit, aux).map_err(|x| e(&x))?;
            let mut out = scored(&learners::fit(learner, &t, None).map_err(|x| e(&x))?, &d.test)?;
            out.notes.push(format!("relabeled: {}", plan.relabeled_rows.len()));
            Ok(out)
        }
        Method::Sampling { learner } => {
            let (t, _) = pre::resample(&d.fit, seed).map_err(|x| e(&x))?;
            scored(&learners::fit(learner, &t, None).map_err(|x| e(&x))?, &d.test)
        }
        Method::Counterfactual { learner } => {
            let graph = d.graph.as_ref().ok_or("no causal graph")?;
            let model = fit_cff(&d.fit, graph, learner).map_err(|x| e(&x))?;
            let s = model.predict_scores(&d.test).map_err(|x| e(&x))?;
            let mut out = Outcome { decisions: s.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(), scores: Some(s), notes: Vec::new() };
            out.notes.extend(model.sem.warnings.iter().cloned());
            Ok(out)
        }
        Method::Adversarial(cfg) => scored(&adversarial_fit(&d.fit, cfg).map_err(|x| e(&x))?, &d.test),
        Method::ExponentiatedGradient(cfg) => {
            let (model, report) = reductions_eg(&d.fit, cfg).map_err(|x| e(&x))?;
            let decisions = model.expected_decisions(&d.test).map_err(|x| e(&x))?;
            let mut notes = vec![
                format!("aggregation: {:?}", report.aggregation),
                format!("iterations: {}", report.iterations),
                format!("components: {}", model.components.len()),
            ];
            if model.infeasible {
                notes.push("constraint not met on training data".into());
            }
            Ok(Outcome { scores: None, decisions, notes })
        }
        Method::GridSearch(cfg) => {
            let (model, report) = reductions_grid(&d.fit, &d.validation, cfg).map_err(|x| e(&x))?;
            let mut out = scored(&model, &d.test)?;
            out.notes.push(format!("models trained: {}", report.models_trained));
            out.notes.push(format!("selected dual: {}", report.selected_dual));
            Ok(out)
        }
        Method::Threshold { objective, costs, scorer: custom } => {
            let fitted;
            let model = match custom {
                Some(c) => {
                    fitted = learners::fit(c, &d.fit, None).map_err(|x| e(&x))?;
                    &fitted
                }
                None => scorer.ok_or("network baseline unavailable")?,
            };
            let v = &d.validation;
            let vs = model.predict_scores(v).map_err(|x| e(&x))?;
            let (vg, vy) = (v.protected().map_err(|x| e(&x))?, v.target().map_err(|x| e(&x))?);
            let policy = match objective {
                PolicyObjective::DemographicParity => post::fit_threshold_dp(&vs, &vg, &vy, *costs),
                PolicyObjective::EqualOpportunity => post::fit_threshold_eopp(&vs, &vg, &vy, *costs),
                PolicyObjective::EqualizedOdds => post::fit_threshold_eo(&vs, &vg, &vy, *costs),
                PolicyObjective::ConditionalDemographicParity => {
                    let vst = v.strata().ok_or("validation split has no strata")?;
                    post::fit_threshold_cdp(&vs, &vg, &vst, &vy, *costs)
                }
            }
            .map_err(|x| e(&x))?;
            let t = &d.test;
            let ts = model.predict_scores(t).map_err(|x| e(&x))?;
            let tg = t.protected().map_err(|x| e(&x))?;
            let decisions = post::expected_decisions(&policy, &ts, &tg, t.strata().as_deref()).map_err(|x| e(&x))?;
            let mut notes = policy.warnings.clone();
            if policy.infeasible {
                notes.push("constraint not met on validation data".into());
            }
            Ok(Outcome { scores: None, decisions, notes })
        }
    }
}

fn metrics_for(out: &Outcome, test: &DataTable) -> std::result::Result<MetricRecord, String> {
    let y = test.target().map_err(|e| e.to_string())?;
    let g = test.protected().map_err(|e| e.to_string())?;
    let strata = test.strata();
    let perf = match &out.scores {
        Some(s) => performance_from_scores(s, &y),
        None => performance_from_decisions(&out.decisions, &y),
    }
    .map_err(|e| e.to_string())?;
    let fair = fairness_report(&out.decisions, &g, &y, strata.as_deref()).map_err(|e| e.to_string())?;
    Ok(MetricRecord::from_reports(&fair, &perf))
}

fn guarded(f: impl FnOnce() -> TaskResult) -> TaskResult {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn finish(p: &PlannedStrategy, method: &str, res: TaskResult, test: &DataTable) -> StrategyResult {
    let res = res.and_then(|o| metrics_for(&o, test).map(|m| (m, o.notes)));
    let base = StrategyResult {
        strategy: p.id.clone(),
        family: p.family,
        method: method.into(),
        config_index: p.config_index,
        status: RunStatus::Completed,
        error: None,
        metrics: None,
        notes: Vec::new(),
    };
    match res {
        Ok((m, notes)) => {
            log::info!("{}: done", p.id);
            StrategyResult { metrics: Some(m), notes, ..base }
        }
        Err(e) => {
            log::warn!("{}: failed: {e}", p.id);
            StrategyResult { status: RunStatus::Failed, error: Some(e), ..base }
        }
    }
}

/// Runs every planned strategy and returns the completed experiment.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Experiment> {
    let plan = config.resolve()?;
    let created_at = now();
    let (table, graph) = load_data(&config.dataset)?;
    let data_err = |e: crate::dataset::DatasetError| PipelineError::Data(e.to_string());
    let protected = table.protected_name().ok_or_else(|| PipelineError::Data("no protected column".into()))?.to_string();
    let data_profile = synthgen::bias_profile(&table).map_err(data_err)?;
    let s = &config.split;
    let d = Splits::new(&table, graph, s)?;
    let split = SplitRecord {
        fraction: s.fraction,
        validation_fraction: s.validation_fraction,
        seed: s.seed,
        fit_rows: d.fit.n_rows(),
        validation_rows: d.validation.n_rows(),
        test_rows: d.test.n_rows(),
        test_fingerprint: d.test.fingerprint(),
    };
    let (baselines, strategies) = plan.split_at(BASELINE_IDS.len());

    let fitted: Vec<(Option<Classifier>, StrategyResult)> = baselines
        .par_iter()
        .map(|p| {
            let Task::Baseline(cfg) = &p.task else { unreachable!("baselines come first") };
            let mut model = None;
            let res = guarded(|| {
                let c = learners::fit(cfg, &d.fit, None).map_err(|e| e.to_string())?;
                let out = scored(&c, &d.test);
                model = Some(c);
                out
            });
            let r = finish(p, &format!("{:?}", cfg.kind()).to_lowercase(), res, &d.test);
            (model, r)
        })
        .collect();
    let scorer = fitted.iter().zip(baselines).find(|(_, p)| p.id == "NeuralNetwork").and_then(|(f, _)| f.0.as_ref());

    let rest: Vec<StrategyResult> = strategies
        .par_iter()
        .map(|p| {
            let Task::Strategy(m) = &p.task else { unreachable!("strategies follow baselines") };
            let res = guarded(|| run_method(m, &d, scorer, s.seed));
            finish(p, m.name(), res, &d.test)
        })
        .collect();

    let results: Vec<StrategyResult> = fitted.into_iter().map(|(_, r)| r).chain(rest).collect();
    let fingerprint = table.fingerprint();
    Ok(Experiment {
        format_version: FORMAT_VERSION,
        id: experiment_id(config, &fingerprint),
        toolkit_version: TOOLKIT_VERSION.into(),
        config: config.clone(),
        dataset_fingerprint: fingerprint,
        protected,
        split,
        data_profile: Some(data_profile),
        results,
        created_at,
        completed_at: now(),
    })
}

/// The published credit benchmark wrapped as an experiment of the full
/// suite, for serving and comparison tests.
pub fn benchmark_experiment() -> Experiment {
    let config = PipelineConfig { name: Some("published credit benchmark".into()), ..PipelineConfig::full_suite() };
    let plan = config.resolve().expect("full suite resolves");
    let entries = compare::credit_benchmark_entries();
    let results = plan
        .iter()
        .map(|p| {
            let e = entries.iter().find(|e| e.strategy == p.id).expect("benchmark row for every strategy");
            StrategyResult {
                strategy: p.id.clone(),
                family: p.family,
                method: match &p.task {
                    Task::Baseline(c) => format!("{:?}", c.kind()).to_lowercase(),
                    Task::Strategy(m) => m.name().into(),
                },
                config_index: p.config_index,
                status: RunStatus::Completed,
                error: None,
                metrics: Some(e.metrics.clone()),
                notes: vec!["transcribed".into()],
            }
        })
        .collect();
    Experiment {
        format_version: FORMAT_VERSION,
        id: "benchmark".into(),
        toolkit_version: TOOLKIT_VERSION.into(),
        config,
        dataset_fingerprint: "transcribed".into(),
        protected: synthgen::PROTECTED.into(),
        split: SplitRecord {
            fraction: 0.7,
            validation_fraction: 0.3,
            seed: 0,
            fit_rows: 0,
            validation_rows: 0,
            test_rows: 0,
            test_fingerprint: "transcribed".into(),
        },
        data_profile: None,
        results,
        created_at: 0,
        completed_at: 0,
    }
}

/// Summary row of a stored experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset_fingerprint: String,
    pub strategies: usize,
    pub failed: usize,
    pub created_at: u64,
    pub completed_at: u64,
}

impl From<&Experiment> for ExperimentSummary {
    fn from(e: &Experiment) -> Self {
        ExperimentSummary {
            id: e.id.clone(),
            name: e.config.name.clone(),
            dataset_fingerprint: e.dataset_fingerprint.clone(),
            strategies: e.results.len(),
            failed: e.results.iter().filter(|r| r.status == RunStatus::Failed).count(),
            created_at: e.created_at,
            completed_at: e.completed_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveOutcome {
    Created,
    /// An identical report was already stored; the stored copy is kept.
    Unchanged,
}

/// A directory of experiment documents, one `<id>.json` per experiment.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Store {
    /// Opens an existing store directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(PipelineError::Store(format!("{} is not a directory", root.display())));
        }
        Ok(Store { root })
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| PipelineError::Store(format!("{}: {e}", root.display())))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    /// Atomic write-then-rename. Completed experiments are never replaced.
    pub fn save(&self, e: &Experiment) -> Result<SaveOutcome> {
        if !valid_id(&e.id) {
            return Err(PipelineError::Store(format!("invalid experiment id `{}`", e.id)));
        }
        let io = |x: std::io::Error| PipelineError::Store(x.to_string());
        let dest = self.path(&e.id);
        if dest.exists() {
            let old = self.load(&e.id)?;
            return if old.canonical_json() == e.canonical_json() {
                Ok(SaveOutcome::Unchanged)
            } else {
                Err(PipelineError::Conflict(e.id.clone()))
            };
        }
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io)?;
        tmp.write_all(e.to_json().as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&dest).map_err(|x| io(x.error))?;
        Ok(SaveOutcome::Created)
    }

    pub fn load(&self, id: &str) -> Result<Experiment> {
        if !valid_id(id) {
            return Err(PipelineError::NotFound(id.into()));
        }
        let text = match fs::read_to_string(self.path(id)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(PipelineError::NotFound(id.into())),
            Err(e) => return Err(PipelineError::Store(e.to_string())),
        };
        let e = Experiment::from_json(&text)?;
        if e.id != id {
            return Err(PipelineError::Store(format!("file {id}.json holds experiment {}", e.id)));
        }
        Ok(e)
    }

    /// Summaries sorted by id.
    pub fn list(&self) -> Result<Vec<ExperimentSummary>> {
        let rd = fs::read_dir(&self.root).map_err(|e| PipelineError::Store(e.to_string()))?;
        let mut ids: Vec<String> = rd
            .filter_map(|d| d.ok())
            .filter_map(|d| d.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(String::from))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load(id).map(|e| ExperimentSummary::from(&e))).collect()
    }
}
