//! Weighted CART trees (Gini) and bagged random forests.
//!
//! Split candidates are taken at up to `max_bins` quantile cut points per
//! feature, computed once from the training rows; a row goes left when its
//! value is `<= cut`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LearnerError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 8, min_samples_leaf: 1, max_bins: 64, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    /// Defaults to ⌊√d⌋ (at least 1).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 8, min_samples_leaf: 1, max_bins: 64, max_features: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, cut: f64, left: usize, right: usize },
    /// Weighted fraction of positives reaching the leaf.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, cut, left, right } => {
                    k = if row[*feature] <= *cut { *left } else { *right };
                }
            }
        }
    }

    /// Leaf positive fraction.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.leaf(row)
    }

    /// Hard vote: 1 iff the leaf fraction is at least ½.
    pub fn vote(&self, row: &[f64]) -> u8 {
        (self.leaf(row) >= 0.5) as u8
    }

    pub(crate) fn validate(&self, d: usize) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (k, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Split { feature, left, right, cut } => {
                    if *feature >= d || *left <= k || *right <= k || *left >= self.nodes.len() || *right >= self.nodes.len() || !cut.is_finite() {
                        return Err(format!("malformed split node {k}"));
                    }
                }
                Node::Leaf { value } => {
                    if !(0.0..=1.0).contains(value) {
                        return Err(format!("leaf {k} value outside [0,1]"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Mean of the trees' hard votes.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        self.trees.iter().map(|t| t.vote(row) as f64).sum::<f64>() / self.trees.len() as f64
    }
}

/// Training rows discretized against per-feature cut points.
struct Binned {
    n: usize,
    d: usize,
    /// Row-major bin index: number of cuts strictly below the value.
    bins: Vec<u16>,
    cuts: Vec<Vec<f64>>,
}

fn cut_points(values: &mut [f64], max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    for &v in values.iter() {
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() <= 1 {
        return Vec::new();
    }
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    }
    let n = values.len();
    let mut cuts: Vec<f64> = (1..max_bins).map(|q| values[(q * n / max_bins).min(n - 1)]).collect();
    cuts.dedup();
    // a cut at the maximum separates nothing
    if cuts.last() == distinct.last() {
        cuts.pop();
    }
    cuts
}

impl Binned {
    fn new(x: &[f64], d: usize, max_bins: usize) -> Self {
        let n = x.len() / d.max(1);
        let cuts: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut col: Vec<f64> = (0..n).map(|i| x[i * d + j]).collect();
                cut_points(&mut col, max_bins.clamp(2, u16::MAX as usize))
            })
            .collect();
        let mut bins = vec![0u16; n * d];
        for i in 0..n {
            for j in 0..d {
                let v = x[i * d + j];
                bins[i * d + j] = cuts[j].partition_point(|&c| c < v) as u16;
            }
        }
        Binned { n, d, bins, cuts }
    }
}

struct Grower<'a> {
    data: &'a Binned,
    y: &'a [f64],
    w: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    bin: usize,
    score: f64,
}

impl Grower<'_> {
    fn totals(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(w, p), &i| {
            let i = i as usize;
            (w + self.w[i], p + self.w[i] * self.y[i])
        })
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let (total, pos) = self.totals(&rows);
        let value = if total > 0.0 { (pos / total).clamp(0.0, 1.0) } else { 0.5 };
        self.nodes.push(Node::Leaf { value });
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf || pos <= 0.0 || pos >= total {
            return id;
        }
        let parent = 2.0 * pos * (total - pos) / total;
        let Some(best) = self.best_split(&rows, rng) else { return id };
        if parent - best.score <= 1e-12 * total {
            return id;
        }
        let d = self.data.d;
        let (left, right): (Vec<u32>, Vec<u32>) =
            rows.into_iter().partition(|&i| (self.data.bins[i as usize * d + best.feature] as usize) <= best.bin);
        let cut = self.data.cuts[best.feature][best.bin];
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: best.feature, cut, left: l, right: r };
        id
    }

    fn best_split(&self, rows: &[u32], rng: &mut ChaCha8Rng) -> Option<Best> {
        let d = self.data.d;
        let mut features: Vec<usize> = if self.max_features >= d {
            (0..d).collect()
        } else {
            sample(rng, d, self.max_features).into_vec()
        };
        features.sort_unstable();
        let mut best: Option<Best> = None;
        for f in features {
            let nb = self.data.cuts[f].len();
            if nb == 0 {
                continue;
            }
            // per bin: (weight, positive weight, count)
            let mut hist = vec![(0.0f64, 0.0f64, 0usize); nb + 1];
            for &i in rows {
                let i = i as usize;
                let b = self.data.bins[i * d + f] as usize;
                let h = &mut hist[b];
                h.0 += self.w[i];
                h.1 += self.w[i] * self.y[i];
                h.2 += 1;
            }
            let (tw, tp, tc) = hist.iter().fold((0.0, 0.0, 0), |a, h| (a.0 + h.0, a.1 + h.1, a.2 + h.2));
            let (mut lw, mut lp, mut lc) = (0.0, 0.0, 0usize);
            for (b, h) in hist.iter().enumerate().take(nb) {
                lw += h.0;
                lp += h.1;
                lc += h.2;
                let (rw, rp, rc) = (tw - lw, tp - lp, tc - lc);
                if lc < self.min_leaf || rc < self.min_leaf || lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let score = 2.0 * lp * (lw - lp) / lw + 2.0 * rp * (rw - rp) / rw;
                if best.as_ref().is_none_or(|bb| score < bb.score) {
                    best = Some(Best { feature: f, bin: b, score });
                }
            }
        }
        best
    }
}

fn grow_tree(data: &Binned, y: &[f64], w: &[f64], depth: usize, min_leaf: usize, max_features: usize, rng: &mut ChaCha8Rng) -> DecisionTree {
    let rows: Vec<u32> = (0..data.n as u32).filter(|&i| w[i as usize] > 0.0).collect();
    let mut g = Grower { data, y, w, max_depth: depth, min_leaf: min_leaf.max(1), max_features: max_features.max(1), nodes: Vec::new() };
    g.grow(rows, 0, rng);
    DecisionTree { nodes: g.nodes }
}

pub(super) fn fit_tree(c: &TreeConfig, x: &[f64], d: usize, y: &[f64], w: &[f64]) -> Result<DecisionTree> {
    if c.max_bins < 2 {
        return Err(LearnerError::Config("max_bins must be at least 2".into()));
    }
    let data = Binned::new(x, d, c.max_bins);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    Ok(grow_tree(&data, y, w, c.max_depth, c.min_samples_leaf, c.max_features.unwrap_or(d), &mut rng))
}

/// Per-tree stream derived from the forest seed.
fn tree_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub(super) fn fit_forest(c: &ForestConfig, x: &[f64], d: usize, y: &[f64], w: &[f64]) -> Result<RandomForest> {
    if c.n_trees == 0 || c.max_bins < 2 {
        return Err(LearnerError::Config("forest needs n_trees ≥ 1 and max_bins ≥ 2".into()));
    }
    let data = Binned::new(x, d, c.max_bins);
    let mtry = c.max_features.unwrap_or_else(|| ((d as f64).sqrt() as usize).max(1));
    let n = data.n;
    let trees = (0..c.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(c.seed, t));
            let weights: Vec<f64> = if c.bootstrap {
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                counts.iter().zip(w).map(|(&k, &wi)| k as f64 * wi).collect()
            } else {
                w.to_vec()
            };
            if weights.iter().all(|&v| v == 0.0) {
                return DecisionTree { nodes: vec![Node::Leaf { value: 0.5 }] };
            }
            grow_tree(&data, y, &weights, c.max_depth, c.min_samples_leaf, mtry, &mut rng)
        })
        .collect();
    Ok(RandomForest { trees })
}
