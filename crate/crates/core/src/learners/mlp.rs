//! Feed-forward network with tanh hidden layers and a sigmoid output,
//! trained on weighted log-loss with minibatch Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, LearnerError, Result, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    /// One or two hidden layer widths.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![32], learning_rate: 0.01, epochs: 40, batch_size: 256, l2: 1e-4, seed: 0 }
    }
}

/// Layer sizes `[inputs, hidden..., 1]` and the flat parameter layout: for
/// each layer, the weight matrix (out × in, row-major) then the bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub sizes: Vec<usize>,
}

/// Activations of a forward pass over a batch.
pub struct Cache {
    /// `acts[l]` is the row-major (m × sizes[l]) input to layer `l`.
    acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Network {
    pub fn new(inputs: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Network { sizes }
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for w in self.sizes.windows(2) {
            let last = *out.last().expect("non-empty");
            out.push(last + w[1] * w[0] + w[1]);
        }
        out
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for w in self.sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            p.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            p.extend(std::iter::repeat_n(0.0, w[1]));
        }
        p
    }

    pub fn forward(&self, params: &[f64], x: &[f64], m: usize) -> Cache {
        let offs = self.offsets();
        let layers = self.sizes.len() - 1;
        let mut acts = vec![x.to_vec()];
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let wmat = &params[offs[l]..offs[l] + fan_in * fan_out];
            let bias = &params[offs[l] + fan_in * fan_out..offs[l + 1]];
            let input = &acts[l];
            let mut out = vec![0.0; m * fan_out];
            for i in 0..m {
                let row = &input[i * fan_in..(i + 1) * fan_in];
                for o in 0..fan_out {
                    let wr = &wmat[o * fan_in..(o + 1) * fan_in];
                    let z = bias[o] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                    out[i * fan_out + o] = if l + 1 < layers { z.tanh() } else { z };
                }
            }
            acts.push(out);
        }
        let logits = acts.pop().expect("output layer");
        Cache { acts, logits }
    }

    /// Gradient of `Σᵢ dlogit[i] · logitᵢ` with respect to the parameters.
    pub fn backward(&self, params: &[f64], cache: &Cache, dlogit: &[f64]) -> Vec<f64> {
        let offs = self.offsets();
        let layers = self.sizes.len() - 1;
        let m = dlogit.len();
        let mut grad = vec![0.0; self.n_params()];
        let mut delta = dlogit.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.acts[l];
            let (gw, rest) = grad[offs[l]..offs[l + 1]].split_at_mut(fan_in * fan_out);
            for i in 0..m {
                let row = &input[i * fan_in..(i + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = delta[i * fan_out + o];
                    if dv == 0.0 {
                        continue;
                    }
                    rest[o] += dv;
                    for (g, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(row) {
                        *g += dv * a;
                    }
                }
            }
            if l > 0 {
                let wmat = &params[offs[l]..offs[l] + fan_in * fan_out];
                let mut prev = vec![0.0; m * fan_in];
                for i in 0..m {
                    for o in 0..fan_out {
                        let dv = delta[i * fan_out + o];
                        if dv == 0.0 {
                            continue;
                        }
                        for k in 0..fan_in {
                            prev[i * fan_in + k] += dv * wmat[o * fan_in + k];
                        }
                    }
                    for k in 0..fan_in {
                        let a = input[i * fan_in + k];
                        prev[i * fan_in + k] *= 1.0 - a * a;
                    }
                }
                delta = prev;
            }
        }
        grad
    }
}

/// Weighted mean log-loss plus `l2/2 · ‖params‖²`, with gradient.
pub fn loss_and_gradient(net: &Network, params: &[f64], x: &[f64], y: &[f64], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let m = y.len();
    let cache = net.forward(params, x, m);
    let total: f64 = w.iter().sum();
    let mut loss = 0.0;
    let mut dlogit = vec![0.0; m];
    for i in 0..m {
        let z = cache.logits[i];
        loss += w[i] * (softplus(z) - y[i] * z);
        dlogit[i] = w[i] * (sigmoid(z) - y[i]) / total;
    }
    loss /= total;
    let mut grad = net.backward(params, &cache, &dlogit);
    for (g, p) in grad.iter_mut().zip(params) {
        *g += l2 * p;
        loss += 0.5 * l2 * p * p;
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub standardizer: Standardizer,
    pub network: Network,
    pub params: Vec<f64>,
}

impl MlpModel {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = self.network.sizes[0];
        let xs = self.standardizer.transform(x);
        self.network.forward(&self.params, &xs, xs.len() / d.max(1)).logits
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }

    pub(crate) fn validate(&self, d: usize) -> std::result::Result<(), String> {
        let s = &self.network.sizes;
        if s.len() < 2 || s[0] != d || *s.last().expect("len ≥ 2") != 1 || s.contains(&0) {
            return Err("malformed network layout".into());
        }
        if s.len() > 8 || s.iter().any(|&k| k > 4096) {
            return Err("network layout too large".into());
        }
        if self.params.len() != self.network.n_params() {
            return Err("parameter count does not match layout".into());
        }
        if self.standardizer.mean.len() != d || self.standardizer.scale.len() != d {
            return Err("standardizer arity mismatch".into());
        }
        Ok(())
    }
}

/// Adam moment state.
pub(crate) struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(lr: f64, n: usize) -> Self {
        Adam { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
        }
    }
}

/// Per-batch view handed to a [`GradientHook`].
pub(crate) struct BatchView<'a> {
    pub epoch: usize,
    pub rows: &'a [usize],
    pub net: &'a Network,
    pub params: &'a [f64],
    pub cache: &'a Cache,
}

/// Lets a caller rewrite the predictor gradient of every batch.
pub(crate) trait GradientHook {
    fn adjust(&mut self, batch: &BatchView<'_>, grad: &mut [f64]) -> Result<()>;
}

/// Trains on standardized inputs; returns the fitted parameters.
pub(crate) fn train(
    c: &MlpConfig,
    net: &Network,
    xs: &[f64],
    y: &[f64],
    w: &[f64],
    mut hook: Option<&mut dyn GradientHook>,
) -> Result<Vec<f64>> {
    let d = net.sizes[0];
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut params = net.init(&mut rng);
    let mut adam = Adam::new(c.learning_rate, params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let bs = c.batch_size.max(1);
    for epoch in 0..c.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for rows in order.chunks(bs) {
            let m = rows.len();
            let mut xb = Vec::with_capacity(m * d);
            for &i in rows {
                xb.extend_from_slice(&xs[i * d..(i + 1) * d]);
            }
            let cache = net.forward(&params, &xb, m);
            let total: f64 = rows.iter().map(|&i| w[i]).sum();
            if total <= 0.0 {
                continue;
            }
            let mut dlogit = vec![0.0; m];
            for (k, &i) in rows.iter().enumerate() {
                let z = cache.logits[k];
                epoch_loss += w[i] * (softplus(z) - y[i] * z);
                dlogit[k] = w[i] * (sigmoid(z) - y[i]) / total;
            }
            let mut grad = net.backward(&params, &cache, &dlogit);
            for (g, p) in grad.iter_mut().zip(&params) {
                *g += c.l2 * p;
            }
            if let Some(h) = hook.as_deref_mut() {
                h.adjust(&BatchView { epoch, rows, net, params: &params, cache: &cache }, &mut grad)?;
            }
            adam.step(&mut params, &grad);
        }
        if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(LearnerError::Diverged { epoch, message: "non-finite network loss".into() });
        }
    }
    Ok(params)
}

pub(crate) fn fit(
    c: &MlpConfig,
    x: &[f64],
    d: usize,
    y: &[f64],
    w: &[f64],
    hook: Option<&mut dyn GradientHook>,
) -> Result<MlpModel> {
    if c.hidden.is_empty() || c.hidden.len() > 2 || c.hidden.contains(&0) {
        return Err(LearnerError::Config("mlp needs one or two non-empty hidden layers".into()));
    }
    if !(c.learning_rate > 0.0) {
        return Err(LearnerError::Config("mlp learning_rate must be positive".into()));
    }
    let standardizer = Standardizer::fit(x, d, w);
    let xs = standardizer.transform(x);
    let network = Network::new(d, &c.hidden);
    let params = train(c, &network, &xs, y, w, hook)?;
    Ok(MlpModel { standardizer, network, params })
}
