//! Restricted Boltzmann machine with multinomial (softmax) visible units and
//! binary hidden units.
//!
//! `E(v,h) = -Σ W[i,j,k] v_ik h_j - Σ b[i,k] v_ik - Σ c_j h_j` with `v_ik` the
//! one-hot encoding of outcome `k` at site `i`. Summing out the hidden layer
//! gives the free energy `F(v) = -Σ_i b[i,v_i] - Σ_j softplus(c_j + Σ_i W[i,j,v_i])`
//! and `P(v) = exp(-F(v)) / Z`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainingConfig};
use crate::distribution::{draw_index, OutcomeDistribution, SampledOutcome};
use crate::error::{Error, Result};
use crate::povm::{index_string, table_len, ProbabilityTable};

/// Largest visible space enumerated exactly.
const MAX_ENUMERATION: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbmShape {
    pub n_sites: usize,
    pub m: usize,
    pub n_hidden: usize,
}

impl RbmShape {
    pub fn n_params(&self) -> usize {
        self.n_sites * self.n_hidden * self.m + self.n_sites * self.m + self.n_hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialRbm {
    shape: RbmShape,
    /// `W` at `(i*n_hidden + j)*m + k`, then `b` at `i*m + k`, then `c`.
    params: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl MultinomialRbm {
    pub fn zeros(shape: RbmShape) -> Result<Self> {
        if shape.n_sites == 0 || shape.m < 2 || shape.m > 256 || shape.n_hidden == 0 {
            return Err(Error::InvalidArgument(format!("invalid RBM shape {shape:?}")));
        }
        Ok(Self { shape, params: vec![0.0; shape.n_params()] })
    }

    /// Weights uniform in `±scale`, zero biases.
    pub fn random(shape: RbmShape, scale: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nw = shape.n_sites * shape.n_hidden * shape.m;
        for x in &mut model.params[..nw] {
            *x = rng.random_range(-scale..=scale);
        }
        Ok(model)
    }

    pub fn from_params(shape: RbmShape, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        if params.len() != shape.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for an RBM with {}",
                params.len(),
                shape.n_params()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn shape(&self) -> RbmShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    fn w(&self, i: usize, j: usize, k: usize) -> f64 {
        self.params[(i * self.shape.n_hidden + j) * self.shape.m + k]
    }

    fn b_offset(&self) -> usize {
        self.shape.n_sites * self.shape.n_hidden * self.shape.m
    }

    fn c_offset(&self) -> usize {
        self.b_offset() + self.shape.n_sites * self.shape.m
    }

    /// Hidden pre-activations `c_j + Σ_i W[i,j,v_i]`.
    fn hidden_fields(&self, v: &[u8]) -> Vec<f64> {
        let co = self.c_offset();
        (0..self.shape.n_hidden)
            .map(|j| self.params[co + j] + v.iter().enumerate().map(|(i, &k)| self.w(i, j, k as usize)).sum::<f64>())
            .collect()
    }

    /// `P(h_j = 1 | v)` for every hidden unit.
    pub fn hidden_conditional(&self, v: &[u8]) -> Vec<f64> {
        self.hidden_fields(v).into_iter().map(sigmoid).collect()
    }

    /// `P(v_i = k | h)` as one softmax row per site.
    pub fn visible_conditional(&self, h: &[u8]) -> Vec<Vec<f64>> {
        let (n, m) = (self.shape.n_sites, self.shape.m);
        let bo = self.b_offset();
        (0..n)
            .map(|i| {
                let logits: Vec<f64> = (0..m)
                    .map(|k| {
                        self.params[bo + i * m + k]
                            + h.iter().enumerate().filter(|(_, &x)| x == 1).map(|(j, _)| self.w(i, j, k)).sum::<f64>()
                    })
                    .collect();
                let lse = log_sum_exp(&logits);
                logits.iter().map(|l| (l - lse).exp()).collect()
            })
            .collect()
    }

    pub fn free_energy(&self, v: &[u8]) -> f64 {
        let m = self.shape.m;
        let bo = self.b_offset();
        let vis: f64 = v.iter().enumerate().map(|(i, &k)| self.params[bo + i * m + k as usize]).sum();
        -vis - self.hidden_fields(v).into_iter().map(softplus).sum::<f64>()
    }

    fn enumeration_len(&self) -> Result<usize> {
        let len = table_len(self.shape.m, self.shape.n_sites)?;
        if len > MAX_ENUMERATION {
            return Err(Error::SizeGuard(format!("{len} visible configurations exceed the enumeration limit")));
        }
        Ok(len)
    }

    pub fn log_partition(&self) -> Result<f64> {
        let len = self.enumeration_len()?;
        let (n, m) = (self.shape.n_sites, self.shape.m);
        let neg: Vec<f64> = (0..len).map(|i| -self.free_energy(&index_string(i, m, n))).collect();
        Ok(log_sum_exp(&neg))
    }

    pub fn exact_distribution(&self) -> Result<ProbabilityTable> {
        let len = self.enumeration_len()?;
        let (n, m) = (self.shape.n_sites, self.shape.m);
        let neg: Vec<f64> = (0..len).map(|i| -self.free_energy(&index_string(i, m, n))).collect();
        let lz = log_sum_exp(&neg);
        ProbabilityTable::new(n, m, neg.iter().map(|x| (x - lz).exp()).collect())
    }

    pub fn exact_mean_nll(&self, data: &[&[u8]]) -> Result<f64> {
        let lz = self.log_partition()?;
        Ok(data.iter().map(|v| self.free_energy(v)).sum::<f64>() / data.len() as f64 + lz)
    }

    /// Adds `weight · ∂F(v)/∂θ` to `grad`.
    fn add_free_energy_gradient(&self, v: &[u8], weight: f64, grad: &mut [f64]) {
        let (nh, m) = (self.shape.n_hidden, self.shape.m);
        let (bo, co) = (self.b_offset(), self.c_offset());
        let ph = self.hidden_conditional(v);
        for (i, &k) in v.iter().enumerate() {
            let k = k as usize;
            grad[bo + i * m + k] -= weight;
            for (j, &p) in ph.iter().enumerate() {
                grad[(i * nh + j) * m + k] -= weight * p;
            }
        }
        for (j, &p) in ph.iter().enumerate() {
            grad[co + j] -= weight * p;
        }
    }

    /// Exact gradient of the mean NLL: data average of `∂F` minus its model
    /// average, the latter by enumeration.
    pub fn exact_nll_gradient(&self, data: &[&[u8]]) -> Result<Vec<f64>> {
        let table = self.exact_distribution()?;
        let (n, m) = (self.shape.n_sites, self.shape.m);
        let mut grad = vec![0.0; self.params.len()];
        let w = 1.0 / data.len() as f64;
        for v in data {
            self.add_free_energy_gradient(v, w, &mut grad);
        }
        for (i, &p) in table.probs().iter().enumerate() {
            if p > 0.0 {
                self.add_free_energy_gradient(&index_string(i, m, n), -p, &mut grad);
            }
        }
        Ok(grad)
    }

    fn sample_hidden(&self, v: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
        self.hidden_conditional(v).into_iter().map(|p| (rng.random::<f64>() < p) as u8).collect()
    }

    fn sample_visible(&self, h: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
        self.visible_conditional(h).iter().map(|row| draw_index(row, 1.0, rng) as u8).collect()
    }

    /// One block-Gibbs sweep `v → h → v'`.
    pub fn gibbs_step(&self, v: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
        let h = self.sample_hidden(v, rng);
        self.sample_visible(&h, rng)
    }

    /// CD-k estimate of the NLL gradient on a batch: positive phase at the data,
    /// negative phase after `k` Gibbs sweeps started from each data string.
    pub fn cd_gradient(&self, batch: &[&[u8]], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let w = 1.0 / batch.len() as f64;
        for v in batch {
            self.add_free_energy_gradient(v, w, &mut grad);
            let mut neg = v.to_vec();
            for _ in 0..k {
                neg = self.gibbs_step(&neg, rng);
            }
            self.add_free_energy_gradient(&neg, -w, &mut grad);
        }
        grad
    }

    /// One optimizer update along the CD-k gradient.
    pub fn cd_update(&mut self, batch: &[&[u8]], k: usize, opt: &mut Adam, rng: &mut ChaCha8Rng) {
        let grad = self.cd_gradient(batch, k, rng);
        opt.step(&mut self.params, &grad);
    }
}

/// Trains by CD-k with mini-batches; records the exact mean NLL per epoch when
/// the visible space is small enough to enumerate.
pub fn train_rbm(model: &mut MultinomialRbm, data: &[&[u8]], config: &TrainingConfig) -> Result<Vec<Option<f64>>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.adam, model.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        opt.config.learning_rate = config.adam.learning_rate * config.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[u8]> = chunk.iter().map(|&i| data[i]).collect();
            model.cd_update(&batch, config.cd_steps, &mut opt, &mut rng);
        }
        if model.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        trace.push(model.exact_mean_nll(data).ok());
    }
    Ok(trace)
}

/// Normalized view of an RBM for sampling and exact evaluation: `log Z` by
/// enumeration, samples from a block-Gibbs chain after burn-in with thinning.
#[derive(Debug, Clone)]
pub struct RbmDistribution {
    model: MultinomialRbm,
    log_z: f64,
    pub burn_in: usize,
    pub thin: usize,
}

impl RbmDistribution {
    pub fn new(model: MultinomialRbm) -> Result<Self> {
        let log_z = model.log_partition()?;
        Ok(Self { model, log_z, burn_in: 500, thin: 5 })
    }

    pub fn model(&self) -> &MultinomialRbm {
        &self.model
    }
}

impl OutcomeDistribution for RbmDistribution {
    fn n_sites(&self) -> usize {
        self.model.shape.n_sites
    }

    fn m(&self) -> usize {
        self.model.shape.m
    }

    fn log_prob(&self, a: &[u8]) -> f64 {
        if crate::povm::check_string(a, self.n_sites(), self.m()).is_err() {
            return f64::NEG_INFINITY;
        }
        -self.model.free_energy(a) - self.log_z
    }

    fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledOutcome>> {
        let (n, m) = (self.n_sites(), self.m());
        let mut v: Vec<u8> = (0..n).map(|_| rng.random_range(0..m as u8)).collect();
        for _ in 0..self.burn_in {
            v = self.model.gibbs_step(&v, rng);
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..self.thin {
                v = self.model.gibbs_step(&v, rng);
            }
            out.push(SampledOutcome { log_prob: self.log_prob(&v), outcome: v.clone() });
        }
        Ok(out)
    }
}
