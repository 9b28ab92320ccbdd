//! Stacked GRU autoregressive model over outcome strings.
//!
//! Row-vector convention throughout: a batch of states is a `B×H` row-major
//! matrix and every weight maps rows on the right. Per layer the gate weights
//! are stored as `W_x` (`d×3H`) and `W_h` (`H×3H`) with column blocks ordered
//! update `z`, reset `r`, candidate `c`; the candidate sees `[r⊙h; x]`:
//!
//! ```text
//! z  = σ(x W_x^z + h W_h^z + b^z)
//! r  = σ(x W_x^r + h W_h^r + b^r)
//! ĉ  = tanh(x W_x^c + (r⊙h) W_h^c + b^c)
//! h' = (1-z)⊙h + z⊙ĉ
//! ```
//!
//! Step `i` reads the one-hot of `a_{i-1}` (zero vector at `i = 0`) and emits
//! `softmax(h_top U + c)`. With zero layers the top state is the one-hot input
//! itself, a first-order linear-softmax model used for gradient checking.

use matrixmultiply::dgemm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{draw_index, OutcomeDistribution, SampledOutcome};
use crate::error::{Error, Result};

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruShape {
    pub n_sites: usize,
    pub m: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl GruShape {
    fn input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.m
        } else {
            self.hidden
        }
    }

    fn top_dim(&self) -> usize {
        if self.layers == 0 {
            self.m
        } else {
            self.hidden
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        let h = self.hidden;
        (self.input_dim(layer) + h) * 3 * h + 3 * h
    }

    pub fn n_params(&self) -> usize {
        (0..self.layers).map(|l| self.layer_len(l)).sum::<usize>() + self.top_dim() * self.m + self.m
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruStack {
    shape: GruShape,
    params: Vec<f64>,
}

/// `C = beta·C + A·B` for strided `A` (`m×k`), `B` (`k×n`), `C` (`m×n`).
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        let need = |rs: isize, cs: isize, rows: usize, cols: usize| {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        };
        debug_assert!(a.len() as isize >= need(rsa, csa, m, k));
        debug_assert!(b.len() as isize >= need(rsb, csb, k, n));
    }
    assert!(c.len() as isize >= (m as isize - 1) * rsc + (n as isize - 1) * csc + 1);
    // SAFETY: extents checked above against the slice lengths.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place log-softmax of each `m`-wide row.
fn log_softmax_rows(x: &mut [f64], m: usize) {
    for row in x.chunks_mut(m) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
}

/// Forward activations of one layer at one step.
#[derive(Debug, Clone, Default)]
struct StepCache {
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Forward pass state for a batch, optionally retaining activations for BPTT.
struct Forward<'a> {
    model: &'a GruStack,
    batch: usize,
    /// current hidden state per layer
    h: Vec<Vec<f64>>,
    /// `caches[t][l]` when training
    caches: Option<Vec<Vec<StepCache>>>,
    gates: Vec<f64>,
}

impl<'a> Forward<'a> {
    fn new(model: &'a GruStack, batch: usize, keep: bool) -> Self {
        let h = vec![vec![0.0; batch * model.shape.hidden]; model.shape.layers];
        Self {
            model,
            batch,
            h,
            caches: keep.then(Vec::new),
            gates: vec![0.0; batch * 3 * model.shape.hidden],
        }
    }

    /// Advances every layer by one step given the previous symbols (`None` for
    /// the start token) and writes log-probabilities of the next symbol.
    fn step(&mut self, prev: Option<&[u8]>, logp: &mut [f64]) {
        let s = self.model.shape;
        let (b, hd, m) = (self.batch, s.hidden, s.m);
        let p = &self.model.params;
        let mut caches = Vec::with_capacity(s.layers);
        for l in 0..s.layers {
            let o = self.model.offsets(l);
            let g = &mut self.gates;
            for row in g.chunks_mut(3 * hd) {
                row.copy_from_slice(&p[o.b..o.b + 3 * hd]);
            }
            if l == 0 {
                if let Some(prev) = prev {
                    for (row, &a) in g.chunks_mut(3 * hd).zip(prev) {
                        let w = &p[o.wx + a as usize * 3 * hd..o.wx + (a as usize + 1) * 3 * hd];
                        row.iter_mut().zip(w).for_each(|(x, y)| *x += y);
                    }
                }
            } else {
                let x = &self.h[l - 1];
                gemm(b, hd, 3 * hd, x, (hd as isize, 1), &p[o.wx..], (3 * hd as isize, 1), 1.0, g, (3 * hd as isize, 1));
            }
            let hprev = &self.h[l];
            // update and reset blocks from the previous state
            gemm(b, hd, 2 * hd, hprev, (hd as isize, 1), &p[o.wh..], (3 * hd as isize, 1), 1.0, g, (3 * hd as isize, 1));
            let mut z = vec![0.0; b * hd];
            let mut r = vec![0.0; b * hd];
            let mut rh = vec![0.0; b * hd];
            for i in 0..b {
                for j in 0..hd {
                    let zi = sigmoid(g[i * 3 * hd + j]);
                    let ri = sigmoid(g[i * 3 * hd + hd + j]);
                    z[i * hd + j] = zi;
                    r[i * hd + j] = ri;
                    rh[i * hd + j] = ri * hprev[i * hd + j];
                }
            }
            gemm(b, hd, hd, &rh, (hd as isize, 1), &p[o.wh + 2 * hd..], (3 * hd as isize, 1), 1.0, &mut g[2 * hd..], (3 * hd as isize, 1));
            let mut c = vec![0.0; b * hd];
            let mut hn = vec![0.0; b * hd];
            for i in 0..b {
                for j in 0..hd {
                    let k = i * hd + j;
                    let ci = g[i * 3 * hd + 2 * hd + j].tanh();
                    c[k] = ci;
                    hn[k] = (1.0 - z[k]) * hprev[k] + z[k] * ci;
                }
            }
            self.h[l] = hn.clone();
            if self.caches.is_some() {
                caches.push(StepCache { z, r, c, h: hn });
            }
        }
        if let Some(all) = self.caches.as_mut() {
            all.push(caches);
        }
        // output layer
        let ou = self.model.output_offset();
        let td = s.top_dim();
        for row in logp.chunks_mut(m) {
            row.copy_from_slice(&p[ou + td * m..ou + td * m + m]);
        }
        if s.layers == 0 {
            if let Some(prev) = prev {
                for (row, &a) in logp.chunks_mut(m).zip(prev) {
                    let w = &p[ou + a as usize * m..ou + (a as usize + 1) * m];
                    row.iter_mut().zip(w).for_each(|(x, y)| *x += y);
                }
            }
        } else {
            let top = &self.h[s.layers - 1];
            gemm(b, hd, m, top, (hd as isize, 1), &p[ou..], (m as isize, 1), 1.0, logp, (m as isize, 1));
        }
        log_softmax_rows(logp, m);
    }
}

impl GruStack {
    /// All parameters zero: every conditional is uniform.
    pub fn zeros(shape: GruShape) -> Result<Self> {
        Self::validate(&shape)?;
        Ok(Self { shape, params: vec![0.0; shape.n_params()] })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(shape: GruShape, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = shape.hidden;
        for l in 0..shape.layers {
            let o = model.offsets(l);
            let bound = (6.0 / (shape.input_dim(l) + h + h) as f64).sqrt();
            for x in &mut model.params[o.wx..o.b] {
                *x = rng.random_range(-bound..bound);
            }
        }
        let ou = model.output_offset();
        let td = shape.top_dim();
        let bound = (6.0 / (td + shape.m) as f64).sqrt();
        for x in &mut model.params[ou..ou + td * shape.m] {
            *x = rng.random_range(-bound..bound);
        }
        Ok(model)
    }

    pub fn from_params(shape: GruShape, params: Vec<f64>) -> Result<Self> {
        Self::validate(&shape)?;
        if params.len() != shape.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                shape.n_params()
            )));
        }
        Ok(Self { shape, params })
    }

    fn validate(shape: &GruShape) -> Result<()> {
        if shape.n_sites == 0 || shape.m < 2 || shape.m > 256 || (shape.layers > 0 && shape.hidden == 0) {
            return Err(Error::InvalidArgument(format!("invalid GRU shape {shape:?}")));
        }
        Ok(())
    }

    pub fn shape(&self) -> GruShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self, layer: usize) -> LayerOffsets {
        let s = &self.shape;
        let start: usize = (0..layer).map(|l| s.layer_len(l)).sum();
        let h = s.hidden;
        let wx = start;
        let wh = wx + s.input_dim(layer) * 3 * h;
        let b = wh + h * 3 * h;
        LayerOffsets { wx, wh, b }
    }

    fn output_offset(&self) -> usize {
        (0..self.shape.layers).map(|l| self.shape.layer_len(l)).sum()
    }

    fn check(&self, a: &[u8]) -> Result<()> {
        crate::povm::check_string(a, self.shape.n_sites, self.shape.m)
    }

    /// Per-step conditional distributions and the total log-likelihood of `a`.
    pub fn forward(&self, a: &[u8]) -> Result<(Vec<Vec<f64>>, f64)> {
        self.check(a)?;
        let m = self.shape.m;
        let mut fwd = Forward::new(self, 1, false);
        let mut logp = vec![0.0; m];
        let mut conds = Vec::with_capacity(a.len());
        let mut ll = 0.0;
        for t in 0..a.len() {
            fwd.step(if t == 0 { None } else { Some(&a[t - 1..t]) }, &mut logp);
            ll += logp[a[t] as usize];
            conds.push(logp.iter().map(|v| v.exp()).collect());
        }
        Ok((conds, ll))
    }

    fn log_prob_chunk(&self, strings: &[&[u8]]) -> Vec<f64> {
        let (n, m) = (self.shape.n_sites, self.shape.m);
        let b = strings.len();
        let mut fwd = Forward::new(self, b, false);
        let mut logp = vec![0.0; b * m];
        let mut out = vec![0.0; b];
        let mut prev = vec![0u8; b];
        for t in 0..n {
            fwd.step((t > 0).then_some(prev.as_slice()), &mut logp);
            for (i, s) in strings.iter().enumerate() {
                out[i] += logp[i * m + s[t] as usize];
                prev[i] = s[t];
            }
        }
        out
    }

    /// Mean negative log-likelihood over a set of strings.
    pub fn mean_nll(&self, strings: &[&[u8]]) -> f64 {
        let total: f64 = strings
            .par_chunks(CHUNK)
            .map(|c| self.log_prob_chunk(c).iter().sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        -total / strings.len() as f64
    }

    /// Mean NLL of the batch and its gradient with respect to every parameter,
    /// by backpropagation through time over the full string.
    pub fn nll_and_grad(&self, batch: &[&[u8]]) -> (f64, Vec<f64>) {
        let s = self.shape;
        let (n, m, hd, b) = (s.n_sites, s.m, s.hidden, batch.len());
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let mut fwd = Forward::new(self, b, true);
        let mut logps = Vec::with_capacity(n);
        let mut prev = vec![0u8; b];
        let mut nll = 0.0;
        for t in 0..n {
            let mut logp = vec![0.0; b * m];
            fwd.step((t > 0).then_some(prev.as_slice()), &mut logp);
            for (i, st) in batch.iter().enumerate() {
                nll -= logp[i * m + st[t] as usize];
                prev[i] = st[t];
            }
            logps.push(logp);
        }
        let caches = fwd.caches.take().unwrap();
        let scale = 1.0 / b as f64;
        let ou = self.output_offset();
        let td = s.top_dim();
        let zeros = vec![0.0; b * hd];

        // gradient flowing into h_{t} of each layer from step t+1
        let mut carry = vec![vec![0.0; b * hd]; s.layers];
        let mut dlogits = vec![0.0; b * m];
        let mut dg = vec![0.0; b * 3 * hd];
        let mut drh = vec![0.0; b * hd];
        for t in (0..n).rev() {
            for i in 0..b {
                for k in 0..m {
                    dlogits[i * m + k] = logps[t][i * m + k].exp() * scale;
                }
                dlogits[i * m + batch[i][t] as usize] -= scale;
            }
            // output bias and weights
            for row in dlogits.chunks(m) {
                grad[ou + td * m..ou + td * m + m].iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if s.layers == 0 {
                if t > 0 {
                    for (i, row) in dlogits.chunks(m).enumerate() {
                        let a = batch[i][t - 1] as usize;
                        grad[ou + a * m..ou + (a + 1) * m].iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
                continue;
            }
            let top = &caches[t][s.layers - 1].h;
            gemm(hd, b, m, top, (1, hd as isize), &dlogits, (m as isize, 1), 1.0, &mut grad[ou..], (m as isize, 1));
            // dh for the top layer: dlogits Uᵀ plus the recurrent carry
            let mut dh = std::mem::take(&mut carry[s.layers - 1]);
            gemm(b, m, hd, &dlogits, (m as isize, 1), &p[ou..], (1, m as isize), 1.0, &mut dh, (hd as isize, 1));

            for l in (0..s.layers).rev() {
                let o = self.offsets(l);
                let c = &caches[t][l];
                let hprev: &[f64] = if t == 0 { &zeros } else { &caches[t - 1][l].h };
                let mut dhprev = vec![0.0; b * hd];
                for i in 0..b {
                    for j in 0..hd {
                        let k = i * hd + j;
                        let (z, cc) = (c.z[k], c.c[k]);
                        let dhk = dh[k];
                        dg[i * 3 * hd + j] = dhk * (cc - hprev[k]) * z * (1.0 - z);
                        dg[i * 3 * hd + 2 * hd + j] = dhk * z * (1.0 - cc * cc);
                        dhprev[k] = dhk * (1.0 - z);
                    }
                }
                // d(r⊙h) = da_c W_h^cᵀ
                gemm(b, hd, hd, &dg[2 * hd..], (3 * hd as isize, 1), &p[o.wh + 2 * hd..], (1, 3 * hd as isize), 0.0, &mut drh, (hd as isize, 1));
                let mut rh = vec![0.0; b * hd];
                for i in 0..b {
                    for j in 0..hd {
                        let k = i * hd + j;
                        let r = c.r[k];
                        dg[i * 3 * hd + hd + j] = drh[k] * hprev[k] * r * (1.0 - r);
                        dhprev[k] += drh[k] * r;
                        rh[k] = r * hprev[k];
                    }
                }
                // recurrent weight gradients
                gemm(hd, b, 2 * hd, hprev, (1, hd as isize), &dg, (3 * hd as isize, 1), 1.0, &mut grad[o.wh..], (3 * hd as isize, 1));
                gemm(hd, b, hd, &rh, (1, hd as isize), &dg[2 * hd..], (3 * hd as isize, 1), 1.0, &mut grad[o.wh + 2 * hd..], (3 * hd as isize, 1));
                gemm(b, 2 * hd, hd, &dg, (3 * hd as isize, 1), &p[o.wh..], (1, 3 * hd as isize), 1.0, &mut dhprev, (hd as isize, 1));
                for row in dg.chunks(3 * hd) {
                    grad[o.b..o.b + 3 * hd].iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
                if l == 0 {
                    if t > 0 {
                        for (i, row) in dg.chunks(3 * hd).enumerate() {
                            let a = batch[i][t - 1] as usize;
                            grad[o.wx + a * 3 * hd..o.wx + (a + 1) * 3 * hd]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(g, d)| *g += d);
                        }
                    }
                } else {
                    let x = &caches[t][l - 1].h;
                    gemm(hd, b, 3 * hd, x, (1, hd as isize), &dg, (3 * hd as isize, 1), 1.0, &mut grad[o.wx..], (3 * hd as isize, 1));
                    // gradient into the layer below at this step
                    let mut dx = std::mem::take(&mut carry[l - 1]);
                    gemm(b, 3 * hd, hd, &dg, (3 * hd as isize, 1), &p[o.wx..], (1, 3 * hd as isize), 1.0, &mut dx, (hd as isize, 1));
                    dh = dx;
                }
                carry[l] = dhprev;
            }
            for c in carry.iter_mut() {
                if c.is_empty() {
                    *c = vec![0.0; b * hd];
                }
            }
        }
        (nll * scale, grad)
    }

    fn sample_chunk(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<SampledOutcome> {
        let (n, m) = (self.shape.n_sites, self.shape.m);
        let mut fwd = Forward::new(self, count, false);
        let mut logp = vec![0.0; count * m];
        let mut out: Vec<SampledOutcome> =
            (0..count).map(|_| SampledOutcome { outcome: Vec::with_capacity(n), log_prob: 0.0 }).collect();
        let mut prev = vec![0u8; count];
        let mut probs = vec![0.0; m];
        for t in 0..n {
            fwd.step((t > 0).then_some(prev.as_slice()), &mut logp);
            for (i, s) in out.iter_mut().enumerate() {
                let row = &logp[i * m..(i + 1) * m];
                probs.iter_mut().zip(row).for_each(|(p, l)| *p = l.exp());
                let total = probs.iter().sum();
                let a = draw_index(&probs, total, rng);
                s.outcome.push(a as u8);
                s.log_prob += row[a];
                prev[i] = a as u8;
            }
        }
        out
    }
}

impl OutcomeDistribution for GruStack {
    fn n_sites(&self) -> usize {
        self.shape.n_sites
    }

    fn m(&self) -> usize {
        self.shape.m
    }

    fn log_prob(&self, a: &[u8]) -> f64 {
        if self.check(a).is_err() {
            return f64::NEG_INFINITY;
        }
        self.log_prob_chunk(&[a])[0]
    }

    fn log_prob_many(&self, strings: &[Vec<u8>]) -> Vec<f64> {
        let n = self.shape.n_sites;
        let refs: Vec<&[u8]> = strings.iter().map(|s| s.as_slice()).collect();
        refs.par_chunks(CHUNK)
            .flat_map_iter(|c| {
                if c.iter().all(|s| self.check(s).is_ok()) {
                    self.log_prob_chunk(c)
                } else {
                    c.iter()
                        .map(|s| if s.len() == n { self.log_prob(s) } else { f64::NEG_INFINITY })
                        .collect()
                }
            })
            .collect()
    }

    fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledOutcome>> {
        let mut out = Vec::with_capacity(count);
        let mut left = count;
        while left > 0 {
            let c = left.min(CHUNK);
            out.extend(self.sample_chunk(c, rng));
            left -= c;
        }
        Ok(out)
    }
}
