//! Exact outcome distribution of a product POVM on an MPO, with cached right
//! environments and left-to-right ancestral sampling.

use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;

use super::{Mpo, Mps};
use crate::distribution::{OutcomeDistribution, SampledOutcome};
use crate::error::{Error, Result};
use crate::povm::{check_string, Mat2, SingleQubitPovm};

/// Conditionals more negative than this are treated as a broken state.
const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Per-site transfer matrices `E_k^(a)[l,r] = Σ_{s,s'} W_k[l,s,s',r] M^(a)[s',s]`
/// of `P(a) = Tr[(⊗M^(a_k)) ρ]`, together with right environments
/// `R_k = S_k · · · S_N · 1` where `S_k = Σ_a E_k^(a)` traces site `k` out.
#[derive(Debug, Clone)]
pub struct ProbabilityChain {
    m: usize,
    dims: Vec<(usize, usize)>,
    /// `transfer[k][(a*left + l)*right + r]`
    transfer: Vec<Vec<C64>>,
    /// right environment entering site `k` from the right, i.e. `R_{k+1}`,
    /// rescaled to unit max-norm; `right_env[N-1] = [1]`.
    right_env: Vec<Vec<C64>>,
}

fn rescale(v: &mut [C64]) {
    let max = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
}

impl ProbabilityChain {
    pub fn from_mpo(mpo: &Mpo, povm: &SingleQubitPovm) -> Self {
        Self::with_operators(mpo, povm.elements())
    }

    /// Chain for `Tr[(⊗ O^(a_k)) ρ]` with arbitrary single-site operators;
    /// `probability` then returns the real part of that contraction.
    pub fn with_operators(mpo: &Mpo, operators: &[Mat2]) -> Self {
        let m = operators.len();
        let mut dims = Vec::with_capacity(mpo.n_sites());
        let mut transfer = Vec::with_capacity(mpo.n_sites());
        for w in mpo.sites() {
            let (dl, dr) = (w.left, w.right);
            let mut e = vec![C64::new(0.0, 0.0); m * dl * dr];
            for (a, el) in operators.iter().enumerate() {
                for l in 0..dl {
                    for r in 0..dr {
                        let mut acc = C64::new(0.0, 0.0);
                        for s in 0..2 {
                            for sp in 0..2 {
                                acc += w.get(l, s, sp, r) * el[(sp, s)];
                            }
                        }
                        e[(a * dl + l) * dr + r] = acc;
                    }
                }
            }
            dims.push((dl, dr));
            transfer.push(e);
        }
        let n = dims.len();
        let mut right_env = vec![Vec::new(); n];
        right_env[n - 1] = vec![C64::new(1.0, 0.0)];
        for k in (1..n).rev() {
            let (dl, dr) = dims[k];
            let mut next = vec![C64::new(0.0, 0.0); dl];
            for a in 0..m {
                for (l, slot) in next.iter_mut().enumerate() {
                    for r in 0..dr {
                        *slot += transfer[k][(a * dl + l) * dr + r] * right_env[k][r];
                    }
                }
            }
            rescale(&mut next);
            right_env[k - 1] = next;
        }
        Self { m, dims, transfer, right_env }
    }

    pub fn from_mps(mps: &Mps, povm: &SingleQubitPovm) -> Self {
        Self::from_mpo(&mps.to_mpo(), povm)
    }

    pub fn n_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    fn step(&self, k: usize, a: usize, left: &[C64]) -> Vec<C64> {
        let (dl, dr) = self.dims[k];
        let e = &self.transfer[k][a * dl * dr..(a + 1) * dl * dr];
        let mut out = vec![C64::new(0.0, 0.0); dr];
        for (l, &x) in left.iter().enumerate() {
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            for (r, slot) in out.iter_mut().enumerate() {
                *slot += x * e[l * dr + r];
            }
        }
        out
    }

    /// Exact `P(a)` by a single left-to-right contraction.
    pub fn probability(&self, a: &[u8]) -> Result<f64> {
        check_string(a, self.n_sites(), self.m)?;
        let mut left = vec![C64::new(1.0, 0.0)];
        let mut log_scale = 0.0;
        for (k, &x) in a.iter().enumerate() {
            left = self.step(k, x as usize, &left);
            let max = left.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if max == 0.0 {
                return Ok(0.0);
            }
            left.iter_mut().for_each(|z| *z /= max);
            log_scale += max.ln();
        }
        Ok(left[0].re * log_scale.exp())
    }

    /// Unnormalized conditional weights `L·E^(a)·R` at site `k` and their
    /// normalized form, with roundoff negatives clamped.
    fn conditional_from_left(&self, k: usize, left: &[C64]) -> Result<Vec<f64>> {
        let renv = &self.right_env[k];
        let mut w: Vec<f64> = (0..self.m)
            .map(|a| {
                self.step(k, a, left)
                    .iter()
                    .zip(renv)
                    .map(|(x, y)| x * y)
                    .sum::<C64>()
                    .re
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::NegativeProbability { site: k, value: total });
        }
        for x in w.iter_mut() {
            *x /= total;
            if *x < 0.0 {
                if *x < -NEGATIVE_TOLERANCE {
                    return Err(Error::NegativeProbability { site: k, value: *x });
                }
                *x = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Ok(w)
    }

    fn advance(&self, k: usize, a: usize, left: &[C64]) -> Vec<C64> {
        let mut next = self.step(k, a, left);
        rescale(&mut next);
        next
    }

    /// `P(a_k | a_{<k})` for `k = prefix.len()`.
    pub fn conditionals(&self, prefix: &[u8]) -> Result<Vec<f64>> {
        if prefix.len() >= self.n_sites() {
            return Err(Error::DimensionMismatch(format!(
                "prefix of length {} leaves no site to condition on",
                prefix.len()
            )));
        }
        let mut left = vec![C64::new(1.0, 0.0)];
        for (k, &x) in prefix.iter().enumerate() {
            if x as usize >= self.m {
                return Err(Error::DimensionMismatch(format!("outcome {x} out of range")));
            }
            left = self.advance(k, x as usize, &left);
        }
        self.conditional_from_left(prefix.len(), &left)
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> Result<SampledOutcome> {
        let n = self.n_sites();
        let mut outcome = Vec::with_capacity(n);
        let mut log_prob = 0.0;
        let mut left = vec![C64::new(1.0, 0.0)];
        for k in 0..n {
            let cond = self.conditional_from_left(k, &left)?;
            let a = crate::distribution::draw_index(&cond, 1.0, rng);
            log_prob += cond[a].ln();
            outcome.push(a as u8);
            left = self.advance(k, a, &left);
        }
        Ok(SampledOutcome { outcome, log_prob })
    }
}

impl OutcomeDistribution for ProbabilityChain {
    fn n_sites(&self) -> usize {
        self.dims.len()
    }

    fn m(&self) -> usize {
        self.m
    }

    fn log_prob(&self, a: &[u8]) -> f64 {
        match self.probability(a) {
            Ok(p) if p > 0.0 => p.ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledOutcome>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}

/// Exact Born probability of `a` for a product POVM on an MPO.
pub fn exact_probability(mpo: &Mpo, povm: &SingleQubitPovm, a: &[u8]) -> Result<f64> {
    ProbabilityChain::from_mpo(mpo, povm).probability(a)
}

/// `n` ancestral samples from the outcome distribution of `mpo`.
pub fn sample_outcomes(mpo: &Mpo, povm: &SingleQubitPovm, n: usize, seed: u64) -> Result<Vec<SampledOutcome>> {
    ProbabilityChain::from_mpo(mpo, povm).sample(n, seed)
}
