//! Common interface for anything that assigns exact probabilities to outcome
//! strings and can draw samples from them: exact reference states, tables,
//! and trained autoregressive models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::povm::{index_string, ProbabilityTable};

/// Samples per independently seeded shard. Shards are the unit of parallel
/// work, so sample sets do not depend on the worker count.
pub const SHARD_SIZE: usize = 4096;

/// An outcome string with its log-probability under the distribution that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledOutcome {
    pub outcome: Vec<u8>,
    pub log_prob: f64,
}

/// Random stream for shard `shard` of a sampling run seeded with `seed`.
pub fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

pub trait OutcomeDistribution: Sync {
    fn n_sites(&self) -> usize;

    /// Outcome alphabet size.
    fn m(&self) -> usize;

    /// Normalized log-probability (`-inf` for impossible strings).
    fn log_prob(&self, a: &[u8]) -> f64;

    fn prob(&self, a: &[u8]) -> f64 {
        self.log_prob(a).exp()
    }

    /// Log-probabilities of many strings; models override this to batch work.
    fn log_prob_many(&self, strings: &[Vec<u8>]) -> Vec<f64> {
        strings.iter().map(|s| self.log_prob(s)).collect()
    }

    /// Draws `count` i.i.d. samples from one random stream.
    fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledOutcome>>;

    /// Draws `n` samples, deterministic in `seed`, in shards of [`SHARD_SIZE`]
    /// processed on the rayon pool and concatenated in shard order.
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<SampledOutcome>> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let shards = n.div_ceil(SHARD_SIZE);
        let parts: Vec<Result<Vec<SampledOutcome>>> = (0..shards)
            .into_par_iter()
            .map(|s| {
                let count = SHARD_SIZE.min(n - s * SHARD_SIZE);
                self.sample_batch(count, &mut shard_rng(seed, s as u64))
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Full table by enumeration (`m^N ≤ 2^24`).
    fn to_table(&self) -> Result<ProbabilityTable> {
        let n = self.n_sites();
        let m = self.m();
        let len = crate::povm::table_len(m, n)?;
        let strings: Vec<Vec<u8>> = (0..len).map(|i| index_string(i, m, n)).collect();
        let probs = self.log_prob_many(&strings).into_iter().map(f64::exp).collect();
        ProbabilityTable::new(n, m, probs)
    }
}

/// Draws an index from unnormalized nonnegative weights.
pub(crate) fn draw_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// A distribution given explicitly by its table.
#[derive(Debug, Clone)]
pub struct TableDistribution {
    table: ProbabilityTable,
    cdf: Vec<f64>,
}

impl TableDistribution {
    pub fn new(table: ProbabilityTable) -> Self {
        let mut acc = 0.0;
        let cdf = table
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { table, cdf }
    }

    pub fn table(&self) -> &ProbabilityTable {
        &self.table
    }
}

impl OutcomeDistribution for TableDistribution {
    fn n_sites(&self) -> usize {
        self.table.n_sites()
    }

    fn m(&self) -> usize {
        self.table.m()
    }

    fn log_prob(&self, a: &[u8]) -> f64 {
        self.table.get(a).ln()
    }

    fn prob(&self, a: &[u8]) -> f64 {
        self.table.get(a)
    }

    fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledOutcome>> {
        let total = *self.cdf.last().unwrap_or(&0.0);
        let (n, m) = (self.table.n_sites(), self.table.m());
        Ok((0..count)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let mut idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
                // never return a zero-probability string from a flat CDF segment
                while self.table.probs()[idx] == 0.0 && idx > 0 {
                    idx -= 1;
                }
                let outcome = index_string(idx, m, n);
                let log_prob = self.table.probs()[idx].ln();
                SampledOutcome { outcome, log_prob }
            })
            .collect())
    }

    fn to_table(&self) -> Result<ProbabilityTable> {
        Ok(self.table.clone())
    }
}
