//! Outcome distribution of a dense pure state (Hamiltonian ground states).

use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;

use crate::dense::{bit_of, DenseDensityMatrix, DenseKet};
use crate::distribution::{draw_index, OutcomeDistribution, SampledOutcome, TableDistribution};
use crate::error::{Error, Result};
use crate::povm::{check_string, full_probability_table, Mat2, SingleQubitPovm};

/// Largest `m^N` for which the full table is precomputed.
const TABLE_LIMIT: usize = 1 << 22;

/// Born distribution of a dense ket under a product POVM.
///
/// Small instances precompute the full table and sample from its CDF. Larger
/// ones sample site by site: with `K^(a) = √M^(a)`, the prefix weight is
/// `‖(K^(a_1) ⊗ .. ⊗ K^(a_k) ⊗ 𝟙)ψ‖²`, so each conditional comes from the
/// 2×2 reduced state of the next site in the partially measured ket.
#[derive(Debug, Clone)]
pub struct DenseKetDistribution {
    ket: DenseKet,
    povm: SingleQubitPovm,
    table: Option<TableDistribution>,
}

impl DenseKetDistribution {
    pub fn new(ket: DenseKet, povm: &SingleQubitPovm) -> Result<Self> {
        let n = ket.n_qubits();
        let small = (povm.m() as f64).powi(n as i32) <= TABLE_LIMIT as f64;
        let table = if small {
            let rho = DenseDensityMatrix::from_ket(&ket);
            Some(TableDistribution::new(full_probability_table(povm, &rho)?))
        } else {
            None
        };
        Ok(Self { ket, povm: povm.clone(), table })
    }

    pub fn ket(&self) -> &DenseKet {
        &self.ket
    }

    fn apply_site(v: &mut [C64], n: usize, site: usize, k: &Mat2) {
        let b = bit_of(n, site);
        for i in 0..v.len() {
            if i & b == 0 {
                let (x0, x1) = (v[i], v[i | b]);
                v[i] = k[(0, 0)] * x0 + k[(0, 1)] * x1;
                v[i | b] = k[(1, 0)] * x0 + k[(1, 1)] * x1;
            }
        }
    }

    fn reduced(v: &[C64], n: usize, site: usize) -> Mat2 {
        let b = bit_of(n, site);
        let mut r = Mat2::zeros();
        for i in 0..v.len() {
            if i & b == 0 {
                let (x0, x1) = (v[i], v[i | b]);
                r[(0, 0)] += x0 * x0.conj();
                r[(0, 1)] += x0 * x1.conj();
                r[(1, 0)] += x1 * x0.conj();
                r[(1, 1)] += x1 * x1.conj();
            }
        }
        r
    }

    fn conditional(&self, v: &[C64], site: usize) -> Result<Vec<f64>> {
        let n = self.ket.n_qubits();
        let r = Self::reduced(v, n, site);
        let total = (r[(0, 0)] + r[(1, 1)]).re;
        let mut w: Vec<f64> = self
            .povm
            .elements()
            .iter()
            .map(|m| (m * r).trace().re / total)
            .collect();
        for x in w.iter_mut() {
            if *x < 0.0 {
                if *x < -1e-9 {
                    return Err(Error::NegativeProbability { site, value: *x });
                }
                *x = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Ok(w)
    }

    fn born(&self, a: &[u8]) -> f64 {
        let n = self.ket.n_qubits();
        let mut v = self.ket.amplitudes().to_vec();
        for (site, &x) in a.iter().enumerate() {
            Self::apply_site(&mut v, n, site, &self.povm.sqrt_elements()[x as usize]);
        }
        v.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl OutcomeDistribution for DenseKetDistribution {
    fn n_sites(&self) -> usize {
        self.ket.n_qubits()
    }

    fn m(&self) -> usize {
        self.povm.m()
    }

    fn log_prob(&self, a: &[u8]) -> f64 {
        if check_string(a, self.n_sites(), self.m()).is_err() {
            return f64::NEG_INFINITY;
        }
        match &self.table {
            Some(t) => t.log_prob(a),
            None => self.born(a).ln(),
        }
    }

    fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledOutcome>> {
        if let Some(t) = &self.table {
            return t.sample_batch(count, rng);
        }
        let n = self.ket.n_qubits();
        (0..count)
            .map(|_| {
                let mut v = self.ket.amplitudes().to_vec();
                let mut outcome = Vec::with_capacity(n);
                let mut log_prob = 0.0;
                for site in 0..n {
                    let cond = self.conditional(&v, site)?;
                    let a = draw_index(&cond, 1.0, rng);
                    log_prob += cond[a].ln();
                    outcome.push(a as u8);
                    Self::apply_site(&mut v, n, site, &self.povm.sqrt_elements()[a]);
                }
                Ok(SampledOutcome { outcome, log_prob })
            })
            .collect()
    }

    fn to_table(&self) -> Result<crate::povm::ProbabilityTable> {
        match &self.table {
            Some(t) => Ok(t.table().clone()),
            None => Err(Error::SizeGuard("outcome table too large".into())),
        }
    }
}
