//! Figures of merit: KL divergence, classical fidelity, Q-coefficient
//! observable estimation, and the MPS squared-fidelity estimator.

use nalgebra as na;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::{quantum_fidelity, DenseDensityMatrix, LocalObservable};
use crate::distribution::{OutcomeDistribution, SampledOutcome};
use crate::error::{Error, Result};
use crate::povm::{full_probability_table, index_string, Mat2, ProbabilityTable, SingleQubitPovm};
use crate::reconstruction::reconstruct_density_matrix;
use crate::tn::{Mps, ProbabilityChain};

/// Model probabilities below this are treated as a degenerate model.
const MIN_MODEL_PROB: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub mean: f64,
    /// `sqrt(variance / n_samples)`
    pub stderr: f64,
    pub n_samples: usize,
    /// Unbiased sample variance of the per-sample values.
    pub variance: f64,
}

impl EstimatorResult {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(Self { mean, stderr: (variance / n as f64).sqrt(), n_samples: n, variance })
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Standard `D(P‖Q) = Σ P log(P/Q)`; `+∞` where the model assigns zero mass
/// to an outcome with `P > 0`.
pub fn kl_divergence_exact(p: &ProbabilityTable, model: &dyn OutcomeDistribution) -> Result<f64> {
    check_shape(p, model)?;
    let (n, m) = (p.n_sites(), p.m());
    let support: Vec<usize> = (0..p.probs().len()).filter(|&i| p.probs()[i] > 0.0).collect();
    let strings: Vec<Vec<u8>> = support.iter().map(|&i| index_string(i, m, n)).collect();
    let logq = model.log_prob_many(&strings);
    let mut kl = 0.0;
    for (&i, lq) in support.iter().zip(logq) {
        if lq == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        let pi = p.probs()[i];
        kl += pi * (pi.ln() - lq);
    }
    Ok(kl)
}

fn check_shape(p: &ProbabilityTable, model: &dyn OutcomeDistribution) -> Result<()> {
    if p.n_sites() != model.n_sites() || p.m() != model.m() {
        return Err(Error::DimensionMismatch(format!(
            "table over {}^{} outcomes vs model over {}^{}",
            p.m(),
            p.n_sites(),
            model.m(),
            model.n_sites()
        )));
    }
    Ok(())
}

/// Bhattacharyya coefficient `Σ √(P Q)` of two tables.
pub fn classical_fidelity_exact(p: &ProbabilityTable, q: &ProbabilityTable) -> Result<f64> {
    if p.n_sites() != q.n_sites() || p.m() != q.m() {
        return Err(Error::DimensionMismatch("tables of different shape".into()));
    }
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a * b).sqrt()).sum())
}

/// Monte Carlo `F_C = E_{a∼model} √(P(a)/P_model(a))` from model samples.
pub fn classical_fidelity_from_samples(
    reference: &dyn OutcomeDistribution,
    samples: &[SampledOutcome],
) -> Result<EstimatorResult> {
    let strings: Vec<Vec<u8>> = samples.iter().map(|s| s.outcome.clone()).collect();
    let logp = reference.log_prob_many(&strings);
    let mut values = Vec::with_capacity(samples.len());
    for (s, lp) in samples.iter().zip(logp) {
        if s.log_prob < MIN_MODEL_PROB.ln() {
            return Err(Error::DegenerateModel(s.log_prob.exp()));
        }
        values.push(if s.log_prob == lp { 1.0 } else { (0.5 * (lp - s.log_prob)).exp() });
    }
    EstimatorResult::from_values(&values)
}

/// Draws `n_samples` from `model` and estimates `F_C` against `reference`.
pub fn classical_fidelity(
    reference: &dyn OutcomeDistribution,
    model: &dyn OutcomeDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    if reference.n_sites() != model.n_sites() || reference.m() != model.m() {
        return Err(Error::DimensionMismatch("reference and model differ in shape".into()));
    }
    classical_fidelity_from_samples(reference, &model.sample(n_samples, seed)?)
}

/// Expansion `O = Σ_a Q_O(a) M^(a)` restricted to the support of `O`; sites off
/// the support expand the identity with coefficient 1 for every outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct QCoefficients {
    pub support: Vec<usize>,
    pub m: usize,
    /// indexed by the support outcomes in base `m`, first support site most significant
    pub values: Vec<C64>,
}

impl QCoefficients {
    #[inline]
    pub fn value(&self, a: &[u8]) -> C64 {
        let idx = self.support.iter().fold(0usize, |acc, &s| acc * self.m + a[s] as usize);
        self.values[idx]
    }

    /// `Σ_a Q(a) ⊗M^(a)` on the support sites.
    pub fn reconstruct_operator(&self, povm: &SingleQubitPovm) -> na::DMatrix<C64> {
        let k = self.support.len();
        let d = 1usize << k;
        let mut out = na::DMatrix::<C64>::zeros(d, d);
        for (idx, &q) in self.values.iter().enumerate() {
            let a = index_string(idx, self.m, k);
            out += kron_all(a.iter().map(|&x| &povm.elements()[x as usize])) * q;
        }
        out
    }
}

fn kron_all<'a>(ops: impl Iterator<Item = &'a Mat2>) -> na::DMatrix<C64> {
    let mut acc = na::DMatrix::<C64>::from_element(1, 1, C64::new(1.0, 0.0));
    for op in ops {
        let o = na::DMatrix::from_fn(2, 2, |i, j| op[(i, j)]);
        acc = acc.kronecker(&o);
    }
    acc
}

/// Solves `Tr[O M^(a')] = Σ_a Q(a) T[a,a']` on the support with the factorized
/// inverse overlap.
pub fn q_coefficients(obs: &LocalObservable, povm: &SingleQubitPovm) -> Result<QCoefficients> {
    let tinv = povm.overlap_inverse().ok_or_else(|| Error::Unsupported {
        povm: povm.id().to_string(),
        reason: "observable estimation needs an invertible overlap matrix".into(),
    })?;
    let k = obs.support().len();
    let m = povm.m();
    let len = m.pow(k as u32);
    let op = obs.operator();
    // t[a'] = Tr[O ⊗M^(a'_i)]
    let mut cur: Vec<C64> = (0..len)
        .map(|idx| {
            let a = index_string(idx, m, k);
            let mm = kron_all(a.iter().map(|&x| &povm.elements()[x as usize]));
            (op * mm).trace()
        })
        .collect();
    // apply T⁻¹ along each support axis
    for axis in 0..k {
        let stride = m.pow((k - 1 - axis) as u32);
        let mut next = vec![C64::new(0.0, 0.0); len];
        for (idx, slot) in next.iter_mut().enumerate() {
            let a = (idx / stride) % m;
            let base = idx - a * stride;
            for ap in 0..m {
                *slot += cur[base + ap * stride] * tinv[(ap, a)];
            }
        }
        cur = next;
    }
    Ok(QCoefficients { support: obs.support().to_vec(), m, values: cur })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub result: EstimatorResult,
    /// Mean imaginary part; zero up to roundoff for Hermitian observables.
    pub imag_mean: f64,
}

impl ObservableEstimate {
    pub fn imag_consistent(&self) -> bool {
        self.imag_mean.abs() <= (3.0 * self.result.stderr).max(1e-12)
    }
}

/// Sample mean of `Q_O` over outcome strings.
pub fn estimate_observable(samples: &[Vec<u8>], q: &QCoefficients) -> Result<ObservableEstimate> {
    if let Some(&s) = q.support.iter().find(|&&s| samples.iter().any(|a| s >= a.len())) {
        return Err(Error::DimensionMismatch(format!("support site {s} beyond the strings")));
    }
    let vals: Vec<C64> = samples.iter().map(|a| q.value(a)).collect();
    let re: Vec<f64> = vals.iter().map(|v| v.re).collect();
    let imag_mean = vals.iter().map(|v| v.im).sum::<f64>() / vals.len().max(1) as f64;
    Ok(ObservableEstimate { result: EstimatorResult::from_values(&re)?, imag_mean })
}

/// `Σ_a P(a) Q_O(a)` with exact weights.
pub fn exact_observable(p: &ProbabilityTable, q: &QCoefficients) -> C64 {
    let (n, m) = (p.n_sites(), p.m());
    p.probs()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(i, &w)| q.value(&index_string(i, m, n)) * w)
        .sum()
}

/// Estimates `F² = ⟨Ψ|ρ_model|Ψ⟩ = E_{a∼model}[⟨Ψ| ⊗D^(a_i) |Ψ⟩]` with the dual
/// frame `D^(a) = Σ_{a'} T⁻¹[a,a'] M^(a')`, contracted through the MPS.
pub fn mps_fidelity_estimate(
    model: &dyn OutcomeDistribution,
    target: &Mps,
    povm: &SingleQubitPovm,
    n_samples: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    if model.n_sites() != target.n_sites() || model.m() != povm.m() {
        return Err(Error::DimensionMismatch("model does not match target and POVM".into()));
    }
    let chain = ProbabilityChain::with_operators(&target.to_mpo(), povm.duals()?);
    let samples = model.sample(n_samples, seed)?;
    let values = samples
        .iter()
        .map(|s| chain.probability(&s.outcome))
        .collect::<Result<Vec<f64>>>()?;
    EstimatorResult::from_values(&values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub classical: f64,
    pub quantum: f64,
    pub holds: bool,
}

/// Exact `F_C` between the outcome tables of `rho` and `model`, and quantum
/// `F` between `rho` and the model's dense reconstruction.
pub fn fc_geq_f_check(
    model: &dyn OutcomeDistribution,
    rho: &DenseDensityMatrix,
    povm: &SingleQubitPovm,
) -> Result<BoundCheck> {
    let exact = full_probability_table(povm, rho)?;
    let table = model.to_table()?;
    let classical = classical_fidelity_exact(&exact, &table)?;
    let (rec, _) = reconstruct_density_matrix(&table, povm)?;
    let quantum = quantum_fidelity(rho, &rec)?.value;
    Ok(BoundCheck { classical, quantum, holds: classical >= quantum - 1e-8 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{expectation_rho, ghz_ket, DenseKet};
    use crate::distribution::TableDistribution;
    use crate::povm::{make_povm, PovmId};
    use crate::tn::ghz_mps;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(m: usize, probs: Vec<f64>) -> ProbabilityTable {
        ProbabilityTable::new(1, m, probs).unwrap()
    }

    #[test]
    fn kl_cases() {
        let p = table(4, vec![0.25; 4]);
        assert!(kl_divergence_exact(&p, &TableDistribution::new(p.clone())).unwrap().abs() < 1e-15);
        let q = vec![0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        let expect: f64 = q.iter().map(|qi| 0.25 * (0.25f64 / qi).ln()).sum();
        let got = kl_divergence_exact(&p, &TableDistribution::new(table(4, q))).unwrap();
        assert!((got - expect).abs() < 1e-14);
        let got = kl_divergence_exact(&table(2, vec![1.0, 0.0]), &TableDistribution::new(table(2, vec![0.5, 0.5])));
        assert!((got.unwrap() - 2f64.ln()).abs() < 1e-15);
        let got = kl_divergence_exact(&table(2, vec![0.5, 0.5]), &TableDistribution::new(table(2, vec![1.0, 0.0])));
        assert_eq!(got.unwrap(), f64::INFINITY);
    }

    #[test]
    fn classical_fidelity_cases() {
        let f = |a: Vec<f64>, b: Vec<f64>| classical_fidelity_exact(&table(2, a), &table(2, b)).unwrap();
        assert!((f(vec![0.3, 0.7], vec![0.3, 0.7]) - 1.0).abs() < 1e-15);
        assert_eq!(f(vec![1.0, 0.0], vec![0.0, 1.0]), 0.0);
        assert!((f(vec![0.5, 0.5], vec![1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_fidelity() {
        let povm = make_povm(PovmId::Tetra);
        let bell = ProbabilityChain::from_mps(&ghz_mps(2).unwrap(), &povm);
        let same = classical_fidelity(&bell, &bell, 10_000, 1).unwrap();
        assert_eq!((same.mean, same.stderr), (1.0, 0.0));
        let uniform = TableDistribution::new(ProbabilityTable::uniform(2, 4).unwrap());
        let est = classical_fidelity(&bell, &uniform, 100_000, 2).unwrap();
        let exact = classical_fidelity_exact(&bell.to_table().unwrap(), uniform.table()).unwrap();
        assert!(est.within(exact, 3.0), "{est:?} vs {exact}");
        let a = TableDistribution::new(table(4, vec![0.5, 0.5, 0.0, 0.0]));
        let b = TableDistribution::new(table(4, vec![0.0, 0.0, 0.5, 0.5]));
        assert_eq!(classical_fidelity(&a, &b, 1000, 3).unwrap().mean, 0.0);
    }

    #[test]
    fn both_fidelity_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let w1: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let w2: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let p = TableDistribution::new(ProbabilityTable::from_weights(2, 4, w1).unwrap());
            let q = TableDistribution::new(ProbabilityTable::from_weights(2, 4, w2).unwrap());
            let a = classical_fidelity(&p, &q, 20_000, 1).unwrap();
            let b = classical_fidelity(&q, &p, 20_000, 2).unwrap();
            let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            assert!((a.mean - b.mean).abs() <= 3.0 * se);
        }
    }

    #[test]
    fn stderr_scales_with_sample_count() {
        let povm = make_povm(PovmId::Tetra);
        let bell = ProbabilityChain::from_mps(&ghz_mps(2).unwrap(), &povm);
        let uniform = TableDistribution::new(ProbabilityTable::uniform(2, 4).unwrap());
        let se: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&n| classical_fidelity(&bell, &uniform, n, 7).unwrap().stderr)
            .collect();
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.5, "{se:?}");
        }
    }

    #[test]
    fn q_coefficients_reconstruct_observables() {
        let tetra = make_povm(PovmId::Tetra);
        let id = LocalObservable::new(vec![0], na::DMatrix::identity(2, 2)).unwrap();
        let q = q_coefficients(&id, &tetra).unwrap();
        assert!(q.values.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));

        let z = LocalObservable::pauli(0, 'z');
        let q = q_coefficients(&z, &tetra).unwrap();
        let expected = na::DMatrix::from_fn(2, 2, |i, j| crate::dense::pauli('z')[(i, j)]);
        assert!((q.reconstruct_operator(&tetra) - &expected).camax() < 1e-12);
        // 6𝟙 - J applied to Tr[σz M] = (1/2, -1/6, -1/6, -1/6)
        let t = [0.5, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0];
        for a in 0..4 {
            let v: f64 = (0..4).map(|b| if a == b { 5.0 } else { -1.0 } * t[b]).sum();
            assert!((q.values[a].re - v).abs() < 1e-12);
        }

        let pauli4 = make_povm(PovmId::Pauli4);
        let zz = LocalObservable::pauli_pair(0, 'z', 1, 'z');
        let q = q_coefficients(&zz, &pauli4).unwrap();
        assert!((q.reconstruct_operator(&pauli4) - zz.operator()).camax() < 1e-10);

        let err = q_coefficients(&z, &make_povm(PovmId::Pauli6)).unwrap_err();
        assert!(matches!(err, Error::Unsupported { .. }));
    }

    fn random_hermitian(k: usize, rng: &mut ChaCha8Rng) -> na::DMatrix<C64> {
        let d = 1 << k;
        let g = na::DMatrix::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        (&g + g.adjoint()) * C64::new(0.5, 0.0)
    }

    #[test]
    fn exact_weights_are_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for id in [PovmId::Tetra, PovmId::Pauli4] {
            let povm = make_povm(id);
            for trial in 0..20 {
                let n = 2 + trial % 3;
                let rho = DenseDensityMatrix::random(n, &mut rng).unwrap();
                let p = full_probability_table(&povm, &rho).unwrap();
                let k = 1 + trial % 2;
                let mut support: Vec<usize> = (0..n).collect();
                support.rotate_left(trial % n);
                support.truncate(k);
                let obs = LocalObservable::new(support, random_hermitian(k, &mut rng)).unwrap();
                let q = q_coefficients(&obs, &povm).unwrap();
                let est = exact_observable(&p, &q);
                let exact = expectation_rho(&rho, &obs).unwrap();
                assert!((est.re - exact).abs() < 1e-10 && est.im.abs() < 1e-10, "{id} {trial}");
            }
        }
    }

    #[test]
    fn bell_zz_from_samples() {
        let povm = make_povm(PovmId::Tetra);
        let bell = ProbabilityChain::from_mps(&ghz_mps(2).unwrap(), &povm);
        let samples: Vec<Vec<u8>> = bell.sample(100_000, 5).unwrap().into_iter().map(|s| s.outcome).collect();
        let q = q_coefficients(&LocalObservable::pauli_pair(0, 'z', 1, 'z'), &povm).unwrap();
        let est = estimate_observable(&samples, &q).unwrap();
        assert!(est.result.within(1.0, 3.0), "{est:?}");
        assert!(est.imag_consistent());
        let r = est.result;
        assert!((r.stderr - (r.variance / r.n_samples as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mps_fidelity_self_and_dense() {
        let povm = make_povm(PovmId::Tetra);
        let bell_mps = ghz_mps(2).unwrap();
        let bell = ProbabilityChain::from_mps(&bell_mps, &povm);
        let f2 = mps_fidelity_estimate(&bell, &bell_mps, &povm, 100_000, 1).unwrap();
        assert!(f2.within(1.0, 3.0), "{f2:?}");

        // noisy model: depolarized Bell
        let noisy = crate::tn::depolarized_ghz_mpo(2, 0.3).unwrap();
        let model = ProbabilityChain::from_mpo(&noisy, &povm);
        let f2 = mps_fidelity_estimate(&model, &bell_mps, &povm, 200_000, 2).unwrap();
        let (rec, _) = reconstruct_density_matrix(&model.to_table().unwrap(), &povm).unwrap();
        let bell_rho = DenseDensityMatrix::from_ket(&ghz_ket(2).unwrap());
        let f = quantum_fidelity(&bell_rho, &rec).unwrap().value;
        assert!(f2.within(f * f, 3.0), "{f2:?} vs {}", f * f);
    }

    #[test]
    fn mps_fidelity_variance_grows() {
        let povm = make_povm(PovmId::Tetra);
        let mut last = 0.0;
        for n in [2, 4, 6, 8] {
            let mps = ghz_mps(n).unwrap();
            let model = ProbabilityChain::from_mps(&mps, &povm);
            let est = mps_fidelity_estimate(&model, &mps, &povm, 50_000, n as u64).unwrap();
            assert!(est.variance > last, "n={n}: {} <= {last}", est.variance);
            last = est.variance;
        }
    }

    #[test]
    fn bound_holds_on_random_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let povm = make_povm(PovmId::Tetra);
        for trial in 0..100 {
            let n = 1 + trial % 3;
            let target = if trial % 2 == 0 {
                DenseDensityMatrix::from_ket(&DenseKet::random(n, &mut rng).unwrap())
            } else {
                DenseDensityMatrix::random(n, &mut rng).unwrap()
            };
            let other = DenseDensityMatrix::random(n, &mut rng).unwrap();
            let w = rng.random::<f64>();
            let model_rho = target.mix(&other, w).unwrap();
            let model = TableDistribution::new(full_probability_table(&povm, &model_rho).unwrap());
            let check = fc_geq_f_check(&model, &target, &povm).unwrap();
            assert!(check.holds, "{trial}: {check:?}");
        }
        let bell = DenseDensityMatrix::from_ket(&ghz_ket(2).unwrap());
        let exact = TableDistribution::new(full_probability_table(&povm, &bell).unwrap());
        let c = fc_geq_f_check(&exact, &bell, &povm).unwrap();
        assert!((c.classical - 1.0).abs() < 1e-10 && (c.quantum - 1.0).abs() < 1e-8);
        let mixed = DenseDensityMatrix::maximally_mixed(2).unwrap();
        let exact = TableDistribution::new(full_probability_table(&povm, &mixed).unwrap());
        let c = fc_geq_f_check(&exact, &mixed, &povm).unwrap();
        assert!((c.classical - 1.0).abs() < 1e-10 && (c.quantum - 1.0).abs() < 1e-8);
    }
}
