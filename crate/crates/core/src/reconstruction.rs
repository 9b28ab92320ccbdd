//! Dense density-matrix reconstruction `ρ = Σ_a P(a) ⊗D^(a_i)` from an outcome
//! distribution, with physicality diagnostics and no positivity repair.

use nalgebra as na;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::{quantum_fidelity, DenseDensityMatrix, Fidelity};
use crate::distribution::OutcomeDistribution;
use crate::error::{Error, Result};
use crate::povm::{Mat2, ProbabilityTable, SingleQubitPovm};

pub const MAX_RECONSTRUCTION_QUBITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionDiagnostics {
    pub trace_deviation: f64,
    pub hermiticity_deviation: f64,
    pub min_eigenvalue: f64,
    /// Sum of the magnitudes of negative eigenvalues.
    pub negativity_mass: f64,
}

impl ReconstructionDiagnostics {
    pub fn of(rho: &DenseDensityMatrix) -> Self {
        let eig = rho.eigenvalues();
        Self {
            trace_deviation: (rho.matrix().trace() - C64::new(1.0, 0.0)).norm(),
            hermiticity_deviation: rho.hermiticity_deviation(),
            min_eigenvalue: eig.first().copied().unwrap_or(0.0),
            negativity_mass: eig.iter().filter(|&&l| l < 0.0).map(|l| -l).sum(),
        }
    }
}

/// Places `op ⊗ block` into `out`, scaled.
fn add_kron(out: &mut na::DMatrix<C64>, op: &Mat2, block: &na::DMatrix<C64>) {
    let d = block.nrows();
    for s in 0..2 {
        for sp in 0..2 {
            let w = op[(s, sp)];
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            let mut view = out.view_mut((s * d, sp * d), (d, d));
            view += block * w;
        }
    }
}

/// Contracts a table slice over the remaining sites, first remaining site
/// outermost.
fn contract(probs: &[f64], m: usize, sites: usize, duals: &[Mat2]) -> na::DMatrix<C64> {
    if sites == 0 {
        return na::DMatrix::from_element(1, 1, C64::new(probs[0], 0.0));
    }
    let d = 1usize << sites;
    let chunk = probs.len() / m;
    let mut out = na::DMatrix::<C64>::zeros(d, d);
    for (a, dual) in duals.iter().enumerate() {
        let part = &probs[a * chunk..(a + 1) * chunk];
        if part.iter().all(|&p| p == 0.0) {
            continue;
        }
        let inner = contract(part, m, sites - 1, duals);
        add_kron(&mut out, dual, &inner);
    }
    out
}

/// Linear inversion of an outcome table.
pub fn reconstruct_density_matrix(
    table: &ProbabilityTable,
    povm: &SingleQubitPovm,
) -> Result<(DenseDensityMatrix, ReconstructionDiagnostics)> {
    let duals = povm.duals()?;
    let n = table.n_sites();
    if n > MAX_RECONSTRUCTION_QUBITS {
        return Err(Error::SizeGuard(format!(
            "reconstruction limited to {MAX_RECONSTRUCTION_QUBITS} qubits, got {n}"
        )));
    }
    if table.m() != povm.m() {
        return Err(Error::DimensionMismatch(format!("table over {} outcomes for a {}-outcome POVM", table.m(), povm.m())));
    }
    let rho = DenseDensityMatrix::new_unchecked(n, contract(table.probs(), povm.m(), n, duals))?;
    let diag = ReconstructionDiagnostics::of(&rho);
    Ok((rho, diag))
}

/// Reconstruction from a model by enumerating its full table.
pub fn reconstruct_from_model(
    model: &dyn OutcomeDistribution,
    povm: &SingleQubitPovm,
) -> Result<(DenseDensityMatrix, ReconstructionDiagnostics)> {
    if model.n_sites() > MAX_RECONSTRUCTION_QUBITS {
        return Err(Error::SizeGuard(format!(
            "reconstruction limited to {MAX_RECONSTRUCTION_QUBITS} qubits, got {}",
            model.n_sites()
        )));
    }
    reconstruct_density_matrix(&model.to_table()?, povm)
}

/// Quantum fidelity between `rho_true` and the model's reconstruction;
/// negative eigenvalues are clamped inside the fidelity only.
pub fn reconstruction_fidelity(
    model: &dyn OutcomeDistribution,
    rho_true: &DenseDensityMatrix,
    povm: &SingleQubitPovm,
) -> Result<Fidelity> {
    let (rec, _) = reconstruct_from_model(model, povm)?;
    quantum_fidelity(rho_true, &rec)
}
