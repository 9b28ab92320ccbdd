//! Restarted Lanczos with full reorthogonalization for the lowest eigenpair of
//! a real symmetric operator.

use nalgebra as na;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hamiltonian::{build_hamiltonian, HamiltonianSpec};
use super::DenseKet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Total matrix-vector products allowed.
    pub max_iterations: usize,
    /// Krylov basis size before restarting from the current Ritz vector.
    pub max_basis: usize,
    /// Required residual `‖Hψ - Eψ‖`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            max_basis: 160,
            tolerance: 1e-8,
            seed: 0x5eed_1a2c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub ket: DenseKet,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Lowest eigenpair of the operator `apply` on `R^dim`.
pub fn lanczos_lowest(
    dim: usize,
    apply: impl Fn(&[f64], &mut [f64]),
    opts: &LanczosOptions,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut start);
    let mut hv = vec![0.0; dim];

    if dim == 1 {
        apply(&start, &mut hv);
        return Ok((start, hv[0], 0.0, 1));
    }

    let mut iterations = 0;
    let mut best = (start.clone(), f64::INFINITY, f64::INFINITY);
    while iterations < opts.max_iterations {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let y = loop {
            let k = basis.len() - 1;
            apply(&basis[k], &mut hv);
            iterations += 1;
            let alpha = dot(&basis[k], &hv);
            alphas.push(alpha);
            let mut w = hv.clone();
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                }
            }
            let beta = normalize(&mut w);

            let m = alphas.len();
            let check = m % 8 == 0 || beta < 1e-12 || m >= opts.max_basis.min(dim) || iterations >= opts.max_iterations;
            if check {
                let t = na::DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        alphas[i]
                    } else if i + 1 == j || j + 1 == i {
                        betas[i.min(j)]
                    } else {
                        0.0
                    }
                });
                let eig = t.symmetric_eigen();
                let (imin, _) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                let y = eig.eigenvectors.column(imin).into_owned();
                let estimate = (beta * y[m - 1]).abs();
                if estimate < 0.1 * opts.tolerance || beta < 1e-12 || m >= opts.max_basis.min(dim) || iterations >= opts.max_iterations {
                    break y;
                }
            }
            betas.push(beta);
            basis.push(w);
        };

        let mut psi = vec![0.0; dim];
        for (coef, b) in y.iter().zip(&basis) {
            axpy(*coef, b, &mut psi);
        }
        normalize(&mut psi);
        apply(&psi, &mut hv);
        iterations += 1;
        let energy = dot(&psi, &hv);
        axpy(-energy, &psi, &mut hv);
        let residual = dot(&hv, &hv).sqrt();
        if residual < best.2 {
            best = (psi.clone(), energy, residual);
        }
        if residual <= opts.tolerance {
            return Ok((psi, energy, residual, iterations));
        }
        start = psi;
    }
    Err(Error::NoConvergence {
        iterations,
        residual: best.2,
    })
}

/// Ground state of a lattice Hamiltonian by matrix-free Lanczos.
pub fn ground_state(spec: &HamiltonianSpec, opts: &LanczosOptions) -> Result<GroundState> {
    let h = build_hamiltonian(spec)?;
    let (psi, energy, residual, iterations) = lanczos_lowest(h.dim(), |v, out| h.apply(v, out), opts)?;
    Ok(GroundState {
        ket: DenseKet::from_real(h.n_sites(), &psi)?,
        energy,
        residual,
        iterations,
    })
}
