use nalgebra as na;
use serde::{Deserialize, Serialize};

use super::bit_of;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

fn default_boundary_open() -> Boundary {
    Boundary::Open
}

fn default_boundary_periodic() -> Boundary {
    Boundary::Periodic
}

/// Lattice spin Hamiltonians with real matrix elements in the computational basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianSpec {
    /// `H = J Σ_<ij> Z_i Z_j + h Σ_i X_i` on a chain.
    Tfim {
        n: usize,
        j: f64,
        h: f64,
        #[serde(default = "default_boundary_open")]
        boundary: Boundary,
    },
    /// `H = Σ_<ij> σ_i·σ_j` on an `L×L` triangular lattice, sites numbered
    /// `i = n1·L + n2` at position `n1·a1 + n2·a2`.
    HeisenbergTriangular {
        l: usize,
        #[serde(default = "default_boundary_periodic")]
        boundary: Boundary,
    },
}

impl HamiltonianSpec {
    pub fn n_sites(&self) -> usize {
        match self {
            HamiltonianSpec::Tfim { n, .. } => *n,
            HamiltonianSpec::HeisenbergTriangular { l, .. } => l * l,
        }
    }

    /// Nearest-neighbour bonds `(i, j)` with `i < j`, sorted and deduplicated.
    pub fn edges(&self) -> Result<Vec<(usize, usize)>> {
        let mut edges = Vec::new();
        match *self {
            HamiltonianSpec::Tfim { n, boundary, .. } => {
                if n < 2 {
                    return Err(Error::SizeGuard(format!("TFIM chain needs N ≥ 2, got {n}")));
                }
                for i in 0..n - 1 {
                    edges.push((i, i + 1));
                }
                if boundary == Boundary::Periodic && n > 2 {
                    edges.push((0, n - 1));
                }
            }
            HamiltonianSpec::HeisenbergTriangular { l, boundary } => {
                if l < 2 {
                    return Err(Error::SizeGuard(format!("triangular lattice needs L ≥ 2, got {l}")));
                }
                if boundary == Boundary::Periodic && l < 3 {
                    return Err(Error::SizeGuard("periodic triangular lattice needs L ≥ 3".into()));
                }
                let l = l as isize;
                let site = |n1: isize, n2: isize| -> Option<usize> {
                    match boundary {
                        Boundary::Periodic => Some((n1.rem_euclid(l) * l + n2.rem_euclid(l)) as usize),
                        Boundary::Open => {
                            ((0..l).contains(&n1) && (0..l).contains(&n2)).then(|| (n1 * l + n2) as usize)
                        }
                    }
                };
                // neighbours along a1, a2 and a2 - a1
                for n1 in 0..l {
                    for n2 in 0..l {
                        let i = site(n1, n2).unwrap();
                        for (d1, d2) in [(1, 0), (0, 1), (-1, 1)] {
                            if let Some(j) = site(n1 + d1, n2 + d2) {
                                edges.push((i.min(j), i.max(j)));
                            }
                        }
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(edges)
    }
}

/// Matrix-free Hamiltonian acting on real vectors of length `2^N`.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    spec: HamiltonianSpec,
    n: usize,
    edges: Vec<(usize, usize)>,
}

pub fn build_hamiltonian(spec: &HamiltonianSpec) -> Result<Hamiltonian> {
    let n = spec.n_sites();
    if n > super::MAX_KET_QUBITS {
        return Err(Error::SizeGuard(format!("{n} sites exceeds the dense limit of {}", super::MAX_KET_QUBITS)));
    }
    Ok(Hamiltonian {
        spec: spec.clone(),
        n,
        edges: spec.edges()?,
    })
}

impl Hamiltonian {
    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    /// `out = H · v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(v.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        let masks: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j)| (bit_of(n, i), bit_of(n, j))).collect();
        match self.spec {
            HamiltonianSpec::Tfim { j, h, .. } => {
                let flips: Vec<usize> = (0..n).map(|s| bit_of(n, s)).collect();
                for (idx, o) in out.iter_mut().enumerate() {
                    let mut diag = 0.0;
                    for &(mi, mj) in &masks {
                        diag += if ((idx & mi) == 0) == ((idx & mj) == 0) { j } else { -j };
                    }
                    let mut acc = diag * v[idx];
                    if h != 0.0 {
                        for &f in &flips {
                            acc += h * v[idx ^ f];
                        }
                    }
                    *o = acc;
                }
            }
            HamiltonianSpec::HeisenbergTriangular { .. } => {
                // σ·σ = ZZ + 2(σ⁺σ⁻ + σ⁻σ⁺): diagonal ±1, and an exchange of
                // amplitude 2 between anti-aligned pairs.
                for (idx, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &(mi, mj) in &masks {
                        let aligned = ((idx & mi) == 0) == ((idx & mj) == 0);
                        if aligned {
                            acc += v[idx];
                        } else {
                            acc += 2.0 * v[idx ^ mi ^ mj] - v[idx];
                        }
                    }
                    *o = acc;
                }
            }
        }
    }

    /// `⟨v|H|v⟩` for a real vector.
    pub fn expectation(&self, v: &[f64]) -> f64 {
        let mut hv = vec![0.0; v.len()];
        self.apply(v, &mut hv);
        v.iter().zip(&hv).map(|(a, b)| a * b).sum()
    }

    /// Explicit dense matrix, assembled column by column from `apply`.
    pub fn to_dense(&self) -> Result<na::DMatrix<f64>> {
        if self.n > 12 {
            return Err(Error::SizeGuard(format!("dense assembly limited to 12 sites, got {}", self.n)));
        }
        let d = self.dim();
        let mut m = na::DMatrix::<f64>::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for k in 0..d {
            e[k] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(k).copy_from_slice(&col);
            e[k] = 0.0;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{pauli, MAX_KET_QUBITS};
    use crate::povm::Mat2;
    use num_complex::Complex64 as C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent assembly from explicit Kronecker products of Pauli matrices.
    fn kron_oracle(spec: &HamiltonianSpec) -> na::DMatrix<f64> {
        let n = spec.n_sites();
        let term = |ops: &[(usize, char)]| -> na::DMatrix<C64> {
            let mut out = na::DMatrix::<C64>::identity(1, 1);
            for s in 0..n {
                let op: Mat2 = ops.iter().find(|(site, _)| *site == s).map_or(Mat2::identity(), |(_, k)| pauli(*k));
                out = out.kronecker(&na::DMatrix::from_fn(2, 2, |r, c| op[(r, c)]));
            }
            out
        };
        let d = 1 << n;
        let mut h = na::DMatrix::<C64>::zeros(d, d);
        let edges = spec.edges().unwrap();
        match *spec {
            HamiltonianSpec::Tfim { j, h: field, .. } => {
                for &(a, b) in &edges {
                    h += term(&[(a, 'z'), (b, 'z')]) * C64::new(j, 0.0);
                }
                for s in 0..n {
                    h += term(&[(s, 'x')]) * C64::new(field, 0.0);
                }
            }
            HamiltonianSpec::HeisenbergTriangular { .. } => {
                for &(a, b) in &edges {
                    for k in ['x', 'y', 'z'] {
                        h += term(&[(a, k), (b, k)]);
                    }
                }
            }
        }
        assert!(h.iter().all(|z| z.im.abs() < 1e-14));
        h.map(|z| z.re)
    }

    fn sorted_eigs(m: &na::DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    #[test]
    fn tfim_two_sites_no_field() {
        let spec = HamiltonianSpec::Tfim { n: 2, j: 1.0, h: 0.0, boundary: Boundary::Open };
        let ev = sorted_eigs(&build_hamiltonian(&spec).unwrap().to_dense().unwrap());
        for (a, b) in ev.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tfim_two_sites_critical() {
        let spec = HamiltonianSpec::Tfim { n: 2, j: 1.0, h: 1.0, boundary: Boundary::Open };
        let dense = build_hamiltonian(&spec).unwrap().to_dense().unwrap();
        let pattern = na::DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 1.0, 1.0, 1.0],
        );
        assert!((&dense - &pattern).amax() < 1e-15);
        // Z⊗Z + X⊗1 + 1⊗X has spectrum {-√5, -1, 1, √5}
        let ev = sorted_eigs(&dense);
        assert!((ev[0] + 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_pair_singlet() {
        // two-site open strip with L = 2 has more than one bond; build the pair directly
        let spec = HamiltonianSpec::HeisenbergTriangular { l: 2, boundary: Boundary::Open };
        let edges = spec.edges().unwrap();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        let pair = Hamiltonian { spec: spec.clone(), n: 2, edges: vec![(0, 1)] };
        let ev = sorted_eigs(&pair.to_dense().unwrap());
        for (a, b) in ev.iter().zip([-3.0, 1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn triangular_periodic_edges() {
        let spec = HamiltonianSpec::HeisenbergTriangular { l: 3, boundary: Boundary::Periodic };
        let edges = spec.edges().unwrap();
        assert_eq!(edges.len(), 27);
        let mut degree = [0; 9];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        assert!(degree.iter().all(|&d| d == 6));
        let spec4 = HamiltonianSpec::HeisenbergTriangular { l: 4, boundary: Boundary::Periodic };
        assert_eq!(spec4.edges().unwrap().len(), 48);
        assert!(HamiltonianSpec::HeisenbergTriangular { l: 2, boundary: Boundary::Periodic }.edges().is_err());
    }

    #[test]
    fn matrix_free_matches_kronecker_assembly() {
        let specs = [
            HamiltonianSpec::Tfim { n: 6, j: 1.0, h: 0.7, boundary: Boundary::Open },
            HamiltonianSpec::Tfim { n: 5, j: -0.3, h: 1.2, boundary: Boundary::Periodic },
            HamiltonianSpec::HeisenbergTriangular { l: 2, boundary: Boundary::Open },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in specs {
            let h = build_hamiltonian(&spec).unwrap();
            let oracle = kron_oracle(&spec);
            for _ in 0..20 {
                let v: Vec<f64> = (0..h.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
                let mut out = vec![0.0; h.dim()];
                h.apply(&v, &mut out);
                let expected = &oracle * na::DVector::from_column_slice(&v);
                for (a, b) in out.iter().zip(expected.iter()) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn matrix_free_matches_dense_for_triangular_3x3() {
        let spec = HamiltonianSpec::HeisenbergTriangular { l: 3, boundary: Boundary::Periodic };
        let h = build_hamiltonian(&spec).unwrap();
        let dense = h.to_dense().unwrap();
        let oracle = kron_oracle(&spec);
        assert!((&dense - &oracle).amax() < 1e-12);
    }

    #[test]
    fn size_guard() {
        let spec = HamiltonianSpec::Tfim { n: MAX_KET_QUBITS + 1, j: 1.0, h: 1.0, boundary: Boundary::Open };
        assert!(build_hamiltonian(&spec).is_err());
        let spec = HamiltonianSpec::Tfim { n: 1, j: 1.0, h: 1.0, boundary: Boundary::Open };
        assert!(build_hamiltonian(&spec).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = r#"{"kind":"tfim","n":10,"j":1.0,"h":1.0}"#;
        let spec: HamiltonianSpec = serde_json::from_str(s).unwrap();
        assert_eq!(spec, HamiltonianSpec::Tfim { n: 10, j: 1.0, h: 1.0, boundary: Boundary::Open });
        let s = r#"{"kind":"heisenberg_triangular","l":3}"#;
        let spec: HamiltonianSpec = serde_json::from_str(s).unwrap();
        assert_eq!(spec.n_sites(), 9);
    }
}
