//! Dense kets and density matrices for small qubit counts.
//!
//! Basis convention: qubit 0 is the leftmost tensor factor and the most
//! significant bit of a basis index, so qubit `k` of `N` lives at bit
//! `N - 1 - k`.

mod hamiltonian;
mod lanczos;

pub use hamiltonian::{build_hamiltonian, Boundary, Hamiltonian, HamiltonianSpec};
pub use lanczos::{ground_state, lanczos_lowest, GroundState, LanczosOptions};

use nalgebra as na;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::povm::Mat2;

/// Largest qubit count handled by dense state vectors.
pub const MAX_KET_QUBITS: usize = 20;
/// Largest qubit count handled by dense density matrices.
pub const MAX_RHO_QUBITS: usize = 12;

#[inline]
pub(crate) fn bit_of(n: usize, site: usize) -> usize {
    1 << (n - 1 - site)
}

/// A normalized pure state on `N` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKet {
    n: usize,
    amps: Vec<C64>,
}

impl DenseKet {
    /// Normalizes and wraps amplitudes of length `2^N`.
    pub fn new(n: usize, mut amps: Vec<C64>) -> Result<Self> {
        if n == 0 || n > MAX_KET_QUBITS {
            return Err(Error::SizeGuard(format!("{n} qubits outside 1..={MAX_KET_QUBITS}")));
        }
        if amps.len() != 1 << n {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for {n} qubits",
                amps.len()
            )));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("zero vector".into()));
        }
        for a in amps.iter_mut() {
            *a /= norm;
        }
        Ok(Self { n, amps })
    }

    pub fn from_real(n: usize, amps: &[f64]) -> Result<Self> {
        Self::new(n, amps.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n.min(MAX_KET_QUBITS)];
        if index >= amps.len() {
            return Err(Error::InvalidArgument(format!("basis index {index} out of range")));
        }
        amps[index] = C64::new(1.0, 0.0);
        Self::new(n, amps)
    }

    /// Haar-like random state from complex Gaussian amplitudes.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let amps = (0..1usize << n.min(MAX_KET_QUBITS))
            .map(|_| C64::new(standard_normal(rng), standard_normal(rng)))
            .collect();
        Self::new(n, amps)
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &DenseKet) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }
}

/// `(|0..0⟩ + |1..1⟩)/√2`.
pub fn ghz_ket(n: usize) -> Result<DenseKet> {
    if !(2..=MAX_RHO_QUBITS).contains(&n) {
        return Err(Error::SizeGuard(format!("GHZ dense path needs 2 ≤ N ≤ {MAX_RHO_QUBITS}, got {n}")));
    }
    let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    amps[0] = C64::new(s, 0.0);
    amps[(1 << n) - 1] = C64::new(s, 0.0);
    DenseKet::new(n, amps)
}

/// A dense `2^N × 2^N` density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDensityMatrix {
    n: usize,
    matrix: na::DMatrix<C64>,
}

impl DenseDensityMatrix {
    /// Wraps a matrix after checking shape, Hermiticity and unit trace
    /// (both within 1e-10). Positivity is not checked here.
    pub fn new(n: usize, matrix: na::DMatrix<C64>) -> Result<Self> {
        let rho = Self::new_unchecked(n, matrix)?;
        let herm = rho.hermiticity_deviation();
        if herm > 1e-10 {
            return Err(Error::NotHermitian(herm));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("trace {tr} ≠ 1")));
        }
        Ok(rho)
    }

    /// Shape check only. Used for reconstructions, which carry their own
    /// diagnostics instead of being rejected.
    pub fn new_unchecked(n: usize, matrix: na::DMatrix<C64>) -> Result<Self> {
        if n == 0 || n > MAX_RHO_QUBITS {
            return Err(Error::SizeGuard(format!("{n} qubits outside 1..={MAX_RHO_QUBITS}")));
        }
        let d = 1usize << n;
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}×{} matrix for {n} qubits",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { n, matrix })
    }

    pub fn from_ket(ket: &DenseKet) -> Self {
        let v = na::DVector::from_column_slice(ket.amplitudes());
        Self {
            n: ket.n_qubits(),
            matrix: &v * v.adjoint(),
        }
    }

    pub fn maximally_mixed(n: usize) -> Result<Self> {
        let d = 1usize << n.min(MAX_RHO_QUBITS);
        Self::new(n, na::DMatrix::identity(d, d) / C64::new(d as f64, 0.0))
    }

    /// Random full-rank state `G G† / Tr[G G†]` with Gaussian `G`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let d = 1usize << n.min(MAX_RHO_QUBITS);
        let g = na::DMatrix::from_fn(d, d, |_, _| C64::new(standard_normal(rng), standard_normal(rng)));
        let m = &g * g.adjoint();
        let tr = m.trace();
        let mut rho = m / tr;
        symmetrize(&mut rho);
        Self::new(n, rho)
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn matrix(&self) -> &na::DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> na::DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// `max |ρ - ρ†|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut h = self.matrix.clone();
        symmetrize(&mut h);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Convex combination `w·self + (1-w)·other`.
    pub fn mix(&self, other: &DenseDensityMatrix, w: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch("mixing states of different size".into()));
        }
        Ok(Self {
            n: self.n,
            matrix: &self.matrix * C64::new(w, 0.0) + &other.matrix * C64::new(1.0 - w, 0.0),
        })
    }
}

pub(crate) fn symmetrize(m: &mut na::DMatrix<C64>) {
    let adj = m.adjoint();
    *m += adj;
    *m *= C64::new(0.5, 0.0);
}

/// Applies the single-qubit depolarizing channel
/// `ρ ↦ (1-p)ρ + (p/3)(XρX + YρY + ZρZ)` independently to every qubit.
pub fn depolarize(rho: &DenseDensityMatrix, p: f64) -> Result<DenseDensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("depolarizing probability {p} outside [0,1]")));
    }
    let n = rho.n;
    let d = rho.dim();
    let mut cur = rho.matrix.clone();
    // Summing X, Y, Z conjugations on one qubit: entries whose bits agree pick
    // up 2ρ[flip i, flip j] + ρ[i,j]; entries whose bits differ get -ρ[i,j].
    let same = 1.0 - p + p / 3.0;
    let cross = 2.0 * p / 3.0;
    let diff = 1.0 - 4.0 * p / 3.0;
    for site in 0..n {
        let mask = bit_of(n, site);
        let prev = cur.clone();
        for j in 0..d {
            for i in 0..d {
                cur[(i, j)] = if (i & mask) == (j & mask) {
                    prev[(i, j)] * same + prev[(i ^ mask, j ^ mask)] * cross
                } else {
                    prev[(i, j)] * diff
                };
            }
        }
    }
    Ok(DenseDensityMatrix { n, matrix: cur })
}

/// A Hermitian operator acting on a few qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservable {
    support: Vec<usize>,
    operator: na::DMatrix<C64>,
}

pub fn pauli(k: char) -> Mat2 {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match k {
        'x' => Mat2::new(z, o, o, z),
        'y' => Mat2::new(z, -i, i, z),
        'z' => Mat2::new(o, z, z, -o),
        _ => Mat2::identity(),
    }
}

fn mat2_dyn(m: &Mat2) -> na::DMatrix<C64> {
    na::DMatrix::from_fn(2, 2, |r, c| m[(r, c)])
}

impl LocalObservable {
    pub fn new(support: Vec<usize>, operator: na::DMatrix<C64>) -> Result<Self> {
        let k = support.len();
        if k == 0 || k > 10 {
            return Err(Error::InvalidArgument(format!("support of size {k}")));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != k {
            return Err(Error::InvalidArgument("repeated site in support".into()));
        }
        let d = 1usize << k;
        if operator.nrows() != d || operator.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}×{} operator on {k} sites",
                operator.nrows(),
                operator.ncols()
            )));
        }
        let dev = (&operator - operator.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { support, operator })
    }

    /// Single-site Pauli `σ^k_i` (`k ∈ {x,y,z}`; anything else is the identity).
    pub fn pauli(site: usize, k: char) -> Self {
        Self {
            support: vec![site],
            operator: mat2_dyn(&pauli(k)),
        }
    }

    /// Two-site product `σ^a_i σ^b_j`, collapsing to a one-site operator when `i == j`.
    pub fn pauli_pair(i: usize, a: char, j: usize, b: char) -> Self {
        if i == j {
            let op = pauli(a) * pauli(b);
            return Self {
                support: vec![i],
                operator: mat2_dyn(&op),
            };
        }
        let op = pauli(a).kronecker(&pauli(b));
        Self {
            support: vec![i, j],
            operator: na::DMatrix::from_fn(4, 4, |r, c| op[(r, c)]),
        }
    }

    /// `σ_i · σ_j = XX + YY + ZZ` (equal to `3·𝟙` when `i == j`).
    pub fn spin_dot(i: usize, j: usize) -> Self {
        let terms = ['x', 'y', 'z'].map(|k| Self::pauli_pair(i, k, j, k));
        let mut op = terms[0].operator.clone();
        op += &terms[1].operator;
        op += &terms[2].operator;
        Self {
            support: terms[0].support.clone(),
            operator: op,
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn operator(&self) -> &na::DMatrix<C64> {
        &self.operator
    }

    fn check_range(&self, n: usize) -> Result<()> {
        if let Some(&s) = self.support.iter().find(|&&s| s >= n) {
            return Err(Error::InvalidArgument(format!("support site {s} out of range for {n} qubits")));
        }
        Ok(())
    }

    /// Sub-index of basis state `idx` restricted to the support.
    fn sub_index(&self, n: usize, idx: usize) -> usize {
        self.support
            .iter()
            .fold(0, |acc, &s| (acc << 1) | usize::from(idx & bit_of(n, s) != 0))
    }

    fn with_sub_index(&self, n: usize, idx: usize, sub: usize) -> usize {
        let k = self.support.len();
        let mut out = idx;
        for (pos, &s) in self.support.iter().enumerate() {
            let bit = (sub >> (k - 1 - pos)) & 1;
            let mask = bit_of(n, s);
            out = if bit == 1 { out | mask } else { out & !mask };
        }
        out
    }
}

/// `⟨ψ|O|ψ⟩` (real part; imaginary part vanishes for Hermitian `O`).
pub fn expectation_ket(ket: &DenseKet, obs: &LocalObservable) -> Result<f64> {
    let n = ket.n_qubits();
    obs.check_range(n)?;
    let d = 1usize << obs.support.len();
    let amps = ket.amplitudes();
    let mut acc = C64::new(0.0, 0.0);
    for (idx, a) in amps.iter().enumerate() {
        let sub = obs.sub_index(n, idx);
        // (O ψ)[idx] = Σ_sub' O[sub, sub'] ψ[idx with sub']
        let mut opsi = C64::new(0.0, 0.0);
        for subp in 0..d {
            let w = obs.operator[(sub, subp)];
            if w != C64::new(0.0, 0.0) {
                opsi += w * amps[obs.with_sub_index(n, idx, subp)];
            }
        }
        acc += a.conj() * opsi;
    }
    Ok(acc.re)
}

/// `Tr[O ρ]` (real part).
pub fn expectation_rho(rho: &DenseDensityMatrix, obs: &LocalObservable) -> Result<f64> {
    let n = rho.n_qubits();
    obs.check_range(n)?;
    let d = 1usize << obs.support.len();
    let mut acc = C64::new(0.0, 0.0);
    for idx in 0..rho.dim() {
        let sub = obs.sub_index(n, idx);
        for subp in 0..d {
            let w = obs.operator[(sub, subp)];
            if w != C64::new(0.0, 0.0) {
                acc += w * rho.matrix[(obs.with_sub_index(n, idx, subp), idx)];
            }
        }
    }
    Ok(acc.re)
}

/// Either kind of dense state, for [`expectation`].
pub enum DenseState<'a> {
    Ket(&'a DenseKet),
    Rho(&'a DenseDensityMatrix),
}

pub fn expectation(state: DenseState<'_>, obs: &LocalObservable) -> Result<f64> {
    match state {
        DenseState::Ket(k) => expectation_ket(k, obs),
        DenseState::Rho(r) => expectation_rho(r, obs),
    }
}

/// Quantum fidelity together with the total magnitude of negative eigenvalues
/// that were clamped to zero while taking matrix square roots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub value: f64,
    pub clamped_mass: f64,
}

/// `F(ρ₁, ρ₂) = Tr √(√ρ₁ ρ₂ √ρ₁)` via Hermitian eigendecompositions.
pub fn quantum_fidelity(rho1: &DenseDensityMatrix, rho2: &DenseDensityMatrix) -> Result<Fidelity> {
    if rho1.n != rho2.n {
        return Err(Error::DimensionMismatch("fidelity between states of different size".into()));
    }
    if rho1.n > 10 {
        return Err(Error::SizeGuard(format!("fidelity limited to 10 qubits, got {}", rho1.n)));
    }
    for r in [rho1, rho2] {
        let dev = r.hermiticity_deviation();
        if dev > 1e-8 {
            return Err(Error::NotHermitian(dev));
        }
    }
    let mut clamped = 0.0;
    let sqrt_a = psd_sqrt(&rho1.matrix, &mut clamped);
    let sqrt_b = psd_sqrt(&rho2.matrix, &mut clamped);
    // F = ‖√ρ₁ √ρ₂‖₁, the sum of singular values
    let value = (&sqrt_a * &sqrt_b).singular_values().iter().sum();
    Ok(Fidelity {
        value,
        clamped_mass: clamped,
    })
}

/// Square root of a Hermitian matrix with negative eigenvalues clamped (their
/// magnitude added to `clamped`) and roundoff-level eigenvalues dropped, so a
/// rank-deficient input does not pick up `√ε` noise. A clamped input is
/// rescaled so its positive part has unit trace.
fn psd_sqrt(m: &na::DMatrix<C64>, clamped: &mut f64) -> na::DMatrix<C64> {
    let mut a = m.clone();
    symmetrize(&mut a);
    let eig = a.symmetric_eigen();
    let d = m.nrows();
    let cutoff = 1e-13 * eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let negative: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    *clamped += negative;
    let kept: f64 = eig.eigenvalues.iter().filter(|&&l| l > cutoff).sum();
    let scale = if negative > 0.0 && kept > 0.0 { 1.0 / kept } else { 1.0 };
    let mut out = na::DMatrix::<C64>::zeros(d, d);
    for k in 0..d {
        let lam = eig.eigenvalues[k];
        if lam <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * C64::new((lam * scale).sqrt(), 0.0);
    }
    out
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
