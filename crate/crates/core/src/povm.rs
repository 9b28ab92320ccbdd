//! Single-qubit informationally complete POVMs and Born-rule evaluation.
//!
//! An `N`-qubit measurement is the tensor product of one single-qubit POVM
//! applied to every site, so outcome strings `a = (a_0, .., a_{N-1})` index the
//! product operators `M^(a_0) ⊗ .. ⊗ M^(a_{N-1})`. Site 0 is the leftmost
//! tensor factor and the most significant digit of flat table indices.

use std::fmt;
use std::str::FromStr;

use nalgebra as na;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::DenseDensityMatrix;
use crate::error::{Error, Result};

pub type Mat2 = na::Matrix2<C64>;

/// Relative singular-value cutoff below which an overlap matrix is treated as
/// singular.
pub const INVERTIBILITY_RTOL: f64 = 1e-10;

/// Probabilities in `[-PROB_CLAMP, 0)` are roundoff and get clamped to zero.
pub const PROB_CLAMP: f64 = 1e-10;

/// Largest flat table size handled by dense enumeration paths.
pub const MAX_TABLE_LEN: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PovmId {
    Tetra,
    Pauli6,
    Pauli4,
}

impl PovmId {
    pub fn as_str(&self) -> &'static str {
        match self {
            PovmId::Tetra => "tetra",
            PovmId::Pauli6 => "pauli6",
            PovmId::Pauli4 => "pauli4",
        }
    }
}

impl fmt::Display for PovmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PovmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tetra" => Ok(PovmId::Tetra),
            "pauli6" => Ok(PovmId::Pauli6),
            "pauli4" => Ok(PovmId::Pauli4),
            other => Err(Error::InvalidArgument(format!("unknown POVM id `{other}`"))),
        }
    }
}

/// A single-qubit POVM together with its overlap matrix `T[a,a'] = Tr[M^(a) M^(a')]`.
#[derive(Debug, Clone)]
pub struct SingleQubitPovm {
    id: PovmId,
    elements: Vec<Mat2>,
    overlap: na::DMatrix<f64>,
    overlap_inverse: Option<na::DMatrix<f64>>,
    /// Dual frame `D^(a) = Σ_a' T⁻¹[a,a'] M^(a')`, present iff `T` is invertible.
    duals: Option<Vec<Mat2>>,
    /// Hermitian square roots `K^(a) = √M^(a)`, so that `M^(a) = K^(a)† K^(a)`.
    sqrt_elements: Vec<Mat2>,
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn bloch_element(scale: f64, s: [f64; 3]) -> Mat2 {
    // scale * (1 + s·σ)
    Mat2::new(
        c(scale * (1.0 + s[2]), 0.0),
        c(scale * s[0], -scale * s[1]),
        c(scale * s[0], scale * s[1]),
        c(scale * (1.0 - s[2]), 0.0),
    )
}

fn projector(v: [C64; 2]) -> Mat2 {
    let col = na::Vector2::new(v[0], v[1]);
    col * col.adjoint()
}

/// Hermitian square root of a 2×2 PSD matrix.
fn sqrt_psd(m: &Mat2) -> Mat2 {
    let eig = m.symmetric_eigen();
    let mut out = Mat2::zeros();
    for k in 0..2 {
        let lam = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * c(lam, 0.0);
    }
    out
}

/// Inverts a symmetric real overlap matrix, returning `None` when its smallest
/// singular value is below `INVERTIBILITY_RTOL` times the largest.
pub fn invert_overlap(t: &na::DMatrix<f64>) -> Option<na::DMatrix<f64>> {
    let n = t.nrows();
    if n == 0 || n != t.ncols() {
        return None;
    }
    let sv = t.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min < INVERTIBILITY_RTOL * max {
        return None;
    }
    let inv = t.clone().try_inverse()?;
    let resid = (t * &inv - na::DMatrix::<f64>::identity(n, n)).amax();
    if resid > 1e-10 {
        return None;
    }
    Some(inv)
}

impl SingleQubitPovm {
    /// Builds one of the three built-in POVMs from its element definitions.
    pub fn new(id: PovmId) -> Self {
        let third = 1.0 / 3.0;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ket0 = [c(1.0, 0.0), c(0.0, 0.0)];
        let ket1 = [c(0.0, 0.0), c(1.0, 0.0)];
        let plus = [c(s, 0.0), c(s, 0.0)];
        let minus = [c(s, 0.0), c(-s, 0.0)];
        let right = [c(s, 0.0), c(0.0, s)];
        let left = [c(s, 0.0), c(0.0, -s)];
        let third_c = c(third, 0.0);

        let elements = match id {
            PovmId::Tetra => {
                let r2 = 2f64.sqrt();
                let dirs = [
                    [0.0, 0.0, 1.0],
                    [2.0 * r2 / 3.0, 0.0, -third],
                    [-r2 / 3.0, (2.0 / 3.0f64).sqrt(), -third],
                    [-r2 / 3.0, -(2.0 / 3.0f64).sqrt(), -third],
                ];
                dirs.iter().map(|d| bloch_element(0.25, *d)).collect()
            }
            PovmId::Pauli6 => [ket0, ket1, plus, minus, right, left]
                .iter()
                .map(|v| projector(*v) * third_c)
                .collect(),
            PovmId::Pauli4 => {
                let m0 = projector(ket0) * third_c;
                let m1 = projector(plus) * third_c;
                let m2 = projector(right) * third_c;
                let m3 = Mat2::identity() - m0 - m1 - m2;
                vec![m0, m1, m2, m3]
            }
        };
        Self::from_elements(id, elements)
    }

    pub(crate) fn from_elements(id: PovmId, elements: Vec<Mat2>) -> Self {
        let m = elements.len();
        let overlap = na::DMatrix::from_fn(m, m, |a, b| (elements[a] * elements[b]).trace().re);
        let overlap_inverse = invert_overlap(&overlap);
        let duals = overlap_inverse.as_ref().map(|inv| {
            (0..m)
                .map(|a| {
                    (0..m).fold(Mat2::zeros(), |acc, b| acc + elements[b] * c(inv[(a, b)], 0.0))
                })
                .collect()
        });
        let sqrt_elements = elements.iter().map(sqrt_psd).collect();
        Self {
            id,
            elements,
            overlap,
            overlap_inverse,
            duals,
            sqrt_elements,
        }
    }

    pub fn id(&self) -> PovmId {
        self.id
    }

    /// Number of outcomes `m`.
    pub fn m(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Mat2] {
        &self.elements
    }

    pub fn overlap(&self) -> &na::DMatrix<f64> {
        &self.overlap
    }

    pub fn overlap_inverse(&self) -> Option<&na::DMatrix<f64>> {
        self.overlap_inverse.as_ref()
    }

    pub fn sqrt_elements(&self) -> &[Mat2] {
        &self.sqrt_elements
    }

    /// Dual-frame operators `Σ_a' T⁻¹[a,a'] M^(a')`, or an `Unsupported` error
    /// when the overlap matrix is singular.
    pub fn duals(&self) -> Result<&[Mat2]> {
        self.duals.as_deref().ok_or_else(|| Error::Unsupported {
            povm: self.id.to_string(),
            reason: "overlap matrix is not invertible".into(),
        })
    }
}

/// Shorthand for [`SingleQubitPovm::new`].
pub fn make_povm(id: PovmId) -> SingleQubitPovm {
    SingleQubitPovm::new(id)
}

/// Dense outcome distribution over all `m^N` strings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    n_sites: usize,
    m: usize,
    probs: Vec<f64>,
}

/// `m^n`, or an error if it exceeds the dense-table guard.
pub fn table_len(m: usize, n: usize) -> Result<usize> {
    let mut len: usize = 1;
    for _ in 0..n {
        len = len
            .checked_mul(m)
            .filter(|&l| l <= MAX_TABLE_LEN)
            .ok_or_else(|| Error::SizeGuard(format!("{m}^{n} outcomes exceeds 2^24")))?;
    }
    Ok(len)
}

/// Flat index of an outcome string (site 0 most significant).
pub fn string_index(a: &[u8], m: usize) -> usize {
    a.iter().fold(0, |acc, &x| acc * m + x as usize)
}

/// Inverse of [`string_index`].
pub fn index_string(mut idx: usize, m: usize, n: usize) -> Vec<u8> {
    let mut out = vec![0u8; n];
    for k in (0..n).rev() {
        out[k] = (idx % m) as u8;
        idx /= m;
    }
    out
}

impl ProbabilityTable {
    /// Wraps raw probabilities, clamping roundoff negatives. Fails on entries
    /// below `-PROB_CLAMP` or a total mass off by more than 1e-10.
    pub fn new(n_sites: usize, m: usize, mut probs: Vec<f64>) -> Result<Self> {
        let len = table_len(m, n_sites)?;
        if probs.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "table has {} entries, expected {len}",
                probs.len()
            )));
        }
        for p in probs.iter_mut() {
            if *p < -PROB_CLAMP || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid probability {p}")));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { n_sites, m, probs })
    }

    /// Builds a table from unnormalized nonnegative weights.
    pub fn from_weights(n_sites: usize, m: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Self::new(n_sites, m, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n_sites: usize, m: usize) -> Result<Self> {
        let len = table_len(m, n_sites)?;
        Self::new(n_sites, m, vec![1.0 / len as f64; len])
    }

    /// Empirical frequencies of a set of outcome strings.
    pub fn empirical<'a>(
        n_sites: usize,
        m: usize,
        strings: impl IntoIterator<Item = &'a [u8]>,
    ) -> Result<Self> {
        let len = table_len(m, n_sites)?;
        let mut counts = vec![0.0; len];
        for s in strings {
            if s.len() != n_sites || s.iter().any(|&x| x as usize >= m) {
                return Err(Error::DimensionMismatch("outcome string does not fit table".into()));
            }
            counts[string_index(s, m)] += 1.0;
        }
        Self::from_weights(n_sites, m, counts)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, a: &[u8]) -> f64 {
        self.probs[string_index(a, self.m)]
    }
}

pub(crate) fn check_string(a: &[u8], n: usize, m: usize) -> Result<()> {
    if a.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "outcome string of length {} for {n} qubits",
            a.len()
        )));
    }
    if let Some(&x) = a.iter().find(|&&x| x as usize >= m) {
        return Err(Error::DimensionMismatch(format!("outcome {x} out of range for m={m}")));
    }
    Ok(())
}

/// Contracts the leading qubit of a `(2D)×(2D)` operator with a 2×2 operator:
/// returns `Σ_{s,s'} op[s',s] ρ[(s,·),(s',·)]`, a `D×D` matrix.
pub(crate) fn contract_leading(rho: &na::DMatrix<C64>, op: &Mat2) -> na::DMatrix<C64> {
    let d = rho.nrows() / 2;
    let mut out = na::DMatrix::<C64>::zeros(d, d);
    for s in 0..2 {
        for sp in 0..2 {
            let w = op[(sp, s)];
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            out += rho.view((s * d, sp * d), (d, d)) * w;
        }
    }
    out
}

/// Born-rule probability `Tr[(M^(a_0) ⊗ .. ⊗ M^(a_{N-1})) ρ]`, contracted one
/// site at a time.
pub fn born_probability(povm: &SingleQubitPovm, rho: &DenseDensityMatrix, a: &[u8]) -> Result<f64> {
    check_string(a, rho.n_qubits(), povm.m())?;
    let mut cur = rho.matrix().clone();
    for &x in a {
        cur = contract_leading(&cur, &povm.elements()[x as usize]);
    }
    Ok(cur[(0, 0)].re)
}

/// Enumerates the full outcome distribution of `rho` (requires `m^N ≤ 2^24`).
pub fn full_probability_table(povm: &SingleQubitPovm, rho: &DenseDensityMatrix) -> Result<ProbabilityTable> {
    let n = rho.n_qubits();
    let m = povm.m();
    let len = table_len(m, n)?;
    let mut probs = Vec::with_capacity(len);
    fn recurse(povm: &SingleQubitPovm, cur: &na::DMatrix<C64>, depth: usize, out: &mut Vec<f64>) {
        if depth == 0 {
            out.push(cur[(0, 0)].re);
            return;
        }
        for el in povm.elements() {
            let next = contract_leading(cur, el);
            recurse(povm, &next, depth - 1, out);
        }
    }
    recurse(povm, rho.matrix(), n, &mut probs);
    ProbabilityTable::new(n, m, probs)
}
