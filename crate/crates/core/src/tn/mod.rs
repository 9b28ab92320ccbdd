//! Matrix product states and operators for the (noisy) GHZ family, and exact
//! chain-rule samplers for product-POVM outcome statistics.

mod chain;
mod dense_sampler;

pub use chain::{exact_probability, sample_outcomes, ProbabilityChain};
pub use dense_sampler::DenseKetDistribution;

use num_complex::Complex64 as C64;

use crate::dense::{pauli, DenseDensityMatrix, DenseKet, MAX_RHO_QUBITS};
use crate::error::{Error, Result};
use crate::povm::Mat2;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Matrix product state with site tensors indexed `(left, physical, right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mps {
    sites: Vec<MpsTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsTensor {
    pub left: usize,
    pub right: usize,
    data: Vec<C64>,
}

impl MpsTensor {
    pub fn zeros(left: usize, right: usize) -> Self {
        Self { left, right, data: vec![ZERO; left * 2 * right] }
    }

    #[inline]
    pub fn get(&self, l: usize, s: usize, r: usize) -> C64 {
        self.data[(l * 2 + s) * self.right + r]
    }

    #[inline]
    pub fn set(&mut self, l: usize, s: usize, r: usize, v: C64) {
        self.data[(l * 2 + s) * self.right + r] = v;
    }
}

/// Matrix product operator with site tensors indexed `(left, ket, bra, right)`:
/// `ρ[(s_1..s_N),(s'_1..s'_N)] = W_1[s_1,s'_1] · · · W_N[s_N,s'_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mpo {
    sites: Vec<MpoTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpoTensor {
    pub left: usize,
    pub right: usize,
    data: Vec<C64>,
}

impl MpoTensor {
    pub fn zeros(left: usize, right: usize) -> Self {
        Self { left, right, data: vec![ZERO; left * 4 * right] }
    }

    #[inline]
    pub fn get(&self, l: usize, s: usize, sp: usize, r: usize) -> C64 {
        self.data[((l * 2 + s) * 2 + sp) * self.right + r]
    }

    #[inline]
    pub fn add(&mut self, l: usize, s: usize, sp: usize, r: usize, v: C64) {
        self.data[((l * 2 + s) * 2 + sp) * self.right + r] += v;
    }
}

impl Mps {
    pub fn new(sites: Vec<MpsTensor>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("empty MPS".into()));
        }
        if sites[0].left != 1 || sites.last().unwrap().right != 1 {
            return Err(Error::DimensionMismatch("MPS boundary bonds must have dimension 1".into()));
        }
        if sites.windows(2).any(|w| w[0].right != w[1].left) {
            return Err(Error::DimensionMismatch("MPS bond dimensions do not chain".into()));
        }
        Ok(Self { sites })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[MpsTensor] {
        &self.sites
    }

    pub fn max_bond(&self) -> usize {
        self.sites.iter().map(|t| t.right).max().unwrap_or(1)
    }

    /// `⟨ψ|ψ⟩` by transfer-matrix contraction.
    pub fn norm_sqr(&self) -> f64 {
        let mut env = vec![C64::new(1.0, 0.0)];
        let mut dim = 1;
        for t in &self.sites {
            let mut next = vec![ZERO; t.right * t.right];
            for l in 0..dim {
                for lp in 0..dim {
                    let e = env[l * dim + lp];
                    if e == ZERO {
                        continue;
                    }
                    for s in 0..2 {
                        for r in 0..t.right {
                            let a = t.get(l, s, r).conj() * e;
                            if a == ZERO {
                                continue;
                            }
                            for rp in 0..t.right {
                                next[r * t.right + rp] += a * t.get(lp, s, rp);
                            }
                        }
                    }
                }
            }
            env = next;
            dim = t.right;
        }
        env[0].re
    }

    /// Dense state vector (up to 20 qubits; no renormalization is applied
    /// beyond what `DenseKet` requires).
    pub fn to_dense(&self) -> Result<DenseKet> {
        let n = self.n_sites();
        if n > crate::dense::MAX_KET_QUBITS {
            return Err(Error::SizeGuard(format!("{n} sites too many for a dense ket")));
        }
        // rows: basis prefix, cols: current right bond
        let mut cur = vec![C64::new(1.0, 0.0)];
        let mut bond = 1;
        for t in &self.sites {
            let rows = cur.len() / bond;
            let mut next = vec![ZERO; rows * 2 * t.right];
            for row in 0..rows {
                for l in 0..bond {
                    let c = cur[row * bond + l];
                    if c == ZERO {
                        continue;
                    }
                    for s in 0..2 {
                        for r in 0..t.right {
                            next[((row * 2 + s) * t.right) + r] += c * t.get(l, s, r);
                        }
                    }
                }
            }
            cur = next;
            bond = t.right;
        }
        DenseKet::new(n, cur)
    }

    /// `|ψ⟩⟨ψ|` as an MPO with squared bond dimension.
    pub fn to_mpo(&self) -> Mpo {
        dilate(self, &[Mat2::identity()])
    }
}

/// GHZ state as a bond-dimension-2 MPS.
pub fn ghz_mps(n: usize) -> Result<Mps> {
    if n < 2 {
        return Err(Error::SizeGuard(format!("GHZ MPS needs N ≥ 2, got {n}")));
    }
    let one = C64::new(1.0, 0.0);
    let mut sites = Vec::with_capacity(n);
    let mut first = MpsTensor::zeros(1, 2);
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    first.set(0, 0, 0, s);
    first.set(0, 1, 1, s);
    sites.push(first);
    for _ in 1..n - 1 {
        let mut mid = MpsTensor::zeros(2, 2);
        mid.set(0, 0, 0, one);
        mid.set(1, 1, 1, one);
        sites.push(mid);
    }
    let mut last = MpsTensor::zeros(2, 1);
    last.set(0, 0, 0, one);
    last.set(1, 1, 0, one);
    sites.push(last);
    Mps::new(sites)
}

/// Kraus operators of the single-qubit depolarizing channel in its
/// ancilla-dilation form: `√(1-p)·𝟙, √(p/3)·X, √(p/3)·Y, √(p/3)·Z`.
pub fn depolarizing_kraus(p: f64) -> Result<[Mat2; 4]> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("depolarizing probability {p} outside [0,1]")));
    }
    let a = C64::new((1.0 - p).sqrt(), 0.0);
    let b = C64::new((p / 3.0).sqrt(), 0.0);
    Ok([Mat2::identity() * a, pauli('x') * b, pauli('y') * b, pauli('z') * b])
}

/// Attaches an ancilla to every site, applies the isometry
/// `|ψ⟩ ↦ Σ_α K_α|ψ⟩ ⊗ |α⟩_A`, and traces the ancilla out, producing MPO
/// factors `W[(l,l'),s,s',(r,r')] = Σ_α (K_α A)[l,s,r] · conj((K_α A)[l',s',r'])`.
fn dilate(mps: &Mps, kraus: &[Mat2]) -> Mpo {
    let sites = mps
        .sites
        .iter()
        .map(|t| {
            let (dl, dr) = (t.left, t.right);
            // dilated tensor B[α][l,s,r] = Σ_s0 K_α[s,s0] A[l,s0,r]
            let dilated: Vec<MpsTensor> = kraus
                .iter()
                .map(|k| {
                    let mut b = MpsTensor::zeros(dl, dr);
                    for l in 0..dl {
                        for r in 0..dr {
                            for s in 0..2 {
                                let v = k[(s, 0)] * t.get(l, 0, r) + k[(s, 1)] * t.get(l, 1, r);
                                b.set(l, s, r, v);
                            }
                        }
                    }
                    b
                })
                .collect();
            let mut w = MpoTensor::zeros(dl * dl, dr * dr);
            for b in &dilated {
                for l in 0..dl {
                    for lp in 0..dl {
                        for s in 0..2 {
                            for sp in 0..2 {
                                for r in 0..dr {
                                    let x = b.get(l, s, r);
                                    if x == ZERO {
                                        continue;
                                    }
                                    for rp in 0..dr {
                                        let y = b.get(lp, sp, rp).conj();
                                        w.add(l * dl + lp, s, sp, r * dr + rp, x * y);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            w
        })
        .collect();
    Mpo { sites }
}

/// Locally depolarized GHZ state as a bond-dimension-4 MPO.
pub fn depolarized_ghz_mpo(n: usize, p: f64) -> Result<Mpo> {
    let kraus = depolarizing_kraus(p)?;
    Ok(dilate(&ghz_mps(n)?, &kraus))
}

impl Mpo {
    pub fn new(sites: Vec<MpoTensor>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("empty MPO".into()));
        }
        if sites[0].left != 1 || sites.last().unwrap().right != 1 {
            return Err(Error::DimensionMismatch("MPO boundary bonds must have dimension 1".into()));
        }
        if sites.windows(2).any(|w| w[0].right != w[1].left) {
            return Err(Error::DimensionMismatch("MPO bond dimensions do not chain".into()));
        }
        Ok(Self { sites })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[MpoTensor] {
        &self.sites
    }

    pub fn max_bond(&self) -> usize {
        self.sites.iter().map(|t| t.right).max().unwrap_or(1)
    }

    /// Full trace `Tr ρ`.
    pub fn trace(&self) -> C64 {
        let mut env = vec![C64::new(1.0, 0.0)];
        for t in &self.sites {
            let mut next = vec![ZERO; t.right];
            for (l, &e) in env.iter().enumerate() {
                for s in 0..2 {
                    for (r, slot) in next.iter_mut().enumerate() {
                        *slot += e * t.get(l, s, s, r);
                    }
                }
            }
            env = next;
        }
        env[0]
    }

    /// Dense density matrix (checked for Hermiticity and unit trace).
    pub fn to_dense(&self) -> Result<DenseDensityMatrix> {
        let n = self.n_sites();
        if n > MAX_RHO_QUBITS {
            return Err(Error::SizeGuard(format!("{n} sites too many for a dense density matrix")));
        }
        // cur[(row, col, bond)] over the processed prefix
        let mut cur = vec![C64::new(1.0, 0.0)];
        let mut dim = 1usize;
        let mut bond = 1usize;
        for t in &self.sites {
            let nd = dim * 2;
            let mut next = vec![ZERO; nd * nd * t.right];
            for row in 0..dim {
                for col in 0..dim {
                    for l in 0..bond {
                        let c = cur[(row * dim + col) * bond + l];
                        if c == ZERO {
                            continue;
                        }
                        for s in 0..2 {
                            for sp in 0..2 {
                                let (nr, nc) = (row * 2 + s, col * 2 + sp);
                                for r in 0..t.right {
                                    next[(nr * nd + nc) * t.right + r] += c * t.get(l, s, sp, r);
                                }
                            }
                        }
                    }
                }
            }
            cur = next;
            dim = nd;
            bond = t.right;
        }
        let m = nalgebra::DMatrix::from_row_slice(dim, dim, &cur);
        DenseDensityMatrix::new(n, m)
    }
}
