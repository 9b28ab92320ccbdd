//! Experiment configuration and the reference states it names.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::{ground_state, Boundary, DenseDensityMatrix, DenseKet, HamiltonianSpec, LanczosOptions};
use crate::distribution::OutcomeDistribution;
use crate::error::{Error, Result};
use crate::models::{GruShape, RbmShape, TrainingConfig};
use crate::povm::{make_povm, PovmId, SingleQubitPovm};
use crate::tn::{depolarized_ghz_mpo, ghz_mps, DenseKetDistribution, Mps, ProbabilityChain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    /// GHZ state with every qubit depolarized with probability `p`.
    Ghz { n: usize, #[serde(default)] p: f64 },
    Tfim { n: usize, j: f64, h: f64, #[serde(default = "open")] boundary: Boundary },
    HeisenbergTriangular { l: usize, #[serde(default = "periodic")] boundary: Boundary },
}

fn open() -> Boundary {
    Boundary::Open
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

impl StateSpec {
    pub fn n_sites(&self) -> usize {
        match self {
            StateSpec::Ghz { n, .. } | StateSpec::Tfim { n, .. } => *n,
            StateSpec::HeisenbergTriangular { l, .. } => l * l,
        }
    }

    fn hamiltonian(&self) -> Option<HamiltonianSpec> {
        match *self {
            StateSpec::Ghz { .. } => None,
            StateSpec::Tfim { n, j, h, boundary } => Some(HamiltonianSpec::Tfim { n, j, h, boundary }),
            StateSpec::HeisenbergTriangular { l, boundary } => Some(HamiltonianSpec::HeisenbergTriangular { l, boundary }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gru { hidden: usize, layers: usize },
    /// `n_hidden = 0` means twice the number of sites.
    Rbm { #[serde(default)] n_hidden: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Gru { hidden: 100, layers: 3 }
    }
}

impl ModelSpec {
    pub fn gru_shape(&self, n: usize, m: usize) -> Option<GruShape> {
        match *self {
            ModelSpec::Gru { hidden, layers } => Some(GruShape { n_sites: n, m, hidden, layers }),
            ModelSpec::Rbm { .. } => None,
        }
    }

    pub fn rbm_shape(&self, n: usize, m: usize) -> Option<RbmShape> {
        match *self {
            ModelSpec::Rbm { n_hidden } => {
                Some(RbmShape { n_sites: n, m, n_hidden: if n_hidden == 0 { 2 * n } else { n_hidden } })
            }
            ModelSpec::Gru { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub n_samples: usize,
    /// Existing dataset to train on; generated from the state when absent.
    pub path: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { n_samples: 10_000, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean NLL of the training data under the model.
    Nll,
    /// Exact KL divergence (small N).
    Kl,
    /// Monte Carlo classical fidelity against the reference.
    Fc,
    /// Exact classical fidelity (small N).
    FcExact,
    /// Quantum fidelity of the dense reconstruction (N ≤ 8).
    Fidelity,
    /// Squared fidelity against the pure GHZ target via the MPS estimator.
    MpsFidelity,
    /// Correlator tables: ⟨σx_i⟩, ⟨σz_0 σz_i⟩ and ⟨σ_0·σ_i⟩.
    Observables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub metrics: Vec<Metric>,
    pub fc_samples: usize,
    pub observable_samples: usize,
    /// Model samples for the per-epoch F_C column of `train`; 0 disables it.
    pub train_fc_samples: usize,
    /// Average reported metrics over the checkpoint window instead of using
    /// the best checkpoint alone.
    pub average_window: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { metrics: vec![Metric::Nll, Metric::Fc], fc_samples: 100_000, observable_samples: 100_000, train_fc_samples: 0, average_window: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub n_list: Vec<usize>,
    pub p_list: Vec<f64>,
    pub ns_grid: Vec<usize>,
    pub target: f64,
    /// Lower bound on optimizer steps per training run; small datasets get
    /// extra epochs so that every grid point is trained to convergence.
    pub min_steps: usize,
    /// Independent datasets and trainings per grid point; F_C is averaged
    /// over all of their checkpoint windows.
    pub replicas: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            n_list: vec![4, 6, 8, 10],
            p_list: vec![0.0],
            ns_grid: vec![1_000, 3_000, 10_000, 30_000, 100_000, 300_000, 1_000_000],
            target: 0.99,
            min_steps: 0,
            replicas: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub povm: PovmId,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if let StateSpec::Ghz { n, p } = self.state {
            if n < 2 || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("GHZ needs N ≥ 2 and p in [0,1], got N={n}, p={p}")));
            }
        }
        if let Some(h) = self.state.hamiltonian() {
            crate::dense::build_hamiltonian(&h)?;
        }
        if let ModelSpec::Gru { hidden, .. } = self.model {
            if hidden == 0 {
                return Err(Error::InvalidArgument("GRU hidden size must be positive".into()));
            }
        }
        if self.sweep.replicas == 0 {
            return Err(Error::InvalidArgument("sweep.replicas must be positive".into()));
        }
        if self.data.n_samples == 0 && self.data.path.is_none() {
            return Err(Error::InvalidArgument("data.n_samples must be positive".into()));
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form, stamped on every output.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// Exactly known state with its outcome distribution under a POVM.
pub struct Reference {
    pub povm: SingleQubitPovm,
    pub dist: Box<dyn OutcomeDistribution + Send>,
    pub generator: &'static str,
    /// Dense density matrix when N ≤ 8.
    pub rho: Option<DenseDensityMatrix>,
    pub ket: Option<DenseKet>,
    /// Pure target as an MPS (noiseless GHZ only).
    pub mps: Option<Mps>,
    pub energy: Option<f64>,
}

impl Reference {
    pub fn build(state: &StateSpec, povm_id: PovmId) -> Result<Self> {
        let povm = make_povm(povm_id);
        match state {
            StateSpec::Ghz { n, p } => {
                let mpo = depolarized_ghz_mpo(*n, *p)?;
                let rho = if *n <= 8 { Some(mpo.to_dense()?) } else { None };
                let mps = if *p == 0.0 { Some(ghz_mps(*n)?) } else { None };
                Ok(Self {
                    dist: Box::new(ProbabilityChain::from_mpo(&mpo, &povm)),
                    povm,
                    generator: "mpo-chain",
                    rho,
                    ket: None,
                    mps,
                    energy: None,
                })
            }
            other => {
                let spec = other.hamiltonian().expect("Hamiltonian state");
                let gs = ground_state(&spec, &LanczosOptions::default())?;
                let rho = if gs.ket.n_qubits() <= 8 { Some(DenseDensityMatrix::from_ket(&gs.ket)) } else { None };
                Ok(Self {
                    dist: Box::new(DenseKetDistribution::new(gs.ket.clone(), &povm)?),
                    povm,
                    generator: "dense-ket",
                    rho,
                    ket: Some(gs.ket),
                    mps: None,
                    energy: Some(gs.energy),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_full_configs() {
        let c = ExperimentConfig::from_json(r#"{"state":{"kind":"ghz","n":4},"povm":"tetra"}"#).unwrap();
        assert_eq!(c.state, StateSpec::Ghz { n: 4, p: 0.0 });
        assert_eq!(c.model, ModelSpec::Gru { hidden: 100, layers: 3 });
        let text = r#"{
            "state": {"kind": "tfim", "n": 6, "j": 1.0, "h": 1.0},
            "povm": "pauli4",
            "model": {"kind": "rbm"},
            "training": {"epochs": 3, "batch_size": 16},
            "eval": {"metrics": ["fc", "observables"]},
            "seed": 9
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.model.rbm_shape(6, 4).unwrap().n_hidden, 12);
        assert_eq!(c.eval.metrics, vec![Metric::Fc, Metric::Observables]);
        let again = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(ExperimentConfig::from_json(r#"{"state":{"kind":"ghz","n":1},"povm":"tetra"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"state":{"kind":"ghz","n":3,"p":2},"povm":"tetra"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"state":{"kind":"ghz","n":3},"povm":"pauli9"}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"state":{"kind":"heisenberg_triangular","l":2,"boundary":"periodic"},"povm":"tetra"}"#
        )
        .is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let mut count = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
        assert!(count >= 5);
    }

    #[test]
    fn references() {
        let r = Reference::build(&StateSpec::Ghz { n: 3, p: 0.0 }, PovmId::Tetra).unwrap();
        assert!(r.rho.is_some() && r.mps.is_some());
        let r = Reference::build(&StateSpec::Tfim { n: 4, j: 1.0, h: 1.0, boundary: Boundary::Open }, PovmId::Pauli4)
            .unwrap();
        assert!(r.energy.unwrap() < 0.0);
        let total: f64 = r.dist.to_table().unwrap().probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}
