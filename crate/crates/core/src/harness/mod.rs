//! Experiment driver: dataset generation, training, evaluation, sample
//! complexity sweeps and reconstruction. Every command is a pure function of
//! the configuration and seed, and every output row carries the config hash.

pub mod config;
pub mod formats;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{expectation_ket, expectation_rho, quantum_fidelity, LocalObservable};
use crate::distribution::OutcomeDistribution;
use crate::error::{Error, Result};
use crate::estimation::{
    classical_fidelity, classical_fidelity_exact, estimate_observable, kl_divergence_exact, mps_fidelity_estimate,
    q_coefficients, EstimatorResult,
};
use crate::models::{train_gru, train_rbm, GruStack, MultinomialRbm, RbmDistribution, TrainingReport};
use crate::povm::ProbabilityTable;
use crate::reconstruction::{reconstruct_density_matrix, ReconstructionDiagnostics};
use config::{ExperimentConfig, Metric, ModelSpec, Reference, StateSpec};
use formats::{
    sha256_hex, write_csv, write_matrix_blob, CheckpointFile, CheckpointMeta, Dataset, DatasetHeader, MetricRow,
    ModelShape, DATASET_VERSION,
};

/// Exact tables are only built up to this many entries.
const MAX_EXACT_TABLE: usize = 1 << 22;

/// Independent stream for each purpose, derived from the run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_INIT: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_SWEEP: u64 = 4;

/// Samples a dataset from the configured state.
pub fn generate_dataset(config: &ExperimentConfig, n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let reference = Reference::build(&config.state, config.povm)?;
    dataset_from_reference(config, &reference, n_samples, seed)
}

fn dataset_from_reference(
    config: &ExperimentConfig,
    reference: &Reference,
    n_samples: usize,
    seed: u64,
) -> Result<Dataset> {
    let n = config.state.n_sites();
    let mut body = Vec::with_capacity(n_samples * n);
    for s in reference.dist.sample(n_samples, seed)? {
        body.extend_from_slice(&s.outcome);
    }
    let header = DatasetHeader {
        format_version: DATASET_VERSION,
        n_sites: n,
        m: reference.povm.m(),
        povm: config.povm,
        state: config.state.clone(),
        seed,
        n_samples,
        generator: reference.generator.to_string(),
        energy: reference.energy,
        config_hash: config.hash(),
        body_sha256: sha256_hex(&body),
    };
    Ok(Dataset { header, body })
}

/// `gen-data`: writes `dataset.bin`.
pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    std::fs::create_dir_all(out)?;
    let d = generate_dataset(config, config.data.n_samples, config.seed)?;
    d.write(&out.join("dataset.bin"))?;
    Ok(d)
}

/// A trained model of either family.
pub enum TrainedModel {
    Gru(GruStack),
    Rbm(RbmDistribution),
}

impl TrainedModel {
    pub fn as_dist(&self) -> &dyn OutcomeDistribution {
        match self {
            TrainedModel::Gru(g) => g,
            TrainedModel::Rbm(r) => r,
        }
    }

    pub fn from_checkpoint(ck: &CheckpointFile) -> Result<Self> {
        match ck.meta.model {
            ModelShape::Gru(shape) => Ok(TrainedModel::Gru(GruStack::from_params(shape, ck.params.clone())?)),
            ModelShape::Rbm(shape) => {
                Ok(TrainedModel::Rbm(RbmDistribution::new(MultinomialRbm::from_params(shape, ck.params.clone())?)?))
            }
        }
    }
}

fn check_dataset(config: &ExperimentConfig, d: &Dataset) -> Result<()> {
    let h = &d.header;
    let n = config.state.n_sites();
    let m = crate::povm::make_povm(config.povm).m();
    if h.n_sites != n || h.m != m || h.povm != config.povm {
        return Err(Error::DimensionMismatch(format!(
            "dataset has N={}, m={}, povm={} but config wants N={n}, m={m}, povm={}",
            h.n_sites, h.m, h.povm, config.povm
        )));
    }
    if h.n_samples == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    /// Monte Carlo classical fidelity of the epoch's last checkpoint; NaN when
    /// not requested.
    pub fc: f64,
    pub fc_stderr: f64,
    pub config_hash: String,
}

pub struct TrainOutcome {
    pub best: CheckpointFile,
    /// Checkpoints centred on the best one, `n_models` of them at most.
    pub window: Vec<CheckpointFile>,
    pub rows: Vec<TrainRow>,
}

/// Trains the configured model on `data` without touching the filesystem.
pub fn train_on(config: &ExperimentConfig, data: &Dataset, reference: Option<&Reference>) -> Result<TrainOutcome> {
    check_dataset(config, data)?;
    let (n, m) = (data.header.n_sites, data.header.m);
    let rows: Vec<&[u8]> = data.rows().collect();
    let mut training = config.training;
    training.seed = derive_seed(config.seed, TAG_TRAIN);
    let hash = config.hash();
    let meta = |model, epoch, val_nll| CheckpointMeta { model, povm: config.povm, config_hash: hash.clone(), epoch, val_nll };
    match config.model {
        ModelSpec::Gru { .. } => {
            let shape = config.model.gru_shape(n, m).expect("gru");
            let init = GruStack::random(shape, derive_seed(config.seed, TAG_INIT))?;
            let (_, report) = train_gru(init, &rows, &training)?;
            let fc = epoch_fidelities(config, &report, reference)?;
            let ck = |c: &crate::models::Checkpoint| CheckpointFile {
                meta: meta(ModelShape::Gru(shape), c.epoch, Some(c.val_nll)),
                params: c.params.clone(),
            };
            let rows = report
                .trace
                .iter()
                .zip(fc)
                .map(|(r, (fc, se))| TrainRow {
                    epoch: r.epoch,
                    train_nll: r.train_nll,
                    val_nll: r.val_nll,
                    fc,
                    fc_stderr: se,
                    config_hash: hash.clone(),
                })
                .collect();
            Ok(TrainOutcome {
                best: ck(&report.checkpoints[report.best]),
                window: report.window(config.training.n_models).iter().map(ck).collect(),
                rows,
            })
        }
        ModelSpec::Rbm { .. } => {
            let shape = config.model.rbm_shape(n, m).expect("rbm");
            let mut model = MultinomialRbm::random(shape, 0.01, derive_seed(config.seed, TAG_INIT))?;
            let trace = train_rbm(&mut model, &rows, &training)?;
            let epochs = config.training.epochs;
            let best = CheckpointFile {
                meta: meta(ModelShape::Rbm(shape), epochs as f64, None),
                params: model.params().to_vec(),
            };
            let (fc, se) = match (reference, config.eval.train_fc_samples) {
                (Some(r), k) if k > 0 => {
                    let dist = RbmDistribution::new(model)?;
                    let e = classical_fidelity(r.dist.as_ref(), &dist, k, derive_seed(config.seed, TAG_EVAL))?;
                    (e.mean, e.stderr)
                }
                _ => (f64::NAN, f64::NAN),
            };
            let last = trace.len().saturating_sub(1);
            let rows = trace
                .iter()
                .enumerate()
                .map(|(epoch, nll)| TrainRow {
                    epoch,
                    train_nll: nll.unwrap_or(f64::NAN),
                    val_nll: f64::NAN,
                    fc: if epoch == last { fc } else { f64::NAN },
                    fc_stderr: if epoch == last { se } else { f64::NAN },
                    config_hash: hash.clone(),
                })
                .collect();
            Ok(TrainOutcome { window: vec![best.clone()], best, rows })
        }
    }
}

/// F_C of the last checkpoint of every epoch, when requested.
fn epoch_fidelities(
    config: &ExperimentConfig,
    report: &TrainingReport,
    reference: Option<&Reference>,
) -> Result<Vec<(f64, f64)>> {
    let per = config.training.checkpoints_per_epoch;
    let k = config.eval.train_fc_samples;
    (0..report.trace.len())
        .map(|e| match reference {
            Some(r) if k > 0 => {
                let c = &report.checkpoints[(e + 1) * per - 1];
                let shape = config.model.gru_shape(r.dist.n_sites(), r.dist.m()).expect("gru");
                let model = GruStack::from_params(shape, c.params.clone())?;
                let est = classical_fidelity(r.dist.as_ref(), &model, k, derive_seed(config.seed, TAG_EVAL))?;
                Ok((est.mean, est.stderr))
            }
            _ => Ok((f64::NAN, f64::NAN)),
        })
        .collect()
}

fn load_or_generate(config: &ExperimentConfig, dataset: Option<&Path>, out: &Path) -> Result<Dataset> {
    match dataset.map(Path::to_path_buf).or_else(|| config.data.path.clone()) {
        Some(p) => Dataset::read(&p),
        None => {
            let d = generate_dataset(config, config.data.n_samples, config.seed)?;
            d.write(&out.join("dataset.bin"))?;
            Ok(d)
        }
    }
}

/// `train`: writes `best.ckpt`, `window_XXX.ckpt` and `train_metrics.csv`.
pub fn cmd_train(config: &ExperimentConfig, dataset: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let data = load_or_generate(config, dataset, out)?;
    let reference = if config.eval.train_fc_samples > 0 { Some(Reference::build(&config.state, config.povm)?) } else { None };
    let outcome = train_on(config, &data, reference.as_ref())?;
    outcome.best.write(&out.join("best.ckpt"))?;
    for (i, c) in outcome.window.iter().enumerate() {
        c.write(&out.join(format!("window_{i:03}.ckpt")))?;
    }
    write_csv(&out.join("train_metrics.csv"), &outcome.rows)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorRow {
    /// `sx` for ⟨σˣ_i⟩, `zz` for ⟨σᶻ_0 σᶻ_i⟩, `dot` for ⟨σ_0·σ_i⟩.
    pub observable: String,
    pub site: usize,
    /// Dense oracle value; NaN when no dense state is available.
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub imag_mean: f64,
    pub n_samples: usize,
    pub config_hash: String,
}

pub struct EvalOutcome {
    pub metrics: Vec<MetricRow>,
    pub correlators: Vec<CorrelatorRow>,
}

fn exact_table(dist: &dyn OutcomeDistribution) -> Result<ProbabilityTable> {
    let size = (dist.m() as f64).powi(dist.n_sites() as i32);
    if size > MAX_EXACT_TABLE as f64 {
        return Err(Error::SizeGuard(format!("exact table of {size} entries exceeds {MAX_EXACT_TABLE}")));
    }
    dist.to_table()
}

/// Averages per-model estimates; the standard error combines independent ones.
fn average(results: &[EstimatorResult]) -> (f64, f64, usize) {
    let k = results.len() as f64;
    let mean = results.iter().map(|r| r.mean).sum::<f64>() / k;
    let se = results.iter().map(|r| r.stderr * r.stderr).sum::<f64>().sqrt() / k;
    (mean, se, results.iter().map(|r| r.n_samples).sum())
}

/// Correlator tables of a model against the dense oracle.
pub fn correlators(
    config: &ExperimentConfig,
    reference: &Reference,
    model: &dyn OutcomeDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CorrelatorRow>> {
    let n = config.state.n_sites();
    let mut obs: Vec<(&str, usize, LocalObservable)> = (0..n).map(|i| ("sx", i, LocalObservable::pauli(i, 'x'))).collect();
    obs.extend((1..n).map(|i| ("zz", i, LocalObservable::pauli_pair(0, 'z', i, 'z'))));
    obs.extend((1..n).map(|i| ("dot", i, LocalObservable::spin_dot(0, i))));
    let qs = obs.iter().map(|(_, _, o)| q_coefficients(o, &reference.povm)).collect::<Result<Vec<_>>>()?;
    let samples: Vec<Vec<u8>> = model.sample(n_samples, seed)?.into_iter().map(|s| s.outcome).collect();
    let hash = config.hash();
    obs.iter()
        .zip(&qs)
        .map(|((name, site, o), q)| {
            let est = estimate_observable(&samples, q)?;
            let exact = match (&reference.ket, &reference.rho) {
                (Some(k), _) => expectation_ket(k, o)?,
                (None, Some(r)) => expectation_rho(r, o)?,
                _ => f64::NAN,
            };
            Ok(CorrelatorRow {
                observable: name.to_string(),
                site: *site,
                exact,
                estimate: est.result.mean,
                stderr: est.result.stderr,
                imag_mean: est.imag_mean,
                n_samples,
                config_hash: hash.clone(),
            })
        })
        .collect()
}

/// Evaluates the configured metrics, averaged over `models`.
pub fn evaluate(config: &ExperimentConfig, reference: &Reference, models: &[TrainedModel]) -> Result<EvalOutcome> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate".into()));
    }
    let hash = config.hash();
    let seed = derive_seed(config.seed, TAG_EVAL);
    let ev = &config.eval;
    let row = |metric: &str, (value, stderr, n_samples): (f64, f64, usize)| MetricRow {
        metric: metric.to_string(),
        value,
        stderr,
        n_samples,
        config_hash: hash.clone(),
    };
    let exact = |v: f64| (v, 0.0, 0);
    let mut metrics = Vec::new();
    let mut corr = Vec::new();
    let ref_table = || exact_table(reference.dist.as_ref());
    for metric in &ev.metrics {
        match metric {
            Metric::Nll => {
                // cross-entropy E_P[-log Q] on fresh reference samples
                let samples: Vec<Vec<u8>> =
                    reference.dist.sample(ev.fc_samples, seed)?.into_iter().map(|s| s.outcome).collect();
                let per = models
                    .iter()
                    .map(|md| {
                        let lp = md.as_dist().log_prob_many(&samples);
                        EstimatorResult::from_values(&lp.iter().map(|l| -l).collect::<Vec<_>>())
                    })
                    .collect::<Result<Vec<_>>>()?;
                metrics.push(row("nll", average(&per)));
            }
            Metric::Kl => {
                let p = ref_table()?;
                let v = models.iter().map(|md| kl_divergence_exact(&p, md.as_dist())).collect::<Result<Vec<_>>>()?;
                metrics.push(row("kl", exact(v.iter().sum::<f64>() / v.len() as f64)));
            }
            Metric::FcExact => {
                let p = ref_table()?;
                let v = models
                    .iter()
                    .map(|md| classical_fidelity_exact(&p, &exact_table(md.as_dist())?))
                    .collect::<Result<Vec<_>>>()?;
                metrics.push(row("fc_exact", exact(v.iter().sum::<f64>() / v.len() as f64)));
            }
            Metric::Fc => {
                let per = models
                    .iter()
                    .map(|md| classical_fidelity(reference.dist.as_ref(), md.as_dist(), ev.fc_samples, seed))
                    .collect::<Result<Vec<_>>>()?;
                metrics.push(row("fc", average(&per)));
            }
            Metric::Fidelity => {
                let rho = reference.rho.as_ref().ok_or_else(|| {
                    Error::SizeGuard("quantum fidelity needs a dense reference (N ≤ 8)".into())
                })?;
                let v = models
                    .iter()
                    .map(|md| {
                        let (rec, _) = reconstruct_density_matrix(&exact_table(md.as_dist())?, &reference.povm)?;
                        Ok(quantum_fidelity(rho, &rec)?.value)
                    })
                    .collect::<Result<Vec<_>>>()?;
                metrics.push(row("fidelity", exact(v.iter().sum::<f64>() / v.len() as f64)));
            }
            Metric::MpsFidelity => {
                let mps = reference.mps.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("MPS fidelity needs a pure GHZ reference (p = 0)".into())
                })?;
                let per = models
                    .iter()
                    .map(|md| mps_fidelity_estimate(md.as_dist(), mps, &reference.povm, ev.fc_samples, seed))
                    .collect::<Result<Vec<_>>>()?;
                metrics.push(row("mps_fidelity_sq", average(&per)));
            }
            Metric::Observables => {
                corr = correlators(config, reference, models[0].as_dist(), ev.observable_samples, seed)?;
            }
        }
    }
    Ok(EvalOutcome { metrics, correlators: corr })
}

/// `eval`: writes `metrics.csv`, plus `correlators.csv` when observables are
/// requested. Metrics are averaged over all given checkpoints; correlators
/// use the first.
pub fn cmd_eval(config: &ExperimentConfig, checkpoints: &[PathBuf], out: &Path) -> Result<EvalOutcome> {
    std::fs::create_dir_all(out)?;
    let models = checkpoints
        .iter()
        .map(|p| TrainedModel::from_checkpoint(&CheckpointFile::read(p)?))
        .collect::<Result<Vec<_>>>()?;
    let reference = Reference::build(&config.state, config.povm)?;
    let outcome = evaluate(config, &reference, &models)?;
    write_csv(&out.join("metrics.csv"), &outcome.metrics)?;
    if config.eval.metrics.contains(&Metric::Observables) {
        write_csv(&out.join("correlators.csv"), &outcome.correlators)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPointRow {
    pub n: usize,
    pub p: f64,
    pub n_samples: usize,
    /// F_C averaged over the checkpoint window.
    pub fc: f64,
    pub fc_stderr: f64,
    pub n_models: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Censoring {
    /// Crossing resolved between two grid points.
    Interpolated,
    /// The first grid point already reaches the target.
    AtOrBelow,
    /// The target is never reached on the grid.
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub ns_star: f64,
    pub censoring: Censoring,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFitRow {
    pub p: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub n_points: usize,
    pub config_hash: String,
}

pub struct SweepOutcome {
    pub points: Vec<SweepPointRow>,
    pub thresholds: Vec<SweepRow>,
    pub fits: Vec<SweepFitRow>,
}

/// Least-squares line `y = slope·x + intercept` and Pearson correlation.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy / (sxx * syy).sqrt())
}

/// First crossing of `target` on an ascending grid, linear in `N_s`.
pub fn threshold_crossing(grid: &[(usize, f64)], target: f64) -> (f64, Censoring) {
    match grid.iter().position(|&(_, f)| f >= target) {
        None => (grid.last().map_or(f64::NAN, |g| g.0 as f64), Censoring::Above),
        Some(0) => (grid[0].0 as f64, Censoring::AtOrBelow),
        Some(i) => {
            let ((x0, f0), (x1, f1)) = (grid[i - 1], grid[i]);
            let (x0, x1) = (x0 as f64, x1 as f64);
            (x0 + (target - f0) * (x1 - x0) / (f1 - f0), Censoring::Interpolated)
        }
    }
}

fn sweep_point(config: &ExperimentConfig, n: usize, p: f64, pi: usize) -> Result<(Vec<SweepPointRow>, SweepRow)> {
    let mut cfg = config.clone();
    cfg.state = StateSpec::Ghz { n, p };
    let hash = config.hash();
    let reference = Reference::build(&cfg.state, cfg.povm)?;
    let mut rows = Vec::new();
    let mut grid = Vec::new();
    for (gi, &ns) in config.sweep.ns_grid.iter().enumerate() {
        let mut per = Vec::new();
        for rep in 0..config.sweep.replicas {
            let tag = ((n as u64) << 40) ^ ((pi as u64) << 24) ^ ((gi as u64) << 8) ^ rep as u64;
            cfg.seed = derive_seed(config.seed, TAG_SWEEP ^ (tag << 8));
            let steps_per_epoch =
                (ns as f64 * (1.0 - cfg.training.validation_fraction) / cfg.training.batch_size as f64).ceil();
            let needed = (config.sweep.min_steps as f64 / steps_per_epoch.max(1.0)).ceil() as usize;
            cfg.training.epochs = config.training.epochs.max(needed);
            let data = dataset_from_reference(&cfg, &reference, ns, cfg.seed)?;
            let trained = train_on(&cfg, &data, None)?;
            for c in &trained.window {
                let md = TrainedModel::from_checkpoint(c)?;
                let seed = derive_seed(cfg.seed, TAG_EVAL);
                per.push(classical_fidelity(reference.dist.as_ref(), md.as_dist(), cfg.eval.fc_samples, seed)?);
            }
        }
        let (fc, se, _) = average(&per);
        rows.push(SweepPointRow {
            n,
            p,
            n_samples: ns,
            fc,
            fc_stderr: se,
            n_models: per.len(),
            config_hash: hash.clone(),
        });
        grid.push((ns, fc));
        if fc >= config.sweep.target {
            break;
        }
    }
    let (ns_star, censoring) = threshold_crossing(&grid, config.sweep.target);
    Ok((rows, SweepRow { n, p, ns_star, censoring, config_hash: hash }))
}

/// Sample-complexity sweep over GHZ states. Points run concurrently and are
/// merged in (p, N) order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    let sw = &config.sweep;
    if sw.n_list.is_empty() || sw.p_list.is_empty() || sw.ns_grid.is_empty() {
        return Err(Error::InvalidArgument("sweep needs non-empty N list, p list and N_s grid".into()));
    }
    if sw.ns_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("N_s grid must be strictly ascending".into()));
    }
    let jobs: Vec<(usize, f64, usize)> =
        sw.p_list.iter().enumerate().flat_map(|(pi, &p)| sw.n_list.iter().map(move |&n| (n, p, pi))).collect();
    let results = jobs
        .par_iter()
        .map(|&(n, p, pi)| sweep_point(config, n, p, pi))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let hash = config.hash();
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    for (r, t) in results {
        points.extend(r);
        thresholds.push(t);
    }
    let fits = sw
        .p_list
        .iter()
        .map(|&p| {
            let pts: Vec<&SweepRow> =
                thresholds.iter().filter(|t| t.p == p && t.censoring == Censoring::Interpolated).collect();
            let x: Vec<f64> = pts.iter().map(|t| t.n as f64).collect();
            let y: Vec<f64> = pts.iter().map(|t| t.ns_star).collect();
            let (slope, intercept, r) = if pts.len() >= 2 { linear_fit(&x, &y) } else { (f64::NAN, f64::NAN, f64::NAN) };
            SweepFitRow { p, slope, intercept, r, n_points: pts.len(), config_hash: hash.clone() }
        })
        .collect();
    Ok(SweepOutcome { points, thresholds, fits })
}

/// `sweep`: writes `sweep_points.csv`, `sweep.csv` and `sweep_fit.csv`.
pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out)?;
    let s = run_sweep(config)?;
    write_csv(&out.join("sweep_points.csv"), &s.points)?;
    write_csv(&out.join("sweep.csv"), &s.thresholds)?;
    write_csv(&out.join("sweep_fit.csv"), &s.fits)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSidecar {
    #[serde(flatten)]
    pub blob: formats::BlobSidecar,
    /// `checkpoint`, `dataset` or `exact`.
    pub source: String,
    pub diagnostics: ReconstructionDiagnostics,
    /// Quantum fidelity against the configured state when it is dense.
    pub fidelity: Option<f64>,
}

pub enum ReconstructSource<'a> {
    Checkpoint(&'a Path),
    Dataset(&'a Path),
    /// Exact outcome table of the configured state.
    Exact,
}

/// `reconstruct`: writes `rho.bin` and `rho.json`.
pub fn cmd_reconstruct(config: &ExperimentConfig, source: ReconstructSource<'_>, out: &Path) -> Result<ReconstructionSidecar> {
    let n = config.state.n_sites();
    if n > crate::reconstruction::MAX_RECONSTRUCTION_QUBITS {
        return Err(Error::SizeGuard(format!(
            "reconstruction limited to {} qubits, got {n}",
            crate::reconstruction::MAX_RECONSTRUCTION_QUBITS
        )));
    }
    std::fs::create_dir_all(out)?;
    let reference = Reference::build(&config.state, config.povm)?;
    let (table, name) = match source {
        ReconstructSource::Checkpoint(p) => {
            let md = TrainedModel::from_checkpoint(&CheckpointFile::read(p)?)?;
            (exact_table(md.as_dist())?, "checkpoint")
        }
        ReconstructSource::Dataset(p) => {
            let d = Dataset::read(p)?;
            check_dataset(config, &d)?;
            (ProbabilityTable::empirical(n, d.header.m, d.rows())?, "dataset")
        }
        ReconstructSource::Exact => (exact_table(reference.dist.as_ref())?, "exact"),
    };
    let (rho, diagnostics) = reconstruct_density_matrix(&table, &reference.povm)?;
    let fidelity = match &reference.rho {
        Some(r) => Some(quantum_fidelity(r, &rho)?.value),
        None => None,
    };
    write_matrix_blob(&out.join("rho.bin"), rho.matrix())?;
    let sidecar = ReconstructionSidecar {
        blob: formats::BlobSidecar {
            n_qubits: n,
            dim: rho.dim(),
            povm: config.povm,
            config_hash: config.hash(),
            encoding: "row-major complex128, little-endian (re, im)".into(),
        },
        source: name.into(),
        diagnostics,
        fidelity,
    };
    std::fs::write(out.join("rho.json"), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(sidecar)
}
