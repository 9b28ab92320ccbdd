//! Maximum-likelihood training of the GRU stack with validation checkpoints.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, GruStack};
use crate::distribution::OutcomeDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Gibbs sweeps per contrastive-divergence update (RBM only).
    pub cd_steps: usize,
    pub seed: u64,
    pub checkpoints_per_epoch: usize,
    /// Size of the checkpoint window averaged for reported metrics.
    pub n_models: usize,
    pub validation_fraction: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 20,
            cd_steps: 1,
            seed: 0,
            checkpoints_per_epoch: 2,
            n_models: 30,
            validation_fraction: 0.1,
            lr_decay: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let ok = self.batch_size > 0
            && self.epochs > 0
            && self.cd_steps > 0
            && self.checkpoints_per_epoch > 0
            && self.n_models > 0
            && a.learning_rate >= 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0
            && (0.0..1.0).contains(&self.validation_fraction)
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Training progress in epochs.
    pub epoch: f64,
    pub val_nll: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub trace: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
    /// Index of the checkpoint with the lowest validation NLL.
    pub best: usize,
}

impl TrainingReport {
    /// Up to `n` consecutive checkpoints centred on the best one.
    pub fn window(&self, n: usize) -> &[Checkpoint] {
        let len = self.checkpoints.len();
        let n = n.min(len);
        let start = self.best.saturating_sub(n / 2).min(len - n);
        &self.checkpoints[start..start + n]
    }
}

/// Splits indices into (train, validation) with a seeded shuffle. Datasets too
/// small to spare a validation part validate on the training data.
pub fn split_indices(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    let n_val = (len as f64 * fraction).floor() as usize;
    if n_val == 0 || n_val == len {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5_9117));
    let val = idx.split_off(len - n_val);
    (idx, val)
}

/// Mini-batch Adam on the mean NLL with full backpropagation through time.
/// Returns the best-validation model and the full report.
pub fn train_gru(model: GruStack, data: &[&[u8]], config: &TrainingConfig) -> Result<(GruStack, TrainingReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    for s in data {
        crate::povm::check_string(s, model.n_sites(), model.m())?;
    }
    let (train, val) = split_indices(data.len(), config.validation_fraction, config.seed);
    let val_set: Vec<&[u8]> = val.iter().map(|&i| data[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model;
    let mut opt = Adam::new(config.adam, model.params().len());
    let mut order = train;
    let n_batches = order.len().div_ceil(config.batch_size);
    let marks: Vec<usize> = (1..=config.checkpoints_per_epoch)
        .map(|c| (n_batches * c).div_ceil(config.checkpoints_per_epoch))
        .collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 0..config.epochs {
        opt.config.learning_rate = config.adam.learning_rate * config.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&[u8]> = chunk.iter().map(|&i| data[i]).collect();
            let (nll, grad) = model.nll_and_grad(&batch);
            if !nll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss: nll });
            }
            total += nll * batch.len() as f64;
            opt.step(model.params_mut(), &grad);
            if marks.contains(&(bi + 1)) {
                let val_nll = model.mean_nll(&val_set);
                if !val_nll.is_finite() {
                    return Err(Error::Diverged { epoch, loss: val_nll });
                }
                checkpoints.push(Checkpoint {
                    epoch: epoch as f64 + (bi + 1) as f64 / n_batches as f64,
                    val_nll,
                    params: model.params().to_vec(),
                });
            }
        }
        trace.push(EpochRecord {
            epoch,
            train_nll: total / order.len() as f64,
            val_nll: checkpoints.last().map(|c| c.val_nll).unwrap_or(f64::NAN),
        });
    }
    let best = checkpoints
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_nll.total_cmp(&b.1.val_nll))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let best_model = GruStack::from_params(model.shape(), checkpoints[best].params.clone())?;
    Ok((best_model, TrainingReport { trace, checkpoints, best }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GruShape;

    fn shape(n: usize) -> GruShape {
        GruShape { n_sites: n, m: 4, hidden: 8, layers: 3 }
    }

    #[test]
    fn learns_repeated_string() {
        let target = [3u8, 0, 2];
        let data = vec![&target[..]; 400];
        let config = TrainingConfig {
            adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
            epochs: 30,
            batch_size: 50,
            ..Default::default()
        };
        let (model, report) = train_gru(GruStack::random(shape(3), 1).unwrap(), &data, &config).unwrap();
        assert!(model.prob(&target) >= 0.99, "{}", model.prob(&target));
        assert_eq!(report.trace.len(), 30);
        assert_eq!(report.checkpoints.len(), 60);
        assert!(report.trace.last().unwrap().train_nll < 0.1 * report.trace[0].train_nll);
    }

    #[test]
    fn uniform_data_gives_uniform_nll() {
        let strings: Vec<Vec<u8>> = (0..64).map(|i| crate::povm::index_string(i, 4, 3)).collect();
        let data: Vec<&[u8]> = strings.iter().cycle().take(64 * 20).map(|s| s.as_slice()).collect();
        let config = TrainingConfig { epochs: 5, ..Default::default() };
        let (model, _) = train_gru(GruStack::random(shape(3), 2).unwrap(), &data, &config).unwrap();
        let nll = model.mean_nll(&data);
        let target = 3.0 * 4f64.ln();
        assert!((nll - target).abs() < 0.02 * target, "{nll}");
    }

    #[test]
    fn full_batch_nll_decreases() {
        let strings: Vec<Vec<u8>> = vec![vec![0, 0, 1], vec![1, 1, 0], vec![2, 3, 3], vec![0, 0, 1]];
        let data: Vec<&[u8]> = strings.iter().map(|s| s.as_slice()).collect();
        let config = TrainingConfig {
            adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
            epochs: 100,
            batch_size: 4,
            ..Default::default()
        };
        let (_, report) = train_gru(GruStack::random(shape(3), 3).unwrap(), &data, &config).unwrap();
        assert!(report.trace.last().unwrap().train_nll < 0.9 * report.trace[0].train_nll);
    }

    #[test]
    fn rejects_bad_input() {
        let model = GruStack::random(shape(3), 1).unwrap();
        assert!(train_gru(model.clone(), &[], &TrainingConfig::default()).is_err());
        assert!(train_gru(model.clone(), &[&[0u8, 9, 1][..]], &TrainingConfig::default()).is_err());
        let bad = TrainingConfig { n_models: 0, ..Default::default() };
        assert!(train_gru(model, &[&[0u8, 1, 1][..]], &bad).is_err());
    }

    #[test]
    fn window_is_centred_and_clipped() {
        let ck = |v: f64| Checkpoint { epoch: 0.0, val_nll: v, params: vec![] };
        let report = TrainingReport { trace: vec![], checkpoints: (0..10).map(|i| ck(i as f64)).collect(), best: 1 };
        assert_eq!(report.window(4).len(), 4);
        assert_eq!(report.window(4)[0].val_nll, 0.0);
        let report = TrainingReport { best: 8, ..report };
        assert_eq!(report.window(4)[3].val_nll, 9.0);
        assert_eq!(report.window(30).len(), 10);
        let report = TrainingReport { best: 5, ..report };
        assert_eq!(report.window(3)[1].val_nll, 5.0);
    }

    #[test]
    fn split_is_deterministic() {
        let (a, b) = split_indices(100, 0.1, 3);
        assert_eq!((a.len(), b.len()), (90, 10));
        assert_eq!(split_indices(100, 0.1, 3), (a, b));
        let (c, d) = split_indices(5, 0.1, 3);
        assert_eq!(c, d);
    }
}
