//! Trainable generative models over outcome strings.

mod adam;
mod gradcheck;
mod gru;
mod rbm;
mod train;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_difference_check, gru_gradient_check, rbm_gradient_check};
pub use gru::{GruShape, GruStack};
pub use rbm::{train_rbm, MultinomialRbm, RbmDistribution, RbmShape};
pub use train::{split_indices, train_gru, Checkpoint, EpochRecord, TrainingConfig, TrainingReport};
