//! Central finite-difference verification of analytic gradients.

use super::{GruStack, MultinomialRbm};

/// Relative error `|g - f| / max(|g|, |f|, floor)` between an analytic
/// gradient entry and its finite-difference estimate.
fn relative_error(g: f64, f: f64, floor: f64) -> f64 {
    (g - f).abs() / g.abs().max(f.abs()).max(floor)
}

/// Maximum relative error between `analytic` and central differences of
/// `loss` with step `eps`, over every parameter.
pub fn finite_difference_check(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let x = p[i];
        p[i] = x + eps;
        let up = loss(&p);
        p[i] = x - eps;
        let down = loss(&p);
        p[i] = x;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], fd, 1e-6));
    }
    worst
}

/// Gradient check of the GRU mean NLL on `batch`.
pub fn gru_gradient_check(model: &GruStack, batch: &[&[u8]], eps: f64) -> f64 {
    let (_, grad) = model.nll_and_grad(batch);
    let shape = model.shape();
    finite_difference_check(
        |p| {
            GruStack::from_params(shape, p.to_vec())
                .expect("shape unchanged")
                .mean_nll(batch)
        },
        model.params(),
        &grad,
        eps,
    )
}

/// Gradient check of the exact RBM mean NLL (by enumeration) on `data`.
pub fn rbm_gradient_check(model: &MultinomialRbm, data: &[&[u8]], eps: f64) -> f64 {
    let grad = model.exact_nll_gradient(data).expect("small model");
    finite_difference_check(
        |p| {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(p);
            m.exact_mean_nll(data).expect("small model")
        },
        model.params(),
        &grad,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GruShape, RbmShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, m: usize, count: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| (0..n).map(|_| rng.random_range(0..m as u8)).collect()).collect()
    }

    #[test]
    fn gru_gradient() {
        for (layers, hidden) in [(1, 4), (3, 8), (2, 5)] {
            let shape = GruShape { n_sites: 4, m: 4, hidden, layers };
            let mut model = GruStack::random(shape, 9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            // nonzero biases so every gate path carries gradient
            for x in model.params_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
            let data = random_batch(4, 4, 7, layers as u64);
            let refs: Vec<&[u8]> = data.iter().map(|s| s.as_slice()).collect();
            let err = gru_gradient_check(&model, &refs, 1e-5);
            assert!(err < 1e-4, "layers={layers}: {err}");
        }
    }

    #[test]
    fn linear_output_gradient() {
        let shape = GruShape { n_sites: 3, m: 3, hidden: 0, layers: 0 };
        let model = GruStack::random(shape, 2).unwrap();
        let data = random_batch(3, 3, 10, 4);
        let refs: Vec<&[u8]> = data.iter().map(|s| s.as_slice()).collect();
        let err = gru_gradient_check(&model, &refs, 1e-5);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn rbm_gradient() {
        let shape = RbmShape { n_sites: 2, m: 4, n_hidden: 3 };
        let model = MultinomialRbm::random(shape, 0.5, 3).unwrap();
        let data = random_batch(2, 4, 9, 8);
        let refs: Vec<&[u8]> = data.iter().map(|s| s.as_slice()).collect();
        let err = rbm_gradient_check(&model, &refs, 1e-5);
        assert!(err < 1e-6, "{err}");
    }
}
