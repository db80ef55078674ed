use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::LinearMap;
use crate::error::{param_err, AdisError, Result};

pub const MIN_POWER_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    /// Largest eigenvalue estimate of `AᵀA`, i.e. `‖A‖²`.
    pub lipschitz: f64,
    /// Rayleigh quotient after each iteration.
    pub history: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Power method on `AᵀA` from a seeded Gaussian start.
pub fn power_iteration<M: LinearMap + ?Sized>(op: &M, iters: usize, seed: u64) -> Result<PowerEstimate> {
    if iters < MIN_POWER_ITERS {
        return param_err(format!(
            "power iteration needs >= {MIN_POWER_ITERS} iterations, got {iters}"
        ));
    }
    let n: usize = op.in_shape().iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let w = op.adjoint(&op.apply(&v));
        let rq = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 || !nw.is_finite() {
            return Err(AdisError::Degenerate(
                "operator maps the probe vector to zero; norm estimate undefined".into(),
            ));
        }
        history.push(rq);
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(PowerEstimate {
        lipschitz: *history.last().expect("iters >= 10"),
        history,
    })
}
