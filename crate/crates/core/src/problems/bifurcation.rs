//! Steady states of `ẋ = −x³ + λx + μ` under a bounded imperfection `μ`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::{self, Purpose};

pub const X_RANGE: (f64, f64) = (-2.0, 2.0);
pub const LAMBDA_RANGE: (f64, f64) = (-2.5, 2.5);
pub const IMPERFECTION_BOUND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSample {
    pub lambda: f64,
    pub x_state: f64,
    pub imperfection: f64,
}

/// Imperfection that makes `x` a steady state at `lambda`.
pub fn imperfection(x: f64, lambda: f64) -> f64 {
    x * x * x - lambda * x
}

pub fn accepts(x: f64, lambda: f64) -> bool {
    imperfection(x, lambda).abs() < IMPERFECTION_BOUND
}

/// Rejection sampling of `(x, λ)` uniform on the box until `n_target`
/// proposals satisfy the imperfection bound. Also returns the number of
/// proposals drawn.
pub fn sample_bifurcation(n_target: usize, seed: u64) -> (Vec<BifurcationSample>, u64) {
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let mut out = Vec::with_capacity(n_target);
    let mut proposals = 0u64;
    while out.len() < n_target {
        let x = rng.random_range(X_RANGE.0..X_RANGE.1);
        let lambda = rng.random_range(LAMBDA_RANGE.0..LAMBDA_RANGE.1);
        proposals += 1;
        let mu = imperfection(x, lambda);
        if mu.abs() < IMPERFECTION_BOUND {
            out.push(BifurcationSample { lambda, x_state: x, imperfection: mu });
        }
    }
    (out, proposals)
}

/// Context `λ`, target `x`.
pub fn gen_bifurcation(n_target: usize, seed: u64) -> Dataset {
    let (samples, _) = sample_bifurcation(n_target, seed);
    Dataset::from_pairs(
        samples.iter().map(|s| s.lambda).collect(),
        samples.iter().map(|s| s.x_state).collect(),
    )
    .expect("paired columns")
}

/// Real roots of `x³ − λx = 0`, ascending.
pub fn bifurcation_roots(lambda: f64) -> Vec<f64> {
    if lambda > 0.0 {
        let r = lambda.sqrt();
        vec![-r, 0.0, r]
    } else {
        vec![0.0]
    }
}

/// Roots that are stable equilibria of `ẋ = −x³ + λx`.
pub fn stable_roots(lambda: f64) -> Vec<f64> {
    bifurcation_roots(lambda)
        .into_iter()
        .filter(|&x| -3.0 * x * x + lambda < 0.0 || (lambda <= 0.0 && x == 0.0))
        .collect()
}
