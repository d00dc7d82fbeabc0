//! Points uniform in area on an annulus centred at `(0.5, 0.5)`.

use std::f64::consts::TAU;

use rand::Rng as _;

use crate::data::Dataset;
use crate::rng::{self, Purpose};

pub const R_IN: f64 = 0.35;
pub const R_OUT: f64 = 0.5;
pub const CENTER: (f64, f64) = (0.5, 0.5);
pub const DEFAULT_POINTS: usize = 400;

/// Context is the x-coordinate, target the y-coordinate.
pub fn gen_circle(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = rng.random_range(0.0..TAU);
        let u: f64 = rng.random();
        let r = (R_IN * R_IN + u * (R_OUT * R_OUT - R_IN * R_IN)).sqrt();
        xs.push(CENTER.0 + r * theta.cos());
        ys.push(CENTER.1 + r * theta.sin());
    }
    Dataset::from_pairs(xs, ys).expect("paired columns")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_lie_in_the_annulus_with_area_weighting() {
        let data = gen_circle(20_000, 10);
        let r2: Vec<f64> = (0..data.len())
            .map(|i| (data.contexts[i] - 0.5).powi(2) + (data.targets[i] - 0.5).powi(2))
            .collect();
        assert!(r2.iter().all(|&v| (R_IN * R_IN - 1e-12..=R_OUT * R_OUT + 1e-12).contains(&v)));
        let n = r2.len() as f64;
        let mean = r2.iter().sum::<f64>() / n;
        let var = r2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 0.18625).abs() < 3.0 * (var / n).sqrt(), "{mean}");
        assert_eq!(gen_circle(DEFAULT_POINTS, 10).len(), 400);
    }
}
