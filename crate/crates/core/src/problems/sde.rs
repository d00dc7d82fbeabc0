//! Slow–fast stochastic system
//!
//! ```text
//! du1 = a1 dt + a2 dB1
//! du2 = b(u2; u1) dt + a3 dB2,   b(u2; u1) = −(−1 + 0.2 u1 + 4 u2 (u2² − 1))
//! ```
//!
//! and the zero-flux stationary density of `u2` at frozen `u1`.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::{check_grid, cumulative_trapezoid, DensityCurve};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Boundary-to-peak density ratio above which a grid is rejected.
pub const TAIL_RATIO: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub u1_0: f64,
    pub u2_0: f64,
}

impl Default for SdeParams {
    /// `u1` drifts from 0 to about 10 over `T = 10⁴`.
    fn default() -> Self {
        Self { a1: 1e-3, a2: 1e-2, a3: 1.0, dt: 1e-3, n_steps: 10_000_000, u1_0: 0.0, u2_0: 1.0 }
    }
}

/// States after each Euler–Maruyama step; step `k` is at time `(k + 1)·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SdeTrajectory {
    pub params: SdeParams,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl SdeTrajectory {
    pub fn len(&self) -> usize {
        self.u1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u1.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.params.dt
    }
}

pub fn drift(u2: f64, u1: f64) -> f64 {
    -(-1.0 + 0.2 * u1 + 4.0 * u2 * (u2 * u2 - 1.0))
}

/// Potential with `b = −∂V/∂u2`.
pub fn potential(u2: f64, u1: f64) -> f64 {
    let s = u2 * u2 - 1.0;
    s * s + (0.2 * u1 - 1.0) * u2
}

/// Euler–Maruyama with independent standard normal increments drawn in the
/// order `z1, z2` each step.
pub fn simulate_sde(p: &SdeParams, seed: u64) -> Result<SdeTrajectory> {
    if !(p.dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step {} must be positive", p.dt)));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let sq = p.dt.sqrt();
    let (mut u1, mut u2) = (p.u1_0, p.u2_0);
    let mut out1 = Vec::with_capacity(p.n_steps);
    let mut out2 = Vec::with_capacity(p.n_steps);
    for step in 0..p.n_steps {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let b = drift(u2, u1);
        u1 += p.a1 * p.dt + p.a2 * sq * z1;
        u2 += b * p.dt + p.a3 * sq * z2;
        if !u1.is_finite() || !u2.is_finite() {
            return Err(Error::SimulationDiverged { step });
        }
        out1.push(u1);
        out2.push(u2);
    }
    Ok(SdeTrajectory { params: *p, u1: out1, u2: out2 })
}

/// Uniform subsample without replacement, in random order.
pub fn gen_sde_dataset(traj: &SdeTrajectory, n_subsample: usize, seed: u64) -> Result<Dataset> {
    if n_subsample > traj.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {n_subsample} points from a trajectory of {}",
            traj.len()
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Subsample, 0);
    let picks = index::sample(&mut rng, traj.len(), n_subsample);
    Dataset::from_pairs(
        picks.iter().map(|i| traj.u1[i]).collect(),
        picks.iter().map(|i| traj.u2[i]).collect(),
    )
}

fn finish(grid: Vec<f64>, log_p: Vec<f64>, tail_check: bool) -> Result<DensityCurve> {
    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let density: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
    let edge = density[0].max(density[density.len() - 1]);
    if tail_check && edge > TAIL_RATIO {
        return Err(Error::GridTooNarrow { ratio: edge });
    }
    DensityCurve::new(grid, density)?.normalized()
}

/// `p(u2 | u1) ∝ exp(−(2/a3²) V(u2; u1))`, normalized by the trapezoid rule.
pub fn stationary_density(u1: f64, a3: f64, grid: &[f64]) -> Result<DensityCurve> {
    check_grid(grid)?;
    let c = 2.0 / (a3 * a3);
    finish(grid.to_vec(), grid.iter().map(|&u| -c * potential(u, u1)).collect(), true)
}

/// Zero-flux stationary density for an arbitrary drift:
/// `p ∝ exp((2/a3²) ∫ b)`, the integral taken by cumulative trapezoid on
/// each grid cell subdivided `refine` times. With `tail_check` the grid must
/// cover the tails as for [`stationary_density`]; without it, densities that
/// do not decay (such as `b ≡ 0` on a bounded interval) are accepted.
pub fn stationary_density_generic<B>(
    b: B,
    a3: f64,
    grid: &[f64],
    refine: usize,
    tail_check: bool,
) -> Result<DensityCurve>
where
    B: Fn(f64) -> f64,
{
    check_grid(grid)?;
    let refine = refine.max(1);
    let c = 2.0 / (a3 * a3);
    let mut fine = Vec::with_capacity((grid.len() - 1) * refine + 1);
    for w in grid.windows(2) {
        for s in 0..refine {
            fine.push(w[0] + (w[1] - w[0]) * s as f64 / refine as f64);
        }
    }
    fine.push(grid[grid.len() - 1]);
    let values: Vec<f64> = fine.iter().map(|&s| b(s)).collect();
    let integral = cumulative_trapezoid(&fine, &values);
    let log_p = (0..grid.len()).map(|i| c * integral[i * refine]).collect();
    finish(grid.to_vec(), log_p, tail_check)
}
