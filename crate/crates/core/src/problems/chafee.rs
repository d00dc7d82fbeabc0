//! Chafee–Infante equation `u_t = u − u³ + ν u_xx` on `[0, π]` with
//! homogeneous Dirichlet boundaries, solved by the method of lines with a
//! second-order central Laplacian and classical RK4 in time.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const DEFAULT_NU: f64 = 0.16;
pub const DEFAULT_NX: usize = 64;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_END: f64 = 4.5;
pub const DEFAULT_PROFILES: usize = 100;
pub const MODES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChafeeParams {
    pub nu: f64,
    pub nx: usize,
    pub dt: f64,
    pub t_end: f64,
    pub n_profiles: usize,
}

impl Default for ChafeeParams {
    fn default() -> Self {
        Self { nu: DEFAULT_NU, nx: DEFAULT_NX, dt: DEFAULT_DT, t_end: DEFAULT_T_END, n_profiles: DEFAULT_PROFILES }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChafeeProfile {
    /// `nx + 2` points including both boundaries.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub coeffs: [f64; MODES],
    pub nu: f64,
}

impl ChafeeProfile {
    /// `max |u − u³ + ν Δ_h u|` over interior points.
    pub fn max_steady_residual(&self) -> f64 {
        let h = self.x[1] - self.x[0];
        steady_residual(&self.u, self.nu, h).iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

pub fn grid(nx: usize) -> Vec<f64> {
    let h = PI / (nx + 1) as f64;
    (0..nx + 2).map(|j| j as f64 * h).collect()
}

/// Largest time step allowed for a given grid and diffusivity.
pub fn stability_bound(nu: f64, nx: usize) -> f64 {
    let h = PI / (nx + 1) as f64;
    0.9 * h * h / (2.0 * nu)
}

/// `u − u³ + ν Δ_h u` at interior points of a full-grid field.
pub fn steady_residual(u: &[f64], nu: f64, h: f64) -> Vec<f64> {
    let c = nu / (h * h);
    (1..u.len() - 1)
        .map(|j| u[j] - u[j].powi(3) + c * (u[j - 1] - 2.0 * u[j] + u[j + 1]))
        .collect()
}

fn rhs(u: &[f64], nu: f64, h: f64, out: &mut [f64]) {
    let c = nu / (h * h);
    let n = u.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for j in 1..n - 1 {
        out[j] = u[j] - u[j] * u[j] * u[j] + c * (u[j - 1] - 2.0 * u[j] + u[j + 1]);
    }
}

/// Integrate from `u(x, 0) = Σ a_n sin(n x)` to `t_end`. The step count is
/// `ceil(t_end / dt)` with the step shortened to land exactly on `t_end`.
pub fn solve_chafee(nu: f64, coeffs: [f64; MODES], t_end: f64, nx: usize, dt: f64) -> Result<ChafeeProfile> {
    if nx == 0 || !(t_end > 0.0) || !(dt > 0.0) || !(nu >= 0.0) {
        return Err(Error::InvalidConfig("Chafee solver needs nx ≥ 1, t_end > 0, dt > 0, ν ≥ 0".into()));
    }
    let bound = stability_bound(nu, nx);
    if dt > bound {
        return Err(Error::UnstableTimestep { dt, bound });
    }
    let x = grid(nx);
    let h = x[1];
    let n = x.len();
    let mut u: Vec<f64> = x
        .iter()
        .map(|&xj| coeffs.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * xj).sin()).sum())
        .collect();
    u[0] = 0.0;
    u[n - 1] = 0.0;
    let steps = (t_end / dt).ceil() as usize;
    let dt = t_end / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for step in 0..steps {
        rhs(&u, nu, h, &mut k1);
        for j in 0..n {
            tmp[j] = u[j] + 0.5 * dt * k1[j];
        }
        rhs(&tmp, nu, h, &mut k2);
        for j in 0..n {
            tmp[j] = u[j] + 0.5 * dt * k2[j];
        }
        rhs(&tmp, nu, h, &mut k3);
        for j in 0..n {
            tmp[j] = u[j] + dt * k3[j];
        }
        rhs(&tmp, nu, h, &mut k4);
        for j in 1..n - 1 {
            u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDiverged { step });
        }
    }
    Ok(ChafeeProfile { x, u, coeffs, nu })
}

/// Profiles from independent `a_n ~ N(0, 1)`, profile `k` drawing from its
/// own stream.
pub fn gen_chafee_profiles(p: &ChafeeParams, seed: u64) -> Result<Vec<ChafeeProfile>> {
    (0..p.n_profiles)
        .map(|k| {
            let mut rng = rng::stream(seed, Purpose::Data, k as u32);
            let mut a = [0.0; MODES];
            for c in &mut a {
                *c = StandardNormal.sample(&mut rng);
            }
            solve_chafee(p.nu, a, p.t_end, p.nx, p.dt)
        })
        .collect()
}

/// All grid points of all profiles, boundaries included, profile-major.
pub fn gen_chafee_dataset(p: &ChafeeParams, seed: u64) -> Result<Dataset> {
    let profiles = gen_chafee_profiles(p, seed)?;
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for prof in &profiles {
        xs.extend_from_slice(&prof.x);
        us.extend_from_slice(&prof.u);
    }
    Dataset::from_pairs(xs, us)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_initial_condition_stays_zero() {
        let p = solve_chafee(0.16, [0.0; 3], 1.0, 16, 1e-3).unwrap();
        assert!(p.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unstable_step_is_rejected() {
        let err = solve_chafee(0.16, [1.0, 0.0, 0.0], 1.0, 64, 1e-2).unwrap_err();
        assert!(matches!(err, Error::UnstableTimestep { .. }));
        assert!(stability_bound(0.16, 64) > DEFAULT_DT);
    }

    #[test]
    fn boundaries_are_exactly_zero() {
        let p = solve_chafee(0.16, [0.3, -1.2, 0.8], 2.0, 32, 1e-3).unwrap();
        assert_eq!(p.u[0], 0.0);
        assert_eq!(*p.u.last().unwrap(), 0.0);
        assert_eq!(p.x.len(), 34);
        assert!((p.x[33] - PI).abs() < 1e-15);
    }

    #[test]
    fn long_run_reaches_a_steady_state() {
        for a in [[0.7, -0.4, 1.1], [-1.3, 0.2, 0.5]] {
            let p = solve_chafee(0.16, a, 50.0, DEFAULT_NX, DEFAULT_DT).unwrap();
            assert!(p.max_steady_residual() < 1e-3, "{}", p.max_steady_residual());
        }
    }

    #[test]
    fn nested_grid_refinement_converges() {
        let a = [0.9, -0.6, 0.4];
        let coarse = solve_chafee(0.16, a, 4.5, DEFAULT_NX, DEFAULT_DT).unwrap();
        let fine_nx = 2 * (DEFAULT_NX + 1) - 1;
        let fine = solve_chafee(0.16, a, 4.5, fine_nx, DEFAULT_DT).unwrap();
        let diff = coarse
            .u
            .iter()
            .enumerate()
            .map(|(j, v)| (v - fine.u[2 * j]).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-3, "{diff}");
    }

    #[test]
    fn dataset_pools_all_profiles() {
        let p = ChafeeParams { n_profiles: 4, nx: 16, ..ChafeeParams::default() };
        let d = gen_chafee_dataset(&p, 1).unwrap();
        assert_eq!(d.len(), 4 * 18);
        for i in 0..d.len() {
            if d.contexts[i] == 0.0 || (d.contexts[i] - PI).abs() < 1e-12 {
                assert_eq!(d.targets[i], 0.0);
            }
        }
        assert_eq!(d, gen_chafee_dataset(&p, 1).unwrap());
    }
}
