//! Metrics comparing learned conditional distributions with analytic
//! references and with data.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::density::{check_grid, trapezoid, DensityCurve};
use crate::error::{Error, Result};
use crate::losses::{physics_loss, ChafeeSteadyState, Monotonicity, PhysicsResidual};
use crate::mdn::MdnModel;

/// Raw integrals further than this from one are renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_PI_THRESHOLD: f64 = 0.05;

/// `∫ |p − q|` by the trapezoid rule; curves must share their grid exactly.
pub fn density_l1(p: &DensityCurve, q: &DensityCurve) -> Result<f64> {
    if p.grid.len() != q.grid.len() || p.grid.iter().zip(&q.grid).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::GridMismatch);
    }
    let diff: Vec<f64> = p.density.iter().zip(&q.density).map(|(a, b)| (a - b).abs()).collect();
    Ok(trapezoid(&p.grid, &diff))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelDensity {
    pub curve: DensityCurve,
    pub raw_integral: f64,
    pub renormalized: bool,
}

/// Predictive density of the model at `context` on `grid`.
pub fn mdn_density_curve(model: &MdnModel, context: &[f64], grid: &[f64]) -> Result<ModelDensity> {
    check_grid(grid)?;
    let mp = model.forward(context)?;
    let density: Vec<f64> = grid.iter().map(|&u| mp.pdf(u)).collect();
    let curve = DensityCurve::new(grid.to_vec(), density)?;
    let raw_integral = curve.integral();
    if (raw_integral - 1.0).abs() > RENORMALIZE_TOLERANCE {
        Ok(ModelDensity { curve: curve.normalized()?, raw_integral, renormalized: true })
    } else {
        Ok(ModelDensity { curve, raw_integral, renormalized: false })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeComponent {
    pub index: usize,
    pub pi: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMatch {
    pub oracle: f64,
    pub mu: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub context: Vec<f64>,
    pub threshold: f64,
    /// Components with `π ≥ threshold`, ascending in `μ`.
    pub components: Vec<ModeComponent>,
    pub matches: Vec<ModeMatch>,
}

impl ModeReport {
    /// Pair each oracle mode with the nearest reported component mean.
    pub fn match_oracle(&mut self, oracle: &[f64]) {
        self.matches = oracle
            .iter()
            .filter_map(|&o| {
                self.components
                    .iter()
                    .map(|c| ModeMatch { oracle: o, mu: c.mu, abs_error: (c.mu - o).abs() })
                    .min_by(|a, b| a.abs_error.total_cmp(&b.abs_error))
            })
            .collect();
    }

    pub fn max_error(&self) -> f64 {
        self.matches.iter().map(|m| m.abs_error).fold(0.0, f64::max)
    }
}

pub fn extract_modes(model: &MdnModel, context: &[f64], threshold: f64) -> Result<ModeReport> {
    let mp = model.forward(context)?;
    let mut components: Vec<ModeComponent> = (0..mp.num_components())
        .filter(|&k| mp.pi[k] >= threshold)
        .map(|k| ModeComponent { index: k, pi: mp.pi[k], mu: mp.mu[k], sigma: mp.sigma[k] })
        .collect();
    components.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    Ok(ModeReport { context: context.to_vec(), threshold, components, matches: Vec::new() })
}

fn residual_on_grid(model: &MdnModel, grid: &[f64], residual: &dyn PhysicsResidual) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let v = physics_loss(&mut tape, vars, model, grid, residual)?;
    Ok(tape.value(v))
}

/// Mean over `grid` of `Σ π_m max(0, −∂μ_m/∂x)` with the training stencil.
pub fn monotonicity_violation(model: &MdnModel, grid: &[f64], h: f64) -> Result<f64> {
    residual_on_grid(model, grid, &Monotonicity { step: h })
}

/// Mean over `grid` of `Σ π_m (μ_m − μ_m³ + ν ∂²μ_m)²` with the training stencil.
pub fn steady_state_residual(model: &MdnModel, grid: &[f64], nu: f64, h: f64) -> Result<f64> {
    residual_on_grid(model, grid, &ChafeeSteadyState { nu, step: h })
}

/// Fraction of samples in `[a, b]`.
pub fn inter_mode_mass(samples: &[f64], a: f64, b: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&s| s >= a && s <= b).count() as f64 / samples.len() as f64
}

/// Fraction of samples in any of the disjoint `windows`.
pub fn mass_in_windows(samples: &[f64], windows: &[(f64, f64)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .filter(|&&s| windows.iter().any(|&(a, b)| s >= a && s <= b))
        .count() as f64
        / samples.len() as f64
}

/// Open gaps between consecutive roots after removing `exclusion` around each.
pub fn gaps_between(roots: &[f64], exclusion: f64) -> Vec<(f64, f64)> {
    roots
        .windows(2)
        .map(|w| (w[0] + exclusion, w[1] - exclusion))
        .filter(|(a, b)| a < b)
        .collect()
}

/// Normalized histogram evaluated at the points of `grid`, bins centred on
/// grid points. Samples outside the bins are counted in the normalization.
pub fn histogram_density(samples: &[f64], grid: &[f64]) -> Result<DensityCurve> {
    check_grid(grid)?;
    let n = grid.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(grid[0] - 0.5 * (grid[1] - grid[0]));
    for w in grid.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(grid[n - 1] + 0.5 * (grid[n - 1] - grid[n - 2]));
    let mut counts = vec![0usize; n];
    for &s in samples {
        let k = edges.partition_point(|&e| e <= s);
        if k >= 1 && k <= n {
            counts[k - 1] += 1;
        }
    }
    let total = samples.len().max(1) as f64;
    let density = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / total / (edges[i + 1] - edges[i]))
        .collect();
    DensityCurve::new(grid.to_vec(), density)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Mean of `Σ_m π_m σ_m` over contexts: the average component spread.
pub fn mean_component_sigma(model: &MdnModel, contexts: &[f64]) -> Result<f64> {
    let mps = model.forward_batch(contexts)?;
    Ok(mps.iter().map(|mp| mp.pi.iter().zip(&mp.sigma).map(|(p, s)| p * s).sum::<f64>()).sum::<f64>()
        / mps.len() as f64)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Evaluation report: named metrics plus the configuration hash and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(config_json: &str, seed: u64) -> Self {
        Self { config_hash: sha256_hex(config_json.as_bytes()), seed, ..Self::default() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Serialize) {
        self.metrics
            .insert(name.into(), serde_json::to_value(value).expect("metric values serialize"));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
