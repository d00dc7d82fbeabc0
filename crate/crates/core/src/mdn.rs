//! Mixture density network: an ELU body with three linear heads producing
//! the mixture coefficients, component means and component standard
//! deviations of a conditional Gaussian mixture.
//!
//! Network output layout per point is `[π logits (M) | μ (M) | σ pre-activation (M)]`.
//! π is the max-shifted softmax of the logits, μ is the raw head and
//! σ = exp(clamp(pre, −10, 10)). The network sees standardized contexts and
//! predicts standardized targets; [`MdnModel::forward`] maps the result back
//! to target units.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamRange, Tape, Var};
use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::{self, Purpose, Rng};

/// `½ ln 2π`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Bound applied to the σ pre-activation before exponentiation.
pub const SIGMA_PREACT_BOUND: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub components: usize,
    pub target_dim: usize,
}

impl Architecture {
    /// Scalar-target architecture.
    pub fn new(input_dim: usize, hidden: usize, hidden_layers: usize, components: usize) -> Result<Self> {
        let arch = Self { input_dim, hidden, hidden_layers, components, target_dim: 1 };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.hidden_layers == 0 || self.components == 0 {
            return Err(Error::InvalidConfig(format!("degenerate architecture {self:?}")));
        }
        if self.target_dim != 1 {
            return Err(Error::InvalidConfig("only scalar targets are supported".into()));
        }
        Ok(())
    }

    pub fn mlp(&self) -> Mlp {
        let mut sizes = vec![self.input_dim];
        sizes.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        sizes.push(3 * self.components);
        Mlp::new(sizes)
    }

    /// `(d_x·h + h) + (L−1)(h·h + h) + (h·3M + 3M)`.
    pub fn param_count(&self) -> usize {
        let (d, h, l, m) = (self.input_dim, self.hidden, self.hidden_layers, self.components);
        (d * h + h) + (l - 1) * (h * h + h) + (h * 3 * m + 3 * m)
    }
}

/// Conditional mixture at one context, in target units.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MixtureParams {
    pub fn new(pi: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let m = pi.len();
        if m == 0 || mu.len() != m || sigma.len() != m {
            return Err(Error::InvalidInput("mixture vectors must share a nonzero length".into()));
        }
        let total: f64 = pi.iter().sum();
        if pi.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("mixture weights {pi:?} are not on the simplex")));
        }
        if sigma.iter().any(|&s| !(s > 0.0)) || mu.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("σ must be positive and μ finite".into()));
        }
        Ok(Self { pi, mu, sigma })
    }

    pub fn num_components(&self) -> usize {
        self.pi.len()
    }

    /// `log Σ_m π_m φ(u; μ_m, σ_m)` by max-shifted log-sum-exp.
    pub fn log_pdf(&self, u: f64) -> f64 {
        let mut terms = [0.0f64; 16];
        let mut heap;
        let terms: &mut [f64] = if self.pi.len() <= 16 {
            &mut terms[..self.pi.len()]
        } else {
            heap = vec![0.0; self.pi.len()];
            &mut heap
        };
        for (k, t) in terms.iter_mut().enumerate() {
            let z = (u - self.mu[k]) / self.sigma[k];
            *t = self.pi[k].ln() - self.sigma[k].ln() - HALF_LN_2PI - 0.5 * z * z;
        }
        log_sum_exp(terms)
    }

    pub fn pdf(&self, u: f64) -> f64 {
        self.log_pdf(u).exp()
    }

    /// Categorical draw of a component by inverse CDF on one uniform, then a
    /// ziggurat standard normal.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.pi.len() - 1;
        for (k, &p) in self.pi.iter().enumerate() {
            acc += p;
            if r < acc {
                chosen = k;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        self.mu[chosen] + self.sigma[chosen] * z
    }

    pub fn mean(&self) -> f64 {
        self.pi.iter().zip(&self.mu).map(|(p, m)| p * m).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.pi
            .iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(p, (m, s))| p * (s * s + m * m))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }
}

/// Max-shifted `log Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdnModel {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub sigma_bound: f64,
    pub input_norm: Standardizer,
    pub target_norm: Standardizer,
}

impl MdnModel {
    /// Fresh model with identity standardization.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let params = arch.mlp().init(&mut rng::stream(seed, Purpose::Init, 0));
        Self {
            arch,
            params,
            sigma_bound: SIGMA_PREACT_BOUND,
            input_norm: Standardizer::identity(arch.input_dim),
            target_norm: Standardizer::identity(arch.target_dim),
        }
    }

    /// All parameters zero: uniform π, μ = 0, σ = 1 in standardized units.
    pub fn zeros(arch: Architecture) -> Self {
        let mut model = Self::init(arch, 0);
        model.params.iter_mut().for_each(|p| *p = 0.0);
        model
    }

    /// Fit input and target standardization to `data`.
    pub fn standardized_for(mut self, data: &Dataset) -> Self {
        self.input_norm = Standardizer::fit(&data.contexts, data.context_dim);
        self.target_norm = Standardizer::fit(&data.targets, 1);
        self
    }

    pub fn mlp(&self) -> Mlp {
        self.arch.mlp()
    }

    pub fn components(&self) -> usize {
        self.arch.components
    }

    /// Mixture at context `x`, in target units.
    pub fn forward(&self, x: &[f64]) -> Result<MixtureParams> {
        Ok(self.forward_batch(x)?.pop().expect("one point"))
    }

    /// Mixtures at `n` row-major contexts.
    pub fn forward_batch(&self, xs: &[f64]) -> Result<Vec<MixtureParams>> {
        let d = self.arch.input_dim;
        if !xs.len().is_multiple_of(d) || xs.is_empty() {
            return Err(Error::InvalidInput(format!("{} values do not form contexts of width {d}", xs.len())));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite context".into()));
        }
        let out = self.mlp().forward(&self.params, &self.input_norm.apply(xs));
        let m = self.components();
        let (t_mean, t_std) = (self.target_norm.mean[0], self.target_norm.std[0]);
        Ok(out
            .chunks(3 * m)
            .map(|row| {
                let logits = &row[..m];
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let s: f64 = e.iter().sum();
                MixtureParams {
                    pi: e.iter().map(|x| x / s).collect(),
                    mu: row[m..2 * m].iter().map(|z| t_mean + t_std * z).collect(),
                    sigma: row[2 * m..]
                        .iter()
                        .map(|z| t_std * z.clamp(-self.sigma_bound, self.sigma_bound).exp())
                        .collect(),
                }
            })
            .collect())
    }

    /// Register the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ParamRange {
        tape.params(&self.params)
    }

    /// Record the network on already-standardized contexts.
    pub fn heads(&self, tape: &mut Tape, vars: ParamRange, contexts_std: &[f64]) -> MixtureNodes {
        let m = self.components();
        let n = contexts_std.len() / self.arch.input_dim;
        let first = self.mlp().record(tape, vars, &self.params, contexts_std);
        let mut log_pi = Vec::with_capacity(n * m);
        let mut mu = Vec::with_capacity(n * m);
        let mut log_sigma = Vec::with_capacity(n * m);
        let mut logits = Vec::with_capacity(m);
        for i in 0..n {
            let row = first.offset(i * 3 * m);
            logits.clear();
            logits.extend((0..m).map(|k| row.offset(k)));
            let lse = tape.logsumexp(&logits);
            for (k, &logit) in logits.iter().enumerate() {
                log_pi.push(tape.lincomb(&[(logit, 1.0), (lse, -1.0)], 0.0));
                mu.push(row.offset(m + k));
                log_sigma.push(tape.clamp(row.offset(2 * m + k), self.sigma_bound));
            }
        }
        MixtureNodes { components: m, log_pi, mu, log_sigma }
    }

    /// Record the network on contexts given in context units.
    pub fn heads_at(&self, tape: &mut Tape, vars: ParamRange, contexts: &[f64]) -> MixtureNodes {
        self.heads(tape, vars, &self.input_norm.apply(contexts))
    }
}

/// Tape nodes of the mixture heads for a batch of points, in standardized
/// target units. Entries are indexed `point * M + component`.
pub struct MixtureNodes {
    pub components: usize,
    pub log_pi: Vec<Var>,
    pub mu: Vec<Var>,
    pub log_sigma: Vec<Var>,
}

impl MixtureNodes {
    pub fn len(&self) -> usize {
        self.log_pi.len() / self.components
    }

    pub fn is_empty(&self) -> bool {
        self.log_pi.is_empty()
    }

    /// `log π_k + log φ_k(u)` for point `i`.
    pub fn component_log_joint(&self, tape: &mut Tape, i: usize, k: usize, u: f64) -> Var {
        let j = i * self.components + k;
        let neg_log_sigma = tape.neg(self.log_sigma[j]);
        let inv_sigma = tape.exp(neg_log_sigma);
        let diff = tape.lincomb(&[(self.mu[j], -1.0)], u);
        let z = tape.mul(diff, inv_sigma);
        let z2 = tape.square(z);
        tape.lincomb(
            &[(self.log_pi[j], 1.0), (self.log_sigma[j], -1.0), (z2, -0.5)],
            -HALF_LN_2PI,
        )
    }

    /// `log p(u | x_i)`.
    pub fn log_pdf(&self, tape: &mut Tape, i: usize, u: f64) -> Var {
        let terms: Vec<Var> = (0..self.components)
            .map(|k| self.component_log_joint(tape, i, k, u))
            .collect();
        tape.logsumexp(&terms)
    }
}
