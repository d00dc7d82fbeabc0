//! Conditional flow matching baseline: a velocity network `v(u_t, t, x)`
//! trained on linear bridges from a standard normal base, sampled with
//! forward Euler.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamRange, Tape, Var};
use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::losses::LossValues;
use crate::nn::Mlp;
use crate::optim::{optimize, TrainConfig, TrainLog};
use crate::rng::{self, Purpose, Rng};

pub const DEFAULT_HIDDEN: usize = 20;
pub const DEFAULT_STEPS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfmArchitecture {
    pub context_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl CfmArchitecture {
    pub fn new(context_dim: usize, hidden: usize, hidden_layers: usize) -> Result<Self> {
        if context_dim == 0 || hidden == 0 || hidden_layers == 0 {
            return Err(Error::InvalidConfig("degenerate flow architecture".into()));
        }
        Ok(Self { context_dim, hidden, hidden_layers })
    }

    /// Inputs `(u_t, t, x)`, scalar output.
    pub fn mlp(&self) -> Mlp {
        let mut sizes = vec![2 + self.context_dim];
        sizes.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        sizes.push(1);
        Mlp::new(sizes)
    }

    pub fn param_count(&self) -> usize {
        self.mlp().param_count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfmModel {
    pub arch: CfmArchitecture,
    pub params: Vec<f64>,
    pub input_norm: Standardizer,
    pub target_norm: Standardizer,
}

/// `(u_t, u1 − u0)` for `u_t = (1 − t) u0 + t u1`.
pub fn bridge(u0: f64, u1: f64, t: f64) -> (f64, f64) {
    ((1.0 - t) * u0 + t * u1, u1 - u0)
}

impl CfmModel {
    pub fn init(arch: CfmArchitecture, seed: u64) -> Self {
        let params = arch.mlp().init(&mut rng::stream(seed, Purpose::Init, 0));
        Self {
            arch,
            params,
            input_norm: Standardizer::identity(arch.context_dim),
            target_norm: Standardizer::identity(1),
        }
    }

    pub fn standardized_for(mut self, data: &Dataset) -> Self {
        self.input_norm = Standardizer::fit(&data.contexts, data.context_dim);
        self.target_norm = Standardizer::fit(&data.targets, 1);
        self
    }

    pub fn mlp(&self) -> Mlp {
        self.arch.mlp()
    }

    /// Velocity at `n` points; `states` and `times` have length `n` and
    /// `contexts_std` is row-major standardized contexts.
    pub fn velocity(&self, states: &[f64], times: &[f64], contexts_std: &[f64]) -> Vec<f64> {
        self.mlp().forward(&self.params, &self.pack(states, times, contexts_std))
    }

    fn pack(&self, states: &[f64], times: &[f64], contexts_std: &[f64]) -> Vec<f64> {
        let d = self.arch.context_dim;
        let mut inputs = Vec::with_capacity(states.len() * (2 + d));
        for i in 0..states.len() {
            inputs.push(states[i]);
            inputs.push(times[i]);
            inputs.extend_from_slice(&contexts_std[i * d..(i + 1) * d]);
        }
        inputs
    }

    fn record(&self, tape: &mut Tape, vars: ParamRange, states: &[f64], times: &[f64], contexts_std: &[f64]) -> Var {
        self.mlp().record(tape, vars, &self.params, &self.pack(states, times, contexts_std))
    }
}

/// Standardized training pairs.
#[derive(Clone, Debug)]
pub struct CfmBatch {
    contexts_std: Vec<f64>,
    targets_std: Vec<f64>,
}

impl CfmBatch {
    pub fn new(model: &CfmModel, data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if data.context_dim != model.arch.context_dim {
            return Err(Error::InvalidInput("context width does not match the flow model".into()));
        }
        Ok(Self {
            contexts_std: model.input_norm.apply(&data.contexts),
            targets_std: model.target_norm.apply(&data.targets),
        })
    }

    pub fn len(&self) -> usize {
        self.targets_std.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets_std.is_empty()
    }
}

/// One draw of `(u0, t)` per record; `u0` then `t` for each record in order.
fn draw_bridges(rng: &mut Rng, batch: &CfmBatch) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = batch.len();
    let mut states = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for &u1 in &batch.targets_std {
        let u0: f64 = rng.sample(StandardNormal);
        let t: f64 = rng.random();
        let (ut, v) = bridge(u0, u1, t);
        states.push(ut);
        times.push(t);
        targets.push(v);
    }
    (states, times, targets)
}

fn record_loss(
    tape: &mut Tape,
    vars: ParamRange,
    model: &CfmModel,
    batch: &CfmBatch,
    states: &[f64],
    times: &[f64],
    targets: &[f64],
) -> Result<Var> {
    let first = model.record(tape, vars, states, times, &batch.contexts_std);
    let sq: Vec<Var> = targets
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let d = tape.offset(first.offset(i), -v);
            tape.square(d)
        })
        .collect();
    let loss = tape.mean(&sq)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFiniteValue { node: loss.index() });
    }
    Ok(loss)
}

/// Mean squared velocity error over one fresh draw of bridges from `rng`.
pub fn cfm_loss(model: &CfmModel, batch: &CfmBatch, rng: &mut Rng) -> Result<f64> {
    let (states, times, targets) = draw_bridges(rng, batch);
    let v = model.velocity(&states, &times, &batch.contexts_std);
    Ok(v.iter().zip(&targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / batch.len() as f64)
}

/// Full-batch training with bridges redrawn every iteration from the
/// training stream of `seed`. The log records the loss in its `total`
/// and `nll` columns.
pub fn train_cfm(model: &mut CfmModel, data: &Dataset, config: &TrainConfig, seed: u64, log: &mut TrainLog) -> Result<()> {
    let batch = CfmBatch::new(model, data)?;
    let mut rng = rng::stream(seed, Purpose::Train, 0);
    let mut tape = Tape::new();
    let mut work = model.clone();
    optimize(&mut model.params, config, log, |_, params| {
        work.params.copy_from_slice(params);
        let (states, times, targets) = draw_bridges(&mut rng, &batch);
        tape.clear();
        let vars = tape.params(&work.params);
        let loss = record_loss(&mut tape, vars, &work, &batch, &states, &times, &targets)?;
        let value = tape.value(loss);
        let grad = tape.backward(loss);
        Ok((LossValues { nll: value, physics: 0.0, total: value }, grad))
    })
}

/// Euler integration of `du/dt = v(u, t, x)` from `u(0) ~ N(0, 1)` over
/// `[0, 1]` for every context in `contexts` (row-major, context units).
/// Returns `u(1)` in target units. Initial draws come from the sampling
/// stream of `seed`, one per context in order.
pub fn cfm_sample_batch(model: &CfmModel, contexts: &[f64], n_steps: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::stream(seed, Purpose::Sample, 0);
    let n = contexts.len() / model.arch.context_dim;
    let u0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    integrate(model, contexts, u0, n_steps)
}

/// Euler flow of given initial states (standardized units).
pub fn integrate(model: &CfmModel, contexts: &[f64], mut u: Vec<f64>, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("the sampler needs at least one step".into()));
    }
    if contexts.iter().any(|x| !x.is_finite()) || contexts.len() != u.len() * model.arch.context_dim {
        return Err(Error::InvalidInput("contexts must be finite, one row per state".into()));
    }
    let ctx = model.input_norm.apply(contexts);
    let dt = 1.0 / n_steps as f64;
    let mut times = vec![0.0; u.len()];
    for step in 0..n_steps {
        times.iter_mut().for_each(|t| *t = step as f64 * dt);
        let v = model.velocity(&u, &times, &ctx);
        for (ui, vi) in u.iter_mut().zip(&v) {
            *ui += dt * vi;
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::SamplerDiverged { step });
        }
    }
    Ok(model.target_norm.invert(&u))
}

/// Single-context sampler.
pub fn cfm_sample(model: &CfmModel, context: &[f64], n_steps: usize, seed: u64) -> Result<f64> {
    Ok(cfm_sample_batch(model, context, n_steps, seed)?[0])
}
