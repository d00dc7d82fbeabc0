//! Adam and the full-batch training loop.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{LossValues, Objective};
use crate::mdn::MdnModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected update. `iteration` only labels errors. Parameters
    /// and moments are left untouched when the gradient is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], iteration: usize) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration, index });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Loss components per iteration, recorded before each update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub iteration: Vec<usize>,
    pub nll: Vec<f64>,
    pub physics: Vec<f64>,
    pub total: Vec<f64>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iteration.is_empty()
    }

    pub fn push(&mut self, iteration: usize, v: LossValues) {
        self.iteration.push(iteration);
        self.nll.push(v.nll);
        self.physics.push(v.physics);
        self.total.push(v.total);
    }

    pub fn last(&self) -> Option<LossValues> {
        let i = self.len().checked_sub(1)?;
        Some(LossValues { nll: self.nll[i], physics: self.physics[i], total: self.total[i] })
    }

    /// Mean total loss over iterations `range`.
    pub fn mean_total(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.total[range];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,nll,physics,total\n");
        for i in 0..self.len() {
            writeln!(out, "{},{},{},{}", self.iteration[i], self.nll[i], self.physics[i], self.total[i]).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(iterations: usize, lr: f64) -> Self {
        Self { iterations, adam: AdamConfig { lr, ..AdamConfig::default() } }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("at least one iteration is required".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// Run `config.iterations` Adam steps on `params`, with `eval` returning the
/// loss values and gradient at the current parameters. Each iteration's loss
/// is appended to `log` before the update, so a failed run keeps the history
/// up to the failure.
pub fn optimize<F>(params: &mut [f64], config: &TrainConfig, log: &mut TrainLog, mut eval: F) -> Result<()>
where
    F: FnMut(usize, &[f64]) -> Result<(LossValues, Vec<f64>)>,
{
    config.validate()?;
    let mut adam = AdamState::new(params.len(), config.adam);
    for it in 0..config.iterations {
        let (values, grad) = eval(it, params)?;
        log.push(it, values);
        adam.step(params, &grad, it)?;
    }
    Ok(())
}

/// Full-batch training of an MDN on `objective`.
pub fn train(model: &mut MdnModel, objective: &Objective, config: &TrainConfig, log: &mut TrainLog) -> Result<()> {
    let mut tape = Tape::new();
    let mut work = model.clone();
    optimize(&mut model.params, config, log, |_, params| {
        work.params.copy_from_slice(params);
        objective.evaluate(&mut tape, &work)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_adam(params: &[f64], grads: &[Vec<f64>], c: AdamConfig) -> Vec<f64> {
        let mut p = params.to_vec();
        let mut m = vec![0.0; p.len()];
        let mut v = vec![0.0; p.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / (1.0 - c.beta1.powi(t));
                let vh = v[i] / (1.0 - c.beta2.powi(t));
                p[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        p
    }

    #[test]
    fn first_step_has_unit_normalized_magnitude() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, AdamConfig::default());
        s.step(&mut p, &[5.0], 0).unwrap();
        assert!((p[0] - 0.999).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3, -2.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        for _ in 0..5 {
            s.step(&mut p, &[0.0, 0.0], 0).unwrap();
        }
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3, AdamConfig::default());
        let err = s.step(&mut p, &[0.0, f64::NAN, 1.0], 7).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { iteration: 7, index: 1 }));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn matches_reference_bitwise() {
        use rand::Rng as _;
        let mut rng = crate::rng::stream(5, crate::rng::Purpose::Test, 0);
        let p0: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..20).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let c = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut p = p0.clone();
        let mut s = AdamState::new(20, c);
        for g in &grads {
            s.step(&mut p, g, 0).unwrap();
        }
        let r = reference_adam(&p0, &grads, c);
        for (a, b) in p.iter().zip(&r) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn optimize_minimizes_a_quadratic_and_logs_each_iteration() {
        let mut p = vec![3.0, -1.0];
        let mut log = TrainLog::default();
        let cfg = TrainConfig::new(3000, 0.01);
        optimize(&mut p, &cfg, &mut log, |_, q| {
            let f = q[0] * q[0] + 4.0 * q[1] * q[1];
            Ok((LossValues { nll: f, physics: 0.0, total: f }, vec![2.0 * q[0], 8.0 * q[1]]))
        })
        .unwrap();
        assert_eq!(log.len(), 3000);
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2, "{p:?}");
        assert!(log.to_csv().starts_with("iteration,nll,physics,total\n0,13,0,13\n"));
    }

    #[test]
    fn single_iteration_applies_one_step() {
        let mut p = vec![1.0];
        let mut log = TrainLog::default();
        optimize(&mut p, &TrainConfig::new(1, 1e-3), &mut log, |_, _| {
            Ok((LossValues { nll: 1.0, physics: 0.0, total: 1.0 }, vec![5.0]))
        })
        .unwrap();
        assert_eq!(log.len(), 1);
        assert!((p[0] - 0.999).abs() < 1e-10);
    }

    #[test]
    fn zero_iterations_are_rejected() {
        assert!(TrainConfig::new(0, 1e-3).validate().is_err());
        assert!(TrainConfig::new(1, 0.0).validate().is_err());
    }
}
