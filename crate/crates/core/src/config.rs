//! Run configuration: per-problem defaults, partial overrides and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ClassMode, ResidualSpec};
use crate::problems::chafee::DEFAULT_NU;
use crate::problems::Problem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Mdn,
    Cfm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mdn" => Ok(ModelKind::Mdn),
            "cfm" => Ok(ModelKind::Cfm),
            _ => Err(Error::InvalidConfig(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    pub model: ModelKind,
    pub components: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lambda: f64,
    pub residual: Option<ResidualSpec>,
    pub class_mode: ClassMode,
    pub seed: u64,
    /// Problem-specific size: accepted samples, subsample size, profiles,
    /// records per regime or points.
    pub n_data: usize,
    pub collocation_grid: usize,
    pub sampler_steps: usize,
    /// Permit residual kinds outside their native problem.
    pub force: bool,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Any subset of [`RunConfig`] fields, as read from a file or the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub problem: Option<Problem>,
    pub model: Option<ModelKind>,
    pub components: Option<usize>,
    pub hidden: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
    pub residual: Option<ResidualSpec>,
    /// Explicitly drop the problem's default residual.
    pub no_residual: Option<bool>,
    pub class_mode: Option<ClassMode>,
    pub seed: Option<u64>,
    pub n_data: Option<usize>,
    pub collocation_grid: Option<usize>,
    pub sampler_steps: Option<usize>,
    pub force: Option<bool>,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl PartialConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merged(mut self, other: &PartialConfig) -> Self {
        overlay!(self, other; problem, model, components, hidden, hidden_layers, iterations, lr, lambda,
            residual, no_residual, class_mode, seed, n_data, collocation_grid, sampler_steps, force, data, out_dir);
        self
    }

    /// Fill the remaining fields from the defaults of the chosen problem and
    /// model, then validate.
    pub fn resolve(&self) -> Result<RunConfig> {
        let problem = self
            .problem
            .ok_or_else(|| Error::InvalidConfig("a problem must be given".into()))?;
        let model = self.model.unwrap_or_default();
        let mut c = RunConfig::defaults(problem, model);
        if let Some(v) = self.components {
            c.components = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        if let Some(v) = self.hidden_layers {
            c.hidden_layers = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if self.residual.is_some() {
            c.residual = self.residual;
        }
        if self.no_residual == Some(true) {
            c.residual = None;
        }
        if let Some(v) = self.class_mode {
            c.class_mode = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.n_data {
            c.n_data = v;
        }
        if let Some(v) = self.collocation_grid {
            c.collocation_grid = v;
        }
        if let Some(v) = self.sampler_steps {
            c.sampler_steps = v;
        }
        if let Some(v) = self.force {
            c.force = v;
        }
        c.data = self.data.clone();
        c.out_dir = self.out_dir.clone();
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn defaults(problem: Problem, model: ModelKind) -> Self {
        let (components, hidden, iterations, residual, n_data) = match problem {
            Problem::Bifurcation => (3, 16, 20_000, None, 5_000),
            Problem::Sde => (2, 32, 20_000, None, 10_000),
            Problem::Shock => (3, 32, 10_000, Some(ResidualSpec::Monotonicity { step: None }), 40),
            Problem::Chafee => (
                2,
                32,
                50_000,
                Some(ResidualSpec::ChafeeSteadyState { nu: DEFAULT_NU, step: None }),
                100,
            ),
            Problem::Circle => (4, 32, 5_000, None, 400),
        };
        let (hidden, residual) = match model {
            ModelKind::Mdn => (hidden, residual),
            ModelKind::Cfm => (crate::cfm::DEFAULT_HIDDEN, None),
        };
        Self {
            problem,
            model,
            components,
            hidden,
            hidden_layers: 2,
            iterations,
            lr: 1e-3,
            lambda: 1.0,
            residual,
            class_mode: ClassMode::None,
            seed: 0,
            n_data,
            collocation_grid: 256,
            sampler_steps: crate::cfm::DEFAULT_STEPS,
            force: false,
            data: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.components == 0 || self.hidden == 0 || self.hidden_layers == 0 {
            return bad("components, hidden width and hidden layers must be positive".into());
        }
        if self.iterations == 0 {
            return bad("at least one iteration is required".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("physics weight {} must be non-negative", self.lambda));
        }
        if self.sampler_steps == 0 {
            return bad("the sampler needs at least one step".into());
        }
        if self.n_data == 0 {
            return bad("n_data must be positive".into());
        }
        if self.model == ModelKind::Cfm && (self.residual.is_some() || self.class_mode != ClassMode::None) {
            return bad("physics residuals and class-informed training apply to MDNs only".into());
        }
        if matches!(self.residual, Some(ResidualSpec::ChafeeSteadyState { .. }))
            && self.problem != Problem::Chafee
            && !self.force
        {
            return bad(format!("the steady-state residual belongs to the chafee problem, not {}", self.problem));
        }
        if self.class_mode == ClassMode::ClassInformed && self.problem != Problem::Shock && !self.force {
            return bad("class-informed training needs regime labels (shock problem)".into());
        }
        Ok(())
    }

    /// Canonical JSON used for hashing and embedding in checkpoints.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Effective physics weight: zero when no residual is configured.
    pub fn effective_lambda(&self) -> f64 {
        if self.residual.is_some() {
            self.lambda
        } else {
            0.0
        }
    }
}
