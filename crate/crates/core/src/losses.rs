//! Training objectives: mixture negative log-likelihood, its class-informed
//! variant, the π-weighted physics penalty and their combination.
//!
//! Likelihood terms are evaluated in standardized target units. Physics
//! residuals are evaluated in physical units: component means are mapped
//! back through the target standardization and input derivatives are
//! central-difference stencils in context units, every stencil point being a
//! full network evaluation on the tape.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BlockVjp, ParamRange, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdn::{MdnModel, MixtureNodes, HALF_LN_2PI};

/// Training records with identical contexts grouped so the network runs once
/// per distinct context.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    context_dim: usize,
    /// Distinct contexts in first-occurrence order, context units.
    unique: Vec<f64>,
    /// Record → index into `unique`.
    point: Vec<usize>,
    targets_std: Vec<f64>,
    labels: Vec<Option<usize>>,
}

impl PreparedBatch {
    /// Targets are standardized with the model's current target statistics.
    pub fn new(model: &MdnModel, data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if data.context_dim != model.arch.input_dim {
            return Err(Error::InvalidInput(format!(
                "dataset contexts have width {}, model expects {}",
                data.context_dim, model.arch.input_dim
            )));
        }
        if data.contexts.iter().chain(&data.targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite record".into()));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut unique = Vec::new();
        let mut point = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let ctx = data.context(i);
            let key: Vec<u64> = ctx.iter().map(|x| (x + 0.0).to_bits()).collect();
            let next = index.len();
            let id = *index.entry(key).or_insert_with(|| {
                unique.extend_from_slice(ctx);
                next
            });
            point.push(id);
        }
        let targets_std = model.target_norm.apply(&data.targets);
        let labels = if data.labels.is_empty() { vec![None; data.len()] } else { data.labels.clone() };
        Ok(Self { context_dim: data.context_dim, unique, point, targets_std, labels })
    }

    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }

    pub fn num_unique(&self) -> usize {
        self.unique.len() / self.context_dim
    }

    pub fn unique_contexts(&self) -> &[f64] {
        &self.unique
    }
}

/// Assignment of class labels to mixture components (both 0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap(Vec<usize>);

impl ClassMap {
    pub fn new(map: Vec<usize>, components: usize) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::InvalidConfig("class map is empty".into()));
        }
        if let Some(&bad) = map.iter().find(|&&g| g >= components) {
            return Err(Error::InvalidConfig(format!(
                "class map entry {bad} is not a component index below {components}"
            )));
        }
        Ok(Self(map))
    }

    /// Class `c` → component `c`.
    pub fn identity(classes: usize) -> Self {
        Self((0..classes).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn component(&self, class: usize) -> Result<usize> {
        self.0
            .get(class)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("label {class} outside the class map")))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    #[default]
    None,
    ClassInformed,
}

/// Scalar node whose value and gradient are precomputed: the mean negative
/// log-likelihood over a batch, with partials with respect to the head nodes.
struct SparseGradient {
    partials: Vec<(u32, f64)>,
}

impl BlockVjp for SparseGradient {
    fn backward(&self, out_adjoint: &[f64], adjoint: &mut [f64]) {
        let g = out_adjoint[0];
        for &(i, p) in &self.partials {
            adjoint[i as usize] += g * p;
        }
    }
}

/// Mean over records of `−log p(u_i | x_i)` (component `None`) or of
/// `−(log π_c + log φ_c(u_i))` (component `Some(c)`).
fn mixture_nll(tape: &mut Tape, nodes: &MixtureNodes, batch: &PreparedBatch, comps: &[Option<usize>]) -> Result<Var> {
    let m = nodes.components;
    let n = batch.len() as f64;
    let heads = nodes.log_pi.len();
    let mut g_lp = vec![0.0; heads];
    let mut g_mu = vec![0.0; heads];
    let mut g_ls = vec![0.0; heads];
    let mut total = 0.0;
    let mut a = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut inv_s = vec![0.0; m];
    for (r, (&p, &u)) in batch.point.iter().zip(&batch.targets_std).enumerate() {
        let base = p * m;
        for k in 0..m {
            let j = base + k;
            let ls = tape.value(nodes.log_sigma[j]);
            inv_s[k] = (-ls).exp();
            z[k] = (u - tape.value(nodes.mu[j])) * inv_s[k];
            a[k] = tape.value(nodes.log_pi[j]) - ls - HALF_LN_2PI - 0.5 * z[k] * z[k];
        }
        match comps[r] {
            Some(c) => {
                total -= a[c];
                let j = base + c;
                g_lp[j] -= 1.0 / n;
                g_mu[j] -= z[c] * inv_s[c] / n;
                g_ls[j] += (1.0 - z[c] * z[c]) / n;
            }
            None => {
                let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = a.iter().map(|x| (x - max).exp()).sum();
                total -= max + s.ln();
                for k in 0..m {
                    let w = (a[k] - max).exp() / s / n;
                    let j = base + k;
                    g_lp[j] -= w;
                    g_mu[j] -= w * z[k] * inv_s[k];
                    g_ls[j] += w * (1.0 - z[k] * z[k]);
                }
            }
        }
    }
    let value = total / n;
    let mut partials = Vec::with_capacity(3 * heads);
    for j in 0..heads {
        partials.push((nodes.log_pi[j].index() as u32, g_lp[j]));
        partials.push((nodes.mu[j].index() as u32, g_mu[j]));
        partials.push((nodes.log_sigma[j].index() as u32, g_ls[j]));
    }
    let v = tape.block(&[value], Box::new(SparseGradient { partials }));
    if !value.is_finite() {
        return Err(Error::NonFiniteValue { node: v.index() });
    }
    Ok(v)
}

fn data_heads(tape: &mut Tape, vars: ParamRange, model: &MdnModel, batch: &PreparedBatch) -> MixtureNodes {
    model.heads_at(tape, vars, &batch.unique)
}

/// Mean negative log-likelihood of the batch under the mixture.
pub fn nll(tape: &mut Tape, vars: ParamRange, model: &MdnModel, batch: &PreparedBatch) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let nodes = data_heads(tape, vars, model, batch);
    mixture_nll(tape, &nodes, batch, &vec![None; batch.len()])
}

/// Class-informed negative log-likelihood. Every record must carry a label.
pub fn class_nll(
    tape: &mut Tape,
    vars: ParamRange,
    model: &MdnModel,
    batch: &PreparedBatch,
    gmap: &ClassMap,
) -> Result<Var> {
    if let Some(index) = batch.labels.iter().position(Option::is_none) {
        return Err(Error::MissingLabel { index });
    }
    masked_class_nll(tape, vars, model, batch, gmap)
}

/// Class-informed terms on labeled records, plain mixture terms on the rest.
pub fn masked_class_nll(
    tape: &mut Tape,
    vars: ParamRange,
    model: &MdnModel,
    batch: &PreparedBatch,
    gmap: &ClassMap,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let comps = batch
        .labels
        .iter()
        .map(|l| l.map(|c| gmap.component(c)).transpose())
        .collect::<Result<Vec<_>>>()?;
    if let Some(&bad) = comps.iter().flatten().find(|&&c| c >= model.components()) {
        return Err(Error::InvalidConfig(format!("class map targets component {bad}")));
    }
    let nodes = data_heads(tape, vars, model, batch);
    mixture_nll(tape, &nodes, batch, &comps)
}

/// A pointwise physics residual `R(μ_m; x) ≥ 0` of one component mean.
pub trait PhysicsResidual {
    /// Context offsets at which the mean is needed, in context units.
    fn stencil(&self) -> Vec<f64>;

    /// Residual at context `x` given the component mean (target units) at
    /// each stencil offset, in the order returned by [`Self::stencil`].
    fn residual(&self, tape: &mut Tape, x: f64, mu: &[Var]) -> Var;
}

/// `max(0, −∂μ/∂x)` with a central first difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monotonicity {
    pub step: f64,
}

impl PhysicsResidual for Monotonicity {
    fn stencil(&self) -> Vec<f64> {
        vec![-self.step, self.step]
    }

    fn residual(&self, tape: &mut Tape, _x: f64, mu: &[Var]) -> Var {
        let c = 0.5 / self.step;
        let neg_slope = tape.lincomb(&[(mu[0], c), (mu[1], -c)], 0.0);
        tape.max0(neg_slope)
    }
}

/// `(μ − μ³ + ν ∂²μ/∂x²)²` with a central second difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChafeeSteadyState {
    pub nu: f64,
    pub step: f64,
}

impl PhysicsResidual for ChafeeSteadyState {
    fn stencil(&self) -> Vec<f64> {
        vec![-self.step, 0.0, self.step]
    }

    fn residual(&self, tape: &mut Tape, _x: f64, mu: &[Var]) -> Var {
        let c = self.nu / (self.step * self.step);
        let sq = tape.square(mu[1]);
        let cube = tape.mul(sq, mu[1]);
        let r = tape.lincomb(&[(mu[1], 1.0 - 2.0 * c), (cube, -1.0), (mu[0], c), (mu[2], c)], 0.0);
        tape.square(r)
    }
}

/// Serializable residual selection. Steps are in context units; when absent
/// the monotonicity step is one hundredth of the context standard deviation
/// and the Chafee–Infante step is the solver grid spacing `π/65`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualSpec {
    Monotonicity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
    },
    ChafeeSteadyState {
        nu: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
    },
}

pub const CHAFEE_DEFAULT_STEP: f64 = std::f64::consts::PI / 65.0;

impl ResidualSpec {
    /// Instantiate with defaults resolved against the model's input scale.
    pub fn build(&self, model: &MdnModel) -> Result<Box<dyn PhysicsResidual>> {
        let check = |h: f64| {
            if h > 0.0 && h.is_finite() {
                Ok(h)
            } else {
                Err(Error::InvalidConfig(format!("stencil step {h} must be positive")))
            }
        };
        Ok(match *self {
            ResidualSpec::Monotonicity { step } => {
                let h = check(step.unwrap_or(1e-2 * model.input_norm.std[0]))?;
                Box::new(Monotonicity { step: h })
            }
            ResidualSpec::ChafeeSteadyState { nu, step } => {
                if !(nu >= 0.0) {
                    return Err(Error::InvalidConfig(format!("diffusivity {nu} must be non-negative")));
                }
                Box::new(ChafeeSteadyState { nu, step: check(step.unwrap_or(CHAFEE_DEFAULT_STEP))? })
            }
        })
    }
}

/// Central-difference derivative of component mean `m` with respect to the
/// scalar context at `x`, in target per context units.
pub fn input_derivative(
    tape: &mut Tape,
    vars: ParamRange,
    model: &MdnModel,
    x: f64,
    m: usize,
    order: u8,
    h: f64,
) -> Result<Var> {
    if model.arch.input_dim != 1 || !(h > 0.0) {
        return Err(Error::InvalidInput("input derivatives need scalar contexts and h > 0".into()));
    }
    let scale = model.target_norm.std[0];
    let mc = model.components();
    match order {
        1 => {
            let nodes = model.heads_at(tape, vars, &[x - h, x + h]);
            let c = scale / (2.0 * h);
            Ok(tape.lincomb(&[(nodes.mu[mc + m], c), (nodes.mu[m], -c)], 0.0))
        }
        2 => {
            let nodes = model.heads_at(tape, vars, &[x - h, x, x + h]);
            let c = scale / (h * h);
            Ok(tape.lincomb(&[(nodes.mu[m], c), (nodes.mu[mc + m], -2.0 * c), (nodes.mu[2 * mc + m], c)], 0.0))
        }
        _ => Err(Error::InvalidInput(format!("derivative order {order} is not 1 or 2"))),
    }
}

/// Mean over collocation points of `Σ_m π_m(x) R(μ_m; x)`.
pub fn physics_loss(
    tape: &mut Tape,
    vars: ParamRange,
    model: &MdnModel,
    collocation: &[f64],
    residual: &dyn PhysicsResidual,
) -> Result<Var> {
    if model.arch.input_dim != 1 {
        return Err(Error::InvalidInput("physics residuals need scalar contexts".into()));
    }
    if collocation.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if collocation.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite collocation point".into()));
    }
    let mut offsets = residual.stencil();
    let center = match offsets.iter().position(|&o| o == 0.0) {
        Some(c) => c,
        None => {
            offsets.push(0.0);
            offsets.len() - 1
        }
    };
    let s = offsets.len();
    let stencil_len = residual.stencil().len();
    let points: Vec<f64> = collocation
        .iter()
        .flat_map(|&x| offsets.iter().map(move |&o| x + o))
        .collect();
    let nodes = model.heads_at(tape, vars, &points);
    let m = model.components();
    let (t_mean, t_std) = (model.target_norm.mean[0], model.target_norm.std[0]);
    let mut terms = Vec::with_capacity(collocation.len() * m);
    let mut mu = Vec::with_capacity(stencil_len);
    for (i, &x) in collocation.iter().enumerate() {
        for k in 0..m {
            mu.clear();
            for q in 0..stencil_len {
                let j = (i * s + q) * m + k;
                mu.push(tape.lincomb(&[(nodes.mu[j], t_std)], t_mean));
            }
            let r = residual.residual(tape, x, &mu);
            let pi = tape.exp(nodes.log_pi[(i * s + center) * m + k]);
            terms.push(tape.mul(pi, r));
        }
    }
    let total = tape.sum(&terms);
    let v = tape.scale(total, 1.0 / collocation.len() as f64);
    if !tape.value(v).is_finite() {
        return Err(Error::NonFiniteValue { node: v.index() });
    }
    Ok(v)
}

/// Training contexts together with `n_grid` equispaced points over their
/// range, deduplicated and sorted.
pub fn collocation_points(data: &Dataset, n_grid: usize) -> Result<Vec<f64>> {
    if data.context_dim != 1 {
        return Err(Error::InvalidInput("collocation sets are built for scalar contexts".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (lo, hi) = data.context_range(0);
    let mut pts = data.contexts.clone();
    match n_grid {
        0 => {}
        1 => pts.push(0.5 * (lo + hi)),
        _ => pts.extend((0..n_grid).map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)),
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| a.to_bits() == b.to_bits());
    Ok(pts)
}

/// Physics term configuration of an objective.
pub struct PhysicsTerm {
    pub residual: Box<dyn PhysicsResidual>,
    pub collocation: Vec<f64>,
    pub lambda: f64,
}

/// Complete training objective for a fixed dataset.
pub struct Objective {
    pub batch: PreparedBatch,
    pub class_map: Option<ClassMap>,
    pub physics: Option<PhysicsTerm>,
}

/// Nodes of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub nll: Var,
    pub physics: Option<Var>,
    pub total: Var,
}

/// Recorded loss values of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub nll: f64,
    pub physics: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            nll: tape.value(self.nll),
            physics: self.physics.map_or(0.0, |p| tape.value(p)),
            total: tape.value(self.total),
        }
    }
}

impl Objective {
    pub fn new(batch: PreparedBatch) -> Self {
        Self { batch, class_map: None, physics: None }
    }

    pub fn with_class_map(mut self, gmap: ClassMap) -> Self {
        self.class_map = Some(gmap);
        self
    }

    pub fn with_physics(mut self, physics: PhysicsTerm) -> Result<Self> {
        if !(physics.lambda >= 0.0) || !physics.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "physics weight {} must be a non-negative number",
                physics.lambda
            )));
        }
        self.physics = Some(physics);
        Ok(self)
    }

    /// Likelihood (class-informed where labels exist, if a class map is set)
    /// plus `λ` times the physics loss.
    pub fn record(&self, tape: &mut Tape, vars: ParamRange, model: &MdnModel) -> Result<LossTerms> {
        let nll = match &self.class_map {
            Some(g) => masked_class_nll(tape, vars, model, &self.batch, g)?,
            None => nll(tape, vars, model, &self.batch)?,
        };
        match &self.physics {
            None => Ok(LossTerms { nll, physics: None, total: nll }),
            Some(p) => {
                let phys = physics_loss(tape, vars, model, &p.collocation, p.residual.as_ref())?;
                let total = tape.lincomb(&[(nll, 1.0), (phys, p.lambda)], 0.0);
                Ok(LossTerms { nll, physics: Some(phys), total })
            }
        }
    }

    /// Loss values and parameter gradient of the total loss.
    pub fn evaluate(&self, tape: &mut Tape, model: &MdnModel) -> Result<(LossValues, Vec<f64>)> {
        tape.clear();
        let vars = model.bind(tape);
        let terms = self.record(tape, vars, model)?;
        let values = terms.values(tape);
        let grad = tape.backward(terms.total);
        Ok((values, grad))
    }
}

/// `nll + λ·physics`, failing for negative `λ`.
pub fn total_loss(nll: f64, physics: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("physics weight {lambda} must be non-negative")));
    }
    Ok(nll + lambda * physics)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mdn::Architecture;
    use crate::nn::Mlp;

    fn zero_model(m: usize) -> MdnModel {
        MdnModel::zeros(Architecture::new(1, 4, 2, m).unwrap())
    }

    fn one_point(u: f64, label: Option<usize>) -> Dataset {
        let d = Dataset::from_pairs(vec![0.3], vec![u]).unwrap();
        match label {
            Some(_) => d.with_labels(vec![label]).unwrap(),
            None => d,
        }
    }

    fn value_of<F>(model: &MdnModel, f: F) -> f64
    where
        F: FnOnce(&mut Tape, ParamRange) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let v = f(&mut tape, vars).unwrap();
        tape.value(v)
    }

    /// Two hidden layers of width 2 computing `μ(x) = slope·x` exactly for
    /// |x| < 10; π logits and σ pre-activations are zero.
    pub(crate) fn rigged_linear(m: usize, slope: f64) -> MdnModel {
        let arch = Architecture::new(1, 2, 2, m).unwrap();
        let mut model = MdnModel::zeros(arch);
        let net: Mlp = arch.mlp();
        let p = &mut model.params;
        let (w0, b0) = net.layer_offsets(0);
        p[w0] = 1.0;
        p[b0] = 10.0;
        let (w1, _) = net.layer_offsets(1);
        p[w1] = 1.0;
        let (w2, b2) = net.layer_offsets(2);
        for k in 0..m {
            p[w2 + (m + k) * 2] = slope;
            p[b2 + m + k] = -10.0 * slope;
        }
        model
    }

    /// `μ(x) ≈ x²` from the ELU negative branch: `e·(e^{εx−1} + e^{−εx−1} − 2/e)/ε²`.
    fn rigged_quadratic() -> MdnModel {
        let eps = 1e-3;
        let e = std::f64::consts::E;
        let arch = Architecture::new(1, 2, 2, 1).unwrap();
        let mut model = MdnModel::zeros(arch);
        let net = arch.mlp();
        let p = &mut model.params;
        let (w0, b0) = net.layer_offsets(0);
        p[w0] = eps;
        p[w0 + 1] = -eps;
        p[b0] = -1.0;
        p[b0 + 1] = -1.0;
        // second layer: identity shifted into the positive branch
        let (w1, b1) = net.layer_offsets(1);
        p[w1] = 1.0;
        p[w1 + 3] = 1.0;
        p[b1] = 2.0;
        p[b1 + 1] = 2.0;
        let (w2, b2) = net.layer_offsets(2);
        p[w2 + 2] = e / (eps * eps);
        p[w2 + 3] = e / (eps * eps);
        p[b2 + 1] = -(2.0 * e + 2.0) / (eps * eps);
        model
    }

    #[test]
    fn zero_model_nll() {
        for m in [1, 2] {
            let model = zero_model(m);
            let batch = PreparedBatch::new(&model, &one_point(0.0, None)).unwrap();
            let v = value_of(&model, |t, v| nll(t, v, &model, &batch));
            assert!((v - 0.918_938_533_204_672_7).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn zero_model_class_nll() {
        let model = zero_model(2);
        let batch = PreparedBatch::new(&model, &one_point(0.0, Some(0))).unwrap();
        let v = value_of(&model, |t, v| class_nll(t, v, &model, &batch, &ClassMap::identity(2)));
        assert!((v - 1.612_085_713_764_618).abs() < 1e-12, "{v}");
    }

    #[test]
    fn class_nll_requires_labels() {
        let model = zero_model(2);
        let batch = PreparedBatch::new(&model, &one_point(0.0, None)).unwrap();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let err = class_nll(&mut tape, vars, &model, &batch, &ClassMap::identity(2)).unwrap_err();
        assert!(matches!(err, Error::MissingLabel { index: 0 }));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = zero_model(1);
        let data = Dataset::from_pairs(vec![], vec![]).unwrap();
        assert!(matches!(PreparedBatch::new(&model, &data), Err(Error::EmptyBatch)));
    }

    #[test]
    fn class_map_validation() {
        assert!(ClassMap::new(vec![0, 3], 3).is_err());
        assert!(ClassMap::new(vec![2, 0, 1], 3).is_ok());
    }

    #[test]
    fn grouped_nll_matches_scalar_route() {
        let mut model = MdnModel::init(Architecture::new(1, 5, 2, 3).unwrap(), 2);
        let data = Dataset::from_pairs(
            vec![0.1, 0.1, -0.4, 0.9, -0.4, 0.1],
            vec![0.3, -1.0, 0.2, 2.0, 0.5, 0.0],
        )
        .unwrap();
        model = model.standardized_for(&data);
        let batch = PreparedBatch::new(&model, &data).unwrap();
        assert_eq!(batch.num_unique(), 3);

        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let fused = nll(&mut tape, vars, &model, &batch).unwrap();
        let v_fused = tape.value(fused);
        let g_fused = tape.backward(fused);

        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let mut terms = Vec::new();
        for (i, &u) in batch.targets_std.iter().enumerate() {
            let nodes = model.heads_at(&mut tape, vars, data.context(i));
            terms.push(nodes.log_pdf(&mut tape, 0, u));
        }
        let s = tape.sum(&terms);
        let reference = tape.scale(s, -1.0 / terms.len() as f64);
        assert!((tape.value(reference) - v_fused).abs() < 1e-13);
        let g_ref = tape.backward(reference);
        for (a, b) in g_fused.iter().zip(&g_ref) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn linear_network_first_derivative() {
        for slope in [1.0, -1.0, 0.25] {
            let model = rigged_linear(1, slope);
            for x in [-0.7, 0.0, 2.0] {
                let d = value_of(&model, |t, v| input_derivative(t, v, &model, x, 0, 1, 1e-3));
                assert!((d - slope).abs() < 1e-10, "{d}");
            }
        }
    }

    #[test]
    fn quadratic_network_second_derivative() {
        let model = rigged_quadratic();
        for x in [-0.7, -0.2, 0.0, 0.35, 0.7] {
            let d = value_of(&model, |t, v| input_derivative(t, v, &model, x, 0, 2, 0.1));
            assert!((d - 2.0).abs() < 1e-6, "x={x}: {d}");
        }
    }

    #[test]
    fn monotonicity_residual_on_rigged_networks() {
        let colloc: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
        let res = Monotonicity { step: 1e-2 };
        let increasing = rigged_linear(2, 1.0);
        let v = value_of(&increasing, |t, v| physics_loss(t, v, &increasing, &colloc, &res));
        assert_eq!(v, 0.0);
        let decreasing = rigged_linear(1, -1.0);
        let v = value_of(&decreasing, |t, v| physics_loss(t, v, &decreasing, &colloc, &res));
        assert!((v - 1.0).abs() < 1e-10, "{v}");
        let constant = zero_model(3);
        let v = value_of(&constant, |t, v| physics_loss(t, v, &constant, &colloc, &res));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn chafee_residual_vanishes_for_zero_means() {
        let model = zero_model(2);
        let res = ChafeeSteadyState { nu: 0.16, step: CHAFEE_DEFAULT_STEP };
        let v = value_of(&model, |t, v| physics_loss(t, v, &model, &[0.0, 1.0, 2.5], &res));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn physics_ignores_components_without_weight() {
        let mut model = MdnModel::init(Architecture::new(1, 4, 2, 2).unwrap(), 8);
        let net = model.mlp();
        let (w2, b2) = net.layer_offsets(2);
        for c in 0..4 {
            model.params[w2 + 4 + c] = 0.0; // logit row of component 1
        }
        model.params[b2 + 1] = -800.0;
        let colloc = [-0.5, 0.0, 0.5];
        let res = ChafeeSteadyState { nu: 0.16, step: 0.05 };
        let before = value_of(&model, |t, v| physics_loss(t, v, &model, &colloc, &res));
        // μ head row of component 1
        for c in 0..4 {
            model.params[w2 + (2 + 1) * 4 + c] += 0.37;
        }
        let after = value_of(&model, |t, v| physics_loss(t, v, &model, &colloc, &res));
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_total_is_nll_bitwise() {
        let model = MdnModel::init(Architecture::new(1, 4, 2, 2).unwrap(), 1);
        let data = Dataset::from_pairs(vec![0.0, 0.5, 1.0], vec![0.1, -0.3, 0.8]).unwrap();
        let model = model.standardized_for(&data);
        let colloc = collocation_points(&data, 8).unwrap();
        let mk = |lambda| {
            Objective::new(PreparedBatch::new(&model, &data).unwrap())
                .with_physics(PhysicsTerm {
                    residual: Box::new(Monotonicity { step: 0.01 }),
                    collocation: colloc.clone(),
                    lambda,
                })
                .unwrap()
        };
        let mut tape = Tape::new();
        let (v0, _) = mk(0.0).evaluate(&mut tape, &model).unwrap();
        assert_eq!(v0.total.to_bits(), v0.nll.to_bits());
        let (v1, _) = mk(1.0).evaluate(&mut tape, &model).unwrap();
        let (v2, _) = mk(2.0).evaluate(&mut tape, &model).unwrap();
        assert_eq!(v2.total - v2.nll, 2.0 * (v1.total - v1.nll));
    }

    #[test]
    fn negative_lambda_is_rejected() {
        assert!(matches!(total_loss(1.0, 1.0, -0.5), Err(Error::InvalidConfig(_))));
        assert_eq!(total_loss(1.5, 2.0, 0.0).unwrap(), 1.5);
    }

    #[test]
    fn collocation_merges_data_and_grid() {
        let data = Dataset::from_pairs(vec![0.0, 1.0, 0.5, 0.5], vec![0.0; 4]).unwrap();
        let pts = collocation_points(&data, 5).unwrap();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn residual_spec_serialization() {
        let spec = ResidualSpec::ChafeeSteadyState { nu: 0.16, step: None };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"chafee_steady_state","nu":0.16}"#);
        let back: ResidualSpec = serde_json::from_str(r#"{"kind":"monotonicity"}"#).unwrap();
        assert_eq!(back, ResidualSpec::Monotonicity { step: None });
        let model = zero_model(1);
        assert!(ResidualSpec::Monotonicity { step: Some(0.0) }.build(&model).is_err());
    }
}
