//! End-to-end operations behind the command-line tool: dataset generation,
//! training, sampling and evaluation. Every function is a pure function of
//! its configuration and seed, and returns file contents rather than
//! writing them.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use crate::cfm::{cfm_sample_batch, train_cfm, CfmArchitecture, CfmModel};
use crate::checkpoint::{Checkpoint, TrainMetadata, TrainedModel};
use crate::config::{ModelKind, RunConfig};
use crate::data::Dataset;
use crate::density::{linspace, trapezoid, DensityCurve};
use crate::error::{Error, Result};
use crate::eval::{
    density_l1, extract_modes, gaps_between, histogram_density, mass_in_windows, mdn_density_curve,
    mean_component_sigma, monotonicity_violation, sha256_hex, steady_state_residual, Report,
    DEFAULT_PI_THRESHOLD,
};
use crate::losses::{
    collocation_points, ClassMap, ClassMode, Objective, PhysicsTerm, PreparedBatch, ResidualSpec, CHAFEE_DEFAULT_STEP,
};
use crate::mdn::{Architecture, MdnModel};
use crate::optim::{train, TrainConfig, TrainLog};
use crate::problems::bifurcation::{bifurcation_roots, sample_bifurcation, LAMBDA_RANGE};
use crate::problems::chafee::{gen_chafee_dataset, ChafeeParams, DEFAULT_NU};
use crate::problems::circle::gen_circle;
use crate::problems::hugoniot::{self, gen_hugoniot_surrogate, hugoniot_csv, Regime, SurrogateParams};
use crate::problems::sde::{gen_sde_dataset, simulate_sde, stationary_density, SdeParams};
use crate::problems::Problem;
use crate::rng::{self, Purpose};

/// Samples drawn per context for sample-based metrics.
pub const EVAL_SAMPLES: usize = 5_000;

/// A generated dataset with its CSV text and JSON sidecar.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub csv: String,
    pub sidecar: String,
}

pub fn generate(config: &RunConfig) -> Result<Generated> {
    let (seed, n) = (config.seed, config.n_data);
    let (dataset, csv, generator) = match config.problem {
        Problem::Bifurcation => {
            let (samples, proposals) = sample_bifurcation(n, seed);
            let d = Dataset::from_pairs(
                samples.iter().map(|s| s.lambda).collect(),
                samples.iter().map(|s| s.x_state).collect(),
            )?;
            let csv = d.to_csv();
            (d, csv, json!({ "accepted": n, "proposals": proposals }))
        }
        Problem::Sde => {
            let p = SdeParams::default();
            let traj = simulate_sde(&p, seed)?;
            let d = gen_sde_dataset(&traj, n, seed)?;
            let csv = d.to_csv();
            (d, csv, json!({ "sde": p, "subsample": n }))
        }
        Problem::Shock => {
            let p = SurrogateParams { n_per_regime: n, ..SurrogateParams::default() };
            let records = gen_hugoniot_surrogate(&p, seed)?;
            (hugoniot::to_dataset(&records), hugoniot_csv(&records), json!({ "surrogate": p }))
        }
        Problem::Chafee => {
            let p = ChafeeParams { n_profiles: n, ..ChafeeParams::default() };
            let d = gen_chafee_dataset(&p, seed)?;
            let csv = d.to_csv();
            (d, csv, json!({ "chafee": p }))
        }
        Problem::Circle => {
            let d = gen_circle(n, seed);
            let csv = d.to_csv();
            (d, csv, json!({ "points": n }))
        }
    };
    let sidecar = json!({
        "problem": config.problem,
        "seed": seed,
        "records": dataset.len(),
        "sha256": sha256_hex(csv.as_bytes()),
        "generator": generator,
    });
    let sidecar = serde_json::to_string_pretty(&sidecar)? + "\n";
    Ok(Generated { dataset, csv, sidecar })
}

/// Read a dataset CSV or a Hugoniot CSV (detected by its header).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    if text.lines().next().map(str::trim) == Some(hugoniot::HEADER) {
        Ok(hugoniot::to_dataset(&hugoniot::parse_hugoniot(&text)?))
    } else {
        Dataset::from_csv(&text)
    }
}

/// The configured data file, or freshly generated data when none is given.
pub fn dataset_for(config: &RunConfig) -> Result<Dataset> {
    match &config.data {
        Some(path) => load_dataset(path),
        None => Ok(generate(config)?.dataset),
    }
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Train per `config`. On failure the log written so far is returned with
/// the error.
#[allow(clippy::result_large_err)]
pub fn train_run(config: &RunConfig, data: &Dataset) -> std::result::Result<TrainedRun, (Error, TrainLog)> {
    let mut log = TrainLog::default();
    match train_into(config, data, &mut log) {
        Ok(model) => {
            let metadata = TrainMetadata {
                version: env!("CARGO_PKG_VERSION").to_string(),
                iterations: log.len(),
                final_loss: log.last(),
                data_records: data.len(),
                data_sha256: sha256_hex(data.to_csv().as_bytes()),
            };
            let checkpoint = Checkpoint { model, seed: config.seed, config: config.clone(), metadata };
            Ok(TrainedRun { checkpoint, log })
        }
        Err(e) => Err((e, log)),
    }
}

fn train_into(config: &RunConfig, data: &Dataset, log: &mut TrainLog) -> Result<TrainedModel> {
    config.validate()?;
    let tc = TrainConfig::new(config.iterations, config.lr);
    match config.model {
        ModelKind::Mdn => {
            let arch = Architecture::new(data.context_dim, config.hidden, config.hidden_layers, config.components)?;
            let mut model = MdnModel::init(arch, config.seed).standardized_for(data);
            let objective = build_objective(config, &model, data)?;
            train(&mut model, &objective, &tc, log)?;
            Ok(TrainedModel::Mdn(model))
        }
        ModelKind::Cfm => {
            let arch = CfmArchitecture::new(data.context_dim, config.hidden, config.hidden_layers)?;
            let mut model = CfmModel::init(arch, config.seed).standardized_for(data);
            train_cfm(&mut model, data, &tc, config.seed, log)?;
            Ok(TrainedModel::Cfm(model))
        }
    }
}

/// The training objective an MDN run minimizes.
pub fn build_objective(config: &RunConfig, model: &MdnModel, data: &Dataset) -> Result<Objective> {
    let mut objective = Objective::new(PreparedBatch::new(model, data)?);
    if config.class_mode == ClassMode::ClassInformed {
        let classes = data.labels.iter().flatten().max().map_or(0, |c| c + 1);
        if classes > config.components {
            return Err(Error::InvalidConfig(format!(
                "{classes} classes need at least as many components, found {}",
                config.components
            )));
        }
        objective = objective.with_class_map(ClassMap::new((0..classes).collect(), config.components)?);
    }
    if let Some(spec) = &config.residual {
        objective = objective.with_physics(PhysicsTerm {
            residual: spec.build(model)?,
            collocation: collocation_points(data, config.collocation_grid)?,
            lambda: config.lambda,
        })?;
    }
    Ok(objective)
}

/// `n` draws at every context (rows of `contexts`, context units), ordered
/// context-major.
pub fn sample_model(model: &TrainedModel, contexts: &[f64], n: usize, seed: u64, sampler_steps: usize) -> Result<Vec<f64>> {
    let d = model.context_dim();
    if !contexts.len().is_multiple_of(d) {
        return Err(Error::InvalidInput(format!("context values must come in rows of {d}")));
    }
    match model {
        TrainedModel::Mdn(m) => {
            let mut rng = rng::stream(seed, Purpose::Sample, 0);
            let mut out = Vec::with_capacity(n * contexts.len() / d);
            for mp in m.forward_batch(contexts)? {
                out.extend((0..n).map(|_| mp.sample(&mut rng)));
            }
            Ok(out)
        }
        TrainedModel::Cfm(m) => {
            let repeated: Vec<f64> = contexts
                .chunks(d)
                .flat_map(|row| std::iter::repeat_n(row, n).flatten().copied())
                .collect();
            if repeated.is_empty() {
                return Ok(Vec::new());
            }
            cfm_sample_batch(m, &repeated, sampler_steps, seed)
        }
    }
}

/// `context,sample` CSV (context columns numbered when multi-dimensional).
pub fn samples_csv(contexts: &[f64], d: usize, n: usize, samples: &[f64]) -> String {
    let mut out = if d == 1 {
        "context".to_string()
    } else {
        (0..d).map(|k| format!("context_{k}")).collect::<Vec<_>>().join(",")
    };
    out.push_str(",sample\n");
    for (i, row) in contexts.chunks(d).enumerate() {
        let ctx = row.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        for s in &samples[i * n..(i + 1) * n] {
            writeln!(out, "{ctx},{s}").unwrap();
        }
    }
    out
}

/// A report plus named plot-data CSV files.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

struct Probe {
    slices: Vec<f64>,
    target_grid: Vec<f64>,
    param_contexts: Vec<f64>,
}

fn probe(problem: Problem, data: &Dataset) -> Probe {
    let (lo, hi) = data.context_range(0);
    match problem {
        Problem::Bifurcation => Probe {
            slices: vec![-0.8, 0.8],
            target_grid: linspace(-2.0, 2.0, 801),
            param_contexts: linspace(LAMBDA_RANGE.0, LAMBDA_RANGE.1, 501),
        },
        Problem::Sde => Probe {
            slices: vec![5.0, 12.0],
            target_grid: linspace(-3.0, 3.0, 6001),
            param_contexts: linspace(lo.min(0.0), 12.0, 241),
        },
        Problem::Shock => Probe {
            slices: vec![0.5, 1.5, 2.5, 3.5, 4.5],
            target_grid: linspace(6.0, 16.0, 1001),
            param_contexts: linspace(lo, hi, 201),
        },
        Problem::Chafee => Probe {
            slices: vec![0.25 * PI, 0.5 * PI, 0.75 * PI],
            target_grid: linspace(-2.0, 2.0, 801),
            param_contexts: linspace(0.0, PI, 129),
        },
        Problem::Circle => Probe {
            slices: circle_slices(),
            target_grid: linspace(-0.2, 1.2, 1401),
            param_contexts: linspace(0.0, 1.0, 201),
        },
    }
}

/// Context slices used for circle densities.
pub fn circle_slices() -> Vec<f64> {
    linspace(0.1, 0.9, 9)
}

fn oracle_density(problem: Problem, context: f64, grid: &[f64]) -> Result<Option<DensityCurve>> {
    match problem {
        Problem::Sde => Ok(Some(stationary_density(context, SdeParams::default().a3, grid)?)),
        _ => Ok(None),
    }
}

/// `context,pi_k…,mu_k…,sigma_k…` over a context grid.
pub fn mixture_params_csv(model: &MdnModel, contexts: &[f64]) -> Result<String> {
    let m = model.components();
    let mut out = "context".to_string();
    for name in ["pi", "mu", "sigma"] {
        for k in 0..m {
            write!(out, ",{name}_{k}").unwrap();
        }
    }
    out.push('\n');
    for (x, mp) in contexts.iter().zip(model.forward_batch(contexts)?) {
        write!(out, "{x}").unwrap();
        for v in mp.pi.iter().chain(&mp.mu).chain(&mp.sigma) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

fn density_csv(grid: &[f64], model: &[f64], oracle: Option<&[f64]>) -> String {
    let mut out = String::from(if oracle.is_some() { "target,model,oracle\n" } else { "target,model\n" });
    for (i, u) in grid.iter().enumerate() {
        match oracle {
            Some(o) => writeln!(out, "{u},{},{}", model[i], o[i]).unwrap(),
            None => writeln!(out, "{u},{}", model[i]).unwrap(),
        }
    }
    out
}

/// Probability mass of the MDN predictive at `context` within `[a, b]`.
pub fn mdn_mass_within(model: &MdnModel, context: f64, a: f64, b: f64) -> Result<f64> {
    let mp = model.forward(&[context])?;
    let grid = linspace(a, b, 4001);
    let p: Vec<f64> = grid.iter().map(|&u| mp.pdf(u)).collect();
    Ok(trapezoid(&grid, &p))
}

/// Root-mean-square distance between component means and the generating
/// Hugoniot branches at the records of each regime. `assignment[r]` is the
/// component standing for regime `r`.
pub fn branch_rmse(model: &MdnModel, data: &Dataset, p: &SurrogateParams, assignment: &[usize]) -> Result<Vec<f64>> {
    let mps = model.forward_batch(&data.contexts)?;
    Regime::ALL
        .iter()
        .map(|&r| {
            let (mut sum, mut n) = (0.0, 0usize);
            for (i, mp) in mps.iter().enumerate() {
                if data.label(i) == Some(r.label()) {
                    let e = mp.mu[assignment[r.label()]] - p.branch(r).us(data.contexts[i]);
                    sum += e * e;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::InvalidInput(format!("no records of regime {}", r.name())));
            }
            Ok((sum / n as f64).sqrt())
        })
        .collect()
}

/// Injective assignment of regimes to components minimizing the summed
/// squared branch RMSE.
pub fn best_assignment(model: &MdnModel, data: &Dataset, p: &SurrogateParams) -> Result<Vec<usize>> {
    let m = model.components();
    if m < Regime::ALL.len() {
        return Err(Error::InvalidConfig("branch matching needs at least three components".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for a in 0..m {
        for b in (0..m).filter(|&b| b != a) {
            for c in (0..m).filter(|&c| c != a && c != b) {
                let assign = vec![a, b, c];
                let cost: f64 = branch_rmse(model, data, p, &assign)?.iter().map(|e| e * e).sum();
                if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                    best = Some((cost, assign));
                }
            }
        }
    }
    Ok(best.expect("at least one assignment").1)
}

/// Components whose weight stays below `threshold` at every context.
pub fn suppressed_components(model: &MdnModel, contexts: &[f64], threshold: f64) -> Result<usize> {
    let mps = model.forward_batch(contexts)?;
    Ok((0..model.components())
        .filter(|&k| mps.iter().all(|mp| mp.pi[k] < threshold))
        .count())
}

/// Inter-mode windows at `λ = 0.8`: the gaps between roots after excluding
/// 0.2 around each.
pub fn bifurcation_windows() -> Vec<(f64, f64)> {
    gaps_between(&bifurcation_roots(0.8), 0.2)
}

pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset) -> Result<Evaluation> {
    let config = &checkpoint.config;
    let seed = checkpoint.seed;
    let mut report = Report::new(&config.to_json(), seed);
    let mut files = Vec::new();
    let probe = probe(config.problem, data);
    let model = &checkpoint.model;
    report.insert("problem", config.problem);
    report.insert("model", model.kind());
    if let Some(l) = checkpoint.metadata.final_loss {
        report.insert("final_loss", l);
    }

    let slice_samples = sample_model(model, &probe.slices, EVAL_SAMPLES, seed, config.sampler_steps)?;
    let mut any_oracle = false;
    for (j, &ctx) in probe.slices.iter().enumerate() {
        let samples = &slice_samples[j * EVAL_SAMPLES..(j + 1) * EVAL_SAMPLES];
        let curve = match model {
            TrainedModel::Mdn(m) => mdn_density_curve(m, &[ctx], &probe.target_grid)?.curve,
            TrainedModel::Cfm(_) => histogram_density(samples, &probe.target_grid)?,
        };
        let oracle = oracle_density(config.problem, ctx, &probe.target_grid)?;
        if let Some(o) = &oracle {
            any_oracle = true;
            report.insert(format!("density_l1_at_{ctx}"), density_l1(&curve, o)?);
        }
        files.push((
            format!("density_{j}.csv"),
            density_csv(&probe.target_grid, &curve.density, oracle.as_ref().map(|o| o.density.as_slice())),
        ));
    }
    report.insert("density_contexts", &probe.slices);
    if !any_oracle {
        report.note(format!("no analytic density for {}; density metrics are model-only", config.problem));
    }

    if let TrainedModel::Mdn(m) = model {
        files.push(("mixture_params.csv".into(), mixture_params_csv(m, &probe.param_contexts)?));
    }

    match config.problem {
        Problem::Bifurcation => {
            let samples = &slice_samples[EVAL_SAMPLES..];
            report.insert("inter_mode_mass_at_0.8", mass_in_windows(samples, &bifurcation_windows()));
            if let TrainedModel::Mdn(m) = model {
                for ctx in [-0.8, 0.8] {
                    let mut modes = extract_modes(m, &[ctx], DEFAULT_PI_THRESHOLD)?;
                    modes.match_oracle(&bifurcation_roots(ctx));
                    report.insert(format!("modes_at_{ctx}"), modes);
                }
                report.insert("mass_near_root_at_-0.8", mdn_mass_within(m, -0.8, -0.2, 0.2)?);
            }
            let grid = linspace(-3.0, 3.0, EVAL_SAMPLES);
            let draws = sample_model(model, &grid, 1, seed, config.sampler_steps)?;
            files.push(("samples.csv".into(), samples_csv(&grid, 1, 1, &draws)));
        }
        Problem::Sde => {
            let n = 1000;
            let draws = sample_model(model, &probe.slices, n, seed, config.sampler_steps)?;
            files.push(("samples.csv".into(), samples_csv(&probe.slices, 1, n, &draws)));
        }
        Problem::Shock => {
            if let TrainedModel::Mdn(m) = model {
                let grid = collocation_points(data, config.collocation_grid)?;
                let h = monotonicity_step(config, m);
                report.insert("monotonicity_violation", monotonicity_violation(m, &grid, h)?);
                if config.data.is_none() && data.is_fully_labeled() {
                    let p = SurrogateParams { n_per_regime: config.n_data, ..SurrogateParams::default() };
                    let assign = match config.class_mode {
                        ClassMode::ClassInformed => vec![0, 1, 2],
                        ClassMode::None => best_assignment(m, data, &p)?,
                    };
                    report.insert("branch_rmse", branch_rmse(m, data, &p, &assign)?);
                    report.insert("branch_assignment", assign);
                } else {
                    report.note("generating branches unknown; branch errors omitted");
                }
            }
        }
        Problem::Chafee => {
            if let TrainedModel::Mdn(m) = model {
                let grid = collocation_points(data, config.collocation_grid)?;
                let (nu, h) = chafee_stencil(config);
                report.insert("steady_state_residual", steady_state_residual(m, &grid, nu, h)?);
                report.insert("mean_component_sigma", mean_component_sigma(m, &grid)?);
            }
        }
        Problem::Circle => {
            if let TrainedModel::Mdn(m) = model {
                report.insert(
                    "suppressed_components",
                    suppressed_components(m, &probe.slices, DEFAULT_PI_THRESHOLD)?,
                );
            }
        }
    }
    Ok(Evaluation { report, files })
}

/// Monotonicity stencil step of a run, falling back to the default.
pub fn monotonicity_step(config: &RunConfig, model: &MdnModel) -> f64 {
    match config.residual {
        Some(ResidualSpec::Monotonicity { step: Some(h) }) => h,
        _ => 1e-2 * model.input_norm.std[0],
    }
}

/// `(ν, h)` of the steady-state residual of a run, falling back to defaults
/// when the run had no physics term.
pub fn chafee_stencil(config: &RunConfig) -> (f64, f64) {
    match config.residual {
        Some(ResidualSpec::ChafeeSteadyState { nu, step }) => (nu, step.unwrap_or(CHAFEE_DEFAULT_STEP)),
        _ => (DEFAULT_NU, CHAFEE_DEFAULT_STEP),
    }
}
