//! `physmdn`: generate benchmark data, train mixture density networks and
//! flow-matching baselines, draw samples and evaluate against oracles.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use physmdn::checkpoint::Checkpoint;
use physmdn::config::{ModelKind, PartialConfig, RunConfig};
use physmdn::losses::{ClassMode, ResidualSpec};
use physmdn::pipeline::{dataset_for, evaluate, generate, load_dataset, sample_model, samples_csv, train_run};
use physmdn::problems::chafee::DEFAULT_NU;
use physmdn::problems::Problem;
use physmdn::Error;

const EXIT_IO: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "physmdn", version, about = "Physics-regularized mixture density networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a benchmark dataset (CSV plus JSON sidecar).
    Gen {
        #[command(flatten)]
        run: RunArgs,
        /// Output CSV; the sidecar is written next to it with a .json extension.
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json, train_log.csv and config.json.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Run once per seed in child processes, e.g. `seeds=0,1,2`. Each run
        /// writes to `<out-dir>/seed_<k>`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated context values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "grid")]
        contexts: Vec<f64>,
        /// Equispaced contexts `lo:hi:count`.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Samples per context.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Defaults to the checkpoint seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Euler steps for flow-matching checkpoints.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: report.json plus plot-data CSVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to evaluate on; defaults to the training data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<Problem>,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Mixture components.
    #[arg(long = "components", short = 'M')]
    components: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long = "iters")]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Physics weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// `monotonicity`, `chafee` or `none`.
    #[arg(long)]
    residual: Option<String>,
    /// Diffusivity of the chafee residual.
    #[arg(long)]
    nu: Option<f64>,
    /// Finite-difference step of the residual stencil.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    class_informed: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset size (problem specific).
    #[arg(long = "n")]
    n_data: Option<usize>,
    #[arg(long)]
    collocation_grid: Option<usize>,
    #[arg(long)]
    sampler_steps: Option<usize>,
    /// Allow residuals outside their native problem.
    #[arg(long)]
    force: bool,
    /// Training data; generated from the configuration when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> physmdn::Result<RunConfig> {
        let file = match &self.config {
            Some(p) => PartialConfig::from_json(&std::fs::read_to_string(p)?)?,
            None => PartialConfig::default(),
        };
        let (residual, no_residual) = match self.residual.as_deref() {
            None => (None, None),
            Some("none") => (None, Some(true)),
            Some("monotonicity") => (Some(ResidualSpec::Monotonicity { step: self.step }), None),
            Some("chafee") => (
                Some(ResidualSpec::ChafeeSteadyState { nu: self.nu.unwrap_or(DEFAULT_NU), step: self.step }),
                None,
            ),
            Some(other) => return Err(Error::InvalidConfig(format!("unknown residual {other:?}"))),
        };
        let flags = PartialConfig {
            problem: self.problem,
            model: self.model,
            components: self.components,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            iterations: self.iterations,
            lr: self.lr,
            lambda: self.lambda,
            residual,
            no_residual,
            class_mode: self.class_informed.then_some(ClassMode::ClassInformed),
            seed: self.seed,
            n_data: self.n_data,
            collocation_grid: self.collocation_grid,
            sampler_steps: self.sampler_steps,
            force: self.force.then_some(true),
            data: self.data.clone(),
            out_dir: self.out_dir.clone(),
        };
        file.merged(&flags).resolve()
    }
}

fn write(path: &Path, contents: &str) -> physmdn::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn out_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_gen(run: &RunArgs, out: &Path) -> physmdn::Result<()> {
    let config = run.resolve()?;
    let g = generate(&config)?;
    write(out, &g.csv)?;
    write(&out.with_extension("json"), &g.sidecar)?;
    println!("wrote {} records to {}", g.dataset.len(), out.display());
    Ok(())
}

fn cmd_train(run: &RunArgs) -> physmdn::Result<()> {
    let config = run.resolve()?;
    let data = dataset_for(&config)?;
    let dir = out_dir(&config);
    write(&dir.join("config.json"), &(config.to_json() + "\n"))?;
    let started = std::time::Instant::now();
    match train_run(&config, &data) {
        Ok(trained) => {
            trained.log.save(dir.join("train_log.csv"))?;
            trained.checkpoint.save(dir.join("checkpoint.json"))?;
            if let Some(l) = trained.log.last() {
                println!(
                    "{} {:?} seed {}: {} iterations in {:.1?}; nll {:.6} physics {:.6} total {:.6}",
                    config.problem,
                    config.model,
                    config.seed,
                    trained.log.len(),
                    started.elapsed(),
                    l.nll,
                    l.physics,
                    l.total
                );
            }
            Ok(())
        }
        Err((e, log)) => {
            log.save(dir.join("train_log.csv"))?;
            Err(e)
        }
    }
}

fn parse_sweep(spec: &str) -> physmdn::Result<Vec<u64>> {
    let list = spec
        .strip_prefix("seeds=")
        .ok_or_else(|| Error::InvalidConfig(format!("sweep must look like seeds=0,1,2, got {spec:?}")))?;
    list.split(',')
        .map(|s| s.trim().parse().map_err(|e| Error::InvalidConfig(format!("seed {s:?}: {e}"))))
        .collect()
}

fn cmd_sweep(spec: &str) -> Result<(), u8> {
    let seeds = parse_sweep(spec).map_err(report)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base = args
        .iter()
        .position(|a| a == "--out-dir")
        .and_then(|i| args.get(i + 1))
        .map_or_else(|| PathBuf::from("."), PathBuf::from);
    let mut forwarded = Vec::new();
    let mut skip = false;
    for a in &args {
        if skip {
            skip = false;
            continue;
        }
        if matches!(a.as_str(), "--sweep" | "--seed" | "--out-dir") {
            skip = true;
            continue;
        }
        if a.starts_with("--sweep=") || a.starts_with("--seed=") || a.starts_with("--out-dir=") {
            continue;
        }
        forwarded.push(a.clone());
    }
    let exe = std::env::current_exe().map_err(|e| report(e.into()))?;
    let mut worst = 0u8;
    for seed in seeds {
        let status = Command::new(&exe)
            .args(&forwarded)
            .arg("--seed")
            .arg(seed.to_string())
            .arg("--out-dir")
            .arg(base.join(format!("seed_{seed}")))
            .status()
            .map_err(|e| report(e.into()))?;
        let code = status.code().map_or(EXIT_IO, |c| c as u8);
        worst = worst.max(code);
    }
    if worst == 0 {
        Ok(())
    } else {
        Err(worst)
    }
}

fn parse_grid(spec: &str) -> physmdn::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidConfig(format!("grid must be lo:hi:count, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || hi < lo || hi.is_nan() || lo.is_nan() {
        return Err(bad());
    }
    Ok(if n == 1 { vec![lo] } else { physmdn::density::linspace(lo, hi, n) })
}

fn cmd_sample(
    checkpoint: &Path,
    contexts: &[f64],
    grid: Option<&str>,
    n: usize,
    seed: Option<u64>,
    steps: Option<usize>,
    out: &Path,
) -> physmdn::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let contexts = match grid {
        Some(g) => parse_grid(g)?,
        None => contexts.to_vec(),
    };
    let seed = seed.unwrap_or(ck.seed);
    let steps = steps.unwrap_or(ck.config.sampler_steps);
    let samples = sample_model(&ck.model, &contexts, n, seed, steps)?;
    let d = ck.model.context_dim();
    write(out, &samples_csv(&contexts, d, n, &samples))?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: Option<&Path>, dir: &Path) -> physmdn::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let dataset = match data {
        Some(p) => load_dataset(p)?,
        None => dataset_for(&ck.config)?,
    };
    let ev = evaluate(&ck, &dataset)?;
    write(&dir.join("report.json"), &ev.report.to_json())?;
    for (name, contents) in &ev.files {
        write(&dir.join(name), contents)?;
    }
    for (k, v) in &ev.report.metrics {
        if v.is_number() {
            println!("{k}: {v}");
        }
    }
    for note in &ev.report.notes {
        println!("note: {note}");
    }
    Ok(())
}

fn report(e: Error) -> u8 {
    eprintln!("error: {e}");
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_IO
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Gen { run, out } => cmd_gen(run, out).map_err(report),
        Cmd::Train { sweep: Some(spec), .. } => cmd_sweep(spec),
        Cmd::Train { run, sweep: None } => cmd_train(run).map_err(report),
        Cmd::Sample { checkpoint, contexts, grid, n, seed, steps, out } => {
            cmd_sample(checkpoint, contexts, grid.as_deref(), *n, *seed, *steps, out).map_err(report)
        }
        Cmd::Eval { checkpoint, data, out_dir } => cmd_eval(checkpoint, data.as_deref(), out_dir).map_err(report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
