use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgdlab::experiment::{self, ExperimentConfig};
use sgdlab::Error;

#[derive(Parser)]
#[command(name = "sgdlab", version, about = "SGD-with-momentum phase-space experiments on quadratic losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, `spec_version = 1`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replicas and sweep points.
    #[arg(long, env = "SGDLAB_WORKERS")]
    workers: Option<usize>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate SGD and write one trajectory CSV per replica.
    Simulate(Common),
    /// Simulate and compare against the analytic OU predictions.
    Compare(Common),
    /// Vary one hyperparameter over a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of eta, beta, batch_size, lambda; defaults to `analysis.sweep.param`.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated grid values; defaults to `analysis.sweep`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Stationary decomposition certificate and eigenplane field samples.
    Decompose(Common),
    /// Analytic curves only.
    Theory(Common),
    /// Power-law fit of `Delta_sq` in an existing trajectory CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV with `step` and `Delta_sq` columns.
        #[arg(long)]
        csv: PathBuf,
        /// Fraction of leading points dropped before fitting.
        #[arg(long)]
        window: Option<f64>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, Error> {
    if workers == Some(0) {
        return Err(Error::Config("--workers must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            let files = pool(c.workers)?.install(|| experiment::cmd_simulate(&cfg, &out))?;
            println!("wrote {} trajectories to {}", files.len(), out.display());
        }
        Command::Compare(c) => {
            let (cfg, out) = load(&c)?;
            let summary = pool(c.workers)?.install(|| experiment::cmd_compare(&cfg, &out))?;
            for check in &summary.checks {
                let tag = if check.passed { "ok  " } else { "FAIL" };
                println!("{tag} {} = {:.4e} (tol {:.1e})", check.name, check.value, check.tolerance);
            }
            let failing = summary.failing();
            if !failing.is_empty() {
                let names: Vec<_> = failing.iter().map(|c| c.name.as_str()).collect();
                return Err(Error::Argument(format!("tolerance violated: {}", names.join(", "))));
            }
        }
        Command::Sweep { common, param, values } => {
            let (cfg, out) = load(&common)?;
            let spec = cfg.analysis.sweep.as_ref();
            let param = param
                .or_else(|| spec.map(|s| s.param.clone()))
                .ok_or_else(|| Error::Config("sweep needs --param or analysis.sweep.param".into()))?;
            let grid = match values {
                Some(v) => v,
                None => spec
                    .ok_or_else(|| Error::Config("sweep needs --values or analysis.sweep".into()))?
                    .grid()?,
            };
            let rows = pool(common.workers)?.install(|| experiment::cmd_sweep(&cfg, &param, &grid, &out))?;
            println!("wrote {} sweep rows to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::Decompose(c) => {
            let (cfg, out) = load(&c)?;
            let report = experiment::cmd_decompose(&cfg, &out)?;
            println!("{:?}, lyapunov residual {:.2e}", report.certificate.balance, report.certificate.lyapunov_residual);
        }
        Command::Theory(c) => {
            let (cfg, out) = load(&c)?;
            experiment::cmd_theory(&cfg, &out)?;
            println!("wrote analytic curves to {}", out.display());
        }
        Command::Fit { common, csv, window } => {
            let cfg = match &common.config {
                Some(_) => Some(load(&common)?),
                None => None,
            };
            let window = window.or(cfg.as_ref().map(|(c, _)| c.analysis.fit_window)).unwrap_or(1.0 / 3.0);
            let out = common
                .out
                .clone()
                .or(cfg.map(|(_, o)| o))
                .unwrap_or_else(|| csv.parent().unwrap_or(Path::new(".")).to_path_buf());
            let fit = experiment::cmd_fit(&csv, window, &out)?;
            println!("c = {:.4}, amplitude = {:.4e}, points = {}", fit.exponent, fit.amplitude, fit.points);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("sgdlab: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("sgdlab: {e}");
            ExitCode::from(1)
        }
    }
}
