use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hj_lab::runner::{run, validate, ExperimentConfig};
use hj_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "hj-lab", version, about = "Run Hamilton-Jacobi rate experiments")]
struct Cli {
    /// TOML or JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated ε values.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// stability, gradient or limit.
    #[arg(long)]
    kind: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one Cauchy problem and dump slices.
    Solve(Shared),
    /// Dual Fokker-Planck residuals and certificates.
    Duality(Shared),
    /// Tabulate the effective Hamiltonian.
    Cell(Shared),
    /// ε-sweep with a rate fit.
    Rate(Shared),
    /// Both game Hamiltonians and their comparison.
    Isaacs(Shared),
    /// Mean field game solve or ε-sweep.
    Mfg(Shared),
    /// Dry run: check a config without solving.
    Validate {
        /// Command the config is meant for (default: its `command` key, else solve).
        target: Option<String>,
        #[command(flatten)]
        shared: Shared,
    },
}

fn load(cli: &Cli, shared: &Shared) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let s = shared.clone();
    cfg.scenario = s.scenario.or(cfg.scenario);
    cfg.model = s.model.or(cfg.model);
    cfg.eps = s.eps.or(cfg.eps);
    cfg.iters = s.iters.or(cfg.iters);
    cfg.tol = s.tol.or(cfg.tol);
    cfg.kind = s.kind.or(cfg.kind);
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let (name, shared) = match &cli.command {
        Command::Solve(s) => ("solve", s),
        Command::Duality(s) => ("duality", s),
        Command::Cell(s) => ("cell", s),
        Command::Rate(s) => ("rate", s),
        Command::Isaacs(s) => ("isaacs", s),
        Command::Mfg(s) => ("mfg", s),
        Command::Validate { shared, .. } => ("validate", shared),
    };
    let mut cfg = load(cli, shared)?;
    if let Command::Validate { target: Some(t), .. } = &cli.command {
        cfg.command = Some(t.clone());
    }
    if name == "validate" && cfg.out.is_none() {
        let target = cfg.command.clone().unwrap_or_else(|| "solve".into());
        let r = validate(&target, &cfg);
        println!("{}", serde_json::to_string_pretty(&r)?);
        return if r.ok { Ok(()) } else { Err(Error::Config(r.errors.join("; "))) };
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    let files = run(name, &cfg, &out)?;
    println!("{} files written to {}", files.len() + 1, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
