use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use basket_etd::cli::{self, RunConfig};
use basket_etd::Error;

#[derive(Parser)]
#[command(version, about = "Multi-asset American basket option pricer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pricing pipeline and write summary, surface and query table.
    Price(Common),
    /// Lattice prices at the query spots.
    OracleTree(Common),
    /// European Monte Carlo prices at the query spots.
    OracleMc(Common),
    /// Rerun the pipeline for each penalty rate in `[sweep] lambdas`.
    SweepLambda(Common),
    /// Print the stability report without time stepping.
    CheckStability(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    override_stability: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if self.override_stability {
            cfg.flags.override_stability = true;
        }
        if let Some(seed) = self.seed {
            cfg.flags.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
        Ok(cfg)
    }
}

/// Exit status for a run refused by the stability check.
const EXIT_UNSTABLE: u8 = 2;

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let unstable = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e.root(), Error::Unstable { .. }));
            ExitCode::from(if unstable { EXIT_UNSTABLE } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Price(args) => {
            let cfg = args.load()?;
            let sol = cli::run(&cfg)?;
            let written = cli::write_outputs(&sol, &cfg, &cfg.output.dir)
                .with_context(|| format!("writing to {}", cfg.output.dir.display()))?;
            let s = &sol.summary;
            println!(
                "nodes {}  h {}  k {}  steps {}  backend {:?}  stable {}",
                s.nodes, s.h, s.k, s.steps, s.backend, s.stability.satisfied
            );
            for q in &s.queries {
                println!("{:?} -> {}", q.spot, cli::sig10(q.price));
            }
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::OracleTree(args) => {
            let cfg = args.load()?;
            for q in cli::oracle_tree(&cfg)? {
                println!("{:?} -> {}", q.spot, cli::sig10(q.price));
            }
        }
        Command::OracleMc(args) => {
            let cfg = args.load()?;
            for (spot, est) in cli::oracle_mc(&cfg)? {
                println!(
                    "{spot:?} -> {} +- {} ({} samples)",
                    cli::sig10(est.price),
                    cli::sig10(est.std_error),
                    est.samples
                );
            }
        }
        Command::SweepLambda(args) => {
            let cfg = args.load()?;
            let rows = cli::sweep_lambda(&cfg)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            let path = cfg.output.dir.join(&cfg.output.sweep);
            cli::write_sweep(&rows, &cfg.queries.spots, &path)?;
            for r in &rows {
                let prices: Vec<String> = r.prices.iter().map(|&p| cli::sig10(p)).collect();
                println!(
                    "lambda {:>8}  k {:e}  steps {:>6}  {}",
                    r.lambda,
                    r.k,
                    r.steps,
                    prices.join(" ")
                );
            }
            println!("wrote {}", path.display());
        }
        Command::CheckStability(args) => {
            let cfg = args.load()?;
            let plan = cli::plan(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&plan.stability)?);
            if !plan.stability.satisfied {
                return Ok(ExitCode::from(EXIT_UNSTABLE));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
