use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use qdlaser::sweep::{self, SweepConfig, SweepOutcome};
use qdlaser::{invariants, par};

#[derive(Parser)]
#[command(name = "qdlaser", version, about = "Steady-state photon statistics of two pumped quantum dots in a two-mode cavity")]
struct Cli {
    /// Worker threads for sweep points (defaults to all cores).
    #[arg(long, global = true, env = "QDLASER_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Exit 0 even if some points hit the truncation limit or failed.
        #[arg(long)]
        allow_unconverged: bool,
    },
    /// Run a bundled preset (fig2, fig3, fig4, fig5, fig6).
    Preset {
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        allow_unconverged: bool,
        /// Print the preset config instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// Run the built-in invariant checks.
    Check,
}

fn run_configs(configs: &[SweepConfig], out: &PathBuf, workers: Option<usize>, allow: bool) -> anyhow::Result<ExitCode> {
    let mut unconverged = 0;
    for cfg in configs {
        let outcome: SweepOutcome = par::with_workers(workers, || sweep::run_sweep(cfg))
            .with_context(|| format!("sweep {}", cfg.name))?;
        for path in sweep::write_outputs(&outcome, out)? {
            println!("wrote {}", path.display());
        }
        let n = outcome.unconverged();
        if n > 0 {
            log::warn!("{}: {n} point(s) unconverged or failed; see the manifest", cfg.name);
        }
        unconverged += n;
    }
    if unconverged > 0 && !allow {
        eprintln!("{unconverged} unconverged point(s); rerun with --allow-unconverged to accept");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.workers == Some(0) {
        bail!("worker count must be at least 1");
    }
    match cli.command {
        Command::Run { config, out, allow_unconverged } => {
            let cfg = SweepConfig::from_path(&config).with_context(|| format!("reading {}", config.display()))?;
            run_configs(&[cfg], &out, cli.workers, allow_unconverged)
        }
        Command::Preset { name, out, allow_unconverged, print } => {
            let configs = sweep::preset(&name)?;
            if print {
                for cfg in &configs {
                    println!("{}", cfg.to_toml_string()?);
                }
                return Ok(ExitCode::SUCCESS);
            }
            run_configs(&configs, &out, cli.workers, allow_unconverged)
        }
        Command::Check => {
            let results = par::with_workers(cli.workers, invariants::run_all);
            let mut failed = 0;
            for r in &results {
                let tag = if r.pass { "PASS" } else { "FAIL" };
                println!("{tag}  {:<45} {:>10.3e} < {:.1e}  {}", r.name, r.value, r.threshold, r.detail);
                failed += usize::from(!r.pass);
            }
            if failed > 0 {
                eprintln!("{failed} check(s) failed");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
