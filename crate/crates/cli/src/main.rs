//! `degenheat`: batch front-end for the weighted degenerate heat toolkit.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numerical non-convergence.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{Outcome, RunError};
use config::RunConfig;
use output::{sha256_hex, Envelope};

#[derive(Parser)]
#[command(name = "degenheat", version, about = "Potential theory for D_t(|y|^a u) - div(|y|^a grad u)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for `<command>*.csv` and `<command>.json`; without
    /// it the tables are written to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "DEGENHEAT_WORKERS")]
    workers: Option<usize>,
    /// Overrides the command's main tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Refuse to run unless the config hashes to this SHA-256 digest.
    #[arg(long, global = true)]
    expect_digest: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Tabulate the kernel, its gradient and envelope ratios.
    Kernel,
    /// Mass, semigroup and equation-residual checks.
    Check,
    /// Solve a Dirichlet problem on a box.
    Dirichlet,
    /// Lattice LP capacity of a set.
    Capacity,
    /// Shell series and regularity verdict at a boundary point.
    Wiener,
    /// Solid means over heat balls.
    Meanvalue,
    /// Harnack quotient experiment.
    Harnack,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Check => "check",
            Command::Dirichlet => "dirichlet",
            Command::Capacity => "capacity",
            Command::Wiener => "wiener",
            Command::Meanvalue => "meanvalue",
            Command::Harnack => "harnack",
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, RunError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| RunError::Config("--config is required".into()))?;
    let bytes = std::fs::read(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let digest = sha256_hex(&bytes);
    if let Some(want) = &cli.expect_digest {
        if !want.eq_ignore_ascii_case(&digest) {
            return Err(RunError::Config(format!("config digest {digest} does not match {want}")));
        }
    }
    let text = String::from_utf8(bytes).map_err(|_| RunError::Config("config is not UTF-8".into()))?;
    let cfg = RunConfig::parse(&text)?;
    if let Some(t) = cli.tol {
        config::positive(t, "--tol")?;
    }
    let start = Instant::now();
    let mut outcome = match cli.command {
        Command::Kernel => commands::kernel(&cfg),
        Command::Check => commands::check(&cfg, cli.tol),
        Command::Dirichlet => commands::dirichlet(&cfg, cli.tol),
        Command::Capacity => commands::capacity(&cfg, cli.tol),
        Command::Wiener => commands::wiener(&cfg, cli.tol),
        Command::Meanvalue => commands::meanvalue(&cfg, cli.tol),
        Command::Harnack => commands::harnack(&cfg),
    }?;
    let envelope = Envelope {
        command: cli.command.name().to_string(),
        config_digest: digest,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        payload: std::mem::take(&mut outcome.payload),
        diagnostics: outcome.diagnostics.clone(),
    };
    write_outputs(cli, &outcome, &envelope).map_err(|e| RunError::Config(format!("writing output: {e}")))?;
    Ok(outcome)
}

fn write_outputs(cli: &Cli, outcome: &Outcome, envelope: &Envelope) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(envelope).expect("envelope serializes");
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for t in &outcome.tables {
                std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
            }
            std::fs::write(dir.join(format!("{}.json", envelope.command)), json + "\n")?;
        }
        None => {
            let mut s = String::new();
            for (i, t) in outcome.tables.iter().enumerate() {
                if i > 0 {
                    s.push('\n');
                }
                s.push_str(&t.to_csv());
            }
            print!("{s}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("configuration error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("warning: worker pool: {e}");
        }
    }
    match run(&cli) {
        Ok(o) => {
            for d in &o.diagnostics {
                eprintln!("{d}");
            }
            if o.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
