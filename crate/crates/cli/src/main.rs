use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use relaycap_cli::{emit, load, run, Mode, Overrides};

/// Capacity, simulation and oracle checks for state-dependent half-duplex
/// relay channels.
///
/// Settings are read from `--config` (JSON), then positional `key=value`
/// overrides, then the flags below; later sources win. Bare keys go to the
/// mode's own section (`solver`, `sim`, `fading`, `oracle`, `example.params`),
/// dotted keys address any field, and `seed` / `spec_path` are top-level.
///
/// Exit status: 0 when every check passed, 1 when a check failed, 2 on
/// invalid input or solver errors.
#[derive(Parser, Debug)]
#[command(name = "relaycap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the capacity of a channel spec.
    Capacity(Common),
    /// Solve, then run the buffer-aided protocol and the alternating baseline.
    Simulate(Common),
    /// Threshold and capacity for a fading density.
    Fading(Common),
    /// Compare the solver with a brute-force search on random specs.
    OracleCheck(Common),
    /// Built-in instances with known answers: fixed, onoff, rayleigh.
    Example(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulated blocks.
    #[arg(long, allow_negative_numbers = true)]
    blocks: Option<i64>,
    /// Rate back-off in bits per channel use.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Tolerance of the mode's main solver.
    #[arg(long)]
    tol: Option<f64>,
    /// `key=value` overrides (and, for `example`, the instance name).
    params: Vec<String>,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    let (mode, c) = match cli.command {
        Command::Capacity(c) => (Mode::Capacity, c),
        Command::Simulate(c) => (Mode::Simulate, c),
        Command::Fading(c) => (Mode::Fading, c),
        Command::OracleCheck(c) => (Mode::OracleCheck, c),
        Command::Example(c) => (Mode::Example, c),
    };
    let ov = Overrides {
        seed: c.seed,
        out: c.out,
        blocks: c.blocks,
        epsilon: c.epsilon,
        tol: c.tol,
        params: c.params,
    };
    let cfg = load(mode, c.config.as_deref(), &ov).context("invalid configuration")?;
    let outcome = run(&cfg).with_context(|| format!("{mode} run aborted"))?;
    Ok(emit(&cfg, &outcome)?)
}
