use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tfw_core::config::{ConfigError, Mode};
use tfw_core::experiment::{config_failure, format_checks, run_text, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "tfw", version, about = "TFW crystal and defect solvers")]
struct Cli {
    #[command(subcommand)]
    mode: ModeCmd,
}

#[derive(Subcommand, Debug)]
enum ModeCmd {
    /// Ground state of the perfect crystal on the unit cell.
    Perfect(Common),
    /// One supercell defect solve.
    Defect(Common),
    /// Constrained and free defect solves over a list of supercell sizes.
    ThermoScan(Common),
    /// Homogeneous-host kernels, profiles and fixed-point response.
    Jellium(Common),
    /// Built-in invariant suite.
    Validate(Common),
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Output::Table)]
    output: Output,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Output {
    Table,
    Quiet,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.mode {
        ModeCmd::Perfect(c) => (Mode::Perfect, c),
        ModeCmd::Defect(c) => (Mode::Defect, c),
        ModeCmd::ThermoScan(c) => (Mode::ThermoScan, c),
        ModeCmd::Jellium(c) => (Mode::Jellium, c),
        ModeCmd::Validate(c) => (Mode::Validate, c),
    };
    let opts = RunOptions {
        threads: common.threads,
        seed: common.seed,
        output_dir: None,
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("tfw: cannot configure {n} threads: {e}");
        }
    }
    let outcome = match std::fs::read_to_string(&common.config) {
        Ok(text) => run_text(&text, Some(mode), &opts),
        Err(e) => config_failure(ConfigError::Read(format!("{}: {e}", common.config.display())), &opts),
    };
    if matches!(common.output, Output::Table) && !outcome.manifest.checks.is_empty() {
        print!("{}", format_checks(&outcome.manifest));
    }
    for f in &outcome.manifest.failures {
        eprintln!("tfw: {f}");
    }
    println!(
        "{}: {} (manifest in {})",
        mode.name(),
        outcome.manifest.status,
        outcome.output_dir.join("manifest.json").display()
    );
    ExitCode::from(outcome.exit_code as u8)
}
