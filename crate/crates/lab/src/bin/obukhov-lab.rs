use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obukhov_lab::{output_dir, run, RunOptions, ScenarioConfig, REPORT_FILE};

#[derive(Parser)]
#[command(version, about = "Run shell-model blow-up experiments from a JSON configuration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scenario described by a configuration file
    Run {
        config: PathBuf,
        /// Print every check and exit with status 4 if a gated one fails
        #[arg(long)]
        check: bool,
        /// Output directory (overrides the configuration)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Integrate backward even when the amplification budget is exceeded
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        check,
        out,
        force,
    } = Cli::parse().command;

    let cfg = match ScenarioConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let options = RunOptions { out_dir: out, force };
    let dir = output_dir(&cfg, &options);
    let report = match run(&cfg, &options) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };

    println!("{}: {} files, report at {}", cfg.scenario.name(), report.files.len() + 1, dir.join(REPORT_FILE).display());
    for note in &report.notes {
        println!("note: {note}");
    }
    if check {
        for c in &report.checks {
            println!("{}", c.line());
        }
        if !report.passed() {
            return ExitCode::from(4);
        }
    }
    ExitCode::SUCCESS
}
