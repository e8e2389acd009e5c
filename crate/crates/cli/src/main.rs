use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "trapsim", version, about = "Random walks in trap environments: reproducible experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Summarize a TRAJ trajectory file.
    Replay { file: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

/// Caps the global pool at `TRAPSIM_THREADS` workers when set.
fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("TRAPSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("TRAPSIM_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Run { config } => {
            let report = trapsim_cli::run(&config);
            let s = &report.summary;
            if let Some(err) = &s.error {
                eprintln!("error ({}): {}", err.kind, err.message);
            } else {
                for v in &s.verdicts {
                    let tag = if v.pass { "PASS" } else if v.gating { "FAIL" } else { "NOTE" };
                    println!("{tag} {}: {} (threshold {}) {}", v.name, v.value, v.threshold, v.detail);
                }
                if let Some(dir) = &report.output_dir {
                    println!("artifacts in {}", dir.display());
                }
            }
            ExitCode::from(report.exit_code as u8)
        }
        Command::Replay { file } => match trapsim_cli::replay(&file) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::ListExperiments => {
            print!("{}", trapsim_cli::list_experiments());
            ExitCode::SUCCESS
        }
    }
}
