use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stable_triangle::config::Config;
use stable_triangle::eval::{
    default_sigma_grid, pr_sweep, read_ground_truth, read_records, run_sequence, write_outputs, write_pr, EvalError,
};
use stable_triangle::verify::SelectionMode;

#[derive(Parser)]
#[command(name = "std-eval", about = "Replay LiDAR sequences through the triangle-descriptor loop detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Selection {
    First,
    Best,
}

#[derive(Subcommand)]
enum Command {
    /// Replay scans with poses and write records, ground truth, PR table and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-score stored candidates over σ_pc ∈ {0.1, …, 0.9}.
    Sweep {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "first")]
        selection: Selection,
    },
}

fn run(cli: Cli) -> Result<(), EvalError> {
    match cli.command {
        Command::Run {
            config,
            scans,
            poses,
            out,
        } => {
            let cfg = Config::from_file(&config)?;
            let result = run_sequence(&cfg, &scans, &poses)?;
            write_outputs(&out, &result)?;
            let s = &result.summary;
            println!(
                "{} keyframes, {} detections ({} true, {} false) at sigma_pc {}; mean {:.1} ms/keyframe",
                s.keyframes, s.detections, s.true_positives, s.false_positives, s.sigma_pc, s.latency.total.mean_ms
            );
        }
        Command::Sweep {
            records,
            gt,
            out,
            selection,
        } => {
            let records = read_records(&records)?;
            let gt = read_ground_truth(&gt)?;
            let mode = match selection {
                Selection::First => SelectionMode::FirstPass,
                Selection::Best => SelectionMode::BestOverlap,
            };
            let rows = pr_sweep(&records, &gt, &default_sigma_grid(), mode)?;
            write_pr(&out, &rows)?;
            println!("{} thresholds written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
