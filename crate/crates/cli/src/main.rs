use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use topeff_cli::commands::{run_analyze, run_simulate, run_tune};
use topeff_cli::config::{load_config, RankRule};
use topeff_cli::report::write_json;

#[derive(Parser)]
#[command(name = "topeff", version, about = "Winner's-curse-corrected inference for top policy effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full calibration pipeline on a CSV dataset.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Covariance estimator: kj, hck, ew, or hc3.
        #[arg(long)]
        estimator: Option<String>,
        /// Fixed number of top ranks to report.
        #[arg(long)]
        d0: Option<usize>,
        /// Effect-size threshold C for a data-dependent number of ranks.
        #[arg(long)]
        threshold: Option<f64>,
        /// Separation constant C1 for the threshold rule.
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a named Monte Carlo experiment.
    Simulate {
        /// One of: table1, table2, table3, figure1.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        /// Thread count; defaults to all cores.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Emit selected tuning pairs and their loss surfaces.
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// Override the candidate grid size.
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn run(cli: Cli) -> topeff_cli::error::Result<()> {
    match cli.command {
        Command::Analyze {
            config,
            estimator,
            d0,
            threshold,
            c1,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(est) = estimator {
                cfg.estimator = est
                    .parse()
                    .map_err(topeff_cli::error::CliError::BadConfig)?;
            }
            if let Some(d0) = d0 {
                cfg.rank_rule = RankRule::Fixed(d0);
            }
            if let Some(c) = threshold {
                cfg.rank_rule = RankRule::Threshold { c, c1: c1.unwrap_or(1.0) };
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let out_dir = cfg.out_dir.clone();
            let report = run_analyze(&cfg, &out_dir)?;
            for row in &report.calibrated {
                println!(
                    "rank {} ({}): estimate {:.4}, {:.0}% CI ({:.4}, {:.4}), p = {:.3}",
                    row.rank,
                    row.policy,
                    row.estimate,
                    100.0 * (1.0 - report.alpha),
                    row.ci_lower,
                    row.ci_upper,
                    row.p_value
                );
            }
            println!("reports written to {}", out_dir.display());
        }
        Command::Simulate {
            preset,
            reps,
            workers,
            seed,
            out,
        } => {
            if let Some(k) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .map_err(|e| topeff_cli::error::CliError::BadConfig(e.to_string()))?;
            }
            let results = run_simulate(&preset, reps, 0.05, 2000, seed, &out)?;
            println!(
                "{} cells written to {}",
                results.len(),
                out.join(format!("{preset}.csv")).display()
            );
        }
        Command::Tune { config, grid } => {
            let mut cfg = load_config(&config)?;
            if let Some(g) = grid {
                cfg.tuning.grid = g;
            }
            let ranks = run_tune(&cfg)?;
            let path = cfg.out_dir.join("tuning.json");
            std::fs::create_dir_all(&cfg.out_dir)?;
            write_json(&ranks, &path)?;
            for r in &ranks {
                println!(
                    "rank {}: c_L = {:.3}, c_R = {:.3}, loss = {:.5} ({:?})",
                    r.rank, r.selected.c_l, r.selected.c_r, r.selected.loss, r.selected.selection_mode
                );
            }
            println!("loss surfaces written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
