use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gnp_bench::config::{ExperimentConfig, PRESETS};
use gnp_bench::plot::{self, XAxis, YAxis};
use gnp_bench::{check, run, BenchError, RunArtifact};

/// Gauss-Newton-Polyak tensor sensing benchmarks.
///
/// `--config` takes a JSON file or the name of a preset (fig1-desk,
/// fig2-desk, fig3-desk, fig4-desk, fig5-desk, restart-desk, check-desk).
/// Set GNP_BENCH_THREADS to cap sweep threads.
#[derive(Parser)]
#[command(name = "gnp-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a config one after another.
    Run {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the seed axis with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the cells of a config concurrently and write an aggregate table.
    Sweep {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference, rank, sharpness and rate diagnostics.
    Check {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot the trace CSVs of a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "oracle_calls")]
        x: XArg,
        #[arg(long, value_enum, default_value = "obj_gap")]
        y: YArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum XArg {
    #[value(name = "oracle_calls")]
    OracleCalls,
    Time,
}

#[derive(Clone, Copy, ValueEnum)]
enum YArg {
    #[value(name = "obj_gap")]
    ObjGap,
    #[value(name = "image_dist")]
    ImageDist,
}

fn load(config: &str) -> Result<ExperimentConfig, BenchError> {
    let path = Path::new(config);
    if !path.exists() && PRESETS.contains(&config) {
        return ExperimentConfig::from_preset(config);
    }
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{config}: {e}")))?;
    ExperimentConfig::from_json(&text)
}

fn report(artifacts: &[RunArtifact]) -> ExitCode {
    let mut failed = 0;
    for a in artifacts {
        match &a.error {
            None => println!(
                "{}: {} calls, best gap {}, stop {}",
                a.config.id(),
                a.oracle_calls,
                a.best_gap.map_or("-".into(), |g| format!("{g:.3e}")),
                a.stop_reason.as_deref().unwrap_or("-")
            ),
            Some(e) => {
                failed += 1;
                println!("{}: FAILED: {e}", a.config.id());
            }
        }
    }
    if failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => load(&config).and_then(|mut cfg| {
            if let Some(s) = seed {
                cfg.seed = s.into();
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            run::run(&cfg, &out).map(|a| report(&a))
        }),
        Command::Sweep { config, out } => load(&config).and_then(|cfg| {
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            run::sweep(&cfg, &out).map(|a| report(&a))
        }),
        Command::Check { config, out } => load(&config).and_then(|cfg| {
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            check::check(&cfg, &out).map(|rep| {
                println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
                if rep.passed {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(3)
                }
            })
        }),
        Command::Plot { input, x, y } => {
            let x = match x {
                XArg::OracleCalls => XAxis::OracleCalls,
                XArg::Time => XAxis::Time,
            };
            let y = match y {
                YArg::ObjGap => YAxis::ObjGap,
                YArg::ImageDist => YAxis::ImageDist,
            };
            plot::plot_dir(&input, x, y).map(|path| {
                println!("wrote {}", path.display());
                ExitCode::SUCCESS
            })
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    })
}
