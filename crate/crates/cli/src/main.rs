use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use tnwp_cli::verify::fault::{Sabotaged, Sweep};
use tnwp_cli::verify::{verify, VerifyOptions};
use tnwp_cli::{bench, expected, fdvar, fixtures};
use tnwp_core::autodiff::Differentiable;
use tnwp_core::{load_model, Execution};

#[derive(Parser)]
#[command(name = "tnwp", version, about = "Tangent-linear and adjoint tooling for tnwp model files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SabotageArg {
    Tangent,
    Adjoint,
}

#[derive(Subcommand)]
enum Command {
    /// Check tangent and adjoint against each other and finite differences.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Probes for the Jacobian checks.
        #[arg(long, default_value_t = 3)]
        jacobian_probes: usize,
        /// Skip the Jacobian checks above this many entries.
        #[arg(long, default_value_t = 1_000_000)]
        jacobian_cap: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[arg(long, value_enum, hide = true)]
        sabotage: Option<SabotageArg>,
    },
    /// Write the deterministic fixture models.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time batched forwards per chunk size and confirm identical outputs.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1024)]
        batch: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,16,64,256")]
        chunks: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        sequential: bool,
    },
    /// Recover a hidden state from its model image by adjoint gradient descent.
    Fdvar {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
    },
    /// Write an expected-values file for the host harness.
    Expected {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Verify {
            model,
            seed,
            samples,
            jacobian_probes,
            jacobian_cap,
            json_out,
            sabotage,
        } => {
            let graph = load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let opts = VerifyOptions {
                seed,
                samples,
                jacobian_probes,
                jacobian_cap,
                ..VerifyOptions::default()
            };
            let sabotaged = sabotage.map(|s| Sabotaged {
                inner: &graph,
                sweep: match s {
                    SabotageArg::Tangent => Sweep::Tangent,
                    SabotageArg::Adjoint => Sweep::Adjoint,
                },
            });
            let target: &dyn Differentiable = match &sabotaged {
                Some(s) => s,
                None => &graph,
            };
            let report = verify(target, &opts)?;
            println!("{report}");
            if let Some(path) = json_out {
                std::fs::write(&path, report.to_json() + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(report.passed)
        }
        Command::Fixtures { out, seed } => {
            for path in fixtures::write_fixtures(&out, seed)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Bench {
            model,
            batch,
            chunks,
            reps,
            sequential,
        } => {
            anyhow::ensure!(!chunks.is_empty(), "at least one chunk size is required");
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::default()
            };
            let report = bench::run_bench(&model, batch, &chunks, reps, 0, exec)?;
            println!("{report}");
            Ok(report.invariant())
        }
        Command::Fdvar { model, seed, iters } => {
            let graph = load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let result = fdvar::run_fdvar(&graph, seed, iters)?;
            println!("iteration cost");
            for (i, c) in result.costs.iter().enumerate() {
                println!("{i} {c:.6e}");
            }
            println!("stop: {:?}", result.stop);
            println!("relative state error: {:.3e}", result.state_error);
            Ok(true)
        }
        Command::Expected {
            model,
            seed,
            batch,
            out,
        } => {
            let records = expected::generate(&model, seed, batch)?;
            let header = format!("model {}\nseed {seed}\nbatch {batch}", model.display());
            std::fs::write(&out, expected::render(&records, &header))
                .with_context(|| format!("writing {}", out.display()))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tnwp_core::bridge::init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
