use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use costate_flow::harness::check;
use costate_flow::harness::experiment::{run_lq, ExperimentRegistry, Overrides, RunOptions};
use costate_flow::lq_analytic::LqParams;
use costate_flow::Error;

#[derive(Parser)]
#[command(name = "costate-flow", version, about = "Forward-in-time costate learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a registered experiment (a, b, c, lq).
    Run {
        case: String,
        /// TOML config replacing the built-in preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: runs/<case>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "n-T")]
        n_t: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long = "n-iter")]
        n_iter: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        optimizer: Option<String>,
    },
    /// Scalar LQ: learned Riccati coefficient vs closed form.
    Lq {
        #[arg(long = "A", default_value_t = 0.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long = "B", default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        #[arg(long = "Q", default_value_t = 1.0)]
        q: f64,
        #[arg(long = "R", default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value = "runs/lq")]
        out: PathBuf,
    },
    /// Run the built-in oracle checks.
    Check,
    /// List registered experiments.
    List,
}

fn report(err: Error) -> ExitCode {
    match &err {
        Error::Diverged { step, what } => eprintln!("error: diverged at step {step}: {what}"),
        _ => eprintln!("error: {err}"),
    }
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            case,
            config,
            out,
            seed,
            n_t,
            tau,
            n_iter,
            lr,
            eps,
            optimizer,
        } => {
            let registry = ExperimentRegistry::default();
            let exp = match registry.get(&case) {
                Ok(e) => e,
                Err(e) => return report(e),
            };
            let opts = RunOptions {
                config_file: config,
                out_dir: Some(out.unwrap_or_else(|| PathBuf::from("runs").join(&case))),
                overrides: Overrides {
                    seed,
                    n_t,
                    tau,
                    n_iter,
                    learning_rate: lr,
                    epsilon: eps,
                    optimizer,
                },
            };
            match exp.run(&opts) {
                Ok(r) => {
                    println!("{}", r.summary);
                    ExitCode::SUCCESS
                }
                Err(e) => report(e),
            }
        }
        Command::Lq {
            a,
            b,
            q,
            r,
            tau,
            steps,
            out,
        } => {
            let run = LqParams::new(a, b, q, r).and_then(|p| run_lq(&p, tau, steps, 0.0, Some(&out)));
            match run {
                Ok(run) => {
                    println!("{}", run.summary());
                    ExitCode::SUCCESS
                }
                Err(e) => report(e),
            }
        }
        Command::Check => {
            let results = check::run_all();
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::List => {
            for e in ExperimentRegistry::default().iter() {
                println!("{:<4} {}", e.name(), e.summary());
            }
            ExitCode::SUCCESS
        }
    }
}
