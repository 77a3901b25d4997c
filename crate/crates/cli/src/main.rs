use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hingegrasp::pipeline::{self, exit_code, Experiment, ExperimentConfig, Variant};
use hingegrasp::Result;

#[derive(Parser)]
#[command(name = "hingegrasp", version = pipeline::VERSION, about = "Hierarchical grasping with a hinged tool")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// experiment.json; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config file and HINGEGRASP_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data-generation threads
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate corrupted/clean point cloud pairs
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of pairs
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the shape encoder
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        /// Epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the low-level hand policy
    TrainLow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        no_effort_reward: bool,
    },
    /// Train the high-level policy
    TrainHigh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        no_priv_buffer: bool,
    },
    /// Evaluate the trained stack against a random baseline
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        no_priv_buffer: bool,
        /// Also write eval/trace.jsonl
        #[arg(long)]
        trace: bool,
    },
    /// Recompute the rewards logged in a trace
    Replay { trace: PathBuf },
}

fn experiment(common: &Common, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<Experiment> {
    let mut e = match &common.config {
        Some(p) => Experiment::load(p)?,
        None => Experiment::from_config(ExperimentConfig::default(), &std::env::current_dir()?)?,
    };
    if let Some(s) = common.seed {
        e.config.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        e.config.output_dir = o.clone();
    }
    if let Some(w) = common.workers {
        e.config.workers = w;
    }
    tweak(&mut e.config);
    Ok(e)
}

fn each_seed(e: &Experiment, mut f: impl FnMut(&pipeline::Run) -> Result<()>) -> Result<()> {
    for &seed in &e.config.seeds {
        f(&e.run(seed)?)?;
    }
    Ok(())
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::GenData { common, count } => {
            let e = experiment(&common, |c| {
                if let Some(n) = count {
                    c.encoder.dataset_size = n;
                }
            })?;
            each_seed(&e, |r| {
                let m = pipeline::cmd_gen_data(r)?;
                println!(
                    "{}: {} pairs, drop {:.3}, noise {:.4} m, sha256 {}",
                    r.dir.display(),
                    m.count,
                    m.measured.drop_fraction,
                    m.measured.noise_sigma,
                    m.pairs_sha256
                );
                Ok(())
            })?;
        }
        Cmd::TrainEncoder { common, epochs } => {
            let e = experiment(&common, |c| {
                if let Some(n) = epochs {
                    c.encoder.epochs = n;
                }
            })?;
            each_seed(&e, |r| {
                println!("{}", pipeline::cmd_train_encoder(r, log)?.display());
                Ok(())
            })?;
        }
        Cmd::TrainLow {
            common,
            steps,
            no_effort_reward,
        } => {
            let e = experiment(&common, |c| {
                if let Some(n) = steps {
                    c.low.steps = n;
                }
            })?;
            let v = Variant {
                no_effort_reward,
                ..Variant::default()
            };
            each_seed(&e, |r| {
                println!("{}", pipeline::cmd_train_low(r, v, log)?.display());
                Ok(())
            })?;
        }
        Cmd::TrainHigh {
            common,
            steps,
            no_priv_buffer,
        } => {
            let e = experiment(&common, |c| {
                if let Some(n) = steps {
                    c.high.steps = n;
                }
            })?;
            let v = Variant {
                no_priv_buffer,
                ..Variant::default()
            };
            each_seed(&e, |r| {
                println!("{}", pipeline::cmd_train_high(r, v, log)?.display());
                Ok(())
            })?;
        }
        Cmd::Eval {
            common,
            episodes,
            no_priv_buffer,
            trace,
        } => {
            let e = experiment(&common, |_| {})?;
            let n = episodes.unwrap_or(e.config.eval.episodes);
            let v = Variant {
                no_priv_buffer,
                ..Variant::default()
            };
            each_seed(&e, |r| {
                let rep = pipeline::cmd_eval(r, v, n, trace)?;
                println!(
                    "seed {}: success {:.1}% (random {:.1}%), mean steps {:.1}, failures {:?}",
                    rep.seed,
                    100.0 * rep.policy.success_rate,
                    100.0 * rep.baseline.success_rate,
                    rep.policy.mean_steps,
                    rep.policy.failures
                );
                Ok(())
            })?;
        }
        Cmd::Replay { trace } => {
            let rep = pipeline::cmd_replay(trace)?;
            print!("{}", rep.table());
            let bad = rep.mismatches();
            if bad > 0 {
                eprintln!("{bad} of {} steps do not match", rep.rows.len());
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
