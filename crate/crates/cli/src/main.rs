use std::path::PathBuf;
use std::process::ExitCode;

use adafocus::config::RunConfig;
use adafocus::{commands, Error, Result};
use adafocus_core::earlyexit::Criterion;
use adafocus_core::model::{CubePlanner, GradientMode, PolicyMode, Schedule};
use adafocus_core::synth::Split;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adafocus", version, about = "Adaptive spatial-temporal cube selection with budgeted early exit")]
struct Cli {
    /// Overrides the configuration's seed.
    #[arg(long, global = true, env = "ADAFOCUS_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pixelgrad,
    Featuregrad,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    EndToEnd,
    TwoStage,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Learned,
    Random,
    RandomTemporal,
    RandomSpatial,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Entropy,
    Confidence,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a dataset directory.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, training curve, ledger and manifest.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        schedule: Option<ScheduleArg>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Evaluate a checkpoint; writes records, per-step accuracy and summary.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "learned")]
        policy: PolicyArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve exit thresholds for a mean mult-add budget.
    SolveThresholds {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        budget: u64,
        #[arg(long, value_enum, default_value = "entropy")]
        criterion: CriterionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy/cost frontier for entropy, confidence, random and fixed exits.
    Sweep {
        #[arg(long)]
        records: PathBuf,
        /// Comma-separated mean mult-add budgets.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<u64>,
        /// Shuffles averaged by the random-exit baseline.
        #[arg(long, default_value_t = 100)]
        shuffles: usize,
        #[arg(long)]
        out: PathBuf,
        /// Directory receiving one entropy schedule per budget.
        #[arg(long)]
        schedules: Option<PathBuf>,
    },
    /// Finite-difference checks of every op; prints the worst relative error per op.
    Gradcheck,
}

fn planner(policy: PolicyArg, seed: u64) -> CubePlanner {
    CubePlanner {
        mode: policy_mode(policy),
        seed,
    }
}

fn policy_mode(p: PolicyArg) -> PolicyMode {
    let name = match p {
        PolicyArg::Learned => "learned",
        PolicyArg::Random => "random",
        PolicyArg::RandomTemporal => "random_temporal",
        PolicyArg::RandomSpatial => "random_spatial",
    };
    PolicyMode::from_name(name).expect("every policy argument names a mode")
}

fn load_config(path: &std::path::Path, seed: Option<u64>) -> Result<RunConfig> {
    let config = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { config, out } => commands::generate(&load_config(&config, seed)?, &out)?,
        Command::Train {
            dataset,
            config,
            out,
            mode,
            schedule,
            policy,
        } => {
            let mut config = load_config(&config, seed)?;
            if let Some(m) = mode {
                config.train.mode = match m {
                    ModeArg::Pixelgrad => GradientMode::PixelGrad,
                    ModeArg::Featuregrad => GradientMode::FeatureGrad,
                };
            }
            if let Some(s) = schedule {
                config.train.schedule = match s {
                    ScheduleArg::EndToEnd => Schedule::EndToEnd,
                    ScheduleArg::TwoStage => Schedule::TwoStage,
                };
            }
            if let Some(p) = policy {
                config.train.policy = policy_mode(p);
            }
            commands::train(&dataset, &config, &out)?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            policy,
            out,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            commands::eval(&checkpoint, &dataset, split, planner(policy, seed.unwrap_or(0)), &out)?;
        }
        Command::SolveThresholds {
            records,
            budget,
            criterion,
            out,
        } => {
            let criterion = match criterion {
                CriterionArg::Entropy => Criterion::Entropy,
                CriterionArg::Confidence => Criterion::Confidence,
            };
            commands::solve_thresholds(&records, budget, criterion, &out)?;
        }
        Command::Sweep {
            records,
            budgets,
            shuffles,
            out,
            schedules,
        } => {
            if shuffles == 0 {
                return Err(Error::Usage("--shuffles must be positive".into()));
            }
            commands::sweep(&records, &budgets, shuffles, seed.unwrap_or(0), &out, schedules.as_deref())?;
        }
        Command::Gradcheck => {
            let (checks, oracle, lattice) = commands::gradcheck(seed.unwrap_or(0));
            println!("op,probes,max_rel_error,status");
            let mut ok = true;
            for c in &checks {
                ok &= c.passed();
                let status = if c.passed() { "ok" } else { "FAIL" };
                println!("{},{},{:e},{status}", c.op, c.probes, c.max_rel_error);
            }
            let oracle_ok = oracle <= 1e-12;
            println!("trilinear_sample_vs_brute_force,1000,{oracle:e},{}", if oracle_ok { "ok" } else { "FAIL" });
            println!("lattice_crop_vs_indexing,200,0,{}", if lattice { "ok" } else { "FAIL" });
            return Ok(ok && oracle_ok && lattice);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(true)) => ExitCode::SUCCESS,
        Ok(Ok(false)) => ExitCode::from(2),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
