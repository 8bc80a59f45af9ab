//! Command-line front end for the auditing pipeline. One subcommand per
//! stage; every stage reads the same JSON config and works inside one
//! output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fluctlab::config::ExperimentConfig;
use fluctlab::experiment::{
    run_attack, run_eval, run_gen_data, run_sweep, run_train, scores_path, series_path,
    sweep_path, CheckpointRef, ModelRole, SweepAxis, ALL_MODEL_ROLES,
};
use fluctlab::{Error, Method, Result};

#[derive(Parser)]
#[command(
    name = "fluctlab",
    about = "Membership-inference auditing lab for toy generative models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Artifact directory; defaults to the config's out_dir, then "out".
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the record pool and the six-role split.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one role's model, or all roles.
    Train {
        #[command(flatten)]
        common: Common,
        /// target, shadow, reference, or all.
        #[arg(long, default_value = "all")]
        role: String,
    },
    /// Score the target's records under the requested attack methods.
    Attack {
        #[command(flatten)]
        common: Common,
        /// early, final, or an epoch number.
        #[arg(long, default_value = "early")]
        checkpoint: String,
        /// Comma-separated method names; defaults to the config's list.
        #[arg(long, value_name = "LIST")]
        methods: Option<String>,
    },
    /// Evaluate a scores CSV into metric reports and ROC curves.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Scores CSV; defaults to the checkpoint's file in the out dir.
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
        /// Used to locate the default scores file.
        #[arg(long, default_value = "early")]
        checkpoint: String,
    },
    /// Run one sweep axis: epoch, m, n, mechanism, or ablation.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
    },
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.validate()?;
    Ok((cfg, out))
}

fn parse_methods(cfg: &ExperimentConfig, arg: &Option<String>) -> Result<Vec<Method>> {
    match arg {
        None => Ok(cfg.attack.methods.clone()),
        Some(list) => list
            .split(',')
            .map(|name| Method::from_name(name.trim()))
            .collect(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let (cfg, out) = load_config(&common)?;
            let (records, split) = run_gen_data(&cfg, &out)?;
            println!(
                "wrote {} records and a {}-per-role split to {}",
                records.len(),
                split.target_member.len(),
                out.display()
            );
        }
        Command::Train { common, role } => {
            let (cfg, out) = load_config(&common)?;
            let roles: Vec<ModelRole> = if role == "all" {
                ALL_MODEL_ROLES.to_vec()
            } else {
                vec![ModelRole::from_name(&role)?]
            };
            for role in roles {
                let series = run_train(&cfg, &out, role)?;
                println!(
                    "trained {} model: {} epochs, early stop at {}, eval loss {:.6} -> {}",
                    role.name(),
                    series.final_checkpoint().epoch,
                    series.early_stop_epoch,
                    series.final_checkpoint().eval_loss,
                    series_path(&out, role).display()
                );
            }
        }
        Command::Attack { common, checkpoint, methods } => {
            let (cfg, out) = load_config(&common)?;
            let ckpt = CheckpointRef::from_name(&checkpoint)?;
            let methods = parse_methods(&cfg, &methods)?;
            let output = run_attack(&cfg, &out, ckpt, &methods)?;
            println!(
                "scored {} rows at epoch {} -> {}",
                output.rows.len(),
                output.epoch,
                scores_path(&out, &ckpt.tag()).display()
            );
        }
        Command::Eval { common, scores, checkpoint } => {
            let (cfg, out) = load_config(&common)?;
            let path = match scores {
                Some(p) => p,
                None => scores_path(&out, &CheckpointRef::from_name(&checkpoint)?.tag()),
            };
            let reports = run_eval(&cfg, &out, &path)?;
            println!("{}", serde_json::to_string_pretty(&reports).map_err(Error::Json)?);
        }
        Command::Sweep { common, axis } => {
            let (cfg, out) = load_config(&common)?;
            let axis = SweepAxis::from_name(&axis)?;
            let artifact = run_sweep(&cfg, &out, axis)?;
            println!(
                "swept {} points on the {} axis -> {}",
                artifact.points.len(),
                axis.name(),
                sweep_path(&out, axis).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
