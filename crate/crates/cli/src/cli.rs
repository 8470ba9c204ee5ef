use std::path::PathBuf;

use acppo::train::AlgoVariant;
use clap::{Parser, Subcommand};

use crate::commands::{
    cmd_eval, cmd_pretrain, cmd_report, cmd_search, cmd_train, cmd_transfer, print_summary,
    EvalOptions, ReportOptions, TrainOptions, TransferOptions,
};
use crate::config::{Profile, RunConfig};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "acppo",
    version,
    about = "Gait search, imitation pretraining and constrained PPO for a paddling limb"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default set the config file is layered over.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Run seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory of this stage.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Training variant, e.g. ACPPO_PID or ppo-no-cost.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<AlgoVariant>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Latin hypercube gait search; writes demos, an index and the BF gait.
    Search {
        #[arg(long)]
        pool_size: Option<usize>,
    },
    /// Behavioral cloning onto a search directory's demonstrations.
    Pretrain {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Constrained training for the episode budget.
    Train {
        /// Starting checkpoint; omit to train from scratch.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Average-cost limit d.
        #[arg(long)]
        cost_limit: Option<f64>,
        /// Load a checkpoint whose fingerprint does not match.
        #[arg(long)]
        force: bool,
    },
    /// Mean-action rollouts of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_rollouts: Option<usize>,
        /// Gait primitive replayed alongside (repeatable).
        #[arg(long = "gait")]
        gaits: Vec<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Record one cycle and deploy it on both diagonal pairs.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Aggregate training runs into a table and curves.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Aggregate runs whose fingerprints differ.
        #[arg(long)]
        force: bool,
    },
}

fn parse_variant(s: &str) -> Result<AlgoVariant, String> {
    s.parse().map_err(|e: acppo::Error| e.to_string())
}

impl Cli {
    /// The resolved configuration: profile defaults, then the file, then flags.
    pub fn resolve_config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), self.profile)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.variant {
            cfg.train.variant = v;
        }
        match &self.command {
            Command::Search { pool_size: Some(n) } => cfg.gait.pool_size = *n,
            Command::Pretrain {
                epochs: Some(e), ..
            } => cfg.bc.epochs = *e,
            Command::Train {
                episodes,
                cost_limit,
                ..
            } => {
                if let Some(e) = episodes {
                    cfg.episodes = *e;
                }
                if let Some(d) = cost_limit {
                    cfg.train.cost_limit = Some(*d);
                }
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run(&self) -> CliResult<()> {
        let cfg = self.resolve_config()?;
        let out = &self.out;
        match &self.command {
            Command::Search { .. } => print_summary(&cmd_search(&cfg, out)?),
            Command::Pretrain { demos, .. } => print_summary(&cmd_pretrain(&cfg, demos, out)?),
            Command::Train { init, force, .. } => {
                let opts = TrainOptions {
                    init: init.clone(),
                    force: *force,
                };
                let summary = cmd_train(&cfg, &opts, out)?;
                let (reward, cost) =
                    crate::commands::final_metrics(&summary.metrics, cfg.final_window);
                print_summary(&serde_json::json!({
                    "variant": summary.variant,
                    "episodes": summary.metrics.len(),
                    "final_reward": reward,
                    "final_avg_cost": cost,
                    "config_fp": summary.manifest.config_fp,
                }))
            }
            Command::Eval {
                checkpoint,
                n_rollouts,
                gaits,
                force,
            } => {
                let opts = EvalOptions {
                    checkpoint: checkpoint.clone(),
                    rollouts: *n_rollouts,
                    gaits: gaits.clone(),
                    force: *force,
                };
                print_summary(&cmd_eval(&cfg, &opts, out)?)
            }
            Command::Transfer { checkpoint, force } => {
                let opts = TransferOptions {
                    checkpoint: checkpoint.clone(),
                    force: *force,
                };
                print_summary(&cmd_transfer(&cfg, &opts, out)?)
            }
            Command::Report { run_dirs, force } => {
                let opts = ReportOptions {
                    run_dirs: run_dirs.clone(),
                    force: *force,
                };
                print_summary(&cmd_report(&cfg, &opts, out)?)
            }
        }
    }
}
