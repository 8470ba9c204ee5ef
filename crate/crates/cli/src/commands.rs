//! The six pipeline stages. Each writes into its own output directory and
//! finishes with a manifest of content hashes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use acppo::cmdp::{load_trajectory, write_trajectory};
use acppo::gait::{
    behavior_clone, demo_pairs, evaluate_pool, lhs_sample, primitive_from_trajectory,
    rank_and_select, replay_primitive, DemoRecord, DemoSet, GaitParams, SelectionMeta,
};
use acppo::policy::{encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Policy};
use acppo::rng::derive_seed;
use acppo::sim::quad::{
    transfer_rollout, transfer_rollout_with_offset, GaitPrimitive, TransferSummary,
};
use acppo::sim::LimbSim;
use acppo::train::{
    collect_episode, detect_cycle, evaluate_policy, mean_std, read_metrics_csv, summarize_rollout,
    write_metrics_csv, AlgoVariant, EpisodeMetrics, EvalRollout, Trainer,
};
use serde::Serialize;

use crate::artifacts::{OutputDir, RunManifest};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const INDEX_FILE: &str = "index.csv";
pub const BF_GAIT_FILE: &str = "bf_gait.txt";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const BC_LOSS_FILE: &str = "bc_loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.csv";
pub const GAIT_FILE: &str = "gait_primitive.txt";
pub const TRANSFER_FILE: &str = "transfer.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const CURVES_FILE: &str = "curves.csv";

pub const INDEX_HEADER: [&str; 13] = [
    "index",
    "a_h",
    "a_k",
    "f",
    "phi",
    "theta_h0",
    "theta_k0",
    "mean_thrust",
    "mean_abs_lift",
    "selected",
    "is_bf",
    "demo_file",
    "config_fp",
];

fn seed_for(cfg: &RunConfig, stream: &str) -> u64 {
    derive_seed(cfg.seed, stream, 0)
}

fn fresh_policy(cfg: &RunConfig) -> CliResult<Policy> {
    Ok(Policy::new(
        cfg.policy_spec(),
        seed_for(cfg, "policy-init"),
    )?)
}

fn load_policy_checkpoint(cfg: &RunConfig, path: &Path, force: bool) -> CliResult<Checkpoint> {
    let fp = cfg.policy_spec().fingerprint();
    let loaded = load_checkpoint(path, Some(&fp), force)?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(loaded.checkpoint)
}

fn save_policy_checkpoint(out: &mut OutputDir, ck: &Checkpoint) -> CliResult<PathBuf> {
    let path = out.path(POLICY_FILE)?;
    save_checkpoint(&path, ck)?;
    out.record(path.clone());
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSummary {
    pub pool: usize,
    pub selected: usize,
    pub bf_index: usize,
    pub bf_thrust: f64,
    pub thrust_mean: f64,
    pub thrust_std: f64,
    pub lift_threshold: f64,
    pub manifest: RunManifest,
}

/// Latin hypercube pool → simulated demos → thrust/lift selection.
pub fn cmd_search(cfg: &RunConfig, out_dir: &Path) -> CliResult<SearchSummary> {
    cfg.validate()?;
    let mut out = OutputDir::create(out_dir, "search", cfg)?;
    let fp = out.config_fp().to_string();
    let candidates = lhs_sample(
        cfg.gait.pool_size,
        seed_for(cfg, "search"),
        &cfg.gait.ranges,
    )?;
    let pool = evaluate_pool(
        &candidates,
        &cfg.gait,
        &cfg.sim,
        seed_for(cfg, "search-sim"),
    )?;
    let set = rank_and_select(
        &pool,
        cfg.gait.top_thrust_fraction,
        cfg.gait.lift_percentile,
    )?;

    let mut index_rows = Vec::with_capacity(pool.len());
    for (i, rec) in pool.iter().enumerate() {
        let selected = set.selected.contains(&i);
        let is_bf = i == set.bf_index;
        let demo_file = if selected || is_bf {
            let rel = format!("demos/demo_{i:05}.csv");
            let mut buf = format!("# config_fp={fp}\n").into_bytes();
            write_trajectory(&rec.trajectory, &mut buf)?;
            out.write_bytes(&rel, &buf)?;
            rel
        } else {
            String::new()
        };
        let mut row: Vec<String> = vec![i.to_string()];
        row.extend(rec.params.to_array().iter().map(f64::to_string));
        row.extend([
            rec.mean_thrust.to_string(),
            rec.mean_abs_lift.to_string(),
            selected.to_string(),
            is_bf.to_string(),
            demo_file,
            fp.clone(),
        ]);
        index_rows.push(row);
    }
    out.write_csv(INDEX_FILE, &INDEX_HEADER, index_rows)?;

    let bf = set.bf(&pool);
    let f_s = cfg.sim.control_hz;
    let prim = primitive_from_trajectory(&bf.trajectory, bf.params.cycle_steps(f_s).max(2), f_s)?;
    let bf_path = out.path(BF_GAIT_FILE)?;
    prim.save(&bf_path, Some(&fp))?;
    out.record(bf_path);

    let thrusts: Vec<f64> = pool.iter().map(|r| r.mean_thrust).collect();
    let (thrust_mean, thrust_std) = mean_std(&thrusts);
    let manifest = out.finish()?;
    Ok(SearchSummary {
        pool: pool.len(),
        selected: set.records.len(),
        bf_index: set.bf_index,
        bf_thrust: bf.mean_thrust,
        thrust_mean,
        thrust_std,
        lift_threshold: set.meta.lift_threshold,
        manifest,
    })
}

/// Reads the selected records of a search directory back into a demo set.
pub fn load_demo_set(cfg: &RunConfig, dir: &Path) -> CliResult<DemoSet> {
    let index_path = dir.join(INDEX_FILE);
    if !index_path.exists() {
        return Err(CliError::io(
            &index_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "demo index not found"),
        ));
    }
    let mut r = csv::Reader::from_path(&index_path)?;
    let parse_err = |msg: String| {
        CliError::Core(acppo::Error::Parse {
            path: index_path.clone(),
            msg,
        })
    };
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != INDEX_HEADER {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    let mut selected = Vec::new();
    let mut bf_index = None;
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> CliResult<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("{}: {e}", INDEX_HEADER[i])))
        };
        let index: usize = row[0]
            .parse()
            .map_err(|e| parse_err(format!("index: {e}")))?;
        if &row[10] == "true" {
            bf_index = Some(index);
        }
        if &row[9] != "true" {
            continue;
        }
        let params =
            GaitParams::from_array(std::array::from_fn(|d| num(1 + d).unwrap_or(f64::NAN)));
        if !params.to_array().iter().all(|v| v.is_finite()) {
            return Err(parse_err(format!("bad parameters in row {index}")));
        }
        let trajectory = load_trajectory(&dir.join(&row[11]))?;
        records.push(DemoRecord {
            params,
            trajectory,
            mean_thrust: num(7)?,
            mean_abs_lift: num(8)?,
        });
        selected.push(index);
    }
    if records.is_empty() {
        return Err(parse_err("no selected demonstrations".into()));
    }
    Ok(DemoSet {
        records,
        selected,
        bf_index: bf_index.ok_or_else(|| parse_err("no BF row".into()))?,
        meta: SelectionMeta {
            top_thrust_fraction: cfg.gait.top_thrust_fraction,
            lift_percentile: cfg.gait.lift_percentile,
            lift_threshold: f64::NAN,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainSummary {
    pub pairs: usize,
    pub loss_curve: Vec<f64>,
    pub final_rmse: f64,
    pub warning: bool,
    pub manifest: RunManifest,
}

/// Behavioral cloning of a fresh policy onto a search directory's demos.
pub fn cmd_pretrain(cfg: &RunConfig, demos: &Path, out_dir: &Path) -> CliResult<PretrainSummary> {
    cfg.validate()?;
    let set = load_demo_set(cfg, demos)?;
    let mut out = OutputDir::create(out_dir, "pretrain", cfg)?;
    let fp = out.config_fp().to_string();
    let mut policy = fresh_policy(cfg)?;
    let pairs = demo_pairs(&set, policy.spec())?;
    let report = behavior_clone(&mut policy, &pairs, &cfg.bc, seed_for(cfg, "bc"))?;
    if report.warning {
        eprintln!(
            "warning: demo-replay RMSE {:.3e} exceeds threshold {:.3e}",
            report.final_rmse, cfg.bc.rmse_threshold
        );
    }
    save_policy_checkpoint(&mut out, &Checkpoint::new(policy))?;

    out.write_csv(
        BC_LOSS_FILE,
        &["epoch", "mse", "rmse", "config_fp"],
        report.loss_curve.iter().enumerate().map(|(epoch, mse)| {
            [
                epoch.to_string(),
                mse.to_string(),
                mse.sqrt().to_string(),
                fp.clone(),
            ]
        }),
    )?;
    Ok(PretrainSummary {
        pairs: report.pairs,
        loss_curve: report.loss_curve,
        final_rmse: report.final_rmse,
        warning: report.warning,
        manifest: out.finish()?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Warm start (typically the pretrain checkpoint); absent trains from scratch.
    pub init: Option<PathBuf>,
    /// Accept a checkpoint whose fingerprint does not match the policy config.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub variant: AlgoVariant,
    pub metrics: Vec<EpisodeMetrics>,
    pub manifest: RunManifest,
}

fn write_metrics(
    out: &mut OutputDir,
    variant: AlgoVariant,
    rows: &[EpisodeMetrics],
) -> CliResult<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, variant, rows, out.config_fp())?;
    out.write_bytes(METRICS_FILE, &buf)?;
    Ok(())
}

/// Runs the configured episode budget. On a numerical abort the last good
/// policy is still written before the error is returned.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions, out_dir: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let variant = cfg.variant();
    let init = match &opts.init {
        Some(p) => Some(load_policy_checkpoint(cfg, p, opts.force)?),
        None => None,
    };
    let mut out = OutputDir::create(out_dir, "train", cfg)?;
    if cfg.episodes == 0 {
        let ck = match init {
            Some(ck) => ck,
            None => Checkpoint::new(fresh_policy(cfg)?),
        };
        out.write_bytes(POLICY_FILE, &encode_checkpoint(&ck))?;
        write_metrics(&mut out, variant, &[])?;
        return Ok(TrainSummary {
            variant,
            metrics: Vec::new(),
            manifest: out.finish()?,
        });
    }
    let (policy, optimizer, lagrange, start) = match init {
        Some(ck) => (ck.policy, ck.optimizer, ck.lagrange, ck.episodes),
        None => (fresh_policy(cfg)?, None, None, 0),
    };
    let fingerprint = policy.spec().fingerprint();
    let mut trainer = Trainer::new(cfg.train, cfg.sim, policy, seed_for(cfg, "train"))?
        .with_state(optimizer, lagrange, start)?;
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut failure = None;
    for _ in 0..cfg.episodes {
        match trainer.train_iteration() {
            Ok(m) => rows.push(m),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let ck = Checkpoint {
        policy: trainer.policy().clone(),
        optimizer: Some(trainer.optimizer().clone()),
        lagrange: Some(*trainer.lagrange()),
        fingerprint,
        episodes: trainer.episode(),
    };
    save_policy_checkpoint(&mut out, &ck)?;
    write_metrics(&mut out, variant, &rows)?;
    let manifest = out.finish()?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(TrainSummary {
            variant,
            metrics: rows,
            manifest,
        }),
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    /// Overrides `eval.rollouts`.
    pub rollouts: Option<usize>,
    /// Gait primitives (e.g. the BF gait) replayed alongside the policy.
    pub gaits: Vec<PathBuf>,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalStats {
    pub label: String,
    pub rollouts: Vec<EvalRollout>,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
}

impl EvalStats {
    fn new(label: String, rollouts: Vec<EvalRollout>) -> Self {
        let (reward_mean, reward_std) =
            mean_std(&rollouts.iter().map(|r| r.reward).collect::<Vec<_>>());
        let (cost_mean, cost_std) =
            mean_std(&rollouts.iter().map(|r| r.avg_cost).collect::<Vec<_>>());
        Self {
            label,
            rollouts,
            reward_mean,
            reward_std,
            cost_mean,
            cost_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub entries: Vec<EvalStats>,
    pub manifest: RunManifest,
}

/// Mean-action rollouts of a checkpoint, plus replays of any given gaits.
pub fn cmd_eval(cfg: &RunConfig, opts: &EvalOptions, out_dir: &Path) -> CliResult<EvalSummary> {
    cfg.validate()?;
    let n = opts.rollouts.unwrap_or(cfg.eval.rollouts);
    if n == 0 {
        return Err(CliError::Config("need at least one rollout".into()));
    }
    let ck = load_policy_checkpoint(cfg, &opts.checkpoint, opts.force)?;
    let gaits = opts
        .gaits
        .iter()
        .map(|p| Ok((p, GaitPrimitive::load(p)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = OutputDir::create(out_dir, "eval", cfg)?;
    let eval_seed = seed_for(cfg, "eval");
    let cycle = &cfg.train.cycle;
    let mut entries = vec![EvalStats::new(
        "policy".into(),
        evaluate_policy(&ck.policy, &cfg.sim, n, eval_seed, cycle)?,
    )];
    for (path, prim) in &gaits {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "gait".into());
        let rollouts = (0..n)
            .map(|i| {
                let traj =
                    replay_primitive(prim, &cfg.sim, derive_seed(eval_seed, "eval", i as u64))?;
                Ok(summarize_rollout(traj, &cfg.sim, cycle))
            })
            .collect::<CliResult<Vec<_>>>()?;
        entries.push(EvalStats::new(label, rollouts));
    }

    let fp = out.config_fp().to_string();
    let rows = entries.iter().flat_map(|e| {
        e.rollouts.iter().enumerate().map(|(i, r)| {
            [
                e.label.clone(),
                i.to_string(),
                r.reward.to_string(),
                r.avg_cost.to_string(),
                r.h.to_string(),
                r.mean_thrust.to_string(),
                fp.clone(),
            ]
        })
    });
    out.write_csv(
        EVAL_FILE,
        &[
            "label",
            "rollout",
            "reward",
            "avg_cost",
            "H",
            "mean_thrust",
            "config_fp",
        ],
        rows,
    )?;
    let rows = entries.iter().map(|e| {
        [
            e.label.clone(),
            e.rollouts.len().to_string(),
            e.reward_mean.to_string(),
            e.reward_std.to_string(),
            e.cost_mean.to_string(),
            e.cost_std.to_string(),
            fp.clone(),
        ]
    });
    out.write_csv(
        EVAL_SUMMARY_FILE,
        &[
            "label",
            "rollouts",
            "reward_mean",
            "reward_std",
            "avg_cost_mean",
            "avg_cost_std",
            "config_fp",
        ],
        rows,
    )?;
    Ok(EvalSummary {
        entries,
        manifest: out.finish()?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TransferOptions {
    pub checkpoint: PathBuf,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub offset: usize,
    pub summary: TransferSummary,
    /// Largest |M_z| over the deployment.
    pub m_z_max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub h: usize,
    pub f_star: f64,
    /// Half-cycle diagonal offset first, then the offset-0 control.
    pub rows: [TransferRow; 2],
    pub manifest: RunManifest,
}

/// Records one inference cycle of the policy as a gait primitive and
/// deploys it on both diagonal pairs, with and without the half-cycle lag.
pub fn cmd_transfer(
    cfg: &RunConfig,
    opts: &TransferOptions,
    out_dir: &Path,
) -> CliResult<TransferReport> {
    cfg.validate()?;
    let ck = load_policy_checkpoint(cfg, &opts.checkpoint, opts.force)?;
    let f_s = cfg.sim.control_hz;
    let mut found = None;
    for attempt in 0..cfg.transfer.max_attempts {
        let mut env = LimbSim::new(cfg.sim, derive_seed(cfg.seed, "transfer", attempt as u64))?;
        let traj = collect_episode(&ck.policy, &mut env, None)?.trajectory;
        match detect_cycle(&traj.lifts(), f_s, &cfg.train.cycle) {
            Ok(est) if traj.len() >= est.h => {
                found = Some((traj, est));
                break;
            }
            Ok(_) => {}
            Err(e) => eprintln!("transfer attempt {attempt}: {e}"),
        }
    }
    let (traj, est) = found.ok_or(acppo::Error::NoDominantFrequency)?;
    let prim = primitive_from_trajectory(&traj, est.h, f_s)?;
    let mut out = OutputDir::create(out_dir, "transfer", cfg)?;
    let fp = out.config_fp().to_string();
    let gait_path = out.path(GAIT_FILE)?;
    prim.save(&gait_path, Some(&fp))?;
    out.record(gait_path);

    let t = &cfg.transfer;
    let run = |offset: usize| -> CliResult<TransferRow> {
        let res = if offset == prim.len() / 2 {
            transfer_rollout(&prim, t.cycles, &t.quad, &cfg.sim)?
        } else {
            transfer_rollout_with_offset(&prim, t.cycles, offset, &t.quad, &cfg.sim)?
        };
        Ok(TransferRow {
            offset,
            summary: res.summary,
            m_z_max_abs: res.wrenches.iter().map(|w| w.m_z.abs()).fold(0.0, f64::max),
        })
    };
    let rows = [run(prim.len() / 2)?, run(0)?];
    let h = prim.len();
    out.write_csv(
        TRANSFER_FILE,
        &[
            "offset_steps",
            "H",
            "F_x_mean",
            "F_z_mean",
            "F_z_var",
            "M_z_max_abs",
            "config_fp",
        ],
        rows.iter().map(|r| {
            [
                r.offset.to_string(),
                h.to_string(),
                r.summary.f_x_mean.to_string(),
                r.summary.f_z_mean.to_string(),
                r.summary.f_z_var.to_string(),
                r.m_z_max_abs.to_string(),
                fp.clone(),
            ]
        }),
    )?;
    Ok(TransferReport {
        h: prim.len(),
        f_star: est.f_star,
        rows,
        manifest: out.finish()?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub run_dirs: Vec<PathBuf>,
    /// Aggregate runs of one variant even if their fingerprints differ.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub variant: AlgoVariant,
    pub runs: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub config_fp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub manifest: RunManifest,
}

/// Mean reward and cost over the last `window` episodes of one run.
pub fn final_metrics(rows: &[EpisodeMetrics], window: usize) -> (f64, f64) {
    let tail = &rows[rows.len().saturating_sub(window.max(1))..];
    let n = tail.len() as f64;
    (
        tail.iter().map(|m| m.reward).sum::<f64>() / n,
        tail.iter().map(|m| m.avg_cost).sum::<f64>() / n,
    )
}

struct RunData {
    fp: String,
    rows: Vec<EpisodeMetrics>,
}

/// Groups training runs by variant into a methods × metrics table and
/// per-episode mean/std curves.
pub fn cmd_report(cfg: &RunConfig, opts: &ReportOptions, out_dir: &Path) -> CliResult<Report> {
    cfg.validate()?;
    if opts.run_dirs.is_empty() {
        return Err(CliError::Config(
            "report needs at least one run directory".into(),
        ));
    }
    let mut groups: BTreeMap<usize, (AlgoVariant, Vec<RunData>)> = BTreeMap::new();
    for dir in &opts.run_dirs {
        let path = dir.join(METRICS_FILE);
        if !path.exists() {
            return Err(CliError::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no metrics in run directory"),
            ));
        }
        let parsed = read_metrics_csv(&path)?;
        let Some((variant, _, fp)) = parsed.first().cloned() else {
            return Err(CliError::Config(format!(
                "{}: run has no episodes",
                path.display()
            )));
        };
        if parsed.iter().any(|(v, _, f)| *v != variant || *f != fp) {
            return Err(CliError::Config(format!(
                "{}: mixed variants or fingerprints within one run",
                path.display()
            )));
        }
        let key = AlgoVariant::ALL
            .iter()
            .position(|v| *v == variant)
            .unwrap_or(usize::MAX);
        groups
            .entry(key)
            .or_insert_with(|| (variant, Vec::new()))
            .1
            .push(RunData {
                fp,
                rows: parsed.into_iter().map(|(_, m, _)| m).collect(),
            });
    }

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (variant, runs) in groups.values() {
        let fp = &runs[0].fp;
        let consistent = runs.iter().all(|r| &r.fp == fp);
        if !consistent && !opts.force {
            return Err(CliError::Config(format!(
                "runs of {variant} have different config fingerprints; pass --force to aggregate anyway"
            )));
        }
        let fp = if consistent {
            fp.clone()
        } else {
            "mixed".to_string()
        };
        let finals: Vec<(f64, f64)> = runs
            .iter()
            .map(|r| final_metrics(&r.rows, cfg.final_window))
            .collect();
        let (reward_mean, reward_std) = mean_std(&finals.iter().map(|f| f.0).collect::<Vec<_>>());
        let (cost_mean, cost_std) = mean_std(&finals.iter().map(|f| f.1).collect::<Vec<_>>());
        rows.push(ReportRow {
            variant: *variant,
            runs: runs.len(),
            reward_mean,
            reward_std,
            cost_mean,
            cost_std,
            config_fp: fp.clone(),
        });
        let mut by_episode: BTreeMap<u64, Vec<&EpisodeMetrics>> = BTreeMap::new();
        for r in runs {
            for m in &r.rows {
                by_episode.entry(m.episode).or_default().push(m);
            }
        }
        for (episode, ms) in by_episode {
            let (r_mean, r_std) = mean_std(&ms.iter().map(|m| m.reward).collect::<Vec<_>>());
            let (c_mean, c_std) = mean_std(&ms.iter().map(|m| m.avg_cost).collect::<Vec<_>>());
            let (l_mean, _) = mean_std(&ms.iter().map(|m| m.lambda).collect::<Vec<_>>());
            curves.push([
                variant.name().to_string(),
                episode.to_string(),
                ms.len().to_string(),
                r_mean.to_string(),
                r_std.to_string(),
                c_mean.to_string(),
                c_std.to_string(),
                l_mean.to_string(),
                fp.clone(),
            ]);
        }
    }

    let mut out = OutputDir::create(out_dir, "report", cfg)?;
    out.write_csv(
        TABLE_FILE,
        &[
            "variant",
            "runs",
            "reward_mean",
            "reward_std",
            "avg_cost_mean",
            "avg_cost_std",
            "config_fp",
        ],
        rows.iter().map(|r| {
            [
                r.variant.name().to_string(),
                r.runs.to_string(),
                r.reward_mean.to_string(),
                r.reward_std.to_string(),
                r.cost_mean.to_string(),
                r.cost_std.to_string(),
                r.config_fp.clone(),
            ]
        }),
    )?;
    out.write_csv(
        CURVES_FILE,
        &[
            "variant",
            "episode",
            "runs",
            "reward_mean",
            "reward_std",
            "avg_cost_mean",
            "avg_cost_std",
            "lambda_mean",
            "config_fp",
        ],
        curves,
    )?;
    Ok(Report {
        rows,
        manifest: out.finish()?,
    })
}

/// Prints a one-line JSON summary for scripting.
pub fn print_summary<T: Serialize>(value: &T) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer(&mut stdout, value).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(stdout).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}
