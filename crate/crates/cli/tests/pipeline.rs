use std::fs;
use std::path::Path;
use std::process::Command;

use acppo::train::AlgoVariant;
use acppo_cli::artifacts::{sha256_file, RunManifest};
use acppo_cli::commands::*;
use acppo_cli::{CliError, RunConfig};
use tempfile::TempDir;

fn small(pool: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.gait.pool_size = pool;
    c.bc.epochs = 3;
    c.episodes = 3;
    c
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn singleton_search_marks_one_row_selected_and_bf() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(1);
    let s = cmd_search(&cfg, tmp.path()).unwrap();
    assert_eq!((s.pool, s.selected, s.bf_index), (1, 1, 0));
    let rows = csv_rows(&tmp.path().join(INDEX_FILE));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][9], "true");
    assert_eq!(&rows[0][10], "true");
    assert_eq!(&rows[0][12], cfg.fingerprint());
    assert!(tmp.path().join(&rows[0][11]).exists());
    assert!(tmp.path().join(BF_GAIT_FILE).exists());
}

#[test]
fn search_index_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = small(100);
    cmd_search(&cfg, a.path()).unwrap();
    cmd_search(&cfg, b.path()).unwrap();
    assert_eq!(
        sha256_file(&a.path().join(INDEX_FILE)).unwrap(),
        sha256_file(&b.path().join(INDEX_FILE)).unwrap()
    );
    let other = RunConfig { seed: 1, ..cfg };
    let c = TempDir::new().unwrap();
    cmd_search(&other, c.path()).unwrap();
    assert_ne!(
        sha256_file(&a.path().join(INDEX_FILE)).unwrap(),
        sha256_file(&c.path().join(INDEX_FILE)).unwrap()
    );
}

#[test]
fn manifest_lists_every_artifact_with_its_hash() {
    let tmp = TempDir::new().unwrap();
    cmd_search(&small(20), tmp.path()).unwrap();
    let m = RunManifest::load(tmp.path()).unwrap();
    assert_eq!(m.command, "search");
    assert!(m.artifacts.iter().any(|a| a.path == INDEX_FILE));
    for a in &m.artifacts {
        assert_eq!(sha256_file(&tmp.path().join(&a.path)).unwrap(), a.sha256);
    }
}

#[test]
fn pretrain_writes_checkpoint_and_loss_curve() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(20);
    let demos = tmp.path().join("search");
    cmd_search(&cfg, &demos).unwrap();
    let out = tmp.path().join("bc");
    let s = cmd_pretrain(&cfg, &demos, &out).unwrap();
    assert_eq!(s.loss_curve.len(), cfg.bc.epochs + 1);
    assert!(s.loss_curve.last().unwrap() < &s.loss_curve[0]);
    assert_eq!(csv_rows(&out.join(BC_LOSS_FILE)).len(), cfg.bc.epochs + 1);
    assert!(out.join(POLICY_FILE).exists());
}

#[test]
fn pretrain_without_demos_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let err = cmd_pretrain(
        &small(5),
        &tmp.path().join("nowhere"),
        &tmp.path().join("bc"),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn zero_budget_returns_the_input_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small(20);
    let demos = tmp.path().join("search");
    cmd_search(&cfg, &demos).unwrap();
    cmd_pretrain(&cfg, &demos, &tmp.path().join("bc")).unwrap();
    cfg.episodes = 0;
    let init = tmp.path().join("bc").join(POLICY_FILE);
    let out = tmp.path().join("train");
    let s = cmd_train(
        &cfg,
        &TrainOptions {
            init: Some(init.clone()),
            force: false,
        },
        &out,
    )
    .unwrap();
    assert!(s.metrics.is_empty());
    assert_eq!(
        fs::read(&init).unwrap(),
        fs::read(out.join(POLICY_FILE)).unwrap()
    );
}

#[test]
fn every_variant_trains_and_tags_its_metrics() {
    let tmp = TempDir::new().unwrap();
    let mut tags = Vec::new();
    for v in AlgoVariant::ALL {
        let mut cfg = small(5);
        cfg.episodes = 5;
        cfg.train.variant = v;
        let dir = tmp.path().join(v.name());
        let s = cmd_train(&cfg, &TrainOptions::default(), &dir).unwrap();
        assert_eq!(s.metrics.len(), 5);
        let rows = csv_rows(&dir.join(METRICS_FILE));
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| &r[1] == v.name()));
        tags.push(rows[0][1].to_string());
    }
    tags.sort();
    tags.dedup();
    assert_eq!(tags.len(), 7);
}

#[test]
fn checkpoint_from_another_policy_shape_needs_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(5);
    cmd_train(&cfg, &TrainOptions::default(), &tmp.path().join("a")).unwrap();
    let mut other = cfg.clone();
    other.policy.head_hidden = vec![16];
    let opts = EvalOptions {
        checkpoint: tmp.path().join("a").join(POLICY_FILE),
        ..Default::default()
    };
    let err = cmd_eval(&other, &opts, &tmp.path().join("e")).unwrap_err();
    assert!(matches!(err, CliError::Core(_)), "{err}");
}

#[test]
fn noise_free_eval_has_zero_spread() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small(20);
    cfg.sim.force_noise_std = 0.0;
    cfg.sim.moment_noise_std = 0.0;
    let search = tmp.path().join("search");
    cmd_search(&cfg, &search).unwrap();
    cmd_train(&cfg, &TrainOptions::default(), &tmp.path().join("t")).unwrap();
    let s = cmd_eval(
        &cfg,
        &EvalOptions {
            checkpoint: tmp.path().join("t").join(POLICY_FILE),
            rollouts: Some(3),
            gaits: vec![search.join(BF_GAIT_FILE)],
            force: false,
        },
        &tmp.path().join("e"),
    )
    .unwrap();
    assert_eq!(s.entries.len(), 2);
    assert_eq!(s.entries[1].label, "bf_gait");
    for e in &s.entries {
        assert_eq!(e.rollouts.len(), 3);
        assert_eq!(e.reward_std, 0.0);
        assert_eq!(e.cost_std, 0.0);
    }
    assert_eq!(csv_rows(&tmp.path().join("e").join(EVAL_FILE)).len(), 6);
}

#[test]
fn transfer_half_cycle_offset_beats_in_phase() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(20);
    let demos = tmp.path().join("search");
    cmd_search(&cfg, &demos).unwrap();
    cmd_pretrain(&cfg, &demos, &tmp.path().join("bc")).unwrap();
    let r = cmd_transfer(
        &cfg,
        &TransferOptions {
            checkpoint: tmp.path().join("bc").join(POLICY_FILE),
            force: false,
        },
        &tmp.path().join("x"),
    )
    .unwrap();
    assert_eq!(r.h % 2, 0);
    assert_eq!(r.rows[0].offset, r.h / 2);
    assert_eq!(r.rows[1].offset, 0);
    assert!(r.rows[0].summary.f_z_var < r.rows[1].summary.f_z_var);
    assert_eq!(r.rows[0].m_z_max_abs, 0.0);
    assert_eq!(csv_rows(&tmp.path().join("x").join(TRANSFER_FILE)).len(), 2);
    assert!(tmp.path().join("x").join(GAIT_FILE).exists());
}

fn train_runs(tmp: &Path, cfg: &RunConfig, seeds: &[u64]) -> Vec<std::path::PathBuf> {
    seeds
        .iter()
        .map(|&s| {
            let c = RunConfig {
                seed: s,
                ..cfg.clone()
            };
            let dir = tmp.join(format!("{}-{s}", c.train.variant.name()));
            cmd_train(&c, &TrainOptions::default(), &dir).unwrap();
            dir
        })
        .collect()
}

#[test]
fn report_of_one_run_equals_its_final_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(5);
    let dirs = train_runs(tmp.path(), &cfg, &[4]);
    let rows = acppo::train::read_metrics_csv(&dirs[0].join(METRICS_FILE)).unwrap();
    let ms: Vec<_> = rows.into_iter().map(|(_, m, _)| m).collect();
    let (r, c) = final_metrics(&ms, cfg.final_window);
    let rep = cmd_report(
        &cfg,
        &ReportOptions {
            run_dirs: dirs,
            force: false,
        },
        &tmp.path().join("rep"),
    )
    .unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert_eq!(rep.rows[0].reward_mean, r);
    assert_eq!(rep.rows[0].cost_mean, c);
    assert_eq!(rep.rows[0].reward_std, 0.0);
}

#[test]
fn report_std_over_seeds_matches_hand_computation() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(5);
    let dirs = train_runs(tmp.path(), &cfg, &[1, 2, 3]);
    let finals: Vec<f64> = dirs
        .iter()
        .map(|d| {
            let rows = acppo::train::read_metrics_csv(&d.join(METRICS_FILE)).unwrap();
            rows.iter().map(|(_, m, _)| m.reward).sum::<f64>() / rows.len() as f64
        })
        .collect();
    let mean = (finals[0] + finals[1] + finals[2]) / 3.0;
    let std = (finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 2.0).sqrt();
    let rep = cmd_report(
        &cfg,
        &ReportOptions {
            run_dirs: dirs,
            force: false,
        },
        &tmp.path().join("rep"),
    )
    .unwrap();
    let row = &rep.rows[0];
    assert_eq!(row.runs, 3);
    assert!((row.reward_mean - mean).abs() < 1e-12);
    assert!((row.reward_std - std).abs() < 1e-12);
    assert!(row.reward_std > 0.0);
    let curves = csv_rows(&tmp.path().join("rep").join(CURVES_FILE));
    assert_eq!(curves.len(), cfg.episodes);
}

#[test]
fn report_groups_variants_and_guards_fingerprints() {
    let tmp = TempDir::new().unwrap();
    let mut a = small(5);
    a.train.variant = AlgoVariant::CppoPid;
    let mut b = small(5);
    b.train.variant = AlgoVariant::AcppoPid;
    let mut dirs = train_runs(tmp.path(), &a, &[1]);
    dirs.extend(train_runs(tmp.path(), &b, &[1]));
    let rep = cmd_report(
        &a,
        &ReportOptions {
            run_dirs: dirs.clone(),
            force: false,
        },
        &tmp.path().join("rep"),
    )
    .unwrap();
    let names: Vec<_> = rep.rows.iter().map(|r| r.variant).collect();
    assert_eq!(names, vec![AlgoVariant::AcppoPid, AlgoVariant::CppoPid]);

    let mut c = a.clone();
    c.train.pid.k_p = 0.7;
    let sub = tmp.path().join("other");
    dirs = train_runs(tmp.path(), &a, &[2]);
    dirs.extend(train_runs(&sub, &c, &[3]));
    let opts = ReportOptions {
        run_dirs: dirs,
        force: false,
    };
    let err = cmd_report(&a, &opts, &tmp.path().join("rep2")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let forced = ReportOptions {
        force: true,
        ..opts
    };
    let rep = cmd_report(&a, &forced, &tmp.path().join("rep3")).unwrap();
    assert_eq!(rep.rows[0].config_fp, "mixed");
}

fn acppo(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_acppo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let ok = acppo(&["--out", "s", "search", "--pool-size", "3"], tmp.path());
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(summary["pool"], 3);

    let missing = acppo(&["--out", "b", "pretrain", "--demos", "absent"], tmp.path());
    assert_eq!(missing.status.code(), Some(4));

    fs::write(tmp.path().join("bad.toml"), "episodes = -1\n").unwrap();
    let bad = acppo(&["--config", "bad.toml", "search"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));

    let unknown = acppo(&["--variant", "SAC", "search"], tmp.path());
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "seed = 5\nepisodes = 9\n[train]\nvariant = \"CPPO_PID\"\n",
    )
    .unwrap();
    let out = acppo(
        &[
            "--config",
            "run.toml",
            "--variant",
            "ppo-no-cost",
            "train",
            "--episodes",
            "2",
        ],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let used =
        RunConfig::load(Some(&tmp.path().join("out").join("run_config.toml")), None).unwrap();
    assert_eq!(used.seed, 5);
    assert_eq!(used.episodes, 2);
    assert_eq!(used.train.variant, AlgoVariant::PpoNoCost);
}
