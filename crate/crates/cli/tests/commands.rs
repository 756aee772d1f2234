use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cl4srec::corpus::Phase;
use cl4srec::synthetic::{planted, PlantedConfig};
use cl4srec::trainer::{Trainer, TrainMode};
use cl4srec_cli::commands::{self, SweepAxis, CKPT_BEST, CKPT_LAST, CONFIG_FILE};
use cl4srec_cli::{ExperimentConfig, Precision};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cl4srec-cli-{name}-{}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// A processed planted dataset plus a small-model config pointing at it.
fn tiny(dir: &Path) -> ExperimentConfig {
    let data = planted(&PlantedConfig {
        users: 40,
        items: 20,
        seed: 2,
        ..PlantedConfig::default()
    })
    .unwrap();
    let raw = dir.join("raw.tsv");
    fs::write(&raw, data.to_tsv()).unwrap();
    let ds = dir.join("tiny");
    let cfg = ExperimentConfig {
        dataset_dir: Some(ds.clone()),
        max_len: 10,
        dim: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 8,
        batch_size: 16,
        epochs: 3,
        patience: 3,
        seed: 7,
        precision: Precision::F64,
        run_root: dir.join("runs"),
        ..ExperimentConfig::default()
    };
    commands::preprocess(&cfg, &raw, &ds).unwrap();
    cfg
}

fn weights_of(path: &Path) -> String {
    let mut ckpt = cl4srec::trainer::Checkpoint::load(path).unwrap();
    ckpt.config.mode = TrainMode::Sasrec;
    ckpt.config.loss.lambda = 0.0;
    ckpt.to_json().unwrap()
}

#[test]
fn preprocess_counts_and_is_idempotent() {
    let dir = scratch("pre");
    let raw = dir.join("raw.csv");
    // u1 and u2 each rate the same five items; u3 is too short; the
    // repeated (u1, a) keeps its earliest timestamp.
    let mut text = String::from("# user,item,rating,ts\n");
    for (u, base) in [("u1", 0), ("u2", 100)] {
        for (k, item) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            text.push_str(&format!("{u},{item},5,{}\n", base + k));
        }
    }
    text.push_str("u1,a,3,50\nu3,a,1,1\nu3,f,1,2\n");
    let more: Vec<String> = (4..7)
        .flat_map(|u| ["a", "b", "c", "d", "e"].iter().enumerate().map(move |(k, i)| format!("u{u},{i},4,{k}\n")))
        .collect();
    text.push_str(&more.concat());
    fs::write(&raw, text).unwrap();
    let cfg = ExperimentConfig {
        delimiter: ",".into(),
        ..ExperimentConfig::default()
    };
    let out = dir.join("ds");
    let stats = commands::preprocess(&cfg, &raw, &out).unwrap();
    assert_eq!((stats.users, stats.items, stats.actions), (5, 5, 25));
    assert_eq!(stats.avg_length, 5.0);
    let first: Vec<Vec<u8>> = ["user_map.tsv", "item_map.tsv", "sequences.txt", "stats.tsv"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    assert_eq!(String::from_utf8_lossy(&first[2]).lines().next().unwrap(), "1 1 2 3 4 5");
    commands::preprocess(&cfg, &raw, &out).unwrap();
    let second: Vec<Vec<u8>> = ["user_map.tsv", "item_map.tsv", "sequences.txt", "stats.tsv"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    assert_eq!(first, second);

    assert!(commands::preprocess(&cfg, &dir.join("missing.csv"), &dir.join("x")).is_err());
    fs::write(dir.join("sparse.csv"), "u1,a,1,1\nu2,b,1,1\n").unwrap();
    assert!(commands::preprocess(&cfg, &dir.join("sparse.csv"), &dir.join("y")).is_err());
    assert!(!dir.join("y").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn train_writes_run_directory() {
    let dir = scratch("train");
    let cfg = tiny(&dir);
    let summary = commands::train(&cfg, false).unwrap();
    let run = cfg.run_dir();
    assert_eq!(summary.run_dir, run);
    assert!(run.ends_with("tiny_cl4srec_crop0.6_lambda0.1_seed7"));
    for f in [CONFIG_FILE, CKPT_LAST, CKPT_BEST, commands::TRAIN_LOG, commands::TEST_METRICS] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(summary.log.len(), 3);
    assert_eq!(ExperimentConfig::load(&run.join(CONFIG_FILE)).unwrap(), cfg);
    let report = commands::evaluate_run(&run, Phase::Test).unwrap();
    assert_eq!(report.hr, summary.test.hr);
    assert!(report.is_monotone());
    let log_line: serde_json::Value =
        serde_json::from_str(fs::read_to_string(run.join(commands::TRAIN_LOG)).unwrap().lines().next().unwrap()).unwrap();
    for key in ["epoch", "lr", "main_loss", "cl_loss", "valid_hr10", "valid_ndcg10", "elapsed_s"] {
        assert!(log_line.get(key).is_some(), "{key}");
    }
    let pop = commands::evaluate_pop(&cfg, Phase::Test).unwrap();
    assert!(pop.is_monotone());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sasrec_and_lambda_zero_checkpoints_match() {
    let dir = scratch("equiv");
    let cfg = tiny(&dir);
    let a = ExperimentConfig {
        mode: TrainMode::Sasrec,
        ..cfg.clone()
    };
    let b = ExperimentConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    commands::train(&a, false).unwrap();
    commands::train(&b, false).unwrap();
    assert_ne!(a.run_dir(), b.run_dir());
    assert_eq!(weights_of(&a.run_dir().join(CKPT_LAST)), weights_of(&b.run_dir().join(CKPT_LAST)));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn resume_and_rerun_are_bit_exact() {
    let dir = scratch("resume");
    let cfg = tiny(&dir);
    let full = dir.join("full");
    commands::train_in(&cfg, &full, false).unwrap();

    // Interrupted after epoch 1: only ckpt_last and config survive.
    let partial = dir.join("partial");
    fs::create_dir_all(&partial).unwrap();
    fs::write(partial.join(CONFIG_FILE), cfg.to_text()).unwrap();
    let split = commands::load_split(&cfg).unwrap();
    let mut t = Trainer::<f64>::new(cfg.encoder_hyper(split.num_items), cfg.train_config().unwrap(), &split).unwrap();
    let _ = t.fit(&split, |t, line, _| {
        t.checkpoint().save(&partial.join(CKPT_LAST))?;
        if line.epoch == 1 {
            return Err(cl4srec::Error::InvalidArgument("stop".into()));
        }
        Ok(())
    });
    let resumed = commands::train_in(&cfg, &partial, true).unwrap();
    assert_eq!(fs::read(full.join(CKPT_LAST)).unwrap(), fs::read(partial.join(CKPT_LAST)).unwrap());
    assert_eq!(resumed.log.len(), 1);

    // A different config refuses to resume.
    let other = ExperimentConfig { lr: 0.01, ..cfg.clone() };
    assert!(commands::train_in(&other, &partial, true).is_err());

    // Rerun from the materialized config.
    let rerun_cfg = ExperimentConfig::load(&full.join(CONFIG_FILE)).unwrap();
    let rerun = dir.join("rerun");
    commands::train_in(&rerun_cfg, &rerun, false).unwrap();
    assert_eq!(fs::read(full.join(CKPT_LAST)).unwrap(), fs::read(rerun.join(CKPT_LAST)).unwrap());
    assert_eq!(fs::read(full.join(CKPT_BEST)).unwrap(), fs::read(rerun.join(CKPT_BEST)).unwrap());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweeps_cover_their_grids() {
    assert_eq!(
        SweepAxis::Proportion.default_values(),
        vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    );
    assert_eq!(SweepAxis::Lambda.default_values(), vec![0.1, 0.5, 1.0, 2.0, 4.0]);
    let dir = scratch("sweep");
    let cfg = ExperimentConfig { epochs: 1, ..tiny(&dir) };
    let cells = commands::sweep(&cfg, SweepAxis::Proportion, &SweepAxis::Proportion.default_values()).unwrap();
    assert_eq!(cells.len(), 9);
    assert!(cells.iter().all(|c| c.outcome.is_ok()));
    let csv = fs::read_to_string(cfg.run_root.join("sweep_proportion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("proportion,status,HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20\n"));

    // A bad cell is recorded and the sweep carries on.
    let cells = commands::sweep(&cfg, SweepAxis::Proportion, &[1.5, 0.5]).unwrap();
    assert!(cells[0].outcome.is_err());
    assert!(cells[1].outcome.is_ok());

    // A single-value sweep is one train + evaluate.
    let cells = commands::sweep(&cfg, SweepAxis::Lambda, &[0.5]).unwrap();
    let direct = ExperimentConfig { lambda: 0.5, ..cfg.clone() };
    let single = commands::train_in(&direct, &dir.join("direct"), false).unwrap();
    assert_eq!(cells[0].outcome.as_ref().unwrap().hr, single.test.hr);
    assert_eq!(cells[0].outcome.as_ref().unwrap().ndcg, single.test.ndcg);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn ablation_rows_are_deterministic() {
    let dir = scratch("ablate");
    let cfg = ExperimentConfig { epochs: 2, ..tiny(&dir) };
    let rows = commands::ablate(&cfg).unwrap();
    let models: Vec<&str> = rows.iter().map(|r| r.model).collect();
    assert_eq!(models, ["SASRec", "SASRec_aug", "CL4SRec"]);
    let csv = commands::ablation_csv(&rows);
    assert!(csv.starts_with("model,HR@20,NDCG@20\nSASRec,"));
    let again = commands::ablate(&cfg).unwrap();
    assert_eq!(rows[0].report.hr, again[0].report.hr);
    assert_eq!(rows[0].report.ranks, again[0].report.ranks);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simreport_self_pairs_and_empty_list() {
    let dir = scratch("sim");
    let cfg = ExperimentConfig { epochs: 1, ..tiny(&dir) };
    commands::train(&cfg, false).unwrap();
    let run = cfg.run_dir();
    let pairs = dir.join("pairs.txt");
    fs::write(&pairs, "u1 u1\nu2,u2\nu3 u3\nghost u1\n").unwrap();
    let out = dir.join("sim.csv");
    let report = commands::simreport(&run, &pairs, &out).unwrap();
    assert_eq!(report.pairs, 3);
    assert_eq!(report.skipped, 1);
    assert_eq!(report.bins.last().unwrap().count, 3);
    assert!(report.bins.iter().rev().skip(1).all(|b| b.count == 0));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("0.95,1.00,3"));

    fs::write(&pairs, "").unwrap();
    let report = commands::simreport(&run, &pairs, &out).unwrap();
    assert_eq!(report.pairs, 0);
    assert_eq!(report.mean, None);
    assert!(fs::read_to_string(&out).unwrap().contains("mean,undefined"));
    assert!(commands::simreport(&run, &dir.join("nope"), &out).is_err());
    fs::remove_dir_all(&dir).unwrap();
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cl4srec"))
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let dir = scratch("bin");
    let status = bin()
        .args(["train", "--set", "dataset.dir=/definitely/missing", "--out"])
        .arg(dir.join("runs"))
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("does not exist"));
    assert!(!dir.join("runs").exists());

    let cfg_path = dir.join("bad.cfg");
    fs::write(&cfg_path, "train.speed = 3\n").unwrap();
    let status = bin().args(["train", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("unknown config key"));

    let status = bin().args(["train", "--set", "train.batch_size=1"]).output().unwrap();
    assert!(!status.status.success());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn binary_end_to_end() {
    let dir = scratch("e2e");
    let raw = dir.join("raw.tsv");
    let st = bin().args(["generate", "--kind", "planted", "--users", "40", "--items", "20", "--out"]).arg(&raw).status().unwrap();
    assert!(st.success());
    let ds = dir.join("planted");
    let out = bin().arg("preprocess").arg(&raw).arg("--out").arg(&ds).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("#users\t#items"));
    let cfg = dir.join("exp.cfg");
    fs::write(
        &cfg,
        format!(
            "[dataset]\ndir = {}\n[corpus]\nmax_len = 10\n[encoder]\ndim = 8\nffn_dim = 8\nlayers = 1\n[train]\nbatch_size = 16\nepochs = 2\n",
            ds.display()
        ),
    )
    .unwrap();
    let runs = dir.join("runs");
    let out = bin().args(["train", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(&runs).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = runs.join("planted_cl4srec_crop0.6_lambda0.1_seed3");
    let materialized = fs::read_to_string(run.join(CONFIG_FILE)).unwrap();
    assert!(materialized.contains("train.seed = 3\n"));
    assert!(materialized.contains("train.lr = 0.001\n"));
    let out = bin().args(["evaluate", "--run"]).arg(&run).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20\n"));
    let out = bin().args(["evaluate", "--pop", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    fs::remove_dir_all(&dir).unwrap();
}
