//! The command implementations behind the binary.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cl4srec::baselines::PopModel;
use cl4srec::corpus::{
    five_core_filter, ingest_reader, read_dataset_dir, write_dataset_dir, DatasetStats, IngestOptions, Phase,
    ProcessedDataset, SplitDataset, UserId,
};
use cl4srec::evaluator::{cosine_similarity_report, evaluate, user_representations, EvalReport, SimilarityReport};
use cl4srec::objective::LAMBDA_GRID;
use cl4srec::trainer::{Checkpoint, EpochLog, Trainer};
use cl4srec::{Error, Result, Scalar};

use crate::config::{ExperimentConfig, Precision};

pub const CONFIG_FILE: &str = "config.txt";
pub const CKPT_LAST: &str = "ckpt_last";
pub const CKPT_BEST: &str = "ckpt_best";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TEST_METRICS: &str = "test_metrics.csv";

/// Write `contents` next to `path` and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn require_dataset_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg
        .dataset_dir
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("dataset.dir is not set".into()))?;
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

pub fn load_split(cfg: &ExperimentConfig) -> Result<SplitDataset> {
    let ds = read_dataset_dir(require_dataset_dir(cfg)?)?;
    let split = ds.split();
    if split.users.is_empty() {
        return Err(Error::EmptyDataset("no user has three or more interactions".into()));
    }
    Ok(split)
}

/// Raw log → binarized, deduplicated, 5-core filtered dataset directory.
pub fn preprocess(cfg: &ExperimentConfig, raw: &Path, out: &Path) -> Result<DatasetStats> {
    let file = fs::File::open(raw)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", raw.display())))?;
    let options = IngestOptions {
        delimiter: cfg.delimiter.clone(),
    };
    let log = five_core_filter(&ingest_reader(BufReader::new(file), &options)?);
    if log.interactions.is_empty() {
        return Err(Error::EmptyDataset(format!("nothing left of {} after 5-core filtering", raw.display())));
    }
    let ds = ProcessedDataset::from_log(&log);
    let mut staging = out.as_os_str().to_owned();
    staging.push(".tmp");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    write_dataset_dir(&ds, &staging)?;
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(&staging, out)?;
    Ok(ds.stats)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub test: EvalReport,
}

fn read_log(path: &Path, before_epoch: usize) -> Result<Vec<EpochLog>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
        let entry: EpochLog = serde_json::from_str(line)?;
        if entry.epoch < before_epoch {
            out.push(entry);
        }
    }
    Ok(out)
}

fn log_text(log: &[EpochLog]) -> Result<String> {
    let mut out = String::new();
    for l in log {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}

fn report_csv(report: &EvalReport) -> String {
    format!("{}\n{}\n", report.csv_header(), report.csv_row())
}

fn train_typed<F: Scalar>(cfg: &ExperimentConfig, split: &SplitDataset, run_dir: &Path, resume: bool) -> Result<TrainSummary> {
    let last = run_dir.join(CKPT_LAST);
    let mut trainer = if resume && last.exists() {
        log::info!("resuming from {}", last.display());
        Trainer::<F>::from_checkpoint(&Checkpoint::load(&last)?)?
    } else {
        Trainer::<F>::new(cfg.encoder_hyper(split.num_items), cfg.train_config()?, split)?
    };
    let log_path = run_dir.join(TRAIN_LOG);
    let mut log = read_log(&log_path, trainer.progress.epoch)?;
    let outcome = trainer.fit(split, |t, line, improved| {
        log.push(line.clone());
        write_atomic(&log_path, log_text(&log)?.as_bytes())?;
        if improved {
            t.best_checkpoint().save(&run_dir.join(CKPT_BEST))?;
        }
        t.checkpoint().save(&last)?;
        Ok(())
    })?;
    let test = evaluate(&outcome.best, split, Phase::Test, &cfg.eval_config())?;
    write_atomic(&run_dir.join(TEST_METRICS), report_csv(&test).as_bytes())?;
    Ok(TrainSummary {
        run_dir: run_dir.to_path_buf(),
        log: read_log(&log_path, usize::MAX)?,
        best_epoch: outcome.best_epoch,
        test,
    })
}

/// Train one run in `run_dir`, writing the materialized config first.
/// With `resume`, an existing `ckpt_last` is continued; its config must
/// match.
pub fn train_in(cfg: &ExperimentConfig, run_dir: &Path, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    fs::create_dir_all(run_dir)?;
    let config_path = run_dir.join(CONFIG_FILE);
    let text = cfg.to_text();
    if resume && config_path.exists() && fs::read_to_string(&config_path)? != text {
        return Err(Error::InvalidArgument(format!(
            "{} was produced by a different config; refusing to resume",
            run_dir.display()
        )));
    }
    write_atomic(&config_path, text.as_bytes())?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &split, run_dir, resume),
        Precision::F64 => train_typed::<f64>(cfg, &split, run_dir, resume),
    }
}

pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<TrainSummary> {
    train_in(cfg, &cfg.run_dir(), resume)
}

fn eval_checkpoint_typed<F: Scalar>(ckpt: &Checkpoint, split: &SplitDataset, phase: Phase) -> Result<EvalReport> {
    let trainer = Trainer::<F>::from_checkpoint(ckpt)?;
    if trainer.encoder.hyper.num_items != split.num_items {
        return Err(Error::InvalidArgument(format!(
            "checkpoint covers {} items but the dataset has {}",
            trainer.encoder.hyper.num_items, split.num_items
        )));
    }
    evaluate(&trainer.encoder, split, phase, &ckpt.config.eval)
}

/// Evaluate a run's best checkpoint on the dataset named by its config.
pub fn evaluate_run(run_dir: &Path, phase: Phase) -> Result<EvalReport> {
    let cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    let split = load_split(&cfg)?;
    let path = run_dir.join(CKPT_BEST);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("no {CKPT_BEST} in {}", run_dir.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    match ckpt.precision.as_str() {
        "f64" => eval_checkpoint_typed::<f64>(&ckpt, &split, phase),
        _ => eval_checkpoint_typed::<f32>(&ckpt, &split, phase),
    }
}

pub fn evaluate_pop(cfg: &ExperimentConfig, phase: Phase) -> Result<EvalReport> {
    let split = load_split(cfg)?;
    let pop = PopModel::fit(&split);
    evaluate::<f64, _>(&pop, &split, phase, &cfg.eval_config())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Proportion,
    Lambda,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proportion" => Ok(SweepAxis::Proportion),
            "lambda" => Ok(SweepAxis::Lambda),
            other => Err(Error::InvalidArgument(format!("sweep axis must be proportion or lambda, got {other:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Proportion => "proportion",
            SweepAxis::Lambda => "lambda",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Proportion => (1..=9).map(|i| i as f64 / 10.0).collect(),
            SweepAxis::Lambda => LAMBDA_GRID.to_vec(),
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            SweepAxis::Proportion => {
                for kind in cfg.ops.clone() {
                    cfg.set_rate(kind, value);
                }
            }
            SweepAxis::Lambda => cfg.lambda = value,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: f64,
    pub run_dir: PathBuf,
    pub outcome: std::result::Result<EvalReport, String>,
}

pub fn sweep_csv(axis: SweepAxis, ks: &[usize], cells: &[SweepCell]) -> String {
    let probe = EvalReport::from_ranks(Phase::Test, ks, Vec::new());
    let mut out = format!("{},status,{}\n", axis.name(), probe.csv_header());
    for c in cells {
        match &c.outcome {
            Ok(r) => out.push_str(&format!("{},ok,{}\n", c.value, r.csv_row())),
            Err(e) => {
                let blanks = ",".repeat(2 * ks.len() - 1);
                out.push_str(&format!("{},\"error: {}\",{blanks}\n", c.value, e.replace('"', "'")));
            }
        }
    }
    out
}

/// One training run per value; failures are kept per cell and the sweep
/// continues. Writes `<root>/sweep_<axis>.csv`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    if axis == SweepAxis::Proportion && cfg.ops.is_empty() {
        return Err(Error::InvalidArgument("proportion sweep needs augment.ops".into()));
    }
    let mut cells = Vec::new();
    for &value in values {
        let mut cell = cfg.clone();
        axis.apply(&mut cell, value);
        let run_dir = cell.run_dir();
        let outcome = train_in(&cell, &run_dir, false)
            .map(|s| s.test)
            .map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::error!("sweep cell {}={value} failed: {e}", axis.name());
        }
        cells.push(SweepCell { value, run_dir, outcome });
    }
    let path = cfg.run_root.join(format!("sweep_{}.csv", axis.name()));
    write_atomic(&path, sweep_csv(axis, &cfg.ks, &cells).as_bytes())?;
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub model: &'static str,
    pub report: EvalReport,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("model,HR@20,NDCG@20\n");
    for r in rows {
        let hr = r.report.hr_at(20).map(|v| format!("{v:.4}")).unwrap_or_default();
        let ndcg = r.report.ndcg_at(20).map(|v| format!("{v:.4}")).unwrap_or_default();
        out.push_str(&format!("{},{hr},{ndcg}\n", r.model));
    }
    out
}

/// Train SASRec, SASRec_aug and CL4SRec with one shared configuration and
/// write `<root>/ablation_<dataset>_seed<seed>.csv`.
pub fn ablate(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    use cl4srec::trainer::TrainMode;
    cfg.validate()?;
    if cfg.ops.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one augmentation".into()));
    }
    let mut ks = cfg.ks.clone();
    if !ks.contains(&20) {
        ks.push(20);
    }
    let mut rows = Vec::new();
    for (mode, model) in [
        (TrainMode::Sasrec, "SASRec"),
        (TrainMode::SasrecAug, "SASRec_aug"),
        (TrainMode::Cl4srec, "CL4SRec"),
    ] {
        let run = ExperimentConfig {
            mode,
            ks: ks.clone(),
            ..cfg.clone()
        };
        let summary = train(&run, false)?;
        rows.push(AblationRow {
            model,
            report: summary.test,
        });
    }
    let path = cfg.run_root.join(format!("ablation_{}_seed{}.csv", cfg.dataset_label(), cfg.seed));
    write_atomic(&path, ablation_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Whitespace- or comma-separated user id pairs, one per line. Ids are the
/// external ids from the dataset's user map.
pub fn read_pairs(text: &str, cfg_users: &cl4srec::corpus::IdMap) -> Result<(Vec<(UserId, UserId)>, usize)> {
    let mut pairs = Vec::new();
    let mut unknown = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected two user ids, got {line:?}"),
            });
        }
        match (cfg_users.dense(fields[0]), cfg_users.dense(fields[1])) {
            (Some(a), Some(b)) => pairs.push((a, b)),
            _ => unknown += 1,
        }
    }
    Ok((pairs, unknown))
}

pub fn similarity_csv(report: &SimilarityReport) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in &report.bins {
        out.push_str(&format!("{:.2},{:.2},{}\n", b.lo, b.hi, b.count));
    }
    match report.mean {
        Some(m) => out.push_str(&format!("# mean,{m:.6}\n")),
        None => out.push_str("# mean,undefined\n"),
    }
    out.push_str(&format!("# pairs,{}\n# skipped,{}\n", report.pairs, report.skipped));
    out
}

fn simreport_typed<F: Scalar>(ckpt: &Checkpoint, split: &SplitDataset, pairs: &[(UserId, UserId)]) -> Result<SimilarityReport> {
    let trainer = Trainer::<F>::from_checkpoint(ckpt)?;
    let reprs = user_representations(&trainer.encoder, split)?;
    Ok(cosine_similarity_report(&reprs, pairs))
}

/// Cosine-similarity histogram of the best checkpoint's user
/// representations over the listed pairs.
pub fn simreport(run_dir: &Path, pairs_path: &Path, out: &Path) -> Result<SimilarityReport> {
    let cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    let ds = read_dataset_dir(require_dataset_dir(&cfg)?)?;
    let split = ds.split();
    let text = fs::read_to_string(pairs_path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", pairs_path.display())))?;
    let (pairs, unknown) = read_pairs(&text, &ds.users)?;
    let path = run_dir.join(CKPT_BEST);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("no {CKPT_BEST} in {}", run_dir.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    let mut report = match ckpt.precision.as_str() {
        "f64" => simreport_typed::<f64>(&ckpt, &split, &pairs)?,
        _ => simreport_typed::<f32>(&ckpt, &split, &pairs)?,
    };
    report.skipped += unknown;
    write_atomic(out, similarity_csv(&report).as_bytes())?;
    Ok(report)
}

