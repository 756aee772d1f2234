//! Flat `key = value` experiment configuration.
//!
//! Keys are dotted (`train.lr`) or grouped under `[section]` headers. Every
//! key has a default, unknown keys are rejected, and [`ExperimentConfig::to_text`]
//! writes the fully resolved form that a run directory keeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cl4srec::augment::{AugmentKind, AugmentOp};
use cl4srec::encoder::EncoderHyper;
use cl4srec::evaluator::EvalConfig;
use cl4srec::objective::LossConfig;
use cl4srec::trainer::{AdamConfig, TrainConfig, TrainMode};
use cl4srec::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidArgument(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_raw: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub dataset_name: Option<String>,
    pub delimiter: String,
    pub max_len: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub ops: Vec<AugmentKind>,
    pub crop_rate: f64,
    pub mask_rate: f64,
    pub reorder_rate: f64,
    pub lambda: f64,
    pub negatives: usize,
    pub symmetric: bool,
    pub filter_history: bool,
    pub mode: TrainMode,
    pub precision: Precision,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub filter_seen: bool,
    pub eval_batch_size: usize,
    pub run_root: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        Self {
            dataset_raw: None,
            dataset_dir: None,
            dataset_name: None,
            delimiter: "\t".into(),
            max_len: 50,
            dim: 64,
            heads: 2,
            layers: 2,
            ffn_dim: 64,
            dropout: 0.2,
            ops: vec![AugmentKind::Crop],
            crop_rate: 0.6,
            mask_rate: 0.3,
            reorder_rate: 0.6,
            lambda: loss.lambda,
            negatives: loss.negatives,
            symmetric: loss.symmetric_cl,
            filter_history: loss.filter_history,
            mode: TrainMode::Cl4srec,
            precision: Precision::F32,
            lr: train.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            lr_floor: train.lr_floor,
            batch_size: train.batch_size,
            epochs: train.max_epochs,
            patience: train.patience,
            seed: train.seed,
            ks: vec![5, 10, 20],
            filter_seen: true,
            eval_batch_size: 256,
            run_root: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn escape_delimiter(d: &str) -> String {
    match d {
        "\t" => "tab".into(),
        "," => "comma".into(),
        " " => "space".into(),
        other => other.into(),
    }
}

fn unescape_delimiter(d: &str) -> String {
    match d {
        "tab" | "\\t" => "\t".into(),
        "comma" => ",".into(),
        "space" => " ".into(),
        "" => "\t".into(),
        other => other.into(),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Set one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset.raw" => self.dataset_raw = optional_path(value),
            "dataset.dir" => self.dataset_dir = optional_path(value),
            "dataset.name" => self.dataset_name = (!value.is_empty()).then(|| value.to_string()),
            "corpus.delimiter" => self.delimiter = unescape_delimiter(value),
            "corpus.max_len" => self.max_len = parse(key, value)?,
            "encoder.dim" => self.dim = parse(key, value)?,
            "encoder.heads" => self.heads = parse(key, value)?,
            "encoder.layers" => self.layers = parse(key, value)?,
            "encoder.ffn_dim" => self.ffn_dim = parse(key, value)?,
            "encoder.dropout" => self.dropout = parse(key, value)?,
            "augment.ops" => {
                self.ops = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "augment.crop_rate" => self.crop_rate = parse(key, value)?,
            "augment.mask_rate" => self.mask_rate = parse(key, value)?,
            "augment.reorder_rate" => self.reorder_rate = parse(key, value)?,
            "loss.lambda" => self.lambda = parse(key, value)?,
            "loss.negatives" => self.negatives = parse(key, value)?,
            "loss.symmetric" => self.symmetric = parse_bool(key, value)?,
            "loss.filter_history" => self.filter_history = parse_bool(key, value)?,
            "train.mode" => self.mode = value.parse()?,
            "train.precision" => self.precision = value.parse()?,
            "train.lr" => self.lr = parse(key, value)?,
            "train.adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "train.adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "train.adam_eps" => self.adam_eps = parse(key, value)?,
            "train.lr_floor" => self.lr_floor = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.patience" => self.patience = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "eval.ks" => {
                self.ks = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "eval.filter_seen" => self.filter_seen = parse_bool(key, value)?,
            "eval.batch_size" => self.eval_batch_size = parse(key, value)?,
            "run.root" => self.run_root = PathBuf::from(value),
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` or `key = value`.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    /// Apply a config file's contents on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let k = k.trim();
            let key = if section.is_empty() || k.contains('.') {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            self.set(&key, v).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let ops = if self.ops.is_empty() {
            "none".to_string()
        } else {
            join(&self.ops)
        };
        vec![
            ("dataset.raw", path(&self.dataset_raw)),
            ("dataset.dir", path(&self.dataset_dir)),
            ("dataset.name", self.dataset_name.clone().unwrap_or_default()),
            ("corpus.delimiter", escape_delimiter(&self.delimiter)),
            ("corpus.max_len", self.max_len.to_string()),
            ("encoder.dim", self.dim.to_string()),
            ("encoder.heads", self.heads.to_string()),
            ("encoder.layers", self.layers.to_string()),
            ("encoder.ffn_dim", self.ffn_dim.to_string()),
            ("encoder.dropout", self.dropout.to_string()),
            ("augment.ops", ops),
            ("augment.crop_rate", self.crop_rate.to_string()),
            ("augment.mask_rate", self.mask_rate.to_string()),
            ("augment.reorder_rate", self.reorder_rate.to_string()),
            ("loss.lambda", self.lambda.to_string()),
            ("loss.negatives", self.negatives.to_string()),
            ("loss.symmetric", self.symmetric.to_string()),
            ("loss.filter_history", self.filter_history.to_string()),
            ("train.mode", self.mode.to_string()),
            ("train.precision", self.precision.name().to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.adam_beta1", self.adam_beta1.to_string()),
            ("train.adam_beta2", self.adam_beta2.to_string()),
            ("train.adam_eps", self.adam_eps.to_string()),
            ("train.lr_floor", self.lr_floor.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.seed", self.seed.to_string()),
            ("eval.ks", join(&self.ks)),
            ("eval.filter_seen", self.filter_seen.to_string()),
            ("eval.batch_size", self.eval_batch_size.to_string()),
            ("run.root", self.run_root.display().to_string()),
        ]
    }

    /// The materialized config; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn rate_of(&self, kind: AugmentKind) -> f64 {
        match kind {
            AugmentKind::Crop => self.crop_rate,
            AugmentKind::Mask => self.mask_rate,
            AugmentKind::Reorder => self.reorder_rate,
        }
    }

    pub fn set_rate(&mut self, kind: AugmentKind, rate: f64) {
        match kind {
            AugmentKind::Crop => self.crop_rate = rate,
            AugmentKind::Mask => self.mask_rate = rate,
            AugmentKind::Reorder => self.reorder_rate = rate,
        }
    }

    pub fn augment_ops(&self) -> Result<Vec<AugmentOp>> {
        self.ops.iter().map(|&k| AugmentOp::new(k, self.rate_of(k))).collect()
    }

    pub fn encoder_hyper(&self, num_items: usize) -> EncoderHyper {
        EncoderHyper {
            num_items,
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            max_len: self.max_len,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ks: self.ks.clone(),
            filter_seen: self.filter_seen,
            batch_size: self.eval_batch_size,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            mode: self.mode,
            batch_size: self.batch_size,
            lr: self.lr,
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            lr_floor: self.lr_floor,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            loss: LossConfig {
                lambda: self.lambda,
                negatives: self.negatives,
                symmetric_cl: self.symmetric,
                filter_history: self.filter_history,
            },
            augment: self.augment_ops()?,
            eval: self.eval_config(),
        })
    }

    /// Check everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        self.train_config()?.validate()?;
        self.encoder_hyper(2).validate()?;
        if self.eval_batch_size == 0 {
            return Err(Error::InvalidArgument("eval.batch_size must be positive".into()));
        }
        if self.delimiter.is_empty() {
            return Err(Error::InvalidArgument("corpus.delimiter must not be empty".into()));
        }
        Ok(())
    }

    pub fn dataset_label(&self) -> String {
        if let Some(name) = &self.dataset_name {
            return name.clone();
        }
        self.dataset_dir
            .as_ref()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    }

    /// Self-describing run directory name.
    pub fn run_name(&self) -> String {
        let ops = if self.ops.is_empty() {
            "noaug".to_string()
        } else {
            self.ops
                .iter()
                .map(|&k| format!("{k}{}", self.rate_of(k)))
                .collect::<Vec<_>>()
                .join("+")
        };
        format!(
            "{}_{}_{}_lambda{}_seed{}",
            self.dataset_label(),
            self.mode,
            ops,
            self.lambda,
            self.seed
        )
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run_root.join(self.run_name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn materialized_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_assignment("augment.ops=crop,mask").unwrap();
        cfg.apply_assignment("corpus.delimiter=comma").unwrap();
        cfg.apply_assignment("dataset.dir=/tmp/beauty").unwrap();
        cfg.apply_assignment("train.lr = 0.0005").unwrap();
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn sections_and_comments() {
        let cfg = ExperimentConfig::from_text("# run\n[train]\nmode = sasrec\nseed = 4\n\n[loss]\nlambda = 0.5\neval.ks = 1,2\n").unwrap();
        assert_eq!(cfg.mode, TrainMode::Sasrec);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.ks, vec![1, 2]);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        assert!(ExperimentConfig::from_text("train.learning_rate = 1").is_err());
        assert!(ExperimentConfig::from_text("[train]\nlr = fast").is_err());
        assert!(ExperimentConfig::from_text("just words").is_err());
        assert!(ExperimentConfig::from_text("augment.ops = crop,zoom").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            heads: 3,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            crop_rate: 1.5,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_names_encode_the_cell() {
        let cfg = ExperimentConfig {
            dataset_dir: Some("data/beauty".into()),
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.run_name(), "beauty_cl4srec_crop0.6_lambda0.1_seed2021");
    }
}
