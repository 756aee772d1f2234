//! Multi-task training loop: batching, joint next-item and contrastive
//! losses, Adam with linear decay, early stopping and checkpoints.

mod adam;
mod checkpoint;
mod schedule;
pub mod step;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentKind, AugmentOp};
use crate::corpus::{Phase, SplitDataset, SplitUser};
use crate::encoder::{Encoder, EncoderHyper, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalConfig, EvalReport};
use crate::objective::LossConfig;
use crate::scalar::Scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{params_from, tensors_of, Checkpoint, RngState, Tensor};
pub use schedule::LinearDecay;
pub use step::{batch_gradients, batch_loss, build_batch, StepBatch, StepLosses};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Next-item loss plus λ-weighted contrastive loss over augmented views.
    Cl4srec,
    /// Next-item loss only.
    Sasrec,
    /// Next-item loss on augmented inputs, no contrastive term.
    SasrecAug,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::Sasrec, TrainMode::SasrecAug, TrainMode::Cl4srec];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Cl4srec => "cl4srec",
            TrainMode::Sasrec => "sasrec",
            TrainMode::SasrecAug => "sasrec_aug",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cl4srec" => Ok(TrainMode::Cl4srec),
            "sasrec" => Ok(TrainMode::Sasrec),
            "sasrec_aug" => Ok(TrainMode::SasrecAug),
            other => Err(Error::InvalidArgument(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Fraction of the base rate the linear decay never goes below.
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: Vec<AugmentOp>,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Cl4srec,
            batch_size: 256,
            lr: 1e-3,
            adam: AdamConfig::default(),
            lr_floor: 0.1,
            max_epochs: 100,
            patience: 10,
            seed: 2021,
            loss: LossConfig::default(),
            augment: vec![AugmentOp {
                kind: AugmentKind::Crop,
                rate: 0.6,
            }],
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.mode == TrainMode::Cl4srec && self.batch_size < 2 {
            return bad("cl4srec mode needs batch size >= 2 for in-batch negatives".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return bad(format!("lr floor {} outside [0, 1]", self.lr_floor));
        }
        if !(self.loss.lambda >= 0.0 && self.loss.lambda.is_finite()) {
            return bad(format!("lambda {} must be a finite non-negative number", self.loss.lambda));
        }
        if self.loss.negatives == 0 {
            return bad("at least one negative per timestep is required".into());
        }
        if self.mode == TrainMode::SasrecAug && self.augment.is_empty() {
            return bad("sasrec_aug mode needs at least one augmentation".into());
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return bad("evaluation cutoffs must be positive".into());
        }
        for op in &self.augment {
            AugmentOp::new(op.kind, op.rate)?;
        }
        Ok(())
    }
}

/// Counters that survive a checkpoint round trip.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: usize,
    /// Batches processed.
    pub step: u64,
    pub total_steps: u64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
    /// Batches skipped because of a non-finite gradient.
    pub aborted_steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Track the best validation value; stop after `patience` consecutive
/// epochs without improvement (at least one).
pub fn early_stopping_update(progress: &mut Progress, patience: usize, epoch: usize, metric: f64) -> StopDecision {
    let improved = progress.best_metric.is_none_or(|best| metric > best);
    if improved {
        progress.best_metric = Some(metric);
        progress.best_epoch = Some(epoch);
        progress.bad_epochs = 0;
    } else {
        progress.bad_epochs += 1;
    }
    StopDecision {
        improved,
        stop: progress.bad_epochs > 0 && progress.bad_epochs >= patience,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub main_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    pub batches: usize,
    pub skipped_pairs: usize,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub main_loss: f64,
    pub cl_loss: f64,
    pub valid_hr10: f64,
    pub valid_ndcg10: f64,
    pub elapsed_s: f64,
}

pub struct FitOutcome<F> {
    pub best: Encoder<F>,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

/// Users that contribute at least one next-item target.
pub fn trainable_users(split: &SplitDataset) -> Vec<&SplitUser> {
    split.users.iter().filter(|u| u.train.len() >= 2).collect()
}

pub fn steps_per_epoch(split: &SplitDataset, batch_size: usize) -> u64 {
    trainable_users(split).len().div_ceil(batch_size.max(1)) as u64
}

pub struct Trainer<F> {
    pub encoder: Encoder<F>,
    pub config: TrainConfig,
    pub progress: Progress,
    adam: AdamState<F>,
    rng: ChaCha8Rng,
    best: Option<EncoderParams<F>>,
}

impl<F: Scalar> Trainer<F> {
    /// Fresh parameters from the configured seed. The decay horizon is
    /// `max_epochs` × batches per epoch of `split`.
    pub fn new(hyper: EncoderHyper, config: TrainConfig, split: &SplitDataset) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if hyper.num_items != split.num_items {
            return Err(Error::InvalidArgument(format!(
                "encoder catalog {} differs from dataset catalog {}",
                hyper.num_items, split.num_items
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = EncoderParams::init(&hyper, &mut rng);
        let adam = AdamState::new(&params);
        let progress = Progress {
            total_steps: config.max_epochs as u64 * steps_per_epoch(split, config.batch_size),
            ..Progress::default()
        };
        Ok(Self {
            encoder: Encoder::new(hyper, params)?,
            config,
            progress,
            adam,
            rng,
            best: None,
        })
    }

    pub fn schedule(&self) -> LinearDecay {
        LinearDecay {
            base: self.config.lr,
            total_steps: self.progress.total_steps,
            floor: self.config.lr_floor,
        }
    }

    pub fn adam_state(&self) -> &AdamState<F> {
        &self.adam
    }

    /// One pass over the trainable users in a fresh random order.
    pub fn train_epoch(&mut self, split: &SplitDataset) -> Result<EpochStats> {
        let mut users = trainable_users(split);
        if users.is_empty() {
            return Err(Error::EmptyDataset("no user has at least two training items".into()));
        }
        users.shuffle(&mut self.rng);
        let hyper = self.encoder.hyper.clone();
        let schedule = self.schedule();
        let (mut main_sum, mut cl_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let mut batches = 0;
        let mut skipped_pairs = 0;
        let mut lr = schedule.lr_at(self.progress.step);
        for chunk in users.chunks(self.config.batch_size) {
            let batch = build_batch(chunk, &self.config, hyper.num_items, hyper.max_len, &mut self.rng)?;
            skipped_pairs += batch.skipped_pairs;
            let seed: u64 = self.rng.random();
            let (losses, grads) = batch_gradients(&self.encoder, &batch, &self.config, Mode::Train { seed })?;
            lr = schedule.lr_at(self.progress.step);
            match adam_step(&mut self.encoder.params, &grads, &mut self.adam, &self.config.adam, lr) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { tensor }) => {
                    log::warn!(
                        "epoch {} batch {batches}: non-finite gradient in {tensor}; step skipped",
                        self.progress.epoch
                    );
                    self.progress.aborted_steps += 1;
                }
                Err(e) => return Err(e),
            }
            self.progress.step += 1;
            main_sum += losses.main.f64();
            cl_sum += losses.cl.f64();
            total_sum += losses.total.f64();
            batches += 1;
        }
        let n = batches as f64;
        Ok(EpochStats {
            epoch: self.progress.epoch,
            lr,
            main_loss: main_sum / n,
            cl_loss: cl_sum / n,
            total_loss: total_sum / n,
            batches,
            skipped_pairs,
        })
    }

    pub fn evaluate(&self, split: &SplitDataset, phase: Phase) -> Result<EvalReport> {
        evaluate(&self.encoder, split, phase, &self.config.eval)
    }

    /// Best-so-far parameters (the current ones before any validation).
    pub fn best_encoder(&self) -> Encoder<F> {
        Encoder {
            hyper: self.encoder.hyper.clone(),
            params: self.best.clone().unwrap_or_else(|| self.encoder.params.clone()),
        }
    }

    /// Train until `max_epochs` or early stopping on validation NDCG@10.
    /// `on_epoch` runs after every epoch with the log line and whether the
    /// epoch improved the best score.
    pub fn fit<C>(&mut self, split: &SplitDataset, on_epoch: C) -> Result<FitOutcome<F>>
    where
        C: FnMut(&Trainer<F>, &EpochLog, bool) -> Result<()>,
    {
        let eval = self.config.eval.clone();
        self.fit_with(
            split,
            |encoder, _| {
                let report = evaluate(encoder, split, Phase::Valid, &eval)?;
                let pick = |k: Option<f64>, all: &[f64]| k.unwrap_or(all[all.len() - 1]);
                Ok((pick(report.hr_at(10), &report.hr), pick(report.ndcg_at(10), &report.ndcg)))
            },
            on_epoch,
        )
    }

    /// [`fit`](Self::fit) with a caller-supplied validation metric returning
    /// `(hr10, ndcg10)`; early stopping follows the second value.
    pub fn fit_with<M, C>(&mut self, split: &SplitDataset, mut metric: M, mut on_epoch: C) -> Result<FitOutcome<F>>
    where
        M: FnMut(&Encoder<F>, usize) -> Result<(f64, f64)>,
        C: FnMut(&Trainer<F>, &EpochLog, bool) -> Result<()>,
    {
        let start = Instant::now();
        let mut log = Vec::new();
        while self.progress.epoch < self.config.max_epochs {
            let stats = self.train_epoch(split)?;
            let epoch = self.progress.epoch;
            let (hr10, ndcg10) = metric(&self.encoder, epoch)?;
            let decision = early_stopping_update(&mut self.progress, self.config.patience, epoch, ndcg10);
            if decision.improved {
                self.best = Some(self.encoder.params.clone());
            }
            self.progress.epoch += 1;
            let line = EpochLog {
                epoch,
                lr: stats.lr,
                main_loss: stats.main_loss,
                cl_loss: stats.cl_loss,
                valid_hr10: hr10,
                valid_ndcg10: ndcg10,
                elapsed_s: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch}: main {:.4} cl {:.4} valid HR@10 {hr10:.4} NDCG@10 {ndcg10:.4}",
                stats.main_loss,
                stats.cl_loss
            );
            on_epoch(self, &line, decision.improved)?;
            log.push(line);
            if decision.stop {
                break;
            }
        }
        Ok(FitOutcome {
            best: self.best_encoder(),
            best_epoch: self.progress.best_epoch,
            log,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let best_params = self
            .best
            .as_ref()
            .filter(|b| **b != self.encoder.params)
            .map(tensors_of);
        Checkpoint {
            format: checkpoint::FORMAT.to_string(),
            version: checkpoint::VERSION,
            precision: F::NAME.to_string(),
            hyper: self.encoder.hyper.clone(),
            config: self.config.clone(),
            params: tensors_of(&self.encoder.params),
            adam_m: tensors_of(&self.adam.m),
            adam_v: tensors_of(&self.adam.v),
            adam_step: self.adam.step,
            rng: RngState::capture(&self.rng),
            progress: self.progress.clone(),
            best_params,
        }
    }

    /// Checkpoint of the best parameters seen so far.
    pub fn best_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.checkpoint();
        if let Some(best) = &self.best {
            ckpt.params = tensors_of(best);
        }
        ckpt.best_params = None;
        ckpt
    }

    /// Resume exactly where `ckpt` left off.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.precision != F::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, trainer uses {}",
                ckpt.precision,
                F::NAME
            )));
        }
        let params: EncoderParams<F> = ckpt.encoder_params()?;
        let adam = AdamState {
            m: params_from(&ckpt.hyper, &ckpt.adam_m)?,
            v: params_from(&ckpt.hyper, &ckpt.adam_v)?,
            step: ckpt.adam_step,
        };
        let best = match &ckpt.best_params {
            Some(t) => Some(params_from(&ckpt.hyper, t)?),
            None => ckpt.progress.best_epoch.map(|_| params.clone()),
        };
        Ok(Self {
            encoder: Encoder::new(ckpt.hyper.clone(), params)?,
            config: ckpt.config.clone(),
            progress: ckpt.progress.clone(),
            adam,
            rng: ckpt.rng.restore()?,
            best,
        })
    }
}
