//! One optimization step's inputs, losses and gradients.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;

use super::{TrainConfig, TrainMode};
use crate::augment::sample_pair;
use crate::corpus::{make_window, ItemId, PaddedWindow, SplitUser};
use crate::encoder::{Encoder, EncoderParams, Mode, SequenceStates};
use crate::error::Result;
use crate::objective::{contrastive_loss, main_loss, sample_negatives, MainLossBatch};
use crate::scalar::Scalar;

/// Windows for one forward pass plus what each loss reads from its output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepBatch {
    pub windows: Vec<PaddedWindow>,
    pub main: MainLossBatch,
    /// Output rows of the augmented-view representations, positive pairs adjacent.
    pub view_rows: Vec<usize>,
    /// Users whose sequence was too short for a contrastive pair.
    pub skipped_pairs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses<F> {
    pub main: F,
    pub cl: F,
    pub total: F,
}

/// Whether the configuration runs the contrastive branch at all.
pub fn contrastive_enabled(config: &TrainConfig) -> bool {
    config.mode == TrainMode::Cl4srec && config.loss.lambda > 0.0 && !config.augment.is_empty()
}

/// Append next-item targets for `seq` (input `seq[..n-1]`, targets `seq[1..]`).
/// Targets equal to the mask token are skipped.
fn push_main<R: Rng + ?Sized>(
    batch: &mut StepBatch,
    seq: &[ItemId],
    history: &[ItemId],
    config: &TrainConfig,
    num_items: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<()> {
    let n = seq.len();
    let input = make_window(&seq[..n - 1], max_len)?;
    let targets = make_window(&seq[1..], max_len)?;
    let b = batch.windows.len();
    let mask = (num_items + 1) as ItemId;
    let exclude: Option<HashSet<ItemId>> = config.loss.filter_history.then(|| history.iter().copied().collect());
    for slot in input.pad_len()..max_len {
        let pos = targets.item_ids[slot];
        if pos == mask {
            continue;
        }
        let negs = sample_negatives(pos, config.loss.negatives, num_items, exclude.as_ref(), rng)?;
        batch.main.push(b * max_len + slot, pos, negs);
    }
    batch.windows.push(input);
    Ok(())
}

/// Assemble the step inputs for a set of users according to the training mode.
pub fn build_batch<R: Rng + ?Sized>(
    users: &[&SplitUser],
    config: &TrainConfig,
    num_items: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<StepBatch> {
    let mask = (num_items + 1) as ItemId;
    let mut batch = StepBatch::default();
    for u in users {
        if u.train.len() < 2 {
            continue;
        }
        if config.mode == TrainMode::SasrecAug && !config.augment.is_empty() {
            let op = config.augment[rng.random_range(0..config.augment.len())];
            let aug = op.apply(&u.train, mask, rng);
            let seq = if aug.len() >= 2 { aug } else { u.train.clone() };
            push_main(&mut batch, &seq, &u.train, config, num_items, max_len, rng)?;
        } else {
            push_main(&mut batch, &u.train, &u.train, config, num_items, max_len, rng)?;
        }
    }
    if contrastive_enabled(config) {
        for u in users {
            match sample_pair(&u.train, u.user, &config.augment, mask, rng) {
                Some(pair) => {
                    for view in [&pair.view_i, &pair.view_j] {
                        batch.view_rows.push(batch.windows.len() * max_len + max_len - 1);
                        batch.windows.push(make_window(view, max_len)?);
                    }
                }
                None => batch.skipped_pairs += 1,
            }
        }
    }
    Ok(batch)
}

fn losses_from_states<F: Scalar>(
    encoder: &Encoder<F>,
    states: &SequenceStates<F>,
    batch: &StepBatch,
    config: &TrainConfig,
) -> Result<(StepLosses<F>, Array2<F>, Array2<F>)> {
    let lambda = F::of(config.loss.lambda);
    let main = main_loss(states.output.view(), &batch.main, encoder.params.item_emb.view())?;
    let mut d_states = main.d_states;
    let mut cl_value = F::zero();
    if !batch.view_rows.is_empty() {
        let reprs = states.output.select(ndarray::Axis(0), &batch.view_rows);
        let cl = contrastive_loss(reprs.view(), config.loss.symmetric_cl)?;
        cl_value = cl.loss;
        for (&row, g) in batch.view_rows.iter().zip(cl.grad.rows()) {
            d_states.row_mut(row).scaled_add(lambda, &g);
        }
    }
    let losses = StepLosses {
        main: main.loss,
        cl: cl_value,
        total: crate::objective::total_loss(main.loss, cl_value, lambda),
    };
    Ok((losses, d_states, main.d_item_emb))
}

/// Loss values only, without recording intermediates.
pub fn batch_loss<F: Scalar>(encoder: &Encoder<F>, batch: &StepBatch, config: &TrainConfig, mode: Mode) -> Result<StepLosses<F>> {
    let states = encoder.forward(&batch.windows, mode, false)?;
    Ok(losses_from_states(encoder, &states, batch, config)?.0)
}

/// Losses and `∂total/∂θ` for every encoder parameter.
pub fn batch_gradients<F: Scalar>(
    encoder: &Encoder<F>,
    batch: &StepBatch,
    config: &TrainConfig,
    mode: Mode,
) -> Result<(StepLosses<F>, EncoderParams<F>)> {
    let states = encoder.forward(&batch.windows, mode, true)?;
    let (losses, d_states, d_item_emb) = losses_from_states(encoder, &states, batch, config)?;
    let mut grads = encoder.backward(&states, &d_states)?;
    grads.item_emb += &d_item_emb;
    Ok((losses, grads))
}
