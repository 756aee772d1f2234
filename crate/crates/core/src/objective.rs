//! Sampled-softmax next-item loss, in-batch contrastive loss and their
//! weighted sum. Every loss returns its gradient with respect to its inputs.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, neg_log_softmax, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight λ of the contrastive term.
    pub lambda: f64,
    /// Sampled negatives per timestep.
    pub negatives: usize,
    /// Average over both anchors of every positive pair.
    pub symmetric_cl: bool,
    /// Exclude a user's known items from negative sampling.
    pub filter_history: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            negatives: 1,
            symmetric_cl: true,
            filter_history: false,
        }
    }
}

/// The λ grid swept in the weight-sensitivity experiment.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 4.0];

pub fn sim<F: Scalar>(u: ArrayView1<F>, v: ArrayView1<F>) -> Result<F> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("sim of widths {} and {}", u.len(), v.len())));
    }
    Ok(u.dot(&v))
}

pub fn total_loss<F: Scalar>(main: F, cl: F, lambda: F) -> F {
    main + lambda * cl
}

#[derive(Clone, Debug)]
pub struct ContrastiveLoss<F> {
    pub loss: F,
    /// `∂loss/∂reprs`, same shape as the input.
    pub grad: Array2<F>,
    /// Number of anchors averaged over (0 when fewer than two users).
    pub anchors: usize,
}

/// In-batch contrastive loss over `2N` representations ordered as adjacent
/// positive pairs `[s1_i, s1_j, s2_i, s2_j, ...]`.
///
/// Each anchor's denominator holds its partner plus the `2(N-1)` views of the
/// other users. With `symmetric` the mean runs over all `2N` anchors,
/// otherwise over the first view of each pair only. Fewer than two users
/// give a zero loss.
pub fn contrastive_loss<F: Scalar>(reprs: ArrayView2<F>, symmetric: bool) -> Result<ContrastiveLoss<F>> {
    let rows = reprs.nrows();
    if rows % 2 != 0 {
        return Err(Error::Shape(format!("contrastive batch needs an even row count, got {rows}")));
    }
    let n_users = rows / 2;
    let mut grad = Array2::zeros(reprs.raw_dim());
    if n_users < 2 {
        if n_users == 1 {
            log::warn!("contrastive batch with a single user has no negatives; loss set to 0");
        }
        return Ok(ContrastiveLoss {
            loss: F::zero(),
            grad,
            anchors: 0,
        });
    }

    let sims = reprs.dot(&reprs.t());
    let anchors: Vec<usize> = if symmetric {
        (0..rows).collect()
    } else {
        (0..rows).step_by(2).collect()
    };
    let weight = F::one() / F::of(anchors.len() as f64);
    let mut total = F::zero();
    let mut logits = Vec::with_capacity(rows - 1);
    for &a in &anchors {
        let partner = a ^ 1;
        logits.clear();
        logits.extend((0..rows).filter(|&b| b != a).map(|b| sims[[a, b]]));
        let lse = log_sum_exp(&logits);
        let partner_pos = if partner < a { partner } else { partner - 1 };
        total += neg_log_softmax(&logits, partner_pos);

        // d/d sim(a, b) = softmax_b - [b == partner]
        for b in (0..rows).filter(|&b| b != a) {
            let mut coef = (sims[[a, b]] - lse).exp();
            if b == partner {
                coef -= F::one();
            }
            let coef = coef * weight;
            let (ra, rb) = (reprs.row(a), reprs.row(b));
            grad.row_mut(a).scaled_add(coef, &rb);
            grad.row_mut(b).scaled_add(coef, &ra);
        }
    }
    Ok(ContrastiveLoss {
        loss: total * weight,
        grad,
        anchors: anchors.len(),
    })
}

/// Draw `k` distinct items uniformly from `1..=num_items` minus the positive
/// (and minus `exclude`, when given).
pub fn sample_negatives<R: Rng + ?Sized>(
    positive: ItemId,
    k: usize,
    num_items: usize,
    exclude: Option<&HashSet<ItemId>>,
    rng: &mut R,
) -> Result<Vec<ItemId>> {
    if num_items < 2 {
        return Err(Error::InvalidArgument("negative sampling needs at least 2 items".into()));
    }
    if k >= num_items {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {k} negatives from a catalog of {num_items}"
        )));
    }
    match exclude {
        None => Ok(index::sample(rng, num_items - 1, k)
            .into_iter()
            .map(|i| {
                let id = i as ItemId + 1;
                if id >= positive {
                    id + 1
                } else {
                    id
                }
            })
            .collect()),
        Some(ex) => {
            let pool: Vec<ItemId> = (1..=num_items as ItemId)
                .filter(|&i| i != positive && !ex.contains(&i))
                .collect();
            if k > pool.len() {
                return Err(Error::InvalidArgument(format!(
                    "only {} candidates left for {k} negatives",
                    pool.len()
                )));
            }
            Ok(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
        }
    }
}

/// Next-item targets for selected rows of an encoder output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MainLossBatch {
    /// Row index into the `(B·T) × d` state matrix.
    pub rows: Vec<usize>,
    pub positives: Vec<ItemId>,
    pub negatives: Vec<Vec<ItemId>>,
}

impl MainLossBatch {
    pub fn push(&mut self, row: usize, positive: ItemId, negatives: Vec<ItemId>) {
        self.rows.push(row);
        self.positives.push(positive);
        self.negatives.push(negatives);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct MainLoss<F> {
    pub loss: F,
    /// Gradient w.r.t. the state matrix.
    pub d_states: Array2<F>,
    /// Gradient w.r.t. the (tied) item embedding table.
    pub d_item_emb: Array2<F>,
}

/// Mean sampled-softmax negative log-likelihood over the batch entries, with
/// item vectors read from the shared embedding table.
pub fn main_loss<F: Scalar>(states: ArrayView2<F>, batch: &MainLossBatch, item_emb: ArrayView2<F>) -> Result<MainLoss<F>> {
    if states.ncols() != item_emb.ncols() {
        return Err(Error::Shape(format!(
            "state width {} vs embedding width {}",
            states.ncols(),
            item_emb.ncols()
        )));
    }
    let mut d_states = Array2::zeros(states.raw_dim());
    let mut d_item_emb = Array2::zeros(item_emb.raw_dim());
    if batch.is_empty() {
        return Ok(MainLoss {
            loss: F::zero(),
            d_states,
            d_item_emb,
        });
    }
    let weight = F::one() / F::of(batch.len() as f64);
    let mut total = F::zero();
    let mut ids = Vec::new();
    let mut logits = Vec::new();
    for ((&row, &pos), negs) in batch.rows.iter().zip(&batch.positives).zip(&batch.negatives) {
        if row >= states.nrows() {
            return Err(Error::Shape(format!("row {row} beyond {} states", states.nrows())));
        }
        ids.clear();
        ids.push(pos);
        ids.extend_from_slice(negs);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= item_emb.nrows()) {
            return Err(Error::ItemOutOfRange {
                id: bad,
                vocab: item_emb.nrows(),
            });
        }
        let s = states.row(row);
        logits.clear();
        logits.extend(ids.iter().map(|&i| s.dot(&item_emb.row(i as usize))));
        let lse = log_sum_exp(&logits);
        total += neg_log_softmax(&logits, 0);
        for (j, (&id, &z)) in ids.iter().zip(&logits).enumerate() {
            let mut coef = (z - lse).exp();
            if j == 0 {
                coef -= F::one();
            }
            let coef = coef * weight;
            d_states.row_mut(row).scaled_add(coef, &item_emb.row(id as usize));
            d_item_emb.row_mut(id as usize).scaled_add(coef, &s);
        }
    }
    Ok(MainLoss {
        loss: total * weight,
        d_states,
        d_item_emb,
    })
}
