//! Non-learned popularity baseline.

use ndarray::Array2;

use crate::corpus::{ItemId, SplitDataset};
use crate::error::Result;
use crate::evaluator::Scorer;
use crate::scalar::Scalar;

/// Training-split interaction counts; every user gets the same scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopModel {
    /// `counts[j]` belongs to item `j + 1`.
    pub counts: Vec<u64>,
}

impl PopModel {
    pub fn fit(split: &SplitDataset) -> Self {
        let mut counts = vec![0u64; split.num_items];
        for u in &split.users {
            for &item in &u.train {
                counts[item as usize - 1] += 1;
            }
        }
        Self { counts }
    }

    pub fn score<F: Scalar>(&self) -> Vec<F> {
        self.counts.iter().map(|&c| F::of(c as f64)).collect()
    }
}

impl<F: Scalar> Scorer<F> for PopModel {
    fn num_items(&self) -> usize {
        self.counts.len()
    }

    fn score_histories(&self, histories: &[Vec<ItemId>]) -> Result<Array2<F>> {
        let row = self.score::<F>();
        let mut out = Array2::zeros((histories.len(), row.len()));
        for mut r in out.rows_mut() {
            r.assign(&ndarray::ArrayView1::from(&row));
        }
        Ok(out)
    }
}
