//! Full-catalog leave-one-out ranking metrics and the representation
//! similarity report.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{make_window, ItemId, Phase, SplitDataset, UserId};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anything that can score the whole catalog given a user's history.
pub trait Scorer<F: Scalar> {
    fn num_items(&self) -> usize;

    /// `B × |V|` scores; column `j` belongs to item `j + 1`.
    fn score_histories(&self, histories: &[Vec<ItemId>]) -> Result<Array2<F>>;
}

impl<F: Scalar> Scorer<F> for Encoder<F> {
    fn num_items(&self) -> usize {
        self.hyper.num_items
    }

    fn score_histories(&self, histories: &[Vec<ItemId>]) -> Result<Array2<F>> {
        let windows = histories
            .iter()
            .map(|h| make_window(h, self.hyper.max_len))
            .collect::<Result<Vec<_>>>()?;
        let reprs = self.represent(&windows)?;
        let items = self.params.item_emb.slice(s![1..=self.hyper.num_items, ..]);
        Ok(reprs.dot(&items.t()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Drop the user's earlier-phase items from the candidate set.
    pub filter_seen: bool,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![5, 10, 20],
            filter_seen: true,
            batch_size: 256,
        }
    }
}

/// 1-based rank of `target` among all items not in `exclude`. Items scoring
/// equal to the target count as ranked above it.
pub fn rank_target<F: Scalar>(scores: ArrayView1<F>, target: ItemId, exclude: &[ItemId]) -> Result<usize> {
    let n = scores.len();
    if target == 0 || target as usize > n {
        return Err(Error::MissingTarget(target));
    }
    let ts = scores[target as usize - 1];
    let mut above = scores.iter().filter(|&&x| x >= ts).count() - 1;
    let mut seen: Vec<ItemId> = exclude
        .iter()
        .copied()
        .filter(|&e| e != target && e >= 1 && e as usize <= n)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    above -= seen.iter().filter(|&&e| scores[e as usize - 1] >= ts).count();
    Ok(above + 1)
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRank {
    pub user: UserId,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub phase: Phase,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
    pub ranks: Vec<UserRank>,
    #[serde(default)]
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_ranks(phase: Phase, ks: &[usize], ranks: Vec<UserRank>) -> Self {
        let n = ranks.len().max(1) as f64;
        let hr = ks
            .iter()
            .map(|&k| ranks.iter().map(|r| hr_at_k(r.rank, k)).sum::<f64>() / n)
            .collect();
        let ndcg = ks
            .iter()
            .map(|&k| ranks.iter().map(|r| ndcg_at_k(r.rank, k)).sum::<f64>() / n)
            .collect();
        Self {
            phase,
            ks: ks.to_vec(),
            hr,
            ndcg,
            users: ranks.len(),
            ranks,
            fingerprint: String::new(),
        }
    }

    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    /// `HR@k...,NDCG@k...` in the order of `ks`.
    pub fn csv_header(&self) -> String {
        let hr = self.ks.iter().map(|k| format!("HR@{k}"));
        let ndcg = self.ks.iter().map(|k| format!("NDCG@{k}"));
        hr.chain(ndcg).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.hr
            .iter()
            .chain(&self.ndcg)
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// HR and NDCG are each non-decreasing in k (ks sorted ascending).
    pub fn is_monotone(&self) -> bool {
        let mut order: Vec<usize> = (0..self.ks.len()).collect();
        order.sort_by_key(|&i| self.ks[i]);
        order
            .windows(2)
            .all(|w| self.hr[w[0]] <= self.hr[w[1]] && self.ndcg[w[0]] <= self.ndcg[w[1]])
    }
}

/// Rank every user's held-out item for `phase` and average the metrics.
pub fn evaluate<F: Scalar, S: Scorer<F> + ?Sized>(
    scorer: &S,
    split: &SplitDataset,
    phase: Phase,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let mut ranks = Vec::with_capacity(split.users.len());
    for chunk in split.users.chunks(config.batch_size.max(1)) {
        let histories: Vec<Vec<ItemId>> = chunk.iter().map(|u| u.history(phase)).collect();
        let scores = scorer.score_histories(&histories)?;
        for ((u, hist), row) in chunk.iter().zip(&histories).zip(scores.rows()) {
            let exclude: &[ItemId] = if config.filter_seen { hist } else { &[] };
            ranks.push(UserRank {
                user: u.user,
                rank: rank_target(row, u.target(phase), exclude)?,
            });
        }
    }
    Ok(EvalReport::from_ranks(phase, &config.ks, ranks))
}

pub fn cosine<F: Scalar>(u: ArrayView1<F>, v: ArrayView1<F>) -> f64 {
    let dot = u.dot(&v).f64();
    let nu = u.dot(&u).f64().sqrt();
    let nv = v.dot(&v).f64().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub pairs: usize,
    pub skipped: usize,
    /// `None` when no pair could be scored.
    pub mean: Option<f64>,
    pub bins: Vec<HistogramBin>,
}

/// Bin index in the fixed 0.05-wide grid over `[-1, 1]`; 1.0 falls in the last bin.
pub fn histogram_bin(c: f64) -> usize {
    let bins = (2.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
    let idx = ((c + 1.0) / HISTOGRAM_BIN_WIDTH + 1e-9).floor();
    (idx.max(0.0) as usize).min(bins - 1)
}

/// Cosine similarity of each pair's representations, with summary and
/// histogram. Pairs naming an unknown user are skipped and counted.
pub fn cosine_similarity_report<F: Scalar>(
    reprs: &HashMap<UserId, Array1<F>>,
    pairs: &[(UserId, UserId)],
) -> SimilarityReport {
    let n_bins = (2.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: -1.0 + i as f64 * HISTOGRAM_BIN_WIDTH,
            hi: -1.0 + (i + 1) as f64 * HISTOGRAM_BIN_WIDTH,
            count: 0,
        })
        .collect();
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for (a, b) in pairs {
        match (reprs.get(a), reprs.get(b)) {
            (Some(u), Some(v)) => {
                let c = cosine(u.view(), v.view());
                bins[histogram_bin(c)].count += 1;
                sum += c;
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    SimilarityReport {
        pairs: used,
        skipped,
        mean: (used > 0).then(|| sum / used as f64),
        bins,
    }
}

/// Eval-mode representation of each user's full known sequence.
pub fn user_representations<F: Scalar>(
    encoder: &Encoder<F>,
    split: &SplitDataset,
) -> Result<HashMap<UserId, Array1<F>>> {
    let mut out = HashMap::with_capacity(split.users.len());
    for chunk in split.users.chunks(256) {
        let windows = chunk
            .iter()
            .map(|u| make_window(&u.full_sequence(), encoder.hyper.max_len))
            .collect::<Result<Vec<_>>>()?;
        let reprs = encoder.represent(&windows)?;
        for (u, row) in chunk.iter().zip(reprs.rows()) {
            out.insert(u.user, row.to_owned());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unique_max_ranks_first() {
        let scores = array![0.1, 0.9, 0.3];
        assert_eq!(rank_target(scores.view(), 2, &[]).unwrap(), 1);
        assert_eq!(rank_target(scores.view(), 1, &[]).unwrap(), 3);
        assert!(matches!(rank_target(scores.view(), 4, &[]), Err(Error::MissingTarget(4))));
        assert!(rank_target(scores.view(), 0, &[]).is_err());
    }

    #[test]
    fn ties_count_against_target() {
        let scores = Array1::<f64>::from_elem(7, 0.5);
        assert_eq!(rank_target(scores.view(), 3, &[]).unwrap(), 7);
        assert_eq!(rank_target(scores.view(), 3, &[1, 2]).unwrap(), 5);
    }

    #[test]
    fn filtered_items_never_count() {
        let scores = array![5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(rank_target(scores.view(), 4, &[]).unwrap(), 4);
        assert_eq!(rank_target(scores.view(), 4, &[1, 2, 2, 6]).unwrap(), 2);
        // the target itself is never excluded
        assert_eq!(rank_target(scores.view(), 4, &[4, 1]).unwrap(), 3);
    }

    #[test]
    fn metric_formulas() {
        assert_eq!(hr_at_k(1, 5), 1.0);
        assert_eq!(ndcg_at_k(1, 5), 1.0);
        assert_eq!(hr_at_k(7, 5), 0.0);
        assert_eq!(ndcg_at_k(7, 5), 0.0);
        assert_eq!(ndcg_at_k(3, 10), 0.5);
    }

    #[test]
    fn report_csv_layout() {
        let ranks = vec![UserRank { user: 1, rank: 1 }, UserRank { user: 2, rank: 12 }];
        let r = EvalReport::from_ranks(Phase::Test, &[5, 10, 20], ranks);
        assert_eq!(r.csv_header(), "HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20");
        assert_eq!(r.csv_row(), "0.5000,0.5000,1.0000,0.5000,0.5000,0.6351");
        assert!(r.is_monotone());
    }

    #[test]
    fn cosine_cases_and_bins() {
        let mut reprs = HashMap::new();
        reprs.insert(1, array![1.0, 0.0]);
        reprs.insert(2, array![0.0, 2.0]);
        reprs.insert(3, array![1.0, 1.0]);
        let rep = cosine_similarity_report(&reprs, &[(1, 1), (1, 2), (1, 3), (1, 9)]);
        assert_eq!(rep.pairs, 3);
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.bins.len(), 40);
        assert_eq!(rep.bins[39].count, 1); // cos = 1
        assert_eq!(rep.bins[20].count, 1); // cos = 0
        assert_eq!(rep.bins[histogram_bin(0.5_f64.sqrt())].count, 1);
        assert_eq!(histogram_bin(0.95), 39);
        assert_eq!(histogram_bin(-1.0), 0);
        let mean = rep.mean.unwrap();
        assert!((mean - (1.0 + 0.0 + 0.5_f64.sqrt()) / 3.0).abs() < 1e-12);

        let empty = cosine_similarity_report::<f64>(&reprs, &[]);
        assert_eq!(empty.mean, None);
        assert!(empty.bins.iter().all(|b| b.count == 0));
    }
}
