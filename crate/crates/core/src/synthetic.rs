//! Seeded synthetic interaction corpora with known structure.
//!
//! [`planted`] builds sequences in which one item is the most likely next
//! item at every step, so a working trainer must learn to rank it first.
//! [`clustered`] builds users with a latent cluster taste and a weak
//! within-cluster successor pattern plus global noise, a small stand-in
//! for real sparse logs.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{leave_one_out_split, ItemId, RawRecord, SplitDataset, UserSequence};
use crate::error::{Error, Result};

/// Sequences with dense ids `1..=num_items`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub sequences: Vec<UserSequence>,
    pub num_items: usize,
}

impl SyntheticData {
    pub fn split(&self) -> SplitDataset {
        leave_one_out_split(&self.sequences, self.num_items)
    }

    /// Raw records (`u<id>`, `i<id>`, timestamp = position) suitable for the
    /// ingest pipeline.
    pub fn to_records(&self) -> Vec<RawRecord> {
        let mut out = Vec::new();
        for s in &self.sequences {
            for (t, &item) in s.items.iter().enumerate() {
                out.push(RawRecord {
                    user: format!("u{}", s.user),
                    item: format!("i{item}"),
                    rating: None,
                    timestamp: t as i64,
                });
            }
        }
        out
    }

    /// Tab-separated `user item timestamp` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in self.to_records() {
            out.push_str(&format!("{}\t{}\t{}\n", r.user, r.item, r.timestamp));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that any step is the planted item.
    pub planted_rate: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 50,
            min_len: 8,
            max_len: 16,
            planted_rate: 0.4,
            seed: 7,
        }
    }
}

/// The item planted by [`planted`].
pub const PLANTED_ITEM: ItemId = 1;

/// Each step is [`PLANTED_ITEM`] with probability `planted_rate`, otherwise a
/// uniform draw from the other items. With `planted_rate > 1/items` the
/// planted item is the Bayes-optimal next item after any history.
pub fn planted(cfg: &PlantedConfig) -> Result<SyntheticData> {
    if cfg.items < 2 || cfg.min_len < 3 || cfg.max_len < cfg.min_len || !(0.0..=1.0).contains(&cfg.planted_rate) {
        return Err(Error::InvalidArgument(format!("bad planted config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sequences = (1..=cfg.users)
        .map(|u| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let items = (0..len)
                .map(|_| {
                    if rng.random_bool(cfg.planted_rate) {
                        PLANTED_ITEM
                    } else {
                        rng.random_range(2..=cfg.items as ItemId)
                    }
                })
                .collect();
            UserSequence { user: u as u32, items }
        })
        .collect();
    Ok(SyntheticData {
        sequences,
        num_items: cfg.items,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    /// Items in each cluster's pool (pools may overlap).
    pub cluster_items: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of stepping to the successor of the previous item in the
    /// cluster's pool order.
    pub p_successor: f64,
    /// Probability of a uniform draw from the whole catalog.
    pub p_noise: f64,
    /// Zipf exponent of within-pool popularity.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for ClusteredConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 1000,
            clusters: 20,
            cluster_items: 60,
            min_len: 5,
            max_len: 20,
            p_successor: 0.3,
            p_noise: 0.1,
            zipf: 0.8,
            seed: 11,
        }
    }
}

impl ClusteredConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.users > 0
            && self.items >= 2
            && self.clusters > 0
            && (2..=self.items).contains(&self.cluster_items)
            && self.min_len >= 1
            && self.max_len >= self.min_len
            && self.p_successor >= 0.0
            && self.p_noise >= 0.0
            && self.p_successor + self.p_noise <= 1.0
            && self.zipf >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad clustered config {self:?}")))
        }
    }
}

/// Every user belongs to one cluster with a private ordered item pool. Each
/// step takes the pool successor of the previous item with probability
/// `p_successor`, a uniform catalog item with probability `p_noise`, and
/// otherwise a Zipf-weighted pool item.
pub fn clustered(cfg: &ClusteredConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pools: Vec<Vec<ItemId>> = (0..cfg.clusters)
        .map(|_| {
            index::sample(&mut rng, cfg.items, cfg.cluster_items)
                .into_iter()
                .map(|i| (i + 1) as ItemId)
                .collect()
        })
        .collect();
    let weights: Vec<f64> = (1..=cfg.cluster_items).map(|r| (r as f64).powf(-cfg.zipf)).collect();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = cumulative[cumulative.len() - 1];
    let mut sequences = Vec::with_capacity(cfg.users);
    for u in 1..=cfg.users {
        let pool = &pools[rng.random_range(0..cfg.clusters)];
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut items = Vec::with_capacity(len);
        let mut prev: Option<usize> = None;
        for _ in 0..len {
            let r: f64 = rng.random();
            let item = match prev {
                Some(p) if r < cfg.p_successor => {
                    prev = Some((p + 1) % pool.len());
                    pool[(p + 1) % pool.len()]
                }
                _ if r < cfg.p_successor + cfg.p_noise => rng.random_range(1..=cfg.items as ItemId),
                _ => {
                    let x = rng.random::<f64>() * total;
                    let idx = cumulative.partition_point(|&c| c < x).min(pool.len() - 1);
                    prev = Some(idx);
                    pool[idx]
                }
            };
            items.push(item);
        }
        sequences.push(UserSequence { user: u as u32, items });
    }
    Ok(SyntheticData {
        sequences,
        num_items: cfg.items,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub users: usize,
    pub items: usize,
    pub factors: usize,
    /// Softmax temperature of the item choice; lower is more deterministic.
    pub temperature: f64,
    /// Per-step taste drift in `[0, 1]`; 0 keeps the taste fixed.
    pub drift: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 1000,
            factors: 8,
            temperature: 0.5,
            drift: 0.1,
            min_len: 5,
            max_len: 20,
            seed: 11,
        }
    }
}

/// Users and items get Gaussian factor vectors. A user's taste drifts a
/// little each step and the next item is drawn, without repeats, from the
/// softmax of taste-item affinities.
pub fn latent(cfg: &LatentConfig) -> Result<SyntheticData> {
    if cfg.users == 0
        || cfg.items < cfg.max_len + 1
        || cfg.factors == 0
        || cfg.temperature <= 0.0
        || !(0.0..=1.0).contains(&cfg.drift)
        || cfg.min_len == 0
        || cfg.max_len < cfg.min_len
    {
        return Err(Error::InvalidArgument(format!("bad latent config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f = cfg.factors;
    let scale = 1.0 / (f as f64).sqrt();
    let item_vecs: Vec<Vec<f64>> = (0..cfg.items)
        .map(|_| (0..f).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let keep = (1.0 - cfg.drift * cfg.drift).sqrt();
    let mut sequences = Vec::with_capacity(cfg.users);
    let mut logits = vec![0.0; cfg.items];
    for u in 1..=cfg.users {
        let mut taste: Vec<f64> = (0..f).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut used = vec![false; cfg.items];
        let mut items = Vec::with_capacity(len);
        for _ in 0..len {
            for (j, q) in item_vecs.iter().enumerate() {
                logits[j] = if used[j] {
                    f64::NEG_INFINITY
                } else {
                    scale * q.iter().zip(&taste).map(|(a, b)| a * b).sum::<f64>() / cfg.temperature
                };
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let mut x = rng.random::<f64>() * total;
            let mut pick = cfg.items - 1;
            for (j, l) in logits.iter().enumerate() {
                x -= (l - max).exp();
                if x <= 0.0 && !used[j] {
                    pick = j;
                    break;
                }
            }
            used[pick] = true;
            items.push((pick + 1) as ItemId);
            for t in taste.iter_mut() {
                *t = keep * *t + cfg.drift * rng.sample::<f64, _>(StandardNormal);
            }
        }
        sequences.push(UserSequence { user: u as u32, items });
    }
    Ok(SyntheticData {
        sequences,
        num_items: cfg.items,
    })
}
