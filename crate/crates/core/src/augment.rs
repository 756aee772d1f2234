//! Stochastic sequence augmentations: item crop, item mask and item reorder.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, UserId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Crop,
    Mask,
    Reorder,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 3] = [AugmentKind::Crop, AugmentKind::Mask, AugmentKind::Reorder];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Crop => "crop",
            AugmentKind::Mask => "mask",
            AugmentKind::Reorder => "reorder",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crop" => Ok(AugmentKind::Crop),
            "mask" => Ok(AugmentKind::Mask),
            "reorder" => Ok(AugmentKind::Reorder),
            other => Err(Error::InvalidArgument(format!("unknown augmentation {other:?}"))),
        }
    }
}

/// An operator kind together with its proportion (η, γ or β).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentOp {
    pub kind: AugmentKind,
    pub rate: f64,
}

impl AugmentOp {
    pub fn new(kind: AugmentKind, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("{kind} rate {rate} outside [0, 1]")));
        }
        Ok(Self { kind, rate })
    }

    pub fn apply<R: Rng + ?Sized>(&self, seq: &[ItemId], mask_id: ItemId, rng: &mut R) -> Vec<ItemId> {
        match self.kind {
            AugmentKind::Crop => crop(seq, self.rate, rng),
            AugmentKind::Mask => mask(seq, self.rate, mask_id, rng),
            AugmentKind::Reorder => reorder(seq, self.rate, rng),
        }
    }
}

/// `⌊rate·n⌋`, tolerant of representation error such as `0.7 * 10 = 6.999…`.
pub fn proportion_len(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    ((x + 1e-9).floor() as usize).min(n)
}

pub fn crop_len(eta: f64, n: usize) -> usize {
    proportion_len(eta, n).max(1)
}

/// Contiguous slice of length `max(1, ⌊η·n⌋)` starting at 0-based `start`.
pub fn crop_at(seq: &[ItemId], eta: f64, start: usize) -> Vec<ItemId> {
    let len = crop_len(eta, seq.len());
    assert!(start + len <= seq.len(), "crop start {start} out of range");
    seq[start..start + len].to_vec()
}

pub fn crop<R: Rng + ?Sized>(seq: &[ItemId], eta: f64, rng: &mut R) -> Vec<ItemId> {
    if seq.is_empty() {
        return Vec::new();
    }
    let len = crop_len(eta, seq.len());
    let start = rng.random_range(0..=seq.len() - len);
    crop_at(seq, eta, start)
}

/// Replace the given 0-based positions with `mask_id`.
pub fn mask_at(seq: &[ItemId], positions: &[usize], mask_id: ItemId) -> Vec<ItemId> {
    let mut out = seq.to_vec();
    for &p in positions {
        out[p] = mask_id;
    }
    out
}

pub fn mask<R: Rng + ?Sized>(seq: &[ItemId], gamma: f64, mask_id: ItemId, rng: &mut R) -> Vec<ItemId> {
    let count = proportion_len(gamma, seq.len());
    let positions = index::sample(rng, seq.len(), count).into_vec();
    mask_at(seq, &positions, mask_id)
}

/// Rearrange the block `seq[start..start + perm.len()]` so that slot `j`
/// receives the block's `perm[j]`-th element.
pub fn reorder_block(seq: &[ItemId], start: usize, perm: &[usize]) -> Vec<ItemId> {
    let mut out = seq.to_vec();
    let block = &seq[start..start + perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        out[start + j] = block[p];
    }
    out
}

pub fn reorder<R: Rng + ?Sized>(seq: &[ItemId], beta: f64, rng: &mut R) -> Vec<ItemId> {
    let len = proportion_len(beta, seq.len());
    let mut out = seq.to_vec();
    if len < 2 {
        return out;
    }
    let start = rng.random_range(0..=seq.len() - len);
    out[start..start + len].shuffle(rng);
    out
}

/// Two augmented views of one user's sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedPair {
    pub view_i: Vec<ItemId>,
    pub view_j: Vec<ItemId>,
    pub source_user: UserId,
}

/// Draw two operators independently (with replacement) from `ops` and apply
/// each to its own copy of `seq`. Returns `None` for sequences shorter than 2,
/// which cannot take part in the contrastive task.
pub fn sample_pair<R: Rng + ?Sized>(
    seq: &[ItemId],
    user: UserId,
    ops: &[AugmentOp],
    mask_id: ItemId,
    rng: &mut R,
) -> Option<AugmentedPair> {
    if seq.len() < 2 || ops.is_empty() {
        return None;
    }
    let a_i = ops[rng.random_range(0..ops.len())];
    let a_j = ops[rng.random_range(0..ops.len())];
    let view_i = a_i.apply(seq, mask_id, rng);
    let view_j = a_j.apply(seq, mask_id, rng);
    Some(AugmentedPair {
        view_i,
        view_j,
        source_user: user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    const MASK: ItemId = 100;

    fn v(n: u32) -> Vec<ItemId> {
        (1..=n).collect()
    }

    #[test]
    fn figure_examples() {
        // η = 0.6, c = 2 (1-based) on v1..v7
        assert_eq!(crop_at(&v(7), 0.6, 1), vec![2, 3, 4, 5]);
        // γ = 0.3, masked positions 2 and 5 (1-based)
        assert_eq!(proportion_len(0.3, 7), 2);
        assert_eq!(mask_at(&v(7), &[1, 4], MASK), vec![1, MASK, 3, 4, MASK, 6, 7]);
        // β = 0.6, r = 3 (1-based): block v3..v6 becomes v5, v3, v6, v4
        assert_eq!(proportion_len(0.6, 7), 4);
        assert_eq!(reorder_block(&v(7), 2, &[2, 0, 3, 1]), vec![1, 2, 5, 3, 6, 4, 7]);
    }

    #[test]
    fn identity_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = v(9);
        assert_eq!(crop(&s, 1.0, &mut rng), s);
        assert_eq!(mask(&s, 0.0, MASK, &mut rng), s);
        assert_eq!(reorder(&s, 0.0, &mut rng), s);
        assert_eq!(mask(&s, 1.0, MASK, &mut rng), vec![MASK; 9]);
    }

    #[test]
    fn crop_reaches_every_window() {
        let s = v(5);
        let mut seen = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            seen.insert(crop(&s, 0.4, &mut rng));
        }
        let expected: BTreeSet<Vec<ItemId>> =
            [vec![1, 2], vec![2, 3], vec![3, 4], vec![4, 5]].into_iter().collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn crop_never_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(crop(&[9], 0.1, &mut rng), vec![9]);
        assert_eq!(crop(&[1, 2, 3], 0.1, &mut rng).len(), 1);
    }

    #[test]
    fn pair_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = v(6);
        let crop_only = [AugmentOp::new(AugmentKind::Crop, 1.0).unwrap()];
        let p = sample_pair(&s, 3, &crop_only, MASK, &mut rng).unwrap();
        assert_eq!((p.view_i.as_slice(), p.view_j.as_slice(), p.source_user), (&s[..], &s[..], 3));

        let mask_half = [AugmentOp::new(AugmentKind::Mask, 0.5).unwrap()];
        let p = sample_pair(&v(4), 1, &mask_half, MASK, &mut rng).unwrap();
        assert_eq!(p.view_i.iter().filter(|&&x| x == MASK).count(), 2);
        assert_eq!(p.view_j.iter().filter(|&&x| x == MASK).count(), 2);

        assert!(sample_pair(&[1], 1, &mask_half, MASK, &mut rng).is_none());
        assert!(sample_pair(&s, 1, &[], MASK, &mut rng).is_none());
    }

    #[test]
    fn single_kind_views_use_independent_randomness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops = [AugmentOp::new(AugmentKind::Mask, 0.5).unwrap()];
        let s = v(20);
        let differing = (0..50)
            .filter(|_| {
                let p = sample_pair(&s, 1, &ops, MASK, &mut rng).unwrap();
                p.view_i != p.view_j
            })
            .count();
        assert!(differing > 40);
    }

    #[test]
    fn rates_are_validated() {
        assert!(AugmentOp::new(AugmentKind::Crop, 1.2).is_err());
        assert!(AugmentOp::new(AugmentKind::Mask, -0.1).is_err());
        assert_eq!("Reorder".parse::<AugmentKind>().unwrap(), AugmentKind::Reorder);
        assert!("swap".parse::<AugmentKind>().is_err());
    }
}
