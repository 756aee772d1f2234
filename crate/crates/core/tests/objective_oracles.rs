use std::collections::HashSet;

use cl4srec::objective::{contrastive_loss, sample_negatives};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn equal_representations_give_log_of_candidates() {
    for n in [2usize, 8, 256] {
        let reprs = Array2::from_elem((2 * n, 16), 0.25_f64);
        for symmetric in [true, false] {
            let cl = contrastive_loss(reprs.view(), symmetric).unwrap();
            let want = ((2 * n - 1) as f64).ln();
            assert!((cl.loss - want).abs() < 1e-6, "N={n}: {} vs {want}", cl.loss);
        }
    }
}

#[test]
fn two_user_asymmetric_case() {
    let reprs = array![[1.0_f64, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
    let cl = contrastive_loss(reprs.view(), false).unwrap();
    // Direct softmax: partner logit 1 against two zero logits.
    let e = 1.0_f64.exp();
    let oracle = -(e / (e + 2.0)).ln();
    assert!((oracle - 0.5514).abs() < 1e-4);
    assert!((cl.loss - oracle).abs() < 1e-12);
    assert_eq!(cl.anchors, 2);
}

#[test]
fn single_user_batch_is_zero() {
    let reprs = array![[1.0_f64, 2.0], [3.0, 4.0]];
    let cl = contrastive_loss(reprs.view(), true).unwrap();
    assert_eq!(cl.loss, 0.0);
    assert!(contrastive_loss(Array2::<f64>::zeros((3, 2)).view(), true).is_err());
}

proptest! {
    #[test]
    fn loss_is_invariant_to_user_order(
        vals in prop::collection::vec(-1.0..1.0f64, 6 * 3),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let reprs = Array2::from_shape_vec((6, 3), vals).unwrap();
        let mut permuted = Array2::zeros((6, 3));
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(2 * dst).assign(&reprs.row(2 * src));
            permuted.row_mut(2 * dst + 1).assign(&reprs.row(2 * src + 1));
        }
        let a = contrastive_loss(reprs.view(), true).unwrap().loss;
        let b = contrastive_loss(permuted.view(), true).unwrap().loss;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0);
    }
}

#[test]
fn negatives_are_uniform_over_the_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (num_items, positive, draws) = (10usize, 3u32, 45_000usize);
    let mut counts = vec![0usize; num_items + 1];
    for _ in 0..draws {
        let neg = sample_negatives(positive, 1, num_items, None, &mut rng).unwrap();
        counts[neg[0] as usize] += 1;
    }
    assert_eq!(counts[0], 0);
    assert_eq!(counts[positive as usize], 0);
    let expected = draws as f64 / 9.0;
    let chi2: f64 = (1..=num_items)
        .filter(|&i| i != positive as usize)
        .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
        .sum();
    // 8 degrees of freedom, p = 0.001.
    assert!(chi2 < 26.12, "chi2 {chi2}");
}

#[test]
fn negatives_are_distinct_and_respect_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let exclude: HashSet<u32> = [1, 2, 3].into_iter().collect();
    for _ in 0..200 {
        let negs = sample_negatives(5, 4, 10, Some(&exclude), &mut rng).unwrap();
        let set: HashSet<u32> = negs.iter().copied().collect();
        assert_eq!(set.len(), 4);
        assert!(negs.iter().all(|n| (1..=10).contains(n) && *n != 5 && !exclude.contains(n)));
    }
    assert!(sample_negatives(5, 7, 10, Some(&exclude), &mut rng).is_err());
    assert!(sample_negatives(1, 10, 10, None, &mut rng).is_err());
}
