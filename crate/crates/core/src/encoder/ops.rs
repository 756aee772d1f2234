//! Batched building blocks of the Transformer block and their adjoints.
//!
//! Activations are `(B·T) × d` matrices; rows `b*T .. (b+1)*T` belong to
//! sequence `b`, and the first `pads[b]` of those rows are padding.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-8;

pub struct LayerNormTape<F> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Per-row normalization over the feature axis followed by gain and bias.
pub fn layer_norm<F: Scalar>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, LayerNormTape<F>) {
    let d = F::of(x.ncols() as f64);
    let eps = F::of(LAYER_NORM_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        let inv = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * inv);
        *s = inv;
    }
    let y = &xhat * gain + bias;
    (y, LayerNormTape { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    tape: &LayerNormTape<F>,
    gain: &Array1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let dgain = (dy * &tape.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let d = F::of(dy.ncols() as f64);
    let mut dx = dy * gain;
    for ((mut row, xhat), &inv) in dx.rows_mut().into_iter().zip(tape.xhat.rows()).zip(&tape.inv_std) {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xhat).map(|(&g, &x)| g * x).sum::<F>() / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &x| {
            *g = inv * (*g - mean_g - x * mean_gx);
        });
    }
    (dx, dgain, dbias)
}

/// Attention probabilities for every (sequence, head), restricted to the
/// non-padded `n × n` block; entries above the diagonal are zero.
pub struct AttentionTape<F> {
    pub q: Array2<F>,
    pub k: Array2<F>,
    pub v: Array2<F>,
    pub probs: Vec<Array2<F>>,
    pub concat: Array2<F>,
}

/// Row-wise softmax of a lower-triangular score block (causal mask applied).
fn causal_softmax<F: Scalar>(scores: &mut Array2<F>) {
    let n = scores.nrows();
    for i in 0..n {
        let mut row = scores.row_mut(i);
        let max = row.iter().take(i + 1).copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for j in 0..n {
            if j <= i {
                let e = (row[j] - max).exp();
                row[j] = e;
                sum += e;
            } else {
                row[j] = F::zero();
            }
        }
        row.mapv_inplace(|e| e / sum);
    }
}

/// Multi-head causal self-attention without the output projection.
/// Padded query rows come out as zero vectors.
pub fn multi_head_attention<F: Scalar>(
    h: &Array2<F>,
    w_q: &Array2<F>,
    w_k: &Array2<F>,
    w_v: &Array2<F>,
    heads: usize,
    seq_len: usize,
    pads: &[usize],
) -> AttentionTape<F> {
    let d = h.ncols();
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let q = h.dot(w_q);
    let k = h.dot(w_k);
    let v = h.dot(w_v);
    let mut concat = Array2::zeros(h.raw_dim());
    let mut probs = Vec::with_capacity(pads.len() * heads);
    for (b, &pad) in pads.iter().enumerate() {
        let rows = b * seq_len + pad..(b + 1) * seq_len;
        for head in 0..heads {
            let cols = head * dh..(head + 1) * dh;
            if pad == seq_len {
                probs.push(Array2::zeros((0, 0)));
                continue;
            }
            let qb = q.slice(s![rows.clone(), cols.clone()]);
            let kb = k.slice(s![rows.clone(), cols.clone()]);
            let vb = v.slice(s![rows.clone(), cols.clone()]);
            let mut a = qb.dot(&kb.t());
            a.mapv_inplace(|x| x * scale);
            causal_softmax(&mut a);
            concat.slice_mut(s![rows.clone(), cols]).assign(&a.dot(&vb));
            probs.push(a);
        }
    }
    AttentionTape { q, k, v, probs, concat }
}

/// Gradients w.r.t. q, k and v given the gradient of the concatenated heads.
pub fn multi_head_attention_backward<F: Scalar>(
    d_concat: &Array2<F>,
    tape: &AttentionTape<F>,
    heads: usize,
    seq_len: usize,
    pads: &[usize],
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let d = d_concat.ncols();
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut dq = Array2::zeros(d_concat.raw_dim());
    let mut dk = Array2::zeros(d_concat.raw_dim());
    let mut dv = Array2::zeros(d_concat.raw_dim());
    for (b, &pad) in pads.iter().enumerate() {
        if pad == seq_len {
            continue;
        }
        let rows = b * seq_len + pad..(b + 1) * seq_len;
        for head in 0..heads {
            let cols = head * dh..(head + 1) * dh;
            let a = &tape.probs[b * heads + head];
            let d_out = d_concat.slice(s![rows.clone(), cols.clone()]);
            let qb = tape.q.slice(s![rows.clone(), cols.clone()]);
            let kb = tape.k.slice(s![rows.clone(), cols.clone()]);
            let vb = tape.v.slice(s![rows.clone(), cols.clone()]);

            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.t().dot(&d_out));
            let mut ds = d_out.dot(&vb.t());
            for (mut ds_row, a_row) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot: F = ds_row.iter().zip(a_row).map(|(&g, &p)| g * p).sum();
                Zip::from(&mut ds_row).and(&a_row).for_each(|g, &p| *g = p * (*g - dot) * scale);
            }
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kb));
            dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qb));
        }
    }
    (dq, dk, dv)
}

pub struct FeedForwardTape<F> {
    pub pre_act: Array2<F>,
    pub act: Array2<F>,
}

/// `RELU(x W1 + b1) W2 + b2`, row by row.
pub fn feed_forward<F: Scalar>(
    x: ArrayView2<F>,
    w_1: &Array2<F>,
    b_1: &Array1<F>,
    w_2: &Array2<F>,
    b_2: &Array1<F>,
) -> (Array2<F>, FeedForwardTape<F>) {
    let pre_act = x.dot(w_1) + b_1;
    let act = pre_act.mapv(|z| z.max(F::zero()));
    let out = act.dot(w_2) + b_2;
    (out, FeedForwardTape { pre_act, act })
}

/// Inverted dropout mask: entries are 0 or `1/keep`, drawn row-major.
pub fn dropout_mask<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<F> {
    let keep = 1.0 - rate;
    let scale = F::of(1.0 / keep);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            F::zero()
        }
    })
}
