use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderHyper;
use crate::scalar::Scalar;

/// Learnable tensors of one Transformer block. Head `i` of the query, key
/// and value projections occupies columns `i*d/h .. (i+1)*d/h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub w_q: Array2<F>,
    pub w_k: Array2<F>,
    pub w_v: Array2<F>,
    pub w_o: Array2<F>,
    pub w_1: Array2<F>,
    pub b_1: Array1<F>,
    pub w_2: Array2<F>,
    pub b_2: Array1<F>,
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
}

/// All encoder parameters. The same shape doubles as the gradient container
/// and as Adam's moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    /// `(|V| + 2) × d`: row 0 is padding, row `|V| + 1` the mask token.
    pub item_emb: Array2<F>,
    /// `T × d`, indexed by window slot.
    pub pos_emb: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
}

/// Half-width of the truncated-normal initializer.
pub const INIT_BOUND: f64 = 0.01;
/// Standard deviation of the underlying normal; truncation sits at 2σ.
pub const INIT_STD: f64 = 0.005;

pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64, bound: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= bound {
            return x;
        }
    }
}

impl<F: Scalar> LayerParams<F> {
    fn filled(d: usize, d_ff: usize, mut fill: impl FnMut() -> F, gain: F) -> Self {
        let mut mat = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), &mut fill);
        let w_q = mat(d, d);
        let w_k = mat(d, d);
        let w_v = mat(d, d);
        let w_o = mat(d, d);
        let w_1 = mat(d, d_ff);
        let w_2 = mat(d_ff, d);
        let b_1 = Array1::from_shape_simple_fn(d_ff, &mut fill);
        let b_2 = Array1::from_shape_simple_fn(d, &mut fill);
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            w_1,
            b_1,
            w_2,
            b_2,
            ln1_gain: Array1::from_elem(d, gain),
            ln1_bias: Array1::zeros(d),
            ln2_gain: Array1::from_elem(d, gain),
            ln2_bias: Array1::zeros(d),
        }
    }
}

impl<F: Scalar> EncoderParams<F> {
    pub fn zeros(hyper: &EncoderHyper) -> Self {
        Self {
            item_emb: Array2::zeros((hyper.vocab_size(), hyper.dim)),
            pos_emb: Array2::zeros((hyper.max_len, hyper.dim)),
            layers: (0..hyper.layers)
                .map(|_| LayerParams::filled(hyper.dim, hyper.ffn_dim, F::zero, F::zero()))
                .collect(),
        }
    }

    /// Truncated-normal initialization; layer-norm gains 1, biases 0.
    pub fn init<R: Rng + ?Sized>(hyper: &EncoderHyper, rng: &mut R) -> Self {
        let mut draw = || F::of(truncated_normal(rng, INIT_STD, INIT_BOUND));
        let item_emb = Array2::from_shape_simple_fn((hyper.vocab_size(), hyper.dim), &mut draw);
        let pos_emb = Array2::from_shape_simple_fn((hyper.max_len, hyper.dim), &mut draw);
        let layers = (0..hyper.layers)
            .map(|_| LayerParams::filled(hyper.dim, hyper.ffn_dim, &mut draw, F::one()))
            .collect();
        Self {
            item_emb,
            pos_emb,
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, mut t)| t.fill(F::zero()));
        z
    }

    /// Named views in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = vec![
            ("item_emb".to_string(), self.item_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (l, p) in self.layers.iter().enumerate() {
            let named = [
                ("w_q", p.w_q.view().into_dyn()),
                ("w_k", p.w_k.view().into_dyn()),
                ("w_v", p.w_v.view().into_dyn()),
                ("w_o", p.w_o.view().into_dyn()),
                ("w_1", p.w_1.view().into_dyn()),
                ("b_1", p.b_1.view().into_dyn()),
                ("w_2", p.w_2.view().into_dyn()),
                ("b_2", p.b_2.view().into_dyn()),
                ("ln1_gain", p.ln1_gain.view().into_dyn()),
                ("ln1_bias", p.ln1_bias.view().into_dyn()),
                ("ln2_gain", p.ln2_gain.view().into_dyn()),
                ("ln2_bias", p.ln2_bias.view().into_dyn()),
            ];
            out.extend(named.into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = vec![
            ("item_emb".to_string(), self.item_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (l, p) in self.layers.iter_mut().enumerate() {
            let named = [
                ("w_q", p.w_q.view_mut().into_dyn()),
                ("w_k", p.w_k.view_mut().into_dyn()),
                ("w_v", p.w_v.view_mut().into_dyn()),
                ("w_o", p.w_o.view_mut().into_dyn()),
                ("w_1", p.w_1.view_mut().into_dyn()),
                ("b_1", p.b_1.view_mut().into_dyn()),
                ("w_2", p.w_2.view_mut().into_dyn()),
                ("b_2", p.b_2.view_mut().into_dyn()),
                ("ln1_gain", p.ln1_gain.view_mut().into_dyn()),
                ("ln1_bias", p.ln1_bias.view_mut().into_dyn()),
                ("ln2_gain", p.ln2_gain.view_mut().into_dyn()),
                ("ln2_bias", p.ln2_bias.view_mut().into_dyn()),
            ];
            out.extend(named.into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let theirs = other.tensors();
        for ((_, mut mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            mine.scaled_add(scale, &t);
        }
    }

    pub fn scale(&mut self, s: F) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * s);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn max_abs(&self) -> F {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .fold(F::zero(), |m, x| m.max(x.abs()))
    }

    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        let c2 = |a: &Array2<F>| a.mapv(|x| G::of(x.f64()));
        let c1 = |a: &Array1<F>| a.mapv(|x| G::of(x.f64()));
        EncoderParams {
            item_emb: c2(&self.item_emb),
            pos_emb: c2(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|p| LayerParams {
                    w_q: c2(&p.w_q),
                    w_k: c2(&p.w_k),
                    w_v: c2(&p.w_v),
                    w_o: c2(&p.w_o),
                    w_1: c2(&p.w_1),
                    b_1: c1(&p.b_1),
                    w_2: c2(&p.w_2),
                    b_2: c1(&p.b_2),
                    ln1_gain: c1(&p.ln1_gain),
                    ln1_bias: c1(&p.ln1_bias),
                    ln2_gain: c1(&p.ln2_gain),
                    ln2_bias: c1(&p.ln2_bias),
                })
                .collect(),
        }
    }
}
