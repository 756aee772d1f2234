//! Unidirectional Transformer user encoder with hand-written backward pass.

pub mod ops;
mod params;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, PaddedWindow};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ops::{AttentionTape, FeedForwardTape, LayerNormTape};

pub use params::{truncated_normal, EncoderParams, LayerParams, INIT_BOUND, INIT_STD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderHyper {
    /// |V|, the number of real items.
    pub num_items: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Window length T.
    pub max_len: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl EncoderHyper {
    /// d = 64, h = 2, L = 2, T = 50, d_ff = d, dropout 0.2.
    pub fn new(num_items: usize) -> Self {
        Self {
            num_items,
            dim: 64,
            heads: 2,
            layers: 2,
            max_len: 50,
            ffn_dim: 64,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.max_len == 0 || self.ffn_dim == 0 {
            return bad("max_len and ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.num_items == 0 {
            return bad("catalog is empty".into());
        }
        Ok(())
    }

    /// Embedding rows: padding, the real items, and the mask token.
    pub fn vocab_size(&self) -> usize {
        self.num_items + 2
    }

    pub fn mask_token(&self) -> ItemId {
        (self.num_items + 1) as ItemId
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; masks are drawn from a stream seeded with `seed`.
    Train { seed: u64 },
}

struct LayerTape<F> {
    input: Array2<F>,
    attn: AttentionTape<F>,
    drop1: Option<Array2<F>>,
    ln1: LayerNormTape<F>,
    ffn_in: Array2<F>,
    ffn: FeedForwardTape<F>,
    drop2: Option<Array2<F>>,
    ln2: LayerNormTape<F>,
}

/// Output of a forward pass over a batch of windows.
pub struct SequenceStates<F> {
    /// `(B·T) × d` final-layer states.
    pub output: Array2<F>,
    pub batch: usize,
    pub seq_len: usize,
    pub pads: Vec<usize>,
    pub ids: Vec<ItemId>,
    pub dropout_seed: Option<u64>,
    tape: Option<Vec<LayerTape<F>>>,
}

impl<F: Scalar> SequenceStates<F> {
    #[inline]
    pub fn row(&self, b: usize, slot: usize) -> usize {
        b * self.seq_len + slot
    }

    pub fn state(&self, b: usize, slot: usize) -> ArrayView1<'_, F> {
        self.output.row(self.row(b, slot))
    }

    /// `B × d` states at the final slot, i.e. the user representations.
    pub fn last_states(&self) -> Array2<F> {
        let rows: Vec<usize> = (0..self.batch).map(|b| self.row(b, self.seq_len - 1)).collect();
        self.output.select(Axis(0), &rows)
    }

    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }
}

/// Hyperparameters plus parameters: the user-representation model.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<F> {
    pub hyper: EncoderHyper,
    pub params: EncoderParams<F>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new(hyper: EncoderHyper, params: EncoderParams<F>) -> Result<Self> {
        hyper.validate()?;
        let expected = EncoderParams::<F>::zeros(&hyper);
        for ((name, a), (_, b)) in params.tensors().iter().zip(expected.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!("{name}: {:?} vs expected {:?}", a.shape(), b.shape())));
            }
        }
        if params.layers.len() != hyper.layers {
            return Err(Error::Shape(format!("{} layers, expected {}", params.layers.len(), hyper.layers)));
        }
        Ok(Self { hyper, params })
    }

    fn check_windows(&self, windows: &[PaddedWindow]) -> Result<()> {
        let vocab = self.hyper.vocab_size();
        for w in windows {
            if w.len() != self.hyper.max_len {
                return Err(Error::Shape(format!(
                    "window length {} differs from T = {}",
                    w.len(),
                    self.hyper.max_len
                )));
            }
            if let Some(&id) = w.item_ids.iter().find(|&&id| id as usize >= vocab) {
                return Err(Error::ItemOutOfRange { id, vocab });
            }
        }
        Ok(())
    }

    /// Item embedding plus slot position embedding for every slot.
    pub fn embed(&self, windows: &[PaddedWindow]) -> Result<Array2<F>> {
        self.check_windows(windows)?;
        let t = self.hyper.max_len;
        let mut h = Array2::zeros((windows.len() * t, self.hyper.dim));
        for (b, w) in windows.iter().enumerate() {
            for (slot, &id) in w.item_ids.iter().enumerate() {
                let mut row = h.row_mut(b * t + slot);
                row.assign(&self.params.item_emb.row(id as usize));
                row += &self.params.pos_emb.row(slot);
            }
        }
        Ok(h)
    }

    /// Causal multi-head attention followed by the output projection.
    pub fn causal_attention(&self, h: &Array2<F>, layer: &LayerParams<F>, pads: &[usize]) -> Array2<F> {
        let tape = ops::multi_head_attention(
            h,
            &layer.w_q,
            &layer.w_k,
            &layer.w_v,
            self.hyper.heads,
            self.hyper.max_len,
            pads,
        );
        tape.concat.dot(&layer.w_o)
    }

    pub fn pffn(&self, h: &Array2<F>, layer: &LayerParams<F>) -> Array2<F> {
        ops::feed_forward(h.view(), &layer.w_1, &layer.b_1, &layer.w_2, &layer.b_2).0
    }

    fn layer_forward(
        &self,
        h: Array2<F>,
        layer: &LayerParams<F>,
        pads: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<F>, LayerTape<F>) {
        let attn = ops::multi_head_attention(
            &h,
            &layer.w_q,
            &layer.w_k,
            &layer.w_v,
            self.hyper.heads,
            self.hyper.max_len,
            pads,
        );
        let mut mh = attn.concat.dot(&layer.w_o);
        let (rows, cols) = mh.dim();
        let rate = self.hyper.dropout;
        let (drop1, drop2) = match rng {
            Some(rng) if rate > 0.0 => (
                Some(ops::dropout_mask::<F, _>(rows, cols, rate, rng)),
                Some(ops::dropout_mask::<F, _>(rows, cols, rate, rng)),
            ),
            _ => (None, None),
        };
        if let Some(m) = &drop1 {
            mh *= m;
        }
        let (f, ln1) = ops::layer_norm(&(&h + &mh), &layer.ln1_gain, &layer.ln1_bias);
        let (mut g, ffn) = ops::feed_forward(f.view(), &layer.w_1, &layer.b_1, &layer.w_2, &layer.b_2);
        if let Some(m) = &drop2 {
            g *= m;
        }
        let (out, ln2) = ops::layer_norm(&(&f + &g), &layer.ln2_gain, &layer.ln2_bias);
        let tape = LayerTape {
            input: h,
            attn,
            drop1,
            ln1,
            ffn_in: f,
            ffn,
            drop2,
            ln2,
        };
        (out, tape)
    }

    /// One Transformer block: `F = LN(H + Drop(MH(H)))`, `H' = LN(F + Drop(PFFN(F)))`.
    pub fn transformer_layer(&self, h: &Array2<F>, layer: &LayerParams<F>, pads: &[usize], mode: Mode) -> Array2<F> {
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        self.layer_forward(h.clone(), layer, pads, rng.as_mut()).0
    }

    /// Full forward pass. With `record` set, intermediates are kept so that
    /// [`Encoder::backward`] can be called on the result.
    pub fn forward(&self, windows: &[PaddedWindow], mode: Mode, record: bool) -> Result<SequenceStates<F>> {
        let mut h = self.embed(windows)?;
        let pads: Vec<usize> = windows.iter().map(PaddedWindow::pad_len).collect();
        let (mut rng, dropout_seed) = match mode {
            Mode::Train { seed } => (Some(ChaCha8Rng::seed_from_u64(seed)), Some(seed)),
            Mode::Eval => (None, None),
        };
        let mut tape = record.then(Vec::new);
        for layer in &self.params.layers {
            let (out, layer_tape) = self.layer_forward(h, layer, &pads, rng.as_mut());
            if let Some(t) = tape.as_mut() {
                t.push(layer_tape);
            }
            h = out;
        }
        Ok(SequenceStates {
            output: h,
            batch: windows.len(),
            seq_len: self.hyper.max_len,
            pads,
            ids: windows.iter().flat_map(|w| w.item_ids.iter().copied()).collect(),
            dropout_seed,
            tape,
        })
    }

    /// Eval-mode user representations (final-slot states), `B × d`.
    pub fn represent(&self, windows: &[PaddedWindow]) -> Result<Array2<F>> {
        Ok(self.forward(windows, Mode::Eval, false)?.last_states())
    }

    /// Backpropagate `d_output` (same shape as `states.output`) to every
    /// parameter.
    pub fn backward(&self, states: &SequenceStates<F>, d_output: &Array2<F>) -> Result<EncoderParams<F>> {
        let tape = states.tape.as_ref().ok_or(Error::NoRecordedForward)?;
        if d_output.dim() != states.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs states {:?}",
                d_output.dim(),
                states.output.dim()
            )));
        }
        let heads = self.hyper.heads;
        let t = self.hyper.max_len;
        let mut grads = self.params.zeros_like();
        let mut dh = d_output.clone();
        for (l, (layer, lt)) in self.params.layers.iter().zip(tape).enumerate().rev() {
            let g = &mut grads.layers[l];

            let (dx2, dgain2, dbias2) = ops::layer_norm_backward(&dh, &lt.ln2, &layer.ln2_gain);
            g.ln2_gain = dgain2;
            g.ln2_bias = dbias2;
            let mut d_ffn_out = dx2.clone();
            if let Some(m) = &lt.drop2 {
                d_ffn_out *= m;
            }
            g.w_2 = lt.ffn.act.t().dot(&d_ffn_out);
            g.b_2 = d_ffn_out.sum_axis(Axis(0));
            let mut d_pre = d_ffn_out.dot(&layer.w_2.t());
            ndarray::Zip::from(&mut d_pre)
                .and(&lt.ffn.pre_act)
                .for_each(|g, &z| {
                    if z <= F::zero() {
                        *g = F::zero();
                    }
                });
            g.w_1 = lt.ffn_in.t().dot(&d_pre);
            g.b_1 = d_pre.sum_axis(Axis(0));
            let d_f = dx2 + d_pre.dot(&layer.w_1.t());

            let (dx1, dgain1, dbias1) = ops::layer_norm_backward(&d_f, &lt.ln1, &layer.ln1_gain);
            g.ln1_gain = dgain1;
            g.ln1_bias = dbias1;
            let mut d_mh = dx1.clone();
            if let Some(m) = &lt.drop1 {
                d_mh *= m;
            }
            g.w_o = lt.attn.concat.t().dot(&d_mh);
            let d_concat = d_mh.dot(&layer.w_o.t());
            let (dq, dk, dv) = ops::multi_head_attention_backward(&d_concat, &lt.attn, heads, t, &states.pads);
            g.w_q = lt.input.t().dot(&dq);
            g.w_k = lt.input.t().dot(&dk);
            g.w_v = lt.input.t().dot(&dv);
            dh = dx1 + dq.dot(&layer.w_q.t()) + dk.dot(&layer.w_k.t()) + dv.dot(&layer.w_v.t());
        }

        for (r, &id) in states.ids.iter().enumerate() {
            let row = dh.row(r);
            let mut e = grads.item_emb.row_mut(id as usize);
            e += &row;
            let mut p = grads.pos_emb.row_mut(r % t);
            p += &row;
        }
        Ok(grads)
    }

    /// Scores of every vocabulary row against each representation, `B × (|V|+2)`.
    pub fn score_all(&self, reprs: &Array2<F>) -> Array2<F> {
        reprs.dot(&self.params.item_emb.t())
    }

    /// Slice of scores for real items only, indexed by `item - 1`.
    pub fn item_scores(&self, repr: ArrayView1<F>) -> Array1<F> {
        let items = self.params.item_emb.slice(s![1..=self.hyper.num_items, ..]);
        items.dot(&repr)
    }
}
