//! JSON checkpoint container. Floats are stored as f64, which holds every
//! f32 exactly, and parsed with round-trip precision, so save/load is
//! bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{ArrayViewD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Progress, TrainConfig};
use crate::encoder::{EncoderHyper, EncoderParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT: &str = "cl4srec-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn of<F: Scalar>(name: &str, t: &ArrayViewD<F>) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.iter().map(|x| x.f64()).collect(),
        }
    }
}

pub fn tensors_of<F: Scalar>(params: &EncoderParams<F>) -> Vec<Tensor> {
    params.tensors().iter().map(|(n, t)| Tensor::of(n, t)).collect()
}

/// Rebuild parameters of the given shape from named tensors.
pub fn params_from<F: Scalar>(hyper: &EncoderHyper, tensors: &[Tensor]) -> Result<EncoderParams<F>> {
    let mut params = EncoderParams::<F>::zeros(hyper);
    let slots = params.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, {} expected",
            tensors.len(),
            slots.len()
        )));
    }
    for ((name, mut dst), src) in slots.into_iter().zip(tensors) {
        if name != src.name || dst.shape() != src.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {}{:?} does not match {name}{:?}",
                src.name,
                src.shape,
                dst.shape()
            )));
        }
        let view = ArrayViewD::from_shape(IxDyn(&src.shape), &src.data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", src.name)))?;
        dst.zip_mut_with(&view, |d, &s| *d = F::of(s));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: String,
    pub hyper: EncoderHyper,
    pub config: TrainConfig,
    pub params: Vec<Tensor>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub adam_step: u64,
    pub rng: RngState,
    pub progress: Progress,
    /// Parameters of the best validation epoch so far, when they differ from `params`.
    pub best_params: Option<Vec<Tensor>>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        Ok(ckpt)
    }

    /// Write through a temporary file and rename into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn encoder_params<F: Scalar>(&self) -> Result<EncoderParams<F>> {
        params_from(&self.hyper, &self.params)
    }
}
