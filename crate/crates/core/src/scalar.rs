use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type shared by every numeric routine in the crate.
///
/// Implemented for `f32` (the training default) and `f64` (used for gradient
/// checks and reference computations).
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short name stored in checkpoints.
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Numerically stable `ln(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let sum: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `-ln softmax(xs)[target]`, computed from differences to the target logit
/// so that confident predictions keep full relative precision.
pub fn neg_log_softmax<F: Scalar>(xs: &[F], target: usize) -> F {
    let z = xs[target];
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max <= z {
        let rest: F = xs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target)
            .map(|(_, &x)| (x - z).exp())
            .sum();
        rest.ln_1p()
    } else {
        log_sum_exp(xs) - z
    }
}
