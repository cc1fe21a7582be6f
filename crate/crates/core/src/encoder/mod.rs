//! Transformer encoder with hand-written gradients.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    load_checkpoint, params_hash, read_tensors, save_checkpoint, write_tensors, Manifest, TensorEntry, FORMAT,
};
pub use forward::{
    encode_sequence, forward, mlm_backward, mlm_forward, mlm_logits, pool, Forward, LayerOutputs, MlmTape, Mode,
    OutputGrads,
};
pub use params::{init_params, EncoderConfig, EncoderParams, LayerParams, Pooling, INIT_STD};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Real};

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).max(-F::one()).min(F::one()))
}

#[cfg(test)]
mod tests;
