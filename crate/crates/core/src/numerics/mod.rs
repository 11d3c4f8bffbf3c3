//! Dense `f64` tensors, a reverse-mode tape and finite-difference checks.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_inputs, GradCheckEntry, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use params::{sha256_of, Accumulators, ParamSet};
pub use tape::{BinaryOp, Gradients, Tape, UnaryOp, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_in_place;
#[cfg(test)]
pub(crate) use tape::sigmoid;

/// Numerically stable softmax of a plain slice.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    if !out.is_empty() {
        softmax_in_place(&mut out);
    }
    out
}

/// Independent deterministic random stream `stream` of a run seeded with
/// `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
