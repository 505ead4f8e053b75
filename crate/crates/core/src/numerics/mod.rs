//! Dense matrices, a define-by-run gradient tape, Adam, and a
//! finite-difference gradient oracle.

mod adam;
mod gradcheck;
mod matrix;
mod param;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_difference_check, gradient_check};
pub use matrix::Matrix;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{atan_surrogate, atan_surrogate_grad, sigmoid, Tape, Var};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for an independent sub-stream of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
