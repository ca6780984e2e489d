//! Dense tensors, CSR sparse matrices, and a reverse-mode gradient tape.

pub mod gradcheck;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{segment_softmax_values, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The single seedable generator threaded through every stochastic op.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
