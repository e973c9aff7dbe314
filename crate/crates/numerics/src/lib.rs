//! Differentiable computation substrate: dense matrices, a reverse-mode
//! tape with a fixed operator set, the Adam optimiser and checkpoint I/O.

mod adam;
mod error;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::NumericsError;
pub use params::{Grads, ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tape::{sigmoid, Pairs, Tape, Var, MASK_NEG};
pub use tensor::{axpy, dot, Tensor};
