//! Dense arrays, reverse-mode gradients, Adam, and seeded random streams.

mod adam;
mod array;
mod rng;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::{Array, Scalar};
pub use rng::{Rng, Stream};
pub use tape::{Gradients, NodeId, Tape};
