//! Small reverse-mode network toolkit: layers with hand-written backward
//! passes, softmax cross-entropy and Adam.

mod adam;
mod layers;
mod loss;
mod sequential;

pub use adam::{AdamConfig, AdamState};
pub use layers::{Cache, Conv1d, Conv2d, Dense, Layer, Mode};
pub use loss::{softmax, softmax_cross_entropy};
pub use sequential::Sequential;

#[cfg(test)]
mod tests;
