//! Probabilistic spatial transformers.
//!
//! A classifier is preceded by a localizer that predicts a Gaussian
//! distribution over warp parameters for each input. Warps are sampled
//! with the reparametrization trick, applied by differentiable
//! interpolation, and the whole pipeline is trained on a Monte-Carlo ELBO.
//! At test time predictions are averaged over posterior warp samples.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`).

pub mod cpab;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
mod scalar;
mod tensor;
#[doc(hidden)]
pub mod testing;
pub mod train;
pub mod transform;
pub mod warp;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Seedable generator used for every stochastic step (dropout, sampling, shuffling).
pub type Rng = rand_chacha::ChaCha8Rng;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;

/// Deterministic generator from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
