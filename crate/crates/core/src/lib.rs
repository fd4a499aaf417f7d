//! Splitting a single noisy measurement into two conditionally independent
//! measurements for natural-exponential-family noise, the self-supervised
//! losses built on such splits, and brute-force oracles that check them.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Aliases for the
//! common `f64` instantiation live at the crate root.

pub mod additive_matching;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod inverse_ops;
pub mod io_formats;
pub mod losses;
pub mod nef_models;
pub mod oracles;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod splitters;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use estimators::{Denoiser, Estimator};
pub use nef_models::NoiseModel;
pub use rng::{stream, substream, RandomStream};
pub use scalar::Scalar;
pub use splitters::{SplitConfig, SplitPair};
pub use tensor::{ImageTensor, Shape};

/// `f64` image tensor.
pub type Image = ImageTensor<f64>;
/// `f64` noise model.
pub type Model = NoiseModel<f64>;
/// `f64` split pair.
pub type Pair = SplitPair<f64>;
/// `f64` estimator.
pub type Estimator64 = Estimator<f64>;
