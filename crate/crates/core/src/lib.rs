//! Kernel activation function networks (Kafnets).
//!
//! Feedforward classifiers whose hidden nonlinearities are learnable Gaussian kernel
//! expansions over a fixed dictionary, with
//!
//! - forward pass, softmax cross-entropy and a text serialization ([`net`]),
//! - exact reverse-mode gradients, forward-mode second derivatives, gradient checks and
//!   sampling probes of Lipschitz and smoothness constants ([`grad`]),
//! - per-layer bounds on pre-activations and their first and second parameter derivatives,
//!   admissibility checks and the SGD uniform-stability bound ([`bounds`]),
//! - a synthetic two-class generator ([`data`]), optimisers and a training loop ([`train`]),
//! - the two-bandwidth generalization-gap experiment ([`experiment`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod bounds;
pub mod data;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod linalg;
pub mod net;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{KafError, Result};
pub use linalg::Matrix;
pub use net::{Dictionary, ForwardTrace, Network, ParamId, Parameters};
pub use scalar::Scalar;

pub type Kafnet = net::Network<f64>;
pub type Kafnet32 = net::Network<f32>;
pub type Gradient = grad::Gradient<f64>;
pub type ParamBounds = bounds::ParamBounds<f64>;
pub type BoundReport = bounds::BoundReport<f64>;
pub type Dataset = data::Dataset<f64>;
pub type TrainConfig = train::TrainConfig<f64>;
