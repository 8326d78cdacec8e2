//! Belief propagation over singly-connected networks of continuous random
//! variables, with every density and message held as a weighted sum of
//! Gaussians.
//!
//! - [`gaussian`]: closed-form arithmetic on Gaussians and mixtures.
//! - [`network`]: polytree structure and conditional densities.
//! - [`propagation`]: π/λ message passing and beliefs.
//! - [`fitting`]: Gaussian-sum approximations of densities and CPDs.
//! - [`document`]: the JSON network format.
//! - [`example`]: the two-parent sum network used for the built-in demo.

pub mod document;
pub mod example;
pub mod fitting;
pub mod gaussian;
pub mod network;
pub mod propagation;

pub use gaussian::{GaussianMixture, Likelihood, ReductionPolicy, WeightedGaussian};
pub use network::{Evidence, Network, NodeId, NodeModel, NodeSpec};
pub use propagation::{propagate, InferenceOptions, InferenceResult};
