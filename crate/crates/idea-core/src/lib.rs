//! Test-time adaptation with a reusable asset library.
//!
//! The crate implements a per-step adaptation loop for a frozen candidate-scoring
//! policy under distribution shift:
//!
//! * [`stats`]: feature statistics over candidate tokens and the two distances
//!   (moment-matching and Gaussian 2-Wasserstein) used everywhere else.
//! * [`fusion`]: the reference fusion stack and decision head, with exact
//!   per-layer Fisher traces and prompt gradients.
//! * [`prompt`]: soft prompts, Fisher-guided layer weights, and the alignment
//!   optimizer that produces new assets.
//! * [`library`]: the capacity-bounded asset library with nearest-neighbor
//!   merging and its on-disk format.
//! * [`bridge`]: the closed-form mixture-weight solver (KKT), simplex
//!   projection, bridge composition, and the brute-force reference optimizer.
//! * [`controller`]: the per-step decision loop: try the bridge, apply the
//!   coverage gate, otherwise optimize and store a new asset.
//! * [`stream`]: the synthetic non-stationary domain stream, source-anchor
//!   bootstrapping, and the ground-truth action oracle.
//!
//! All numeric code is generic over the scalar type via [`Real`]; concrete
//! `f64`/`f32` aliases for the main types live at the crate root.

pub mod bridge;
pub mod controller;
pub mod error;
pub mod fusion;
pub mod library;
pub mod linalg;
pub mod prompt;
pub mod rng;
pub mod stats;
pub mod stream;

mod scalar;

pub use error::{IdeaError, Result};
pub use scalar::Real;

/// `f64` aliases for the main types.
pub type Matrix64 = linalg::Matrix<f64>;
pub type FeatureStats64 = stats::FeatureStats<f64>;
pub type StatsConfig64 = stats::StatsConfig<f64>;
pub type FusionStack64 = fusion::FusionStack<f64>;
pub type Observation64 = fusion::Observation<f64>;
pub type SoftPrompt64 = prompt::SoftPrompt<f64>;
pub type LayerWeights64 = prompt::LayerWeights<f64>;
pub type SourceAnchor64 = prompt::SourceAnchor<f64>;
pub type Asset64 = library::Asset<f64>;
pub type AssetLibrary64 = library::AssetLibrary<f64>;
pub type BridgeProblem64 = bridge::BridgeProblem<f64>;
pub type BridgeSolution64 = bridge::BridgeSolution<f64>;
pub type Controller64 = controller::Controller<f64>;
pub type ControllerConfig64 = controller::ControllerConfig<f64>;
pub type DomainSpec64 = stream::DomainSpec<f64>;

/// `f32` aliases for the main types.
pub type Matrix32 = linalg::Matrix<f32>;
pub type FeatureStats32 = stats::FeatureStats<f32>;
pub type StatsConfig32 = stats::StatsConfig<f32>;
pub type FusionStack32 = fusion::FusionStack<f32>;
pub type Observation32 = fusion::Observation<f32>;
pub type SoftPrompt32 = prompt::SoftPrompt<f32>;
pub type LayerWeights32 = prompt::LayerWeights<f32>;
pub type SourceAnchor32 = prompt::SourceAnchor<f32>;
pub type Asset32 = library::Asset<f32>;
pub type AssetLibrary32 = library::AssetLibrary<f32>;
pub type BridgeProblem32 = bridge::BridgeProblem<f32>;
pub type BridgeSolution32 = bridge::BridgeSolution<f32>;
pub type Controller32 = controller::Controller<f32>;
pub type ControllerConfig32 = controller::ControllerConfig<f32>;
pub type DomainSpec32 = stream::DomainSpec<f32>;
