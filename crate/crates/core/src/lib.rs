//! Image-space Gaussian splatting with natural-selection pruning.
//!
//! A set of 2D anisotropic Gaussians is fitted to a target image by
//! differentiable front-to-back compositing. After densification, a uniform
//! regularization gradient on the pre-activation opacities competes with the
//! rendering gradient; primitives that cannot hold their opacity above a
//! survival threshold are removed until a hard budget is met.
//!
//! The [`harness`] module wires everything into a trainer with logging,
//! checkpoints and plots.

pub mod baselines;
pub mod config;
pub mod densify;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod render;
pub mod report;
pub mod scene;
pub mod selection;

pub use config::{PriorMode, SelectionConfig};
pub use error::{Error, Result};
pub use gaussian::{activate_opacity, covariance_of, Gaussian2D};
pub use image::Image;
pub use render::{render, render_backward, GradientBuffer, RenderOptions, RenderOutput};
pub use report::TrainReport;
pub use scene::{compact_scene, Scene};
pub use selection::{Phase, SelectionState};
