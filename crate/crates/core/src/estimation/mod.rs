//! Dense optical flow estimation.
//!
//! [`HornSchunck`] is the built-in coarse-to-fine variational estimator;
//! [`ExternalEstimator`] forwards image pairs to a learned model through an
//! exchange directory.

mod external;
mod horn_schunck;

pub use external::{estimate_flow_external, ExternalEstimator, FlowRequest};
pub use horn_schunck::{estimate_flow, FlowEstimatorConfig, HornSchunck};

use crate::error::Result;
use crate::flow::FlowField;
use crate::media::Image;

/// Anything that maps an image pair to forward flow on the first image's grid.
pub trait FlowEstimator: Send + Sync {
    fn id(&self) -> String;
    fn estimate(&self, a: &Image, b: &Image) -> Result<FlowField>;
}
