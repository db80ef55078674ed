//! Mosaic filter arrays and the linear measurement operator.

mod mosaic;
mod noise;
mod operator;

pub use mosaic::{gaussian_responses, MosaicFile, MosaicPattern};
pub use noise::{add_noise, NoiseModel};
pub use operator::{adjoint_apply, forward_apply, mosaic_response, Boundary, ForwardOperator};
