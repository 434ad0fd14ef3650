//! Networks built from gated convolutions: the texture inpainter, the
//! image refiner and the patch discriminator.

pub mod discriminator;
pub mod inpainter;
pub mod layers;
pub mod params;
pub mod refiner;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use inpainter::{Inpainter, InpainterConfig, InpainterOutput};
pub use layers::{Activation, Conv, GatedConv, GatedConvSpec};
pub use params::{Bound, NetworkParams, ParamStore};
pub use refiner::{Refiner, RefinerConfig, RefinerInput, RefinerMode, WarpPyramid};

use crate::tensor::Element;

/// Total number of scalar parameters.
pub fn count_params<T: Element>(params: &ParamStore<T>) -> usize {
    params.count()
}
