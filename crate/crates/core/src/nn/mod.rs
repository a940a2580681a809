//! Small layer toolkit over `candle_core` tensors.

mod dwconv;
mod layers;
mod params;
mod unfold;

pub use dwconv::depthwise_conv2d;
pub use layers::{
    conv1d_same, cross_entropy, layer_norm_channels, leaky_relu, BatchNorm, Conv2d, Pointwise,
    PRelu,
};
pub use params::{Init, ParamStore, TensorData};
pub use unfold::conv2d;
