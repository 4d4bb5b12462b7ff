//! Layers and the assembled classifier.

mod layers;
mod model;

pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, Layer, Linear, Mode, Param, ResidualBlock};
pub use model::{
    LayerSpec, ModelSpec, ResNet9, BN_EPS, BN_MOMENTUM, DEFAULT_INPUT_SIZE, DEFAULT_NUM_CLASSES,
};
