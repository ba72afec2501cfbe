//! Minimal reverse-mode layer set.
//!
//! There is no general autograd graph: each op exposes a `forward` that
//! returns its output together with whatever it must remember, and a matching
//! `backward` that consumes the upstream gradient. The model chains them by
//! hand in a fixed order.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod ops;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use init::{init_weights, InitKind};
pub use ops::{
    batch_norm_backward, batch_norm_forward, concat_channels, conv_output_dim, conv_padding,
    gem_pool_backward, gem_pool_forward, l2_normalize_backward, l2_normalize_forward,
    leaky_relu_backward, leaky_relu_forward, resize_bilinear_backward, resize_bilinear_forward,
    split_channels, BatchNorm, BnCache, BnMode, Conv2d, ConvCache, GEM_CLAMP, KERNEL, LEAKY_SLOPE,
    STRIDE,
};
pub use tensor::{Param, Tensor};
