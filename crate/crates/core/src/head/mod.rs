//! The dynamic mask head as plain numerics: every grid cell predicts a
//! convolution kernel that is applied to one shared mask feature.

mod assemble;
mod fusion;
mod ops;
mod tensor;

pub use assemble::{
    assemble_masks, cell_logits, finish_instances, inference_pipeline, AssembleConfig, Instance,
    DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_MASK_THRESHOLD,
};
pub use fusion::{fuse_pyramid, FusionStage, FusionWeights, PyramidLevels, MAX_LEVELS};
pub use ops::{
    bilinear_upsample_2x, coord_channels, default_groups, dynamic_conv_1x1, dynamic_conv_3x3, grid_index,
    group_norm, relu, Conv2d, GroupNorm, DEFAULT_GN_EPSILON,
};
pub use tensor::{sigmoid, CategoryGrid, FeatureMap, KernelGrid, KernelKind, MaskLogits, SoftMask};
