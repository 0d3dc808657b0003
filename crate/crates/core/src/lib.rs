//! Instance-mask post-processing and dynamic-kernel mask generation.
//!
//! - [`mask`]: packed binary masks, run-length codec, IoU and boxes
//! - [`suppress`]: hard, soft, fast and matrix NMS
//! - [`head`]: grid indexing, coordinate channels, dynamic convolution,
//!   pyramid fusion and the inference pipeline
//! - [`loss`]: dice and focal losses with analytic gradients
//! - [`scene`], [`bench`]: synthetic duplicate-cluster scenes and timing
//! - [`io`]: mask-set JSON, result JSON and tensor files
//! - [`oracle`]: naive reference implementations used by `verify` and tests

pub mod bench;
pub mod error;
pub mod head;
pub mod io;
pub mod loss;
pub mod mask;
pub mod oracle;
pub mod scene;
pub mod suppress;
pub mod verify;

pub use error::{Error, Result};
pub use mask::{
    box_iou, mask_area, mask_iou, mask_to_box, pairwise_iou_matrix, rle_decode, rle_encode, BinaryMask, IoUMatrix,
    PixelBox, RleMask,
};
pub use suppress::{
    decay_gauss, decay_linear, fast_nms, hard_nms, matrix_nms, soft_nms, sort_by_score, suppress, DecayFn, Method,
    ScoredMask, SuppressionConfig, SuppressionResult,
};
