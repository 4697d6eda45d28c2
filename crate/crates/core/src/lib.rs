//! Hierarchical scribble spreading and pseudo-label enhancement for
//! scribble-supervised segmentation.
//!
//! The crate is organized around the dataflow of a single training step:
//!
//! 1. [`hierarchy`] partitions a 2D slice into nested regions (watershed
//!    followed by waterfall merging).
//! 2. [`spreading`] spreads sparse scribbles through the hierarchy, expands
//!    background into isolated unlabeled regions and optionally propagates
//!    labels to full coverage.
//! 3. [`enhancement`] fuses student/teacher predictions into a pseudo-label
//!    and overrides it with the enhanced scribbles during the early,
//!    tolerance-controlled part of training.
//! 4. [`loss`] evaluates the Dice pseudo-label loss and its gradient.
//! 5. [`metrics`] scores stacked 3D predictions with DSC, HD95 and ASD.
//!
//! [`io`] holds the binary tensor container and label image readers,
//! [`synth`] a deterministic cardiac-like phantom generator, [`pipeline`]
//! the end-to-end runner, and [`cli`] the command-line front end used by
//! the `pless` binary.

pub mod cli;
pub mod enhancement;
pub mod error;
pub mod grid;
pub mod hierarchy;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod spreading;
pub mod synth;

pub use enhancement::{
    enhance_pseudo_labels, enhancement_mask, fuse_predictions, BinaryMask, EnhancementConfig,
    FusionStrategy, ProbMap,
};
pub use error::{Error, Result};
pub use hierarchy::{
    gradient_magnitude, preprocess, waterfall_hierarchy, watershed, HierarchyConfig,
    PartitionHierarchy, RegionLabeling, Relief, Slice,
};
pub use io::{read_labelmap_image, read_tensor, write_tensor, Tensor, TensorData, VolumeMeta};
pub use loss::{pseudo_label_loss, soft_dice_grad, soft_dice_loss, DiceConfig, DiceLoss};
pub use metrics::{evaluate, MetricReport, VolumeLabelMap};
pub use spreading::{
    enhance_scribbles, expand_background, full_propagation, spread_scribbles, LabelMap,
    SpreadVariant, BACKGROUND, DEFAULT_UNLABELED,
};
