//! Non-neural building blocks of a two-step single-shot face detector:
//! anchor pyramid, two-step anchor matching, data-anchor-sampling, loss
//! kernels with analytic gradients, attention targets, decoding with NMS,
//! WIDER FACE I/O and evaluation.

pub mod anchors;
pub mod assign;
pub mod attention;
pub mod config;
pub mod das;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod loss;
pub mod maps;
pub mod pipeline;
pub mod postprocess;
pub mod synth;
pub mod wider;

pub use anchors::{anchors_for, build_pyramid, generate_anchors, AnchorConfig, AnchorSet, PyramidLevelSpec};
pub use assign::{assign, assign_with, AnchorLabel, AssignmentResult, MatchThresholds, Step};
pub use config::Config;
pub use error::{Error, Result};
pub use geometry::{decode, encode, iou, iou_matrix, BBox, EncodedDelta};
pub use loss::{hybrid_loss, FocalParams, LossBreakdown};
pub use maps::ScoreMaps;
pub use postprocess::{detect, nms, DecodeParams, Detection};
