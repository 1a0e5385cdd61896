//! The contour-aware network: construction, forward/backward passes,
//! training, overlap-tile inference and checkpoints.

pub mod checkpoint;
mod config;
mod model;
mod tiled;
mod train;

pub use config::{DcanConfig, LrController, TrainSchedule};
pub use model::{
    expected_param_count, INPUT_OFFSET, Branch, DcanGrads, DcanModel, ForwardPass, LabelPair, Layer, LayerKind,
    LossBreakdown, LossTerms, ParamGroup, ParamView, ProbabilityMaps,
};
pub use tiled::{predict_tiled, stitch};
pub use train::{object_xent_per_pixel, train, train_with_progress, window_means, TrainReport, TrainingSample};
