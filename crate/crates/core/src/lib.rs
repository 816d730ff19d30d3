//! Adversarial collaborative auto-encoder for top-N recommendation from
//! implicit feedback.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradients;
pub mod model;
pub mod numerics;
pub mod training;

pub use data::{BinaryDataset, DatasetStats, InteractionLog, SplitSpec, UserSplit};
pub use error::{AcaeError, Result};
pub use evaluation::{EvalReport, RobustnessCurve};
pub use gradients::ParamGrads;
pub use model::{ActivationKind, Example, ModelParams, NoiseKind, NoiseSite, NoiseSpec, NoiseTensor};
pub use numerics::{Matrix, RngStream};
pub use training::{AdvConfig, PretrainConfig, TraceRow, TrainOutcome};
