//! LogCL: local-global history-aware contrastive learning for temporal
//! knowledge graph extrapolation.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod checkpoint;
pub mod config;
pub mod contrast;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod experiment;
pub mod global;
pub mod local;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rgcn;
pub mod sampler;
pub mod synthetic;
pub mod train;

pub use config::{TrainConfig, Variant};
pub use dataset::{Quadruple, Snapshot, Split, TemporalKg};
pub use error::{LogclError, Result};
pub use metrics::MetricsReport;
pub use model::LogCl;
pub use train::TrainState;
