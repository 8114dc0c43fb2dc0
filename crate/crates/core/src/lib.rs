//! Kolmogorov-Arnold network (KAN) engine for detecting DoS traffic in
//! network-flow feature records.
//!
//! - [`spline`]: uniform B-spline grids and Cox-de Boor basis evaluation
//! - [`model`]: the layered spline classifier, its gradients, and its file format
//! - [`training`]: binary cross-entropy, Adam, and the epoch loop
//! - [`data`]: CSV ingestion, balancing, splitting, cleaning, synthetic data
//! - [`eval`]: confusion matrix, ROC/PR curves, threshold sweeps, correlations
//! - [`profile`]: parameter/size accounting and latency benchmarks

pub mod data;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod profile;
pub mod spline;
pub mod training;

pub use data::{CleanStats, FlowDataset, LabelMapping, RawFlowTable, SynthConfig};
pub use error::{KanError, Result};
pub use eval::{ConfusionMatrix, CorrelationTable, EvalReport, ScalarMetrics, ThresholdSweep};
pub use model::{ForwardCache, KanConfig, KanLayer, KanModel, ParamCount, ParamGrads};
pub use profile::{ParamReport, ResourceReport};
pub use spline::{SplineCoefficients, SplineGrid};
pub use training::{AdamState, TrainConfig, TrainingHistory};
