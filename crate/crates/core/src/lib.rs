//! Graph neural networks with a gated bi-kernel aggregation layer, a small
//! reverse-mode autodiff engine, and tooling to study how neighborhood label
//! mixing affects learned representations.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod graph;
pub mod io;
pub mod models;
pub mod splits;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{AnalysisError, AutodiffError, GraphError, ModelError, ShapeError, SynthError, TrainError};
pub use graph::{Graph, NeighborIndex};
pub use models::{LayerKind, LayerSpec, ModelKind, ModelParams};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainedModel};
