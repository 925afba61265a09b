use std::path::PathBuf;

use thiserror::Error;

use crate::models::ModelParams;
use crate::train::RunHistory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Mismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data of length {len} cannot fill a {rows}x{cols} tensor")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: invalid meta.json: {source}", path.display())]
    Meta {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("label {label} of node {node} is not below num_classes={num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("edge ({src}, {dst}) references a node outside 0..{num_nodes}")]
    EdgeOutOfRange {
        src: usize,
        dst: usize,
        num_nodes: usize,
    },
    #[error("self-loop on node {0} cannot be stored")]
    SelfLoop(usize),
    #[error("{what}: expected {expected}, found {found}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("homophily ratio is undefined for a graph without edges")]
    EmptyEdgeSet,
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("class {0} has no nodes")]
    EmptyClass(usize),
    #[error("masks overlap at node {0}")]
    OverlappingMasks(usize),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op}: {message}")]
    Invalid { op: &'static str, message: String },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("function value is not finite at coordinate {coordinate} of `{param}`")]
    NonFinite { param: String, coordinate: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model needs at least one layer")]
    NoLayers,
    #[error("layer {layer}: {message}")]
    InvalidLayer { layer: usize, message: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("gate override has {found} layers, model has {expected} gated layers")]
    GateOverride { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl From<ShapeError> for ModelError {
    fn from(e: ShapeError) -> Self {
        ModelError::Autodiff(AutodiffError::Shape(e))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_finite: Box<ModelParams>,
        history: Box<RunHistory>,
    },
    #[error("empty evaluation mask")]
    EmptyMask,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("complexity needs at least two classes, found {0}")]
    SingleClass(usize),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("{reps} representations but {labels} labels")]
    LengthMismatch { reps: usize, labels: usize },
    #[error("norm order p must be >= 1, got {0}")]
    InvalidNorm(f64),
    #[error("no evaluation edges for gate accuracy")]
    NoGateEdges,
    #[error("prediction missing for node {0}")]
    MissingPrediction(usize),
    #[error("report input missing: {0}")]
    MissingInput(&'static str),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
    #[error("empty sweep")]
    EmptySweep,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
