//! One-line machine-readable failure reports.

use gbk_core::{AnalysisError, GraphError, ModelError, SynthError, TrainError};
use serde::Serialize;

/// Error with an explicit kind for the failure report.
#[derive(Debug)]
pub struct Tagged {
    pub kind: &'static str,
    pub message: String,
}

impl std::fmt::Display for Tagged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Tagged {}

pub fn tagged(kind: &'static str, message: impl Into<String>) -> anyhow::Error {
    Tagged {
        kind,
        message: message.into(),
    }
    .into()
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: &'static str,
    pub message: String,
}

impl Failure {
    /// Kind from the first recognizable cause; message is the whole
    /// context chain on one line.
    pub fn from_anyhow(err: &anyhow::Error) -> Self {
        let kind = err
            .chain()
            .find_map(|cause| {
                if let Some(t) = cause.downcast_ref::<Tagged>() {
                    Some(t.kind)
                } else if cause.is::<GraphError>() {
                    Some("data")
                } else if cause.is::<TrainError>() {
                    Some("train")
                } else if cause.is::<ModelError>() {
                    Some("model")
                } else if cause.is::<SynthError>() {
                    Some("synth")
                } else if cause.is::<AnalysisError>() {
                    Some("analysis")
                } else if cause.is::<std::io::Error>() {
                    Some("io")
                } else {
                    None
                }
            })
            .unwrap_or("error");
        let message = err
            .chain()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(": ");
        Self {
            error: kind,
            message: message.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("failure serializes")
    }
}
