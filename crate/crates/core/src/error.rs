use thiserror::Error;

use crate::leaf::GraphLeaf;

pub type Result<T, E = QpmcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QpmcError {
    #[error("metric is degenerate at {point:?}: {detail}")]
    DegenerateMetric { point: Vec<f64>, detail: String },

    #[error("unknown metric family `{0}`")]
    UnknownMetric(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("normal frame degenerates at node {node}: det(q) = {det:.3e}")]
    FrameDegeneracy { node: usize, det: f64 },

    #[error(
        "spectral gap collapsed: projector rank {rank} (expected {expected}), \
         lambda_k = {lambda_k:.9}, lambda_k+1 = {lambda_k1:.9}"
    )]
    GapCollapse {
        rank: usize,
        expected: usize,
        lambda_k: f64,
        lambda_k1: f64,
    },

    #[error("eigensolver failed: {0}")]
    EigenFailure(String),

    #[error("Newton iteration diverged after {iterations} iterations (damping floor reached, |J| = {residual:.3e})")]
    Divergence {
        iterations: usize,
        residual: f64,
        iterate: Box<GraphLeaf>,
    },

    #[error("Newton iteration did not converge in {iterations} iterations (|J| = {residual:.3e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        iterate: Box<GraphLeaf>,
    },

    #[error("base leaf is not QPMC: |(1-Q)H| = {residual:.3e}")]
    NotQpmc { residual: f64 },

    #[error("sweep aborted: {failed} of {total} leaves failed")]
    SweepAborted { failed: usize, total: usize },

    #[error("point {0:?} lies outside the swept box")]
    OutOfBox(Vec<f64>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QpmcError {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        QpmcError::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
