use std::path::PathBuf;

use nalgebra::Vector3;
use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("closest-point iteration did not converge from {point:?}")]
    NoConvergence { point: Vector3<f64> },
    #[error("point at distance {distance} lies outside the tubular neighborhood of width {width}")]
    OutsideTubular { distance: f64, width: f64 },
    #[error("level-set gradient degenerate (|grad phi| = {norm:e})")]
    DegenerateGradient { norm: f64 },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("K must be positive, got {0}")]
    NonpositiveK(f64),

    #[error("non-manifold edge ({0}, {1})")]
    NonManifold(usize, usize),
    #[error("inconsistent face orientation along edge ({0}, {1})")]
    InconsistentOrientation(usize, usize),
    #[error("face {face} references vertex {vertex} out of range")]
    BadIndex { face: usize, vertex: usize },
    #[error("quadric fit singular at vertex {0}")]
    QuadricFitSingular(usize),
    #[error("boundary vertex {vertex} is off the barrier (|phi| = {phi:e})")]
    BoundaryOffSurface { vertex: usize, phi: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("mesh degenerate: {0}")]
    MeshDegenerate(String),

    #[error("perturbed mean curvature {value} is not positive at vertex {vertex}")]
    NonpositiveHtilde { vertex: usize, value: f64 },
    #[error("need at least two records")]
    InsufficientRecords,
    #[error("blow-up fit failed: {0}")]
    FitFailed(String),
    #[error("estimated singular time {t_est} does not exceed current time {t}")]
    NonpositiveRemaining { t: f64, t_est: f64 },
    #[error("time {t} is at or past the singular time {singular}")]
    PastSingularTime { t: f64, singular: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for `{key}` (line {line}): {msg}")]
    Validation { key: String, line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
