use thiserror::Error;

/// Errors surfaced by the sampler library.
#[derive(Debug, Error)]
pub enum FsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("operation `{op}` is not defined on the Euclidean kind")]
    EuclideanKind { op: &'static str },

    #[error("point is not on the manifold: |<x,x> - 1/kappa| = {residual:.3e}")]
    OffManifold { residual: f64 },

    #[error("vector is not tangent at the base point: |<w,x>| = {residual:.3e}")]
    NotTangent { residual: f64 },

    #[error("degenerate point: <x,x> = 0")]
    DegeneratePoint,

    #[error("cut locus: log map is not unique for (near-)antipodal points")]
    CutLocus,

    #[error("antipodal midpoint: parallel transport undefined")]
    AntipodalMidpoint,

    #[error("singular time argument t = {t}")]
    SingularTime { t: f64 },

    #[error("argument out of domain: {what}")]
    Domain { what: String },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("empty input: {what}")]
    Empty { what: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("training failed in round {round}: {source}")]
    TrainRound {
        round: usize,
        #[source]
        source: Box<FsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FsError>;
