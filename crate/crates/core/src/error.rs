use thiserror::Error;

/// Errors produced by the anatomical prior engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point count mismatch: source has {source_len}, target has {target_len}")]
    CountMismatch { source_len: usize, target_len: usize },

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("isosurface extraction produced no surface: {0}")]
    EmptyResult(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("singular transform for joint `{0}`")]
    SingularTransform(String),

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("cycle detected in joint hierarchy at joint {0}")]
    Cycle(usize),

    #[error("no whitelisted joint found in rig (whitelist: {0})")]
    NoWhitelistJoint(String),

    #[error("missing joint `{0}`")]
    MissingJoint(String),

    #[error("degenerate anatomical frame: {0}")]
    DegenerateFrame(String),

    #[error("registration diverged in stage {stage}: {reason}")]
    Divergence { stage: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate template spread on axis {axis} (std {std:e})")]
    DegenerateSpread { axis: usize, std: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("need at least {needed} whitelisted joints, found {got}")]
    TooFewJoints { needed: usize, got: usize },

    #[error("singular least-squares design (rank {rank} < {cols} columns); use a ridge penalty")]
    SingularFit { rank: usize, cols: usize },

    #[error("non-positive scale factor {0}")]
    NonPositiveScale(f64),

    #[error("unknown landmark `{0}`")]
    UnknownLandmark(String),

    #[error("projection ray from target along the anterior axis does not hit the skin")]
    ProjectionMiss,

    #[error("no forward-facing skin vertex within {radius} cm of the projection point; try a larger radius")]
    EmptyCandidates { radius: f64 },

    #[error("zero-length entry ray: candidate coincides with the target")]
    ZeroLengthRay,

    #[error("organ class mismatch: `{0}` vs `{1}`")]
    OrganMismatch(String, String),

    #[error("empty text")]
    EmptyText,

    #[error("empty index")]
    EmptyIndex,

    #[error("semantic unit rejected: {0}")]
    RejectedUnit(String),

    #[error("unsupported format version `{found}` (supported major {supported})")]
    FormatVersion { found: String, supported: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing input {path}: {hint}")]
    MissingInput { path: String, hint: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// The innermost error beneath any stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a stage label to errors.
pub trait StageContext<T> {
    fn stage<S: Into<String>>(self, stage: impl FnOnce() -> S) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage<S: Into<String>>(self, stage: impl FnOnce() -> S) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: stage().into(),
            source: Box::new(e),
        })
    }
}
