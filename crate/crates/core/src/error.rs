use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("cannot map channels of {path}: {reason}")]
    ChannelMapping { path: PathBuf, reason: String },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("coordinate ({x}, {y}) outside {width}x{height} raster")]
    Coordinate {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),

    #[error("contrast stretch undefined: low and high percentile intensities are both {0}")]
    DegenerateStretch(u8),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid threshold constraint: {0}")]
    Constraint(String),

    #[error("histogram has {0} modes; at most 3 are supported")]
    UnsupportedModality(usize),

    #[error("zoom estimation failed: {0}")]
    Estimation(String),

    #[error("feature extraction failed: {0}")]
    Feature(String),

    #[error("classifier model error: {0}")]
    Model(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("declustering failed: {0}")]
    Decluster(String),

    #[error("scene placement failed: {0}")]
    Placement(String),

    #[error("accuracy undefined for empty ground truth")]
    UndefinedAccuracy,

    #[error("report parse error at line {line}: {reason}")]
    ReportParse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
