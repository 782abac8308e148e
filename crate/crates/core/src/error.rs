use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("degenerate geometry: zero-length limb vector")]
    DegenerateGeometry,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("video {video_id} unusable: best candidate coverage {best_coverage:.3} below {min_coverage}")]
    UnusableVideo {
        video_id: String,
        best_coverage: f64,
        min_coverage: f64,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("segmentation failed for video {0}: no candidate signal produced repetitions")]
    SegmentationFailure(String),
    #[error("annotation join failed; unmatched video ids: {0:?}")]
    Join(Vec<String>),
    #[error("insufficient repetitions: {k} < 2")]
    InsufficientReps { k: usize },
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("dataset build error: {0}")]
    Build(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("REML did not converge ({structure}); best gradient norm {grad_norm:.3e}; trace: {trace}")]
    Convergence { structure: String, grad_norm: f64, trace: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
