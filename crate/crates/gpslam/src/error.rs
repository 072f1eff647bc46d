use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("GP reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("registration degenerate: no valid correspondences")]
    NoCorrespondences,

    #[error("degenerate geometry, unobservable directions: {}", directions.join(", "))]
    DegenerateGeometry { directions: Vec<String> },

    #[error("mean map entropy undefined: no point has enough neighbors")]
    EntropyUndefined,

    #[error("trajectory alignment needs >= 3 associated poses, got {0}")]
    TooFewPoses(usize),
}
