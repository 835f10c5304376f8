use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid {width}x{height} is smaller than the 8x8 minimum")]
    GridTooSmall { width: usize, height: usize },

    #[error("no active contact")]
    NoContact,

    #[error("insufficient contact: {got} points, need at least {need}")]
    InsufficientContact { got: usize, need: usize },

    #[error("degenerate constraint system: coefficient matrix is zero")]
    DegenerateSystem,

    #[error("degenerate trajectory: need at least 2 frames, got {0}")]
    DegenerateTrajectory(usize),

    #[error("empty twist history")]
    NoHistory,

    #[error("clock error: {0}")]
    ClockError(String),

    #[error("contact lost at frame {frame}")]
    ContactLost { frame: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
