use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for a rank-{rank} tensor")]
    ModeOutOfRange { mode: usize, rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The proximal map of a weakly convex penalty is not single-valued for
    /// this step (`eta * mu >= 1`).
    #[error("ill-posed proximal step: eta * mu = {product} (must be < 1)")]
    IllPosedProx { product: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error("non-finite value at outer iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("denoiser bridge error: {0}")]
    Bridge(String),

    #[error("internal numerical error: {0}")]
    Numerical(String),

    #[error("run cancelled at outer iteration {iteration}")]
    Cancelled { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad inputs or configuration rather than by a
    /// failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch(_)
                | Error::ModeOutOfRange { .. }
                | Error::InvalidArgument(_)
                | Error::IllPosedProx { .. }
                | Error::Config(_)
                | Error::Format(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
