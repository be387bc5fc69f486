use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("hermitian symmetry violated at mode {mode} (mismatch {mismatch:.3e})")]
    HermitianViolation { mode: String, mismatch: f64 },

    #[error("imaginary residue {0:.3e} after inverse transform")]
    ImaginaryResidue(f64),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step {step} out of range 0..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("blur vanishes at mode {0}; cannot divide by d")]
    VanishingBlur(usize),

    #[error("posterior undefined from step {from} to step {to}: {reason}")]
    PosteriorUndefined { from: usize, to: usize, reason: String },

    #[error("solver blew up at output step {step} (max |u| = {max_abs:.3e})")]
    BlowUp { step: usize, max_abs: f64 },

    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite prediction at refinement step {0}")]
    NonFinitePrediction(usize),

    #[error("singular normal equations at step {step}, channel {channel}, mode {mode}; use a positive ridge strength")]
    SingularNormalMatrix { step: usize, channel: usize, mode: usize },

    #[error("not enough training pairs for step {step}: {found} < {required}")]
    InsufficientPairs { step: usize, found: usize, required: usize },

    #[error("dataset split: {0}")]
    Split(String),

    #[error("unsupported model version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::HermitianViolation { .. } => "hermitian_violation",
            Error::ImaginaryResidue(_) => "imaginary_residue",
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::VanishingBlur(_) => "vanishing_blur",
            Error::PosteriorUndefined { .. } => "posterior_undefined",
            Error::BlowUp { .. } => "blow_up",
            Error::InvalidParams(_) => "invalid_params",
            Error::NonFinitePrediction(_) => "non_finite_prediction",
            Error::SingularNormalMatrix { .. } => "singular_normal_matrix",
            Error::InsufficientPairs { .. } => "insufficient_pairs",
            Error::Split(_) => "split",
            Error::ModelVersion { .. } => "model_version",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
