use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Physical parameters violate an invariant (non-unit axis, negative rate, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed operation input (empty grid, mismatched traces, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Argument outside the domain where the model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The problem has no unique answer (undefined stationary state,
    /// unidentifiable fit, ...).
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("integration step {dt:e} s exceeds the stability limit; use dt <= {required:e} s")]
    StepTooLarge { dt: f64, required: f64 },

    #[error("integration diverged at t = {t:e} s")]
    Diverged { t: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::StepTooLarge { .. } | Error::Diverged { .. }
        )
    }
}
