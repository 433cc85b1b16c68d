use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid emitter array: {0}")]
    InvalidArray(String),
    #[error("emitter index {index} out of range for {n} emitters")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hamiltonian is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("steady state is not unique: null space dimension {dim}")]
    NullSpaceDimension { dim: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("integrator exceeded {max_steps} steps before t = {t}")]
    TooManySteps { max_steps: usize, t: f64 },
    #[error("invariant violated at t = {t}: {what}")]
    InvariantBreach { t: f64, what: String },
    #[error("trace drift {drift:e} exceeds limit")]
    TraceDrift { drift: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
