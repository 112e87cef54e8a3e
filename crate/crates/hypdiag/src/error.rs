use thiserror::Error;

/// Errors produced by synthesis, simulation and diagnosis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("evaluation point {point} outside tabulation domain [0, 1]")]
    OutOfDomain { point: f64 },

    #[error("requested shifted time {time} outside trajectory support [{lo}, {hi}]")]
    TimeOutOfSupport { time: f64, lo: f64, hi: f64 },

    #[error("kernel iteration did not converge after {iterations} sweeps (last increment {increment:.3e}, tolerance {tolerance:.3e})")]
    NoConvergence {
        iterations: usize,
        increment: f64,
        tolerance: f64,
    },

    #[error("detection window T = {t} must exceed the transport lower bound T0 = {t0}")]
    WindowTooShort { t: f64, t0: f64 },

    #[error("steering Gramian is numerically singular (pivot {pivot:.3e})")]
    SingularGramian { pivot: f64 },

    #[error("identifiability rank condition fails for fault {fault}: rank W0 = {rank_w0}, rank [W0 eta0] = {rank_aug}")]
    NotIdentifiable {
        fault: usize,
        rank_w0: usize,
        rank_aug: usize,
    },

    #[error("CFL condition violated: dt = {dt} exceeds dz * min|gamma| = {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("simulation diverged (non-finite state) at step {step}, t = {time}")]
    Diverged { step: usize, time: f64 },

    #[error("sample step {dt} undersamples the kernel step {tau_step}; choose dt <= tau_step")]
    Undersampled { dt: f64, tau_step: f64 },

    #[error("insufficient history: need at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("fault occurrences too close: t[{i}] = {t_prev} and t[{j}] = {t_next} violate the dwell time {dwell}")]
    DwellTime {
        i: usize,
        j: usize,
        t_prev: f64,
        t_next: f64,
        dwell: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
