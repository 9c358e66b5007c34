use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("denominator vanishes at s = {re} + {im}i")]
    PoleAtEvaluationPoint { re: f64, im: f64 },

    #[error("feedback loop is degenerate: 1 + sensor*forward is identically zero")]
    DegenerateLoop,

    #[error("magnitude never crosses the -3 dB level inside the swept range")]
    NoCrossing,

    #[error("transfer function is improper (numerator degree {num} > denominator degree {den})")]
    ImproperSystem { num: usize, den: usize },

    #[error("discretized pole magnitude {magnitude} exceeds 1 for a stable continuous system")]
    UnstableDiscretization { magnitude: f64 },

    #[error("closed-form steady state requires zeta = 1 (got {0})")]
    UnsupportedPolarization(f64),

    #[error("time step {dt} s exceeds the allowed maximum {max} s")]
    StepTooLarge { dt: f64, max: f64 },

    #[error("{what} = {value} outside validity range [{lo}, {hi}]")]
    OutOfValidityRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("PID with derivative action needs derivative_filter_tau > 0 for a realization")]
    Unrealizable,

    #[error("simulation diverged: |state| reached {0:e} at sample {1}")]
    NumericalDivergence(f64, usize),

    #[error("plant phase never reaches -180 degrees in the searched band")]
    NoPhaseCrossover,

    #[error("frequency grids or trace shapes do not match: {0}")]
    GridMismatch(String),

    #[error("trace lasts {have} s, needs at least {need} s")]
    TraceTooShort { have: f64, need: f64 },

    #[error("unit mismatch: expected {expected}, found {found}")]
    UnitMismatch { expected: String, found: String },

    #[error("no frequency bins inside [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("bounds violation: {0}")]
    BoundsViolation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
