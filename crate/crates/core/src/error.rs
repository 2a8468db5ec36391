use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown kernel family `{0}` (expected uniform, triangle or epanechnikov)")]
    UnknownFamily(String),

    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("position y = {0} lies outside the nonlocal interval (0, 1)")]
    OutsideNonlocal(f64),

    #[error("grid needs at least 4 cells per subdomain, got n_local = {n_local}, n_nonlocal = {n_nonlocal}")]
    GridTooCoarse { n_local: usize, n_nonlocal: usize },

    #[error("kernel support {support} is under-resolved: h_nl = {h_nonlocal} exceeds support/4")]
    UnderResolved { h_nonlocal: f64, support: f64 },

    #[error("field length {got} does not match the degree-of-freedom count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("field contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("time step {dt} exceeds the explicit stability limit {limit}")]
    AboveCfl { dt: f64, limit: f64 },

    #[error("generator has a zero diagonal; no stability limit exists")]
    ZeroGenerator,

    #[error("linear solve residual {residual:e} above the required {required:e}")]
    SolveResidual { residual: f64, required: f64 },

    #[error("eigensolver residual {residual:e} above the required {required:e}")]
    EigenResidual { residual: f64, required: f64 },

    #[error("every sampled state was degenerate (nonlocal energy below 1e-14)")]
    DegenerateSamples,

    #[error("state is constant; the Rayleigh quotient is undefined")]
    ConstantState,

    #[error("picard window {window} exceeds the contraction bound {bound}")]
    PicardWindow { window: f64, bound: f64 },

    #[error("picard iteration did not converge in window {window}: last update {last_update:e}, kappa = {kappa}")]
    PicardDiverged {
        window: usize,
        last_update: f64,
        kappa: f64,
    },

    #[error("non-finite value detected at t = {time} (step {step})")]
    Blowup { step: usize, time: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::NonPositive { name, value })
    }
}
