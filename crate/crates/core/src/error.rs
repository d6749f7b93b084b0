use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("bulk band structure has no gap between the first two bands (max band 1 = {band1_max:.6}, min band 2 = {band2_min:.6})")]
    NoGap { band1_max: f64, band2_min: f64 },

    #[error("no localized band inside the gap window [{nu_low:.5}, {nu_high:.5}] at the zone boundary")]
    NoGuidedMode { nu_low: f64, nu_high: f64 },

    #[error("mode at k-index {k_index}, band {band} has zero frequency; its electric field is undefined")]
    DegenerateMode { k_index: usize, band: usize },

    #[error("frequency {omega:.6e} rad/s lies outside the branch range [{min:.6e}, {max:.6e}]")]
    OutOfBand { omega: f64, min: f64, max: f64 },

    #[error("emitter is not coupled: fast rate {gamma_fast} ns^-1 does not exceed {gamma_tot} ns^-1")]
    NotCoupled { gamma_fast: f64, gamma_tot: f64 },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fit failed after {iterations} iterations: {reason}")]
    FitFailure { iterations: usize, reason: String },

    #[error("estimation error: {0}")]
    Estimation(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
