use thiserror::Error;

/// Errors raised by the key-rate engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    #[error("{name} = {value} is outside the domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// A parameter record violates one of its invariants.
    #[error("invalid parameters: {0}")]
    InvalidParameter(String),

    /// The threshold leaves (numerically) no transmittance mass to keep.
    #[error("degenerate selection: pass fraction {pass_fraction:e} at threshold {eta_t:e}")]
    DegenerateSelection { eta_t: f64, pass_fraction: f64 },

    /// The decoy-state bounds became unphysical (Y1 lower bound <= 0 or e1 upper bound > 1/2).
    #[error("decoy estimation broke down: {0}")]
    EstimationBreakdown(String),

    /// Finite-size bounds on counts went negative.
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    /// The rate function is zero on the whole search interval.
    #[error("no positive key rate on (0, 1]")]
    NoPositiveRate,

    /// The objective of a threshold optimization is identically zero.
    #[error("degenerate optimization: simplified rate is zero for every threshold")]
    DegenerateOptimization,

    /// A root finder was given an interval without a sign change.
    #[error("no sign change on [{lo:e}, {hi:e}]")]
    NoBracket { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_domain(
    name: &'static str,
    value: f64,
    ok: bool,
    domain: &'static str,
) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            domain,
        })
    }
}
