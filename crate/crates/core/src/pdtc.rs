//! Log-normal probability distribution of the channel transmission
//! coefficient (PDTC).
//!
//! The transmittance `η` is log-normal with location `ln(η0) - σ²/2` and scale
//! `σ`, so that its mean is exactly `η0`:
//!
//! ```text
//! p(η) = 1 / (√(2π)·σ·η) · exp(-[ln(η/η0) + σ²/2]² / (2σ²))
//! ```
//!
//! The normalization is the standard log-normal one. A prefactor of
//! `1/(√(2πσ)·η)` does not integrate to one and is not used.
//!
//! Transmittance is physical only on `[0, 1]`. Integrals over the
//! distribution run on `[η_T, 1]` without renormalizing the (negligible, for
//! realistic losses) mass above one; the sampler redraws values above one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_domain, Error, Result};
use crate::montecarlo::TransmittanceStream;
use crate::numeric::{self, normal_pdf, normal_sf, QuadConfig};

/// Largest accepted spread parameter.
pub const SIGMA_MAX: f64 = 3.0;

/// Pass fractions below this leave nothing to post-select.
pub const MIN_PASS_FRACTION: f64 = 1e-15;

/// Mass above `η = 1` beyond which construction logs a warning.
pub const MASS_ABOVE_ONE_WARN: f64 = 1e-6;

// Standardized log-transmittance at which the normal density underflows.
const Z_FLOOR: f64 = -40.0;

/// Convert a channel loss in dB to mean transmittance.
pub fn loss_db_to_eta(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Convert a mean transmittance to channel loss in dB.
pub fn eta_to_loss_db(eta: f64) -> f64 {
    -10.0 * eta.log10()
}

/// Turbulent channel described by its mean transmittance and log-normal spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPdtc {
    eta0: f64,
    sigma: f64,
}

impl ChannelPdtc {
    pub fn new(eta0: f64, sigma: f64) -> Result<Self> {
        check_domain("eta0", eta0, eta0 > 0.0 && eta0 < 1.0, "(0, 1)")?;
        check_domain("sigma", sigma, sigma > 0.0 && sigma <= SIGMA_MAX, "(0, 3]")?;
        let ch = Self { eta0, sigma };
        let above = ch.mass_above_one();
        if above > MASS_ABOVE_ONE_WARN {
            log::warn!(
                "PDTC (eta0 = {eta0:e}, sigma = {sigma}) puts {above:e} of its mass above eta = 1; \
                 integrals are truncated at 1 without renormalization"
            );
        }
        Ok(ch)
    }

    /// Channel with mean transmittance `10^(-loss_db/10)`.
    pub fn from_loss_db(loss_db: f64, sigma: f64) -> Result<Self> {
        check_domain("loss_db", loss_db, loss_db > 0.0, "(0, inf)")?;
        Self::new(loss_db_to_eta(loss_db), sigma)
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn loss_db(&self) -> f64 {
        eta_to_loss_db(self.eta0)
    }

    /// Location of `ln η`.
    fn location(&self) -> f64 {
        self.eta0.ln() - 0.5 * self.sigma * self.sigma
    }

    /// Standardized log-transmittance `z = (ln η - location) / σ`.
    pub fn standardize(&self, eta: f64) -> f64 {
        if eta <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (eta.ln() - self.location()) / self.sigma
        }
    }

    /// Inverse of [`standardize`](Self::standardize).
    pub fn transmittance_at(&self, z: f64) -> f64 {
        (self.location() + self.sigma * z).exp()
    }

    /// Probability density at `eta`.
    pub fn pdf(&self, eta: f64) -> Result<f64> {
        check_domain("eta", eta, eta > 0.0, "(0, inf)")?;
        let z = self.standardize(eta);
        Ok(normal_pdf(z) / (self.sigma * eta))
    }

    /// Probability mass of transmittances above one.
    pub fn mass_above_one(&self) -> f64 {
        normal_sf(self.standardize(1.0))
    }

    /// Probability mass on `[a, b]`, `0 <= a <= b`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        (normal_sf(self.standardize(a)) - normal_sf(self.standardize(b))).max(0.0)
    }

    /// `∫ η p(η) dη` over `[a, b]`.
    pub fn partial_mean(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let s = self.sigma;
        self.eta0 * (normal_sf(self.standardize(a) - s) - normal_sf(self.standardize(b) - s)).max(0.0)
    }

    /// Fraction of windows kept by the threshold, `∫_{η_T}^1 p(η) dη`.
    pub fn pass_fraction(&self, eta_t: f64) -> Result<f64> {
        check_domain("eta_T", eta_t, (0.0..=1.0).contains(&eta_t), "[0, 1]")?;
        Ok(self.mass_between(eta_t, 1.0))
    }

    /// Mean transmittance of the windows kept by the threshold.
    pub fn truncated_mean(&self, eta_t: f64) -> Result<f64> {
        check_domain("eta_T", eta_t, (0.0..1.0).contains(&eta_t), "[0, 1)")?;
        let pass_fraction = self.mass_between(eta_t, 1.0);
        if pass_fraction < MIN_PASS_FRACTION {
            return Err(Error::DegenerateSelection {
                eta_t,
                pass_fraction,
            });
        }
        let mean = self.partial_mean(eta_t, 1.0) / pass_fraction;
        // rounding can push the ratio marginally outside [eta_T, 1]
        Ok(mean.clamp(eta_t, 1.0))
    }

    /// `∫_{η_T}^1 g(η) p(η) dη` by adaptive quadrature in the standardized
    /// log variable. `breakpoints` are transmittances where `g` has kinks.
    pub fn integrate<G: Fn(f64) -> f64>(
        &self,
        g: G,
        eta_t: f64,
        breakpoints: &[f64],
        cfg: QuadConfig,
    ) -> f64 {
        let z_lo = self.standardize(eta_t).max(Z_FLOOR);
        let z_hi = self.standardize(1.0);
        let mut z_breaks: Vec<f64> = breakpoints.iter().map(|&b| self.standardize(b)).collect();
        // the bulk of the density sits within a few units of z = 0
        z_breaks.extend([-6.0, -2.0, 0.0, 2.0, 6.0]);
        numeric::integrate(
            |z| g(self.transmittance_at(z)) * normal_pdf(z),
            z_lo,
            z_hi,
            &z_breaks,
            cfg,
        )
        .value
    }

    /// Mean of `g(η)` over the truncated distribution on `[η_T, 1]`.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G, eta_t: f64, cfg: QuadConfig) -> Result<f64> {
        let pass_fraction = self.pass_fraction(eta_t)?;
        if pass_fraction < MIN_PASS_FRACTION {
            return Err(Error::DegenerateSelection {
                eta_t,
                pass_fraction,
            });
        }
        Ok(self.integrate(g, eta_t, &[], cfg) / pass_fraction)
    }

    /// Endless seeded stream of transmittance draws on `(0, 1]`.
    pub fn sampler(&self, seed: u64) -> TransmittanceSampler {
        TransmittanceSampler {
            location: self.location(),
            sigma: self.sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `n` i.i.d. draws collected into a stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<TransmittanceStream> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        Ok(TransmittanceStream::new(
            self.sampler(seed).take(n).collect(),
            TransmittanceStream::DEFAULT_WINDOW_PULSES,
            seed,
        ))
    }
}

/// Iterator over log-normal transmittance draws; draws above one are redrawn.
#[derive(Debug, Clone)]
pub struct TransmittanceSampler {
    location: f64,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl Iterator for TransmittanceSampler {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        loop {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let eta = (self.location + self.sigma * z).exp();
            if eta <= 1.0 && eta > 0.0 {
                return Some(eta);
            }
        }
    }
}

/// Turbulence inputs to the Rytov variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RytovInput {
    /// Refractive-index structure constant, m^(-2/3).
    pub cn2: f64,
    /// Optical wavenumber, 1/m.
    pub wavenumber: f64,
    /// Path length, m.
    pub path_length: f64,
}

impl RytovInput {
    pub fn new(cn2: f64, wavenumber: f64, path_length: f64) -> Result<Self> {
        check_domain("cn2", cn2, cn2 > 0.0, "(0, inf)")?;
        check_domain("k", wavenumber, wavenumber > 0.0, "(0, inf)")?;
        check_domain("L", path_length, path_length > 0.0, "(0, inf)")?;
        Ok(Self {
            cn2,
            wavenumber,
            path_length,
        })
    }

    /// Wavenumber from a wavelength in metres.
    pub fn from_wavelength(cn2: f64, wavelength: f64, path_length: f64) -> Result<Self> {
        check_domain("wavelength", wavelength, wavelength > 0.0, "(0, inf)")?;
        Self::new(cn2, 2.0 * std::f64::consts::PI / wavelength, path_length)
    }
}

/// Log-normal spread from the Rytov approximation,
/// `σ² = 1.23 · Cn² · k^(7/6) · L^(11/6)`.
pub fn rytov_sigma(inp: &RytovInput) -> f64 {
    (1.23 * inp.cn2 * inp.wavenumber.powf(7.0 / 6.0) * inp.path_length.powf(11.0 / 6.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig4() -> ChannelPdtc {
        ChannelPdtc::new(10f64.powf(-3.7), 0.9).unwrap()
    }

    #[test]
    fn rejects_invalid_channels() {
        assert!(ChannelPdtc::new(0.0, 0.5).is_err());
        assert!(ChannelPdtc::new(1.0, 0.5).is_err());
        assert!(ChannelPdtc::new(1e-3, 0.0).is_err());
        assert!(ChannelPdtc::new(1e-3, 3.01).is_err());
        assert!(ChannelPdtc::new(1e-3, 3.0).is_ok());
    }

    #[test]
    fn pdf_domain() {
        assert!(fig4().pdf(0.0).is_err());
        assert!(fig4().pdf(-1.0).is_err());
    }

    #[test]
    fn pdf_at_mode() {
        // mode of the log-normal is exp(location - σ²) = η0·exp(-3σ²/2)
        let ch = fig4();
        let s = ch.sigma();
        let mode = ch.eta0() * (-1.5 * s * s).exp();
        let expected = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * s * mode) * (-0.5 * s * s).exp();
        assert_relative_eq!(ch.pdf(mode).unwrap(), expected, max_relative = 1e-14);
        // mpmath: 4993.9718124024237519
        assert_relative_eq!(ch.pdf(mode).unwrap(), 4993.971_812_402_424, max_relative = 1e-12);
        assert!(ch.pdf(mode * 1.01).unwrap() < ch.pdf(mode).unwrap());
        assert!(ch.pdf(mode * 0.99).unwrap() < ch.pdf(mode).unwrap());
    }

    #[test]
    fn pass_fraction_edges() {
        let ch = fig4();
        assert!(1.0 - ch.pass_fraction(0.0).unwrap() < 1e-12);
        assert_eq!(ch.pass_fraction(1.0).unwrap(), 0.0);
        assert!(ch.pass_fraction(1.5).is_err());
        assert!(ch.pass_fraction(-0.1).is_err());
    }

    #[test]
    fn pass_fraction_oracle_value() {
        // 40-digit quadrature of the density and closed-form CDF both give this
        assert_relative_eq!(
            fig4().pass_fraction(0.00020).unwrap(),
            0.325_405_734_760_703_4,
            max_relative = 1e-12
        );
    }

    #[test]
    fn truncated_mean_oracle_value() {
        let ch = ChannelPdtc::new(10f64.powf(-2.9), 0.6).unwrap();
        assert_relative_eq!(
            ch.truncated_mean(0.0012).unwrap(),
            0.001_975_731_357_243_435_5,
            max_relative = 1e-12
        );
        assert_relative_eq!(ch.truncated_mean(0.0).unwrap(), ch.eta0(), max_relative = 1e-12);
    }

    #[test]
    fn truncated_mean_degenerate() {
        let ch = ChannelPdtc::new(1e-4, 0.2).unwrap();
        assert!(matches!(
            ch.truncated_mean(0.5),
            Err(Error::DegenerateSelection { .. })
        ));
        assert!(ch.truncated_mean(1.0).is_err());
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let ch = ChannelPdtc::new(10f64.powf(-3.2), 1.1).unwrap();
        for eta_t in [0.0, 1e-4, 6e-4, 3e-3] {
            let mass = ch.integrate(|_| 1.0, eta_t, &[], QuadConfig::default());
            assert_relative_eq!(mass, ch.pass_fraction(eta_t).unwrap(), max_relative = 1e-9);
            let first = ch.integrate(|e| e, eta_t, &[], QuadConfig::default());
            assert_relative_eq!(first, ch.partial_mean(eta_t, 1.0), max_relative = 1e-9);
        }
    }

    #[test]
    fn sampler_is_deterministic_and_bounded() {
        let ch = ChannelPdtc::new(0.3, 2.5).unwrap();
        let a: Vec<f64> = ch.sampler(7).take(1000).collect();
        let b: Vec<f64> = ch.sampler(7).take(1000).collect();
        let c: Vec<f64> = ch.sampler(8).take(1000).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&e| e > 0.0 && e <= 1.0));
        assert!(ch.sample(0, 1).is_err());
    }

    #[test]
    fn rytov_value_and_guard() {
        let inp = RytovInput::from_wavelength(1e-15, 800e-9, 1e5).unwrap();
        // direct evaluation in 40-digit arithmetic
        assert_relative_eq!(rytov_sigma(&inp), 14.139_096_324_637_102, max_relative = 1e-13);
        assert!(RytovInput::new(0.0, 1.0, 1.0).is_err());
        assert!(RytovInput::new(1e-15, -1.0, 1.0).is_err());
    }

    #[test]
    fn loss_conversion_round_trip() {
        assert_eq!(loss_db_to_eta(30.0), 10f64.powf(-3.0));
        assert_relative_eq!(eta_to_loss_db(loss_db_to_eta(37.0)), 37.0, max_relative = 1e-15);
    }
}
