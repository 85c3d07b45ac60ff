//! Static-channel key rates `R(η)`.
//!
//! Everything here treats the transmittance as a fixed number. The
//! turbulent-channel compositions in [`crate::models`] consume these through
//! the [`KeyRate`] trait.
//!
//! Decoy-state BB84 uses the standard channel model: an `i`-photon pulse has
//! yield `Y_i = Y0 + 1 - (1 - η·η_d)^i` and error rate
//! `e_i = (e0·Y0 + e_d·(1 - (1 - η·η_d)^i)) / Y_i`, which resum to the closed
//! forms of [`channel_observables`]. The single-photon contribution is bounded
//! with the vacuum + weak decoy method:
//!
//! ```text
//! Y1 >= μ/(μν - ν²) · [Q_ν e^ν - Q_μ e^μ ν²/μ² - (μ² - ν²)/μ² · Y0]
//! e1 <= (E_ν Q_ν e^ν - e0·Y0) / (Y1·ν)
//! ```
//!
//! For a non-zero vacuum decoy `ω ≤ 2e-4`, `Y0` is estimated as `Q_ω e^ω`.
//! Larger `ω` switches to the two-weak-decoy bounds with
//! `Y0 >= (ν Q_ω e^ω - ω Q_ν e^ν)/(ν - ω)`.

use std::sync::OnceLock;

use crate::error::{check_domain, Error, Result};
use crate::numeric::{bisect, bisect_predicate};

/// Error rate of background counts.
pub const E0: f64 = 0.5;

/// Largest vacuum-decoy intensity for which `Y0 ≈ Q_ω e^ω` is used.
pub const SMALL_VACUUM_INTENSITY: f64 = 2e-4;

/// Binary entropy in bits.
pub fn h2(x: f64) -> Result<f64> {
    check_domain("x", x, (0.0..=1.0).contains(&x), "[0, 1]")?;
    Ok(entropy(x))
}

pub(crate) fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// QBER at which the Shor–Preskill rate `1 - 2·h2(e)` vanishes (≈ 0.110028).
pub fn e_critical() -> f64 {
    static E_CRIT: OnceLock<f64> = OnceLock::new();
    *E_CRIT.get_or_init(|| {
        bisect(|e| 1.0 - 2.0 * entropy(e), 1e-6, 0.5 - 1e-9, 1e-16)
            .expect("1 - 2 h2(e) changes sign on (0, 1/2)")
    })
}

/// Detector and source constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    /// Dark/background count probability per signal window.
    pub y0: f64,
    /// Detector efficiency.
    pub eta_d: f64,
    /// Misalignment error probability.
    pub e_d: f64,
    /// Error-correction inefficiency.
    pub f: f64,
    /// Sifting factor.
    pub q: f64,
}

impl Default for DeviceParams {
    /// 144 km Canary Islands link: `Y0 = 1e-5`, `η_d = 0.25`, `e_d = 3%`,
    /// `f = 1.22`, efficient BB84 (`q = 1`).
    fn default() -> Self {
        Self {
            y0: 1e-5,
            eta_d: 0.25,
            e_d: 0.03,
            f: 1.22,
            q: 1.0,
        }
    }
}

impl DeviceParams {
    pub fn new(y0: f64, eta_d: f64, e_d: f64, f: f64, q: f64) -> Result<Self> {
        let dev = Self {
            y0,
            eta_d,
            e_d,
            f,
            q,
        };
        dev.validate()?;
        Ok(dev)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..1.0).contains(&self.y0) {
            return bad(format!("y0 = {} must lie in [0, 1)", self.y0));
        }
        if !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return bad(format!("eta_d = {} must lie in (0, 1]", self.eta_d));
        }
        if !(0.0..0.5).contains(&self.e_d) {
            return bad(format!("e_d = {} must lie in [0, 0.5)", self.e_d));
        }
        if !(self.f >= 1.0 && self.f.is_finite()) {
            return bad(format!("f = {} must be >= 1", self.f));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q = {} must lie in (0, 1]", self.q));
        }
        if self.e_d >= e_critical() {
            log::warn!(
                "misalignment e_d = {} exceeds e_critical = {:.6}; single-photon rate is identically zero",
                self.e_d,
                e_critical()
            );
        }
        Ok(())
    }

    /// System transmittance `η·η_d`.
    pub fn system_transmittance(&self, eta: f64) -> f64 {
        eta * self.eta_d
    }

    /// `Y0 / η_d`, the scale of every critical transmittance.
    pub fn noise_scale(&self) -> f64 {
        self.y0 / self.eta_d
    }
}

/// Signal, weak-decoy and vacuum-decoy intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoySettings {
    pub mu: f64,
    pub nu: f64,
    pub omega: f64,
}

impl Default for DecoySettings {
    fn default() -> Self {
        Self {
            mu: 0.3,
            nu: 0.05,
            omega: 0.0,
        }
    }
}

impl DecoySettings {
    pub fn new(mu: f64, nu: f64, omega: f64) -> Result<Self> {
        let dec = Self { mu, nu, omega };
        dec.validate()?;
        Ok(dec)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { mu, nu, omega } = *self;
        if !(omega >= 0.0 && omega < nu && nu < mu && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "intensities must satisfy 0 <= omega < nu < mu (got mu = {mu}, nu = {nu}, omega = {omega})"
            )));
        }
        if nu + omega >= mu {
            return Err(Error::InvalidParameter(format!(
                "nu + omega = {} must be below mu = {mu}",
                nu + omega
            )));
        }
        Ok(())
    }

    pub fn intensities(&self) -> [f64; 3] {
        [self.mu, self.nu, self.omega]
    }
}

/// Overall gain and QBER of one intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub gain: f64,
    pub qber: f64,
}

impl Observables {
    /// Rebuild from a gain and an error gain `E·Q`.
    pub fn from_error_gain(gain: f64, error_gain: f64) -> Self {
        let qber = if gain > 0.0 { error_gain / gain } else { E0 };
        Self { gain, qber }
    }

    pub fn error_gain(&self) -> f64 {
        self.gain * self.qber
    }
}

/// Gain `Q = Y0 + 1 - exp(-intensity·η_sys)` and QBER
/// `E = (e0·Y0 + e_d·(1 - exp(-intensity·η_sys))) / Q`.
pub fn channel_observables(eta: f64, intensity: f64, dev: &DeviceParams) -> Result<Observables> {
    check_domain("eta", eta, (0.0..=1.0).contains(&eta), "[0, 1]")?;
    check_domain("intensity", intensity, intensity >= 0.0, "[0, inf)")?;
    Ok(observables(eta, intensity, dev))
}

pub(crate) fn observables(eta: f64, intensity: f64, dev: &DeviceParams) -> Observables {
    let detected = -(-intensity * dev.system_transmittance(eta)).exp_m1();
    let gain = dev.y0 + detected;
    Observables::from_error_gain(gain, E0 * dev.y0 + dev.e_d * detected)
}

/// Gain and QBER of every decoy intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyObservables {
    pub signal: Observables,
    pub weak: Observables,
    pub vacuum: Observables,
}

impl DecoyObservables {
    /// Observables of a static channel.
    pub fn at(eta: f64, dev: &DeviceParams, dec: &DecoySettings) -> Self {
        Self {
            signal: observables(eta, dec.mu, dev),
            weak: observables(eta, dec.nu, dev),
            vacuum: observables(eta, dec.omega, dev),
        }
    }
}

/// Decoy-state bounds on the single-photon contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonBounds {
    pub y0_estimate: f64,
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// Single-photon gain of the signal state, `Y1·μ·e^-μ`.
    pub q1_lower: f64,
}

/// Vacuum + weak decoy estimation of `Y1` and `e1`.
pub fn estimate_single_photon(
    obs: &DecoyObservables,
    dec: &DecoySettings,
) -> Result<SinglePhotonBounds> {
    let DecoySettings { mu, nu, omega } = *dec;
    let q_mu = obs.signal.gain * mu.exp();
    let q_nu = obs.weak.gain * nu.exp();
    let eq_nu = obs.weak.error_gain() * nu.exp();

    let (y0_estimate, y1_lower, e1_upper) = if omega <= SMALL_VACUUM_INTENSITY {
        let y0 = obs.vacuum.gain * omega.exp();
        let y1 = mu / (mu * nu - nu * nu)
            * (q_nu - q_mu * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0);
        let e1 = (eq_nu - E0 * y0) / (y1 * nu);
        (y0, y1, e1)
    } else {
        let q_om = obs.vacuum.gain * omega.exp();
        let eq_om = obs.vacuum.error_gain() * omega.exp();
        let y0 = ((nu * q_om - omega * q_nu) / (nu - omega)).max(0.0);
        let y1 = mu / (mu * nu - mu * omega - nu * nu + omega * omega)
            * (q_nu - q_om - (nu * nu - omega * omega) / (mu * mu) * (q_mu - y0));
        let e1 = (eq_nu - eq_om) / ((nu - omega) * y1);
        (y0, y1, e1)
    };

    if !(y1_lower > 0.0) {
        return Err(Error::EstimationBreakdown(format!(
            "single-photon yield lower bound {y1_lower:e} <= 0"
        )));
    }
    // a slightly negative upper bound only means the true e1 is tiny
    let e1_upper = e1_upper.max(0.0);
    if e1_upper > 0.5 {
        return Err(Error::EstimationBreakdown(format!(
            "single-photon error upper bound {e1_upper} > 1/2"
        )));
    }
    Ok(SinglePhotonBounds {
        y0_estimate,
        y1_lower,
        e1_upper,
        q1_lower: y1_lower * mu * (-mu).exp(),
    })
}

/// GLLP rate from measured or simulated observables, clamped at zero.
pub fn gllp_rate(obs: &DecoyObservables, dev: &DeviceParams, dec: &DecoySettings) -> Result<f64> {
    let bounds = estimate_single_photon(obs, dec)?;
    let signal = obs.signal;
    let rate = dev.q
        * (-dev.f * signal.gain * entropy(signal.qber)
            + bounds.q1_lower * (1.0 - entropy(bounds.e1_upper)));
    Ok(rate.max(0.0))
}

/// Single-photon QBER `(Y0/2 + e_d·η_sys) / (Y0 + η_sys)`.
pub fn single_photon_qber(eta: f64, dev: &DeviceParams) -> f64 {
    let sys = dev.system_transmittance(eta);
    let yield_ = dev.y0 + sys;
    if yield_ > 0.0 {
        (E0 * dev.y0 + dev.e_d * sys) / yield_
    } else {
        E0
    }
}

/// Shor–Preskill rate `(Y0 + η_sys)·(1 - 2·h2(e))` clamped at zero.
pub fn rate_single_photon(eta: f64, dev: &DeviceParams) -> Result<f64> {
    check_domain("eta", eta, (0.0..=1.0).contains(&eta), "[0, 1]")?;
    Ok(single_photon(eta, dev))
}

fn single_photon(eta: f64, dev: &DeviceParams) -> f64 {
    let yield_ = dev.y0 + dev.system_transmittance(eta);
    let e = single_photon_qber(eta, dev);
    if e >= e_critical() {
        return 0.0;
    }
    (yield_ * (1.0 - 2.0 * entropy(e))).max(0.0)
}

/// Asymptotic decoy-state GLLP rate; estimation breakdowns count as zero key.
pub fn rate_decoy_asymptotic(eta: f64, dev: &DeviceParams, dec: &DecoySettings) -> Result<f64> {
    check_domain("eta", eta, (0.0..=1.0).contains(&eta), "[0, 1]")?;
    Ok(decoy(eta, dev, dec))
}

fn decoy(eta: f64, dev: &DeviceParams, dec: &DecoySettings) -> f64 {
    let obs = DecoyObservables::at(eta, dev, dec);
    match gllp_rate(&obs, dev, dec) {
        Ok(rate) => rate,
        Err(err) => {
            log::trace!("decoy rate at eta = {eta:e} set to zero: {err}");
            0.0
        }
    }
}

/// Closed-form single-photon critical transmittance
/// `(Y0/η_d)·(1/2 - e_c)/(e_c - e_d)`.
pub fn eta_critical_single_photon(dev: &DeviceParams) -> Result<f64> {
    let e_c = e_critical();
    if dev.e_d >= e_c {
        return Err(Error::InvalidParameter(format!(
            "misalignment exceeds e_critical: e_d = {} >= {e_c:.6}",
            dev.e_d
        )));
    }
    Ok(dev.noise_scale() * (0.5 - e_c) / (e_c - dev.e_d))
}

/// Critical transmittance of the decoy-state rate, found two ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyCritical {
    /// Largest transmittance with zero rate (bisection on the rate itself).
    pub numeric: f64,
    /// `(Y0/η_d)/x_c` from the small-noise approximation.
    pub analytic: Option<f64>,
    /// Root `x_c` of `h2(x/2 + e_d) + f·e^μ·h2(x/(2μ) + e_d) = 1`.
    pub x_critical: Option<f64>,
}

/// Infimum of the transmittances with positive rate, to near machine precision.
/// Returns `(last_zero, first_positive)`.
pub fn positivity_boundary<F: Fn(f64) -> f64>(rate: F) -> Result<(f64, f64)> {
    const GRID: usize = 400;
    let lo_exp = -12.0f64;
    let mut prev = 0.0;
    if rate(0.0) > 0.0 {
        return Ok((0.0, 0.0));
    }
    for k in 0..=GRID {
        let eta = 10f64.powf(lo_exp * (1.0 - k as f64 / GRID as f64));
        if rate(eta) > 0.0 {
            let (lo, hi) = bisect_predicate(|x| rate(x) > 0.0, prev, eta, eta * 1e-14);
            return Ok((lo, hi));
        }
        prev = eta;
    }
    Err(Error::NoPositiveRate)
}

/// Root of `h2(x/2 + e_d) + f·e^μ·h2(x/(2μ) + e_d) = 1`.
pub fn decoy_x_critical(dev: &DeviceParams, mu: f64) -> Result<f64> {
    let g = |x: f64| {
        entropy(0.5 * x + dev.e_d) + dev.f * mu.exp() * entropy(x / (2.0 * mu) + dev.e_d) - 1.0
    };
    // the second entropy saturates at x = 2μ(1/2 - e_d)
    let hi = 2.0 * mu * (0.5 - dev.e_d);
    bisect(g, 0.0, hi, 1e-15)
}

pub fn eta_critical_decoy(dev: &DeviceParams, dec: &DecoySettings) -> Result<DecoyCritical> {
    let (numeric, _) = positivity_boundary(|eta| decoy(eta, dev, dec))?;
    let x_critical = decoy_x_critical(dev, dec.mu).ok().filter(|x| *x > 0.0);
    Ok(DecoyCritical {
        numeric,
        analytic: x_critical.map(|x| dev.noise_scale() / x),
        x_critical,
    })
}

/// A static-channel key rate as a function of transmittance.
pub trait KeyRate: Sync {
    /// Secure bits per pulse at transmittance `eta ∈ [0, 1]`.
    fn rate(&self, eta: f64) -> f64;

    /// Largest transmittance with zero rate, when known. Used as a
    /// quadrature breakpoint and as the pre-fixed threshold.
    fn critical(&self) -> Option<f64> {
        None
    }
}

/// Adapter for closures.
pub struct FnRate<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> KeyRate for FnRate<F> {
    fn rate(&self, eta: f64) -> f64 {
        (self.0)(eta)
    }
}

/// Single-photon BB84 with the Shor–Preskill rate.
#[derive(Debug, Clone, Copy)]
pub struct SinglePhotonRate {
    pub dev: DeviceParams,
}

impl SinglePhotonRate {
    pub fn new(dev: DeviceParams) -> Self {
        Self { dev }
    }
}

impl KeyRate for SinglePhotonRate {
    fn rate(&self, eta: f64) -> f64 {
        single_photon(eta, &self.dev)
    }

    fn critical(&self) -> Option<f64> {
        eta_critical_single_photon(&self.dev).ok()
    }
}

/// Asymptotic decoy-state BB84 with vacuum + weak estimation.
#[derive(Debug)]
pub struct DecoyRate {
    pub dev: DeviceParams,
    pub dec: DecoySettings,
    critical: OnceLock<Option<f64>>,
}

impl DecoyRate {
    pub fn new(dev: DeviceParams, dec: DecoySettings) -> Self {
        Self {
            dev,
            dec,
            critical: OnceLock::new(),
        }
    }
}

impl Clone for DecoyRate {
    fn clone(&self) -> Self {
        Self {
            dev: self.dev,
            dec: self.dec,
            critical: self.critical.clone(),
        }
    }
}

impl KeyRate for DecoyRate {
    fn rate(&self, eta: f64) -> f64 {
        decoy(eta, &self.dev, &self.dec)
    }

    fn critical(&self) -> Option<f64> {
        *self.critical.get_or_init(|| {
            positivity_boundary(|eta| decoy(eta, &self.dev, &self.dec))
                .ok()
                .map(|(last_zero, _)| last_zero)
        })
    }
}

/// Rate sampled on an increasing transmittance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub points: Vec<(f64, f64)>,
    pub meta: String,
}

impl RateCurve {
    pub fn sample<R: KeyRate + ?Sized>(
        rate: &R,
        etas: &[f64],
        meta: impl Into<String>,
    ) -> Result<Self> {
        if etas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "rate curve transmittances must be strictly increasing".into(),
            ));
        }
        for &eta in etas {
            check_domain("eta", eta, (0.0..=1.0).contains(&eta), "[0, 1]")?;
        }
        Ok(Self {
            points: etas.iter().map(|&eta| (eta, rate.rate(eta))).collect(),
            meta: meta.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn entropy_values() {
        assert_eq!(h2(0.5).unwrap(), 1.0);
        assert_eq!(h2(0.0).unwrap(), 0.0);
        assert_eq!(h2(1.0).unwrap(), 0.0);
        assert!(h2(-0.01).is_err());
        assert!(h2(1.01).is_err());
        assert!(h2(f64::NAN).is_err());
        assert_relative_eq!(h2(0.25).unwrap(), h2(0.75).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn e_critical_root() {
        // 40-digit root of 1 - 2 h2(e): 0.11002786443835955126
        assert_relative_eq!(e_critical(), 0.110_027_864_438_359_55, max_relative = 1e-13);
        assert!((h2(0.110_027_9).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn device_validation() {
        assert!(DeviceParams::new(1e-5, 0.25, 0.03, 1.22, 1.0).is_ok());
        assert!(DeviceParams::new(1.0, 0.25, 0.03, 1.22, 1.0).is_err());
        assert!(DeviceParams::new(1e-5, 0.0, 0.03, 1.22, 1.0).is_err());
        assert!(DeviceParams::new(1e-5, 0.25, 0.5, 1.22, 1.0).is_err());
        assert!(DeviceParams::new(1e-5, 0.25, 0.03, 0.9, 1.0).is_err());
        assert!(DeviceParams::new(1e-5, 0.25, 0.03, 1.22, 0.0).is_err());
        // accepted with a warning: the single-photon rate is simply zero
        let noisy = DeviceParams::new(1e-5, 0.25, 0.12, 1.22, 1.0).unwrap();
        assert!(eta_critical_single_photon(&noisy).is_err());
        assert_eq!(rate_single_photon(0.5, &noisy).unwrap(), 0.0);
    }

    #[test]
    fn decoy_validation() {
        assert!(DecoySettings::new(0.3, 0.05, 0.0).is_ok());
        assert!(DecoySettings::new(0.3, 0.3, 0.0).is_err());
        assert!(DecoySettings::new(0.3, 0.2, 0.15).is_err());
        assert!(DecoySettings::new(0.3, 0.05, 0.05).is_err());
        assert!(DecoySettings::new(0.3, 0.05, -1e-3).is_err());
    }

    #[test]
    fn vacuum_pulses_see_background_only() {
        let dev = DeviceParams::default();
        let obs = channel_observables(0.3, 0.0, &dev).unwrap();
        assert_eq!(obs.gain, dev.y0);
        assert_eq!(obs.qber, E0);
    }

    #[test]
    fn saturated_observables() {
        let dev = DeviceParams::new(1e-5, 1.0, 0.03, 1.22, 1.0).unwrap();
        let obs = channel_observables(1.0, 200.0, &dev).unwrap();
        assert_relative_eq!(obs.gain, 1.0 + dev.y0, max_relative = 1e-15);
        assert_relative_eq!(obs.qber, (0.5 * dev.y0 + dev.e_d) / (1.0 + dev.y0), max_relative = 1e-14);
        assert!((obs.qber - dev.e_d).abs() < 1e-5);
    }

    #[test]
    fn observables_match_photon_number_series() {
        // truncated Poisson series over i-photon yields vs the closed form
        let dev = DeviceParams::default();
        let (eta, mu) = (1e-3, 0.3);
        let sys = eta * dev.eta_d;
        let mut p = (-mu as f64).exp();
        let (mut gain, mut err) = (0.0, 0.0);
        for i in 0..200 {
            if i > 0 {
                p *= mu / i as f64;
            }
            let eta_i = 1.0 - (1.0 - sys).powi(i);
            let y_i = dev.y0 + eta_i;
            gain += y_i * p;
            err += (E0 * dev.y0 + dev.e_d * eta_i) * p;
        }
        let obs = channel_observables(eta, mu, &dev).unwrap();
        assert_relative_eq!(obs.gain, gain, max_relative = 1e-12);
        assert_relative_eq!(obs.qber, err / gain, max_relative = 1e-12);
    }

    #[test]
    fn single_photon_critical_point() {
        let dev = DeviceParams::default();
        let crit = eta_critical_single_photon(&dev).unwrap();
        assert!((crit - 0.00020).abs() < 1e-5, "{crit}");
        assert_eq!(rate_single_photon(crit * (1.0 - 1e-9), &dev).unwrap(), 0.0);
        assert!(rate_single_photon(crit * (1.0 + 1e-6), &dev).unwrap() > 0.0);
        assert_eq!(rate_single_photon(0.0, &dev).unwrap(), 0.0);
        assert!(rate_single_photon(1.1, &dev).is_err());

        // bisection on the positivity indicator, independent of the closed form
        let (lo, hi) =
            bisect_predicate(|x| rate_single_photon(x, &dev).unwrap() > 0.0, 1e-6, 1e-2, 1e-16);
        assert_relative_eq!(0.5 * (lo + hi), crit, max_relative = 1e-4);
    }

    #[test]
    fn single_photon_critical_without_misalignment() {
        let dev = DeviceParams::new(1e-5, 0.25, 0.0, 1.22, 1.0).unwrap();
        let e_c = e_critical();
        assert_relative_eq!(
            eta_critical_single_photon(&dev).unwrap(),
            dev.noise_scale() * (0.5 - e_c) / e_c,
            max_relative = 1e-15
        );
    }

    #[test]
    fn decoy_rate_at_29_db() {
        let dev = DeviceParams::default();
        let dec = DecoySettings::default();
        let r = rate_decoy_asymptotic(10f64.powf(-2.9), &dev, &dec).unwrap();
        assert!((r / 3.119e-6 - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn noiseless_decoy_rate() {
        let dev = DeviceParams::new(0.0, 0.25, 0.0, 1.0, 1.0).unwrap();
        let dec = DecoySettings::default();
        for eta in [1e-6, 1e-3, 0.5] {
            let obs = DecoyObservables::at(eta, &dev, &dec);
            let b = estimate_single_photon(&obs, &dec).unwrap();
            assert!(b.e1_upper.abs() < 1e-12);
            let r = rate_decoy_asymptotic(eta, &dev, &dec).unwrap();
            assert!(r > 0.0);
            assert_relative_eq!(r, b.q1_lower, max_relative = 1e-9);
        }
    }

    #[test]
    fn decoy_breakdown_is_reported() {
        let dev = DeviceParams::default();
        let dec = DecoySettings::default();
        // a vacuum gain larger than the weak-decoy gain makes Y1 negative
        let mut obs = DecoyObservables::at(1e-3, &dev, &dec);
        obs.vacuum.gain = 1.0;
        assert!(matches!(
            estimate_single_photon(&obs, &dec),
            Err(Error::EstimationBreakdown(_))
        ));
    }

    #[test]
    fn decoy_critical_two_ways() {
        let dev = DeviceParams::default();
        let dec = DecoySettings::default();
        let c = eta_critical_decoy(&dev, &dec).unwrap();
        assert_eq!(rate_decoy_asymptotic(c.numeric, &dev, &dec).unwrap(), 0.0);
        assert!(rate_decoy_asymptotic(c.numeric * (1.0 + 1e-9), &dev, &dec).unwrap() > 0.0);
        let analytic = c.analytic.unwrap();
        assert!((analytic / c.numeric - 1.0).abs() < 0.15);
        assert_eq!(DecoyRate::new(dev, dec).critical(), Some(c.numeric));
    }

    #[test]
    fn decoy_critical_scales_with_dark_counts() {
        let dev = DeviceParams::default();
        let dec = DecoySettings::default();
        let base = eta_critical_decoy(&dev, &dec).unwrap().numeric;
        let doubled = DeviceParams { y0: 2e-5, ..dev };
        let twice = eta_critical_decoy(&doubled, &dec).unwrap().numeric;
        assert!((twice / base / 2.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn no_positive_rate() {
        let dev = DeviceParams { e_d: 0.2, ..DeviceParams::default() };
        assert_eq!(
            eta_critical_decoy(&dev, &DecoySettings::default()),
            Err(Error::NoPositiveRate)
        );
    }

    #[test]
    fn non_zero_vacuum_decoy() {
        let dev = DeviceParams::default();
        let small = DecoySettings::new(0.31, 0.165, 2e-4).unwrap();
        let large = DecoySettings::new(0.31, 0.165, 0.01).unwrap();
        let eta = 3e-3;
        let r_small = rate_decoy_asymptotic(eta, &dev, &small).unwrap();
        let r_large = rate_decoy_asymptotic(eta, &dev, &large).unwrap();
        let r_zero = rate_decoy_asymptotic(eta, &dev, &DecoySettings { omega: 0.0, ..small }).unwrap();
        assert!(r_small > 0.0 && r_large > 0.0);
        // Q_ω e^ω slightly overestimates Y0, which can nudge the rate either way
        assert!(r_large <= r_zero, "{r_large} {r_zero}");
        assert!((r_small / r_zero - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rate_curve_requires_increasing_grid() {
        let sp = SinglePhotonRate::new(DeviceParams::default());
        let c = RateCurve::sample(&sp, &[1e-4, 1e-3, 1e-2], "single-photon").unwrap();
        assert_eq!(c.points.len(), 3);
        assert_eq!(c.points[0].1, 0.0);
        assert!(RateCurve::sample(&sp, &[1e-3, 1e-4], "x").is_err());
        assert!(RateCurve::sample(&sp, &[1e-3, 2.0], "x").is_err());
    }
}
