//! Key rates over a turbulent channel and threshold post-selection.
//!
//! * static: `R(η0)`, no post-selection;
//! * simplified: `F(η_T)·R(⟨η⟩)`, where `F` is the pass fraction and `⟨η⟩` the
//!   mean transmittance of the kept windows;
//! * rate-wise: `∫_{η_T}^1 R(η) p(η) dη`, an upper bound on the simplified
//!   rate whenever `R` is convex;
//! * pulse-wise: decoy-state observables assembled from photon-number
//!   resolved yields averaged over the kept windows.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_domain, Error, Result};
use crate::numeric::{golden_max, QuadConfig};
use crate::pdtc::{ChannelPdtc, MIN_PASS_FRACTION};
use crate::rates::{gllp_rate, DecoyObservables, DecoySettings, DeviceParams, KeyRate, Observables, E0};

/// Relative tolerance of the rate-wise integral.
pub const RATEWISE_REL_TOL: f64 = 1e-10;

/// Poisson tail mass neglected by the pulse-wise photon-number sums.
pub const POISSON_TAIL: f64 = 1e-12;

/// Which turbulence model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Static,
    Simplified(f64),
    RateWise(f64),
    PulseWise(f64),
}

impl ModelKind {
    pub fn threshold(&self) -> f64 {
        match *self {
            ModelKind::Static => 0.0,
            ModelKind::Simplified(t) | ModelKind::RateWise(t) | ModelKind::PulseWise(t) => t,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Static => "static",
            ModelKind::Simplified(_) => "simplified",
            ModelKind::RateWise(_) => "ratewise",
            ModelKind::PulseWise(_) => "pulsewise",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.threshold();
        check_domain("eta_T", t, (0.0..1.0).contains(&t), "[0, 1)")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model family without its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelName {
    Static,
    Simplified,
    RateWise,
    PulseWise,
}

impl ModelName {
    pub fn with_threshold(self, eta_t: f64) -> ModelKind {
        match self {
            ModelName::Static => ModelKind::Static,
            ModelName::Simplified => ModelKind::Simplified(eta_t),
            ModelName::RateWise => ModelKind::RateWise(eta_t),
            ModelName::PulseWise => ModelKind::PulseWise(eta_t),
        }
    }

    pub fn as_str(&self) -> &'static str {
        self.with_threshold(0.0).name()
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(ModelName::Static),
            "simplified" => Ok(ModelName::Simplified),
            "ratewise" | "rate-wise" => Ok(ModelName::RateWise),
            "pulsewise" | "pulse-wise" => Ok(ModelName::PulseWise),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rates of every model at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdReport {
    pub eta_t: f64,
    pub pass_fraction: f64,
    pub mean_eta: f64,
    pub rate_static: f64,
    pub rate_simplified: f64,
    pub rate_ratewise: f64,
    /// `(⟨η⟩ - η_T)·R'(⟨η⟩) - R(⟨η⟩)`; zero at a stationary point of the
    /// simplified rate.
    pub optimality_residual: f64,
}

/// No post-selection: the rate at the mean transmittance.
pub fn rate_static<R: KeyRate + ?Sized>(rate: &R, ch: &ChannelPdtc) -> f64 {
    rate.rate(ch.eta0())
}

/// Pass fraction times the rate at the post-selected mean transmittance.
pub fn rate_simplified<R: KeyRate + ?Sized>(rate: &R, ch: &ChannelPdtc, eta_t: f64) -> Result<f64> {
    check_domain("eta_T", eta_t, (0.0..1.0).contains(&eta_t), "[0, 1)")?;
    match ch.truncated_mean(eta_t) {
        Ok(mean) => Ok(ch.pass_fraction(eta_t)? * rate.rate(mean)),
        Err(Error::DegenerateSelection { pass_fraction, .. }) => {
            log::debug!("simplified rate at eta_T = {eta_t:e} is zero: pass fraction {pass_fraction:e}");
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

/// `∫_{η_T}^1 R(η) p(η) dη`, split at the rate's critical transmittance.
pub fn rate_ratewise<R: KeyRate + ?Sized>(rate: &R, ch: &ChannelPdtc, eta_t: f64) -> Result<f64> {
    check_domain("eta_T", eta_t, (0.0..1.0).contains(&eta_t), "[0, 1)")?;
    let breaks: Vec<f64> = rate.critical().into_iter().collect();
    Ok(ch.integrate(
        |eta| rate.rate(eta),
        eta_t,
        &breaks,
        QuadConfig::with_rel_tol(RATEWISE_REL_TOL),
    ))
}

/// How the pulse-wise model averages the error rate of `i`-photon pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QberAveraging {
    /// Average the error yield `e_i·Y_i = e0·Y0 + e_d·η_i` over the kept
    /// windows, independently of `Y_i`.
    #[default]
    Separate,
    /// Keep `e_i` at its value for `⟨η⟩` and weight it by `⟨Y_i⟩`.
    AtMean,
}

/// Smallest `i` with Poisson tail mass `P(n > i) < POISSON_TAIL`.
pub fn photon_number_cutoff(intensity: f64) -> usize {
    let mut p = (-intensity).exp();
    let mut cdf = p;
    let mut i = 0;
    while 1.0 - cdf >= POISSON_TAIL && i < 1000 {
        i += 1;
        p *= intensity / i as f64;
        cdf += p;
    }
    i
}

/// `1 - (1 - x)^i` without cancellation for small `x`.
fn multi_photon_transmittance(x: f64, i: usize) -> f64 {
    if i == 0 {
        0.0
    } else {
        -((i as f64) * (-x).ln_1p()).exp_m1()
    }
}

/// Photon-number resolved yields of the kept windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonYields {
    pub pass_fraction: f64,
    pub mean_eta: f64,
    /// `Y_i` for `i = 0..=i_max`.
    pub yields: Vec<f64>,
    /// `e_i·Y_i` for `i = 0..=i_max`.
    pub error_yields: Vec<f64>,
}

impl PhotonYields {
    /// Gain and QBER of a coherent state of the given intensity.
    pub fn observables(&self, intensity: f64) -> Observables {
        let mut p = (-intensity).exp();
        let (mut gain, mut error_gain) = (0.0, 0.0);
        for (i, (y, ey)) in self.yields.iter().zip(&self.error_yields).enumerate() {
            if i > 0 {
                p *= intensity / i as f64;
            }
            gain += p * y;
            error_gain += p * ey;
        }
        Observables::from_error_gain(gain, error_gain)
    }

    pub fn decoy_observables(&self, dec: &DecoySettings) -> DecoyObservables {
        DecoyObservables {
            signal: self.observables(dec.mu),
            weak: self.observables(dec.nu),
            vacuum: self.observables(dec.omega),
        }
    }
}

/// Yields the simplified model assumes: the static-channel yields at `⟨η⟩`.
pub fn simplified_yields(
    ch: &ChannelPdtc,
    eta_t: f64,
    dev: &DeviceParams,
    i_max: usize,
) -> Result<PhotonYields> {
    let mean_eta = ch.truncated_mean(eta_t)?;
    let sys = dev.system_transmittance(mean_eta);
    let (yields, error_yields) = (0..=i_max)
        .map(|i| {
            let eta_i = multi_photon_transmittance(sys, i);
            (dev.y0 + eta_i, E0 * dev.y0 + dev.e_d * eta_i)
        })
        .unzip();
    Ok(PhotonYields {
        pass_fraction: ch.pass_fraction(eta_t)?,
        mean_eta,
        yields,
        error_yields,
    })
}

/// Yields averaged photon number by photon number over the kept windows:
/// `⟨Y_i⟩ = Y0 + ⟨1 - (1 - η·η_d)^i⟩`.
pub fn pulsewise_yields(
    ch: &ChannelPdtc,
    eta_t: f64,
    dev: &DeviceParams,
    i_max: usize,
    averaging: QberAveraging,
) -> Result<PhotonYields> {
    let mean_eta = ch.truncated_mean(eta_t)?;
    let pass_fraction = ch.pass_fraction(eta_t)?;
    let cfg = QuadConfig::with_rel_tol(1e-12);
    let mut yields = Vec::with_capacity(i_max + 1);
    let mut error_yields = Vec::with_capacity(i_max + 1);
    let mean_sys = dev.system_transmittance(mean_eta);
    for i in 0..=i_max {
        let eta_i = match i {
            0 => 0.0,
            // linear in η: the closed-form truncated mean is exact
            1 => mean_sys,
            _ => ch.expectation(
                |eta| multi_photon_transmittance(dev.system_transmittance(eta), i),
                eta_t,
                cfg,
            )?,
        };
        let y = dev.y0 + eta_i;
        let ey = match averaging {
            QberAveraging::Separate => E0 * dev.y0 + dev.e_d * eta_i,
            QberAveraging::AtMean => {
                let at_mean = multi_photon_transmittance(mean_sys, i);
                (E0 * dev.y0 + dev.e_d * at_mean) / (dev.y0 + at_mean) * y
            }
        };
        yields.push(y);
        error_yields.push(ey);
    }
    Ok(PhotonYields {
        pass_fraction,
        mean_eta,
        yields,
        error_yields,
    })
}

/// Decoy-state rate of the post-selected channel built from pulse-wise
/// averaged yields.
pub fn rate_pulsewise(
    ch: &ChannelPdtc,
    eta_t: f64,
    dev: &DeviceParams,
    dec: &DecoySettings,
) -> Result<f64> {
    rate_pulsewise_with(ch, eta_t, dev, dec, QberAveraging::default())
}

pub fn rate_pulsewise_with(
    ch: &ChannelPdtc,
    eta_t: f64,
    dev: &DeviceParams,
    dec: &DecoySettings,
    averaging: QberAveraging,
) -> Result<f64> {
    check_domain("eta_T", eta_t, (0.0..1.0).contains(&eta_t), "[0, 1)")?;
    if ch.pass_fraction(eta_t)? < MIN_PASS_FRACTION {
        log::debug!("pulse-wise rate at eta_T = {eta_t:e} is zero: nothing passes");
        return Ok(0.0);
    }
    let i_max = photon_number_cutoff(dec.mu);
    let yields = pulsewise_yields(ch, eta_t, dev, i_max, averaging)?;
    let obs = yields.decoy_observables(dec);
    match gllp_rate(&obs, dev, dec) {
        Ok(rate) => Ok(yields.pass_fraction * rate),
        Err(err) => {
            log::debug!("pulse-wise rate at eta_T = {eta_t:e} is zero: {err}");
            Ok(0.0)
        }
    }
}

/// Residual of the stationarity condition of the simplified rate,
/// `(⟨η⟩ - η_T)·R'(⟨η⟩) - R(⟨η⟩)`, with a central difference for `R'`.
pub fn optimality_residual<R: KeyRate + ?Sized>(rate: &R, ch: &ChannelPdtc, eta_t: f64) -> Result<f64> {
    let mean = ch.truncated_mean(eta_t)?;
    let h = 1e-3 * mean;
    let slope = (rate.rate((mean + h).min(1.0)) - rate.rate(mean - h)) / ((mean + h).min(1.0) - (mean - h));
    Ok((mean - eta_t) * slope - rate.rate(mean))
}

/// Every model evaluated at `eta_t`.
pub fn threshold_report<R: KeyRate + ?Sized>(
    rate: &R,
    ch: &ChannelPdtc,
    eta_t: f64,
) -> Result<ThresholdReport> {
    let pass_fraction = ch.pass_fraction(eta_t)?;
    let mean_eta = ch.truncated_mean(eta_t)?;
    Ok(ThresholdReport {
        eta_t,
        pass_fraction,
        mean_eta,
        rate_static: rate_static(rate, ch),
        rate_simplified: rate_simplified(rate, ch, eta_t)?,
        rate_ratewise: rate_ratewise(rate, ch, eta_t)?,
        optimality_residual: optimality_residual(rate, ch, eta_t)?,
    })
}

/// Threshold maximizing the simplified rate.
///
/// The search covers `[0, min(1, 50·hint)]`: a coarse grid brackets the
/// maximum and golden-section search refines it. The hint is the rate's
/// critical transmittance, which depends on the devices only.
pub fn optimal_threshold<R: KeyRate + ?Sized>(
    rate: &R,
    ch: &ChannelPdtc,
    eta_crit_hint: f64,
) -> Result<(f64, ThresholdReport)> {
    check_domain("eta_crit_hint", eta_crit_hint, eta_crit_hint > 0.0 && eta_crit_hint < 1.0, "(0, 1)")?;
    const GRID: usize = 400;
    let hi = (50.0 * eta_crit_hint).min(1.0 - 1e-12);
    let objective = |t: f64| rate_simplified(rate, ch, t).unwrap_or(0.0);

    let grid: Vec<f64> = (0..=GRID).map(|k| hi * k as f64 / GRID as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    // rightmost maximum: below the critical point the objective rises, if
    // only beyond f64 resolution
    let (best, &best_value) = values
        .iter()
        .enumerate()
        .fold((0, &values[0]), |acc, (i, v)| if *v >= *acc.1 { (i, v) } else { acc });
    if !(best_value > 0.0) {
        return Err(Error::DegenerateOptimization);
    }
    let lo = grid[best.saturating_sub(1)];
    let up = grid[(best + 1).min(GRID)];
    let (eta_t, _) = golden_max(objective, lo, up, 1e-6 * eta_crit_hint);
    let report = threshold_report(rate, ch, eta_t)?;
    Ok((eta_t, report))
}
