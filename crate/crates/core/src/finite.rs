//! Finite-size decoy-state BB84 (two decoys plus vacuum, Hoeffding
//! concentration bounds) and its composition with threshold post-selection,
//! where the kept fraction also shrinks the block of pulses the protocol runs
//! on.
//!
//! Counts per basis and intensity are `N·p_basis·p_k·Q_k`, with
//! `p_basis = q_x²` for X and `(1 - q_x)²` for Z. With
//! `δ = sqrt(n_basis/2 · ln(21/ε_sec))`, every count is widened to
//! `n±_k = e^k/p_k · (n_k ± δ)` and
//!
//! ```text
//! s0 ≥ τ0/(μ2 - μ3) · (μ2 n-_μ3 - μ3 n+_μ2)
//! s1 ≥ τ1 μ1 / (μ1(μ2 - μ3) - μ2² + μ3²)
//!      · [n-_μ2 - n+_μ3 - (μ2² - μ3²)/μ1² · (n+_μ1 - s0/τ0)]
//! v1 ≤ τ1/(μ2 - μ3) · (m+_μ2 - m-_μ3)          (Z-basis errors)
//! ℓ  = s_X0 + s_X1(1 - h(φ)) - f n_X h(E_X) - 6 log2(21/ε_sec) - log2(2/ε_cor)
//! ```
//!
//! with `τ_n = Σ_k p_k e^-k k^n/n!` and `φ = v1/s_Z1 + γ` the phase-error
//! bound. The rate is `ℓ/N`.

use crate::error::{check_domain, Error, Result};
use crate::pdtc::{eta_to_loss_db, loss_db_to_eta, ChannelPdtc};
use crate::numeric::bisect;
use crate::rates::{entropy, observables, positivity_boundary, DecoySettings, DeviceParams, KeyRate};

/// Loss where tolerable-loss searches start.
const MIN_SEARCH_LOSS_DB: f64 = 5.0;

/// Smallest block size accepted by [`FiniteSettings`].
pub const MIN_BLOCK: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSettings {
    /// Pulses sent by Alice. Kept as a float so that near-asymptotic
    /// blocks like `1e99` are representable.
    pub n_total: f64,
    pub mu: f64,
    pub nu: f64,
    pub omega: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub q_x: f64,
    pub eps_sec: f64,
    pub eps_cor: f64,
}

impl Default for FiniteSettings {
    fn default() -> Self {
        Self {
            n_total: 1e12,
            mu: 0.31,
            nu: 0.165,
            omega: 2e-4,
            p_mu: 0.5,
            p_nu: 0.36,
            q_x: 0.75,
            eps_sec: 1e-10,
            eps_cor: 1e-15,
        }
    }
}

impl FiniteSettings {
    pub fn with_block(n_total: f64) -> Result<Self> {
        let fs = Self {
            n_total,
            ..Self::default()
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        check_domain("n_total", self.n_total, self.n_total >= MIN_BLOCK, "[1e6, inf)")?;
        if !(self.omega >= 0.0 && self.omega < self.nu && self.nu < self.mu && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "intensities must satisfy mu > nu > omega >= 0 (got {}, {}, {})",
                self.mu, self.nu, self.omega
            )));
        }
        let open = |x: f64| x > 0.0 && x < 1.0;
        check_domain("p_mu", self.p_mu, open(self.p_mu), "(0, 1)")?;
        check_domain("p_nu", self.p_nu, open(self.p_nu), "(0, 1)")?;
        check_domain("q_x", self.q_x, open(self.q_x), "(0, 1)")?;
        check_domain("eps_sec", self.eps_sec, open(self.eps_sec), "(0, 1)")?;
        check_domain("eps_cor", self.eps_cor, open(self.eps_cor), "(0, 1)")?;
        if self.p_mu + self.p_nu >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "p_mu + p_nu = {} leaves no probability for the vacuum decoy",
                self.p_mu + self.p_nu
            )));
        }
        Ok(())
    }

    pub fn p_omega(&self) -> f64 {
        1.0 - self.p_mu - self.p_nu
    }

    /// The intensities as asymptotic decoy settings.
    pub fn decoy(&self) -> DecoySettings {
        DecoySettings {
            mu: self.mu,
            nu: self.nu,
            omega: self.omega,
        }
    }

    fn intensities(&self) -> [(f64, f64); 3] {
        [(self.mu, self.p_mu), (self.nu, self.p_nu), (self.omega, self.p_omega())]
    }

    fn tau(&self, n: i32) -> f64 {
        let factorial = (1..=n).product::<i32>() as f64;
        self.intensities()
            .iter()
            .map(|&(k, p)| p * (-k).exp() * k.powi(n) / factorial)
            .sum()
    }
}

/// Intermediate quantities of the finite-key length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteKey {
    pub n_x: f64,
    pub s_x0: f64,
    pub s_x1: f64,
    pub s_z1: f64,
    pub v_z1: f64,
    pub phase_error: f64,
    pub qber_x: f64,
    /// Secret key length in bits (may be negative).
    pub length: f64,
}

/// Finite-key length for a block of `n_block` pulses at transmittance `eta`.
/// `asymptotic` drops every statistical correction (`δ = γ = 0` and the
/// ε terms); the length then scales exactly with the block.
pub fn finite_key(
    eta: f64,
    n_block: f64,
    fs: &FiniteSettings,
    dev: &DeviceParams,
    asymptotic: bool,
) -> Result<FiniteKey> {
    check_domain("eta", eta, (0.0..=1.0).contains(&eta), "[0, 1]")?;
    let [(m1, _), (m2, _), (m3, _)] = fs.intensities();
    let obs = fs.intensities().map(|(k, _)| observables(eta, k, dev));
    let counts = |basis: f64| {
        let n = fs
            .intensities()
            .iter()
            .zip(&obs)
            .map(|(&(_, p), o)| n_block * basis * p * o.gain)
            .collect::<Vec<_>>();
        let m = fs
            .intensities()
            .iter()
            .zip(&obs)
            .map(|(&(_, p), o)| n_block * basis * p * o.error_gain())
            .collect::<Vec<_>>();
        (n, m)
    };
    let ln_sec = (21.0 / fs.eps_sec).ln();
    let widen = |c: &[f64]| -> ([f64; 3], [f64; 3]) {
        let delta = if asymptotic {
            0.0
        } else {
            (c.iter().sum::<f64>() / 2.0 * ln_sec).sqrt()
        };
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for (j, &(k, p)) in fs.intensities().iter().enumerate() {
            lo[j] = k.exp() / p * (c[j] - delta);
            hi[j] = k.exp() / p * (c[j] + delta);
        }
        (lo, hi)
    };
    let (tau0, tau1) = (fs.tau(0), fs.tau(1));
    let bounds = |c: &[f64]| {
        let (lo, hi) = widen(c);
        let s0 = tau0 / (m2 - m3) * (m2 * lo[2] - m3 * hi[1]);
        let s1 = tau1 * m1 / (m1 * (m2 - m3) - m2 * m2 + m3 * m3)
            * (lo[1] - hi[2] - (m2 * m2 - m3 * m3) / (m1 * m1) * (hi[0] - s0 / tau0));
        (s0, s1)
    };

    let (n_x, m_x) = counts(fs.q_x * fs.q_x);
    let (n_z, m_z) = counts((1.0 - fs.q_x).powi(2));
    let (s_x0, s_x1) = bounds(&n_x);
    let (_, s_z1) = bounds(&n_z);
    let (m_lo, m_hi) = widen(&m_z);
    let v_z1 = tau1 / (m2 - m3) * (m_hi[1] - m_lo[2]);

    if !(s_x1 > 0.0 && s_z1 > 0.0) {
        return Err(Error::InsufficientStatistics(format!(
            "single-photon count bounds are not positive (s_X1 = {s_x1:e}, s_Z1 = {s_z1:e})"
        )));
    }
    let ratio = v_z1 / s_z1;
    let gamma = if asymptotic {
        0.0
    } else {
        if !(ratio > 0.0 && ratio < 0.5) {
            return Err(Error::InsufficientStatistics(format!(
                "single-photon error ratio {ratio:e} is outside (0, 1/2)"
            )));
        }
        let (c, d, b) = (s_z1, s_x1, ratio);
        let arg = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2)
            * ((c + d) / (c * d * (1.0 - b) * b) * 21f64.powi(2) / fs.eps_sec.powi(2)).log2();
        // the argument drops below zero once both counts are astronomically large
        arg.max(0.0).sqrt()
    };
    let phase_error = ratio + gamma;
    if phase_error >= 0.5 {
        return Err(Error::InsufficientStatistics(format!(
            "phase-error bound {phase_error:e} reaches 1/2"
        )));
    }
    let n_x_total: f64 = n_x.iter().sum();
    let qber_x = m_x.iter().sum::<f64>() / n_x_total;
    let corrections = if asymptotic {
        0.0
    } else {
        6.0 * (21.0 / fs.eps_sec).log2() + (2.0 / fs.eps_cor).log2()
    };
    let length = s_x0 + s_x1 * (1.0 - entropy(phase_error))
        - dev.f * n_x_total * entropy(qber_x)
        - corrections;
    Ok(FiniteKey {
        n_x: n_x_total,
        s_x0,
        s_x1,
        s_z1,
        v_z1,
        phase_error,
        qber_x,
        length,
    })
}

fn rate_for_block(eta: f64, n_block: f64, fs: &FiniteSettings, dev: &DeviceParams, asymptotic: bool) -> Result<f64> {
    match finite_key(eta, n_block, fs, dev, asymptotic) {
        Ok(key) => Ok((key.length / n_block).max(0.0)),
        Err(Error::InsufficientStatistics(msg)) => {
            log::debug!("finite-size rate at eta = {eta:e}, N = {n_block:e} is zero: {msg}");
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

/// Secure bits per sent pulse for a block of `fs.n_total` pulses.
pub fn rate_finite(eta: f64, fs: &FiniteSettings, dev: &DeviceParams) -> Result<f64> {
    fs.validate()?;
    rate_for_block(eta, fs.n_total, fs, dev, false)
}

/// The same estimator with every statistical correction removed: the limit
/// of [`rate_finite`] as the block grows without bound.
pub fn rate_finite_asymptotic(eta: f64, fs: &FiniteSettings, dev: &DeviceParams) -> Result<f64> {
    rate_for_block(eta, 1.0, fs, dev, true)
}

/// Pass fraction times the finite-size rate at the post-selected mean, run on
/// the `floor(N·F)` pulses that survive selection.
pub fn rate_finite_simplified(
    ch: &ChannelPdtc,
    eta_t: f64,
    fs: &FiniteSettings,
    dev: &DeviceParams,
) -> Result<f64> {
    fs.validate()?;
    check_domain("eta_T", eta_t, (0.0..1.0).contains(&eta_t), "[0, 1)")?;
    let pass = ch.pass_fraction(eta_t)?;
    let mean = match ch.truncated_mean(eta_t) {
        Ok(mean) => mean,
        Err(Error::DegenerateSelection { .. }) => return Ok(0.0),
        Err(e) => Err(e)?,
    };
    let block = (fs.n_total * pass).floor();
    if block < 1.0 {
        return Ok(0.0);
    }
    Ok(pass * rate_for_block(mean, block, fs, dev, false)?)
}

/// Critical transmittance of the statistics-free limit of the estimator.
pub fn eta_critical_finite_asymptotic(fs: &FiniteSettings, dev: &DeviceParams) -> Result<f64> {
    let (last_zero, _) = positivity_boundary(|eta| rate_finite_asymptotic(eta, fs, dev).unwrap_or(0.0))?;
    Ok(last_zero)
}

/// [`rate_finite`] at fixed settings, as a [`KeyRate`].
#[derive(Debug, Clone, Copy)]
pub struct FiniteRate {
    pub fs: FiniteSettings,
    pub dev: DeviceParams,
}

impl KeyRate for FiniteRate {
    fn rate(&self, eta: f64) -> f64 {
        rate_finite(eta, &self.fs, &self.dev).unwrap_or(0.0)
    }
}

/// Largest loss in dB at which `rate_at_loss` still reaches `target`.
///
/// `rate_at_loss` must decrease with loss; the search scans `[lo_db, hi_db]`
/// in 0.5 dB steps and bisects the first crossing.
pub fn max_tolerable_loss<F: Fn(f64) -> f64>(rate_at_loss: F, target: f64, lo_db: f64, hi_db: f64) -> Result<f64> {
    let g = |l: f64| rate_at_loss(l) - target;
    if g(lo_db) < 0.0 {
        return Err(Error::NoBracket { lo: lo_db, hi: hi_db });
    }
    let mut prev = lo_db;
    let mut l = lo_db;
    while l < hi_db {
        l = (l + 0.5).min(hi_db);
        if g(l) < 0.0 {
            return bisect(g, prev, l, 1e-9);
        }
        prev = l;
    }
    Err(Error::NoBracket { lo: lo_db, hi: hi_db })
}

/// Extra tolerable loss (dB) at rate `target` gained by selecting with
/// `eta_t`, compared with no selection, at finite block size.
pub fn finite_gain_db(sigma: f64, eta_t: f64, target: f64, fs: &FiniteSettings, dev: &DeviceParams) -> Result<f64> {
    let hi = eta_to_loss_db(1e-8);
    // no selection: the full block at the mean transmittance
    let plain = max_tolerable_loss(
        |loss| rate_finite(loss_db_to_eta(loss), fs, dev).unwrap_or(0.0),
        target,
        MIN_SEARCH_LOSS_DB,
        hi,
    )?;
    let selected = max_tolerable_loss(
        |loss| {
            ChannelPdtc::from_loss_db(loss, sigma)
                .and_then(|ch| rate_finite_simplified(&ch, eta_t, fs, dev))
                .unwrap_or(0.0)
        },
        target,
        MIN_SEARCH_LOSS_DB,
        hi,
    )?;
    Ok(selected - plain)
}
