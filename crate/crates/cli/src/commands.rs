use std::fmt::Write as _;

use rayon::prelude::*;

use prts::finite::{eta_critical_finite_asymptotic, rate_finite, rate_finite_simplified, FiniteSettings};
use prts::montecarlo::{self, worker_seed, ScanPoint, SelectionSummary, StreamConfig, StreamProtocol};
use prts::rates::{eta_critical_decoy, eta_critical_single_photon, positivity_boundary};
use prts::{
    rate_pulsewise, rate_ratewise, rate_simplified, ChannelPdtc, DecoyRate, KeyRate, ModelName, SinglePhotonRate,
};

use crate::config::{Axis, Channel, Protocol, RunConfig, Threshold};
use crate::error::CliError;

pub const CSV_HEADER: &str = "loss_db,eta0,sigma,model,eta_T,pass_fraction,mean_eta,rate";

/// Floats in every output: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Static-channel rate of the configured protocol (asymptotic ones only).
pub fn key_rate(cfg: &RunConfig) -> Box<dyn KeyRate> {
    match cfg.protocol {
        Protocol::SinglePhoton => Box::new(SinglePhotonRate::new(cfg.device)),
        Protocol::Decoy => Box::new(DecoyRate::new(cfg.device, cfg.decoy)),
        Protocol::DecoyFinite => Box::new(DecoyRate::new(cfg.device, cfg.finite.decoy())),
    }
}

/// The pre-fixed threshold: the critical transmittance of the protocol's
/// asymptotic rate, which depends on the devices only.
pub fn auto_threshold(cfg: &RunConfig) -> Result<f64, CliError> {
    match cfg.protocol {
        Protocol::SinglePhoton => Ok(eta_critical_single_photon(&cfg.device)?),
        Protocol::Decoy => Ok(eta_critical_decoy(&cfg.device, &cfg.decoy)?.numeric),
        Protocol::DecoyFinite => Ok(eta_critical_decoy(&cfg.device, &cfg.finite.decoy())?.numeric),
    }
}

pub fn resolve_threshold(cfg: &RunConfig) -> Result<f64, CliError> {
    match cfg.threshold {
        Threshold::Auto => auto_threshold(cfg),
        Threshold::Value(t) => Ok(t),
    }
}

/// `threshold` subcommand: critical transmittances as `key = value` lines.
pub fn threshold_report(cfg: &RunConfig) -> Result<String, CliError> {
    let mut out = String::new();
    let dev = &cfg.device;
    let _ = writeln!(out, "protocol = {}", cfg.protocol);
    let _ = writeln!(out, "noise_scale = {}", fmt_f64(dev.noise_scale()));
    match cfg.protocol {
        Protocol::SinglePhoton => {
            let analytic = eta_critical_single_photon(dev)?;
            let (numeric, _) = positivity_boundary(|eta| SinglePhotonRate::new(*dev).rate(eta))?;
            let _ = writeln!(out, "eta_critical_analytic = {}", fmt_f64(analytic));
            let _ = writeln!(out, "eta_critical_numeric = {}", fmt_f64(numeric));
        }
        Protocol::Decoy | Protocol::DecoyFinite => {
            let dec = if cfg.protocol == Protocol::Decoy {
                cfg.decoy
            } else {
                cfg.finite.decoy()
            };
            let crit = eta_critical_decoy(dev, &dec)?;
            let _ = writeln!(out, "eta_critical_analytic = {}", crit.analytic.map_or("nan".into(), fmt_f64));
            let _ = writeln!(out, "eta_critical_numeric = {}", fmt_f64(crit.numeric));
            let _ = writeln!(out, "x_critical = {}", crit.x_critical.map_or("nan".into(), fmt_f64));
            if cfg.protocol == Protocol::DecoyFinite {
                let c = eta_critical_finite_asymptotic(&cfg.finite, dev)?;
                let _ = writeln!(out, "eta_critical_finite_limit = {}", fmt_f64(c));
            }
        }
    }
    let _ = writeln!(out, "threshold = {}", fmt_f64(resolve_threshold(cfg)?));
    Ok(out)
}

/// One row of a rate curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub loss_db: f64,
    pub eta0: f64,
    pub sigma: f64,
    pub model: ModelName,
    pub eta_t: f64,
    pub pass_fraction: f64,
    pub mean_eta: f64,
    pub rate: f64,
}

impl CurveRow {
    pub fn to_csv(&self, pulse_rate_hz: Option<f64>) -> String {
        let mut line = [
            fmt_f64(self.loss_db),
            fmt_f64(self.eta0),
            fmt_f64(self.sigma),
            self.model.to_string(),
            fmt_f64(self.eta_t),
            fmt_f64(self.pass_fraction),
            fmt_f64(self.mean_eta),
            fmt_f64(self.rate),
        ]
        .join(",");
        if let Some(hz) = pulse_rate_hz {
            line.push(',');
            line.push_str(&fmt_f64(self.rate * hz));
        }
        line
    }
}

/// Evaluate one model at one operating point. `fs` is used by the
/// finite-size protocol only.
pub fn evaluate(
    cfg: &RunConfig,
    rate: &dyn KeyRate,
    ch: &ChannelPdtc,
    model: ModelName,
    eta_t: f64,
    fs: &FiniteSettings,
) -> Result<CurveRow, CliError> {
    let (eta_t, pass_fraction, mean_eta) = if model == ModelName::Static {
        (0.0, 1.0, ch.eta0())
    } else {
        let pass = ch.pass_fraction(eta_t)?;
        (eta_t, pass, ch.truncated_mean(eta_t).unwrap_or(f64::NAN))
    };
    let value = match (cfg.protocol, model) {
        (Protocol::DecoyFinite, ModelName::Static) => rate_finite(ch.eta0(), fs, &cfg.device)?,
        (Protocol::DecoyFinite, ModelName::Simplified) => rate_finite_simplified(ch, eta_t, fs, &cfg.device)?,
        (Protocol::DecoyFinite, m) => {
            return Err(CliError::invalid(format!("model `{m}` is not available for protocol decoy-finite")))
        }
        (_, ModelName::Static) => rate.rate(ch.eta0()),
        (_, ModelName::Simplified) => rate_simplified(rate, ch, eta_t)?,
        (_, ModelName::RateWise) => rate_ratewise(rate, ch, eta_t)?,
        (Protocol::Decoy, ModelName::PulseWise) => rate_pulsewise(ch, eta_t, &cfg.device, &cfg.decoy)?,
        (_, ModelName::PulseWise) => {
            return Err(CliError::invalid("model `pulsewise` needs protocol decoy"));
        }
    };
    Ok(CurveRow {
        loss_db: ch.loss_db(),
        eta0: ch.eta0(),
        sigma: ch.sigma(),
        model,
        eta_t,
        pass_fraction,
        mean_eta,
        rate: value,
    })
}

/// Rows of the `rate-curve` subcommand, in scan order then model order.
pub fn rate_curve(cfg: &RunConfig) -> Result<Vec<CurveRow>, CliError> {
    let rate = key_rate(cfg);
    let threshold = resolve_threshold(cfg)?;
    let points = cfg.scan.map(|s| (s.axis, s.points()));
    let jobs: Vec<(ChannelPdtc, f64, FiniteSettings)> = match points {
        None => vec![(cfg.channel.pdtc()?, threshold, cfg.finite)],
        Some((axis, values)) => values
            .into_iter()
            .map(|v| {
                let sigma = cfg.channel.sigma();
                Ok(match axis {
                    Axis::LossDb => (ChannelPdtc::from_loss_db(v, sigma)?, threshold, cfg.finite),
                    Axis::EtaT => (cfg.channel.pdtc()?, v, cfg.finite),
                    Axis::NTotal => (
                        cfg.channel.pdtc()?,
                        threshold,
                        FiniteSettings {
                            n_total: v,
                            ..cfg.finite
                        },
                    ),
                })
            })
            .collect::<Result<_, CliError>>()?,
    };
    // critical points are cached lazily; compute once before fanning out
    rate.critical();
    let rows: Vec<Vec<CurveRow>> = jobs
        .par_iter()
        .map(|(ch, eta_t, fs)| {
            cfg.models
                .iter()
                .map(|&m| evaluate(cfg, rate.as_ref(), ch, m, *eta_t, fs))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn curve_csv(rows: &[CurveRow], pulse_rate_hz: Option<f64>) -> String {
    let mut out = String::from(CSV_HEADER);
    if pulse_rate_hz.is_some() {
        out.push_str(",rate_bps");
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv(pulse_rate_hz));
        out.push('\n');
    }
    out
}

/// Outcome of the `stream` subcommand.
#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub summary: SelectionSummary,
    pub analytic_rate: f64,
    pub scan: Option<Vec<(ScanPoint, f64)>>,
    pub text: String,
}

fn stream_protocol(cfg: &RunConfig) -> Result<StreamProtocol, CliError> {
    match cfg.protocol {
        Protocol::SinglePhoton => Ok(StreamProtocol::SinglePhoton),
        Protocol::Decoy => Ok(StreamProtocol::Decoy(cfg.decoy)),
        Protocol::DecoyFinite => Err(CliError::invalid("stream simulation needs protocol single-photon or decoy")),
    }
}

pub fn stream(cfg: &RunConfig) -> Result<StreamOutput, CliError> {
    let protocol = stream_protocol(cfg)?;
    let ch = cfg.channel.pdtc()?;
    let eta_t = resolve_threshold(cfg)?;
    let st = cfg.stream;
    let workers = st.workers.min(st.n_windows);
    let config_for = |w: u64| {
        let share = st.n_windows / workers + u64::from(w < st.n_windows % workers);
        StreamConfig {
            n_windows: share,
            window_pulses: st.window_pulses,
            seed: if workers == 1 { cfg.seed } else { worker_seed(cfg.seed, w) },
            mode: st.mode,
            batches: (50 / workers as usize).max(2),
        }
    };
    let parts = (0..workers)
        .into_par_iter()
        .map(|w| montecarlo::run_stream(&ch, eta_t, &cfg.device, protocol, &config_for(w)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut parts = parts.into_iter();
    let mut summary = parts.next().expect("at least one worker");
    for p in parts {
        summary.merge(&p)?;
    }

    let rate = key_rate(cfg);
    let analytic_rate = rate_simplified(rate.as_ref(), &ch, eta_t)?;
    let scan = match cfg.scan {
        Some(sc) if sc.axis == Axis::EtaT => {
            let grid = sc.points();
            let scfg = StreamConfig {
                n_windows: st.n_windows,
                window_pulses: st.window_pulses,
                seed: cfg.seed,
                mode: st.mode,
                batches: 50,
            };
            let points = montecarlo::scan_thresholds(&ch, &cfg.device, protocol, &grid, &scfg)?;
            let analytic = points
                .iter()
                .map(|p| rate_simplified(rate.as_ref(), &ch, p.eta_t))
                .collect::<Result<Vec<_>, _>>()?;
            Some(points.into_iter().zip(analytic).collect::<Vec<_>>())
        }
        Some(_) => return Err(CliError::invalid("stream scans support axis eta_t only")),
        None => None,
    };

    let mut text = String::new();
    let kv = |text: &mut String, k: &str, v: String| {
        let _ = writeln!(text, "{k} = {v}");
    };
    kv(&mut text, "protocol", cfg.protocol.to_string());
    kv(&mut text, "seed", cfg.seed.to_string());
    kv(&mut text, "workers", workers.to_string());
    kv(&mut text, "eta_t", fmt_f64(eta_t));
    kv(&mut text, "window_pulses", st.window_pulses.to_string());
    kv(&mut text, "windows_total", summary.windows_total().to_string());
    kv(&mut text, "windows_kept", summary.windows_kept().to_string());
    kv(&mut text, "peak_buffer_windows", summary.peak_buffer_windows.to_string());
    kv(&mut text, "empirical_pass_fraction", fmt_f64(summary.empirical_pass_fraction()));
    kv(&mut text, "pass_fraction_se", fmt_f64(summary.pass_fraction_se()));
    kv(&mut text, "analytic_pass_fraction", fmt_f64(ch.pass_fraction(eta_t)?));
    kv(&mut text, "empirical_mean_eta_kept", fmt_f64(summary.empirical_mean_eta_kept()));
    kv(&mut text, "mean_eta_se", fmt_f64(summary.mean_eta_se()));
    kv(&mut text, "analytic_mean_eta", fmt_f64(ch.truncated_mean(eta_t).unwrap_or(f64::NAN)));
    let labels: &[&str] = match protocol {
        StreamProtocol::SinglePhoton => &["single_photon"],
        StreamProtocol::Decoy(_) => &["signal", "weak", "vacuum"],
    };
    for (k, label) in labels.iter().enumerate() {
        let o = summary.empirical_observables(k);
        kv(&mut text, &format!("empirical_gain_{label}"), fmt_f64(o.gain));
        kv(&mut text, &format!("empirical_qber_{label}"), fmt_f64(o.qber));
    }
    kv(&mut text, "empirical_rate", fmt_f64(summary.empirical_rate()));
    kv(&mut text, "rate_se", fmt_f64(summary.rate_se()));
    kv(&mut text, "analytic_rate_simplified", fmt_f64(analytic_rate));
    if let Some(points) = &scan {
        let best = points
            .iter()
            .fold(&points[0], |best, p| if p.0.rate > best.0.rate { p } else { best });
        kv(&mut text, "scan_argmax_eta_t", fmt_f64(best.0.eta_t));
    }
    Ok(StreamOutput {
        summary,
        analytic_rate,
        scan,
        text,
    })
}

pub fn scan_csv(points: &[(ScanPoint, f64)]) -> String {
    let mut out = String::from("eta_T,pass_fraction,mean_eta,rate,rate_se,analytic_rate\n");
    for (p, analytic) in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(p.eta_t),
            fmt_f64(p.pass_fraction),
            fmt_f64(p.mean_eta),
            fmt_f64(p.rate),
            fmt_f64(p.rate_se),
            fmt_f64(*analytic)
        );
    }
    out
}

/// Channel of a CSV row, rebuilt from its `eta0` and `sigma` fields.
pub fn row_channel(row: &CurveRow) -> Result<ChannelPdtc, CliError> {
    Channel::Eta {
        eta0: row.eta0,
        sigma: row.sigma,
    }
    .pdtc()
}
