//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Keys before the first header are global.
//!
//! ```text
//! protocol = decoy            # single-photon | decoy | decoy-finite
//! model = static,simplified   # any of static, simplified, ratewise, pulsewise
//! seed = 1
//!
//! [device]
//! y0 = 1e-5
//! eta_d = 0.25
//! e_d = 0.03
//! f = 1.22
//!
//! [decoy]
//! mu = 0.3
//! nu = 0.05
//! omega = 0
//!
//! [finite]
//! n_total = 1e12
//! mu = 0.31
//! nu = 0.165
//! omega = 2e-4
//! p_mu = 0.5
//! p_nu = 0.36
//! q_x = 0.75
//! eps_sec = 1e-10
//! eps_cor = 1e-15
//!
//! [channel]
//! loss_db = 29                # or eta0 = ...
//! sigma = 0.6
//!
//! [threshold]
//! value = auto                # or a transmittance
//!
//! [scan]
//! axis = loss_db              # loss_db | eta_t | n_total
//! start = 20
//! stop = 40
//! steps = 81
//! scale = linear              # linear | log
//!
//! [stream]
//! n_windows = 1000000
//! window_pulses = 1000
//! mode = expectation          # expectation | event
//! workers = 1
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use prts::finite::FiniteSettings;
use prts::montecarlo::{FidelityMode, TransmittanceStream};
use prts::{loss_db_to_eta, ChannelPdtc, DecoySettings, DeviceParams, ModelName};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    SinglePhoton,
    Decoy,
    DecoyFinite,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::SinglePhoton => "single-photon",
            Protocol::Decoy => "decoy",
            Protocol::DecoyFinite => "decoy-finite",
        }
    }
}

impl FromStr for Protocol {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "single-photon" => Ok(Protocol::SinglePhoton),
            "decoy" => Ok(Protocol::Decoy),
            "decoy-finite" => Ok(Protocol::DecoyFinite),
            other => Err(CliError::invalid(format!("unknown protocol `{other}`"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The channel, given either by mean transmittance or by loss in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Channel {
    Loss { loss_db: f64, sigma: f64 },
    Eta { eta0: f64, sigma: f64 },
}

impl Channel {
    pub fn sigma(&self) -> f64 {
        match *self {
            Channel::Loss { sigma, .. } | Channel::Eta { sigma, .. } => sigma,
        }
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            Channel::Loss { loss_db, .. } => loss_db_to_eta(loss_db),
            Channel::Eta { eta0, .. } => eta0,
        }
    }

    pub fn pdtc(&self) -> Result<ChannelPdtc, CliError> {
        Ok(ChannelPdtc::new(self.eta0(), self.sigma())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    LossDb,
    EtaT,
    NTotal,
}

impl Axis {
    fn as_str(&self) -> &'static str {
        match self {
            Axis::LossDb => "loss_db",
            Axis::EtaT => "eta_t",
            Axis::NTotal => "n_total",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSpec {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub scale: Scale,
}

impl ScanSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        let n = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                let t = k as f64 / n;
                match self.scale {
                    Scale::Linear => self.start + (self.stop - self.start) * t,
                    Scale::Log => (self.start.ln() + (self.stop.ln() - self.start.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSpec {
    pub n_windows: u64,
    pub window_pulses: u64,
    pub mode: FidelityMode,
    pub workers: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            n_windows: 1_000_000,
            window_pulses: TransmittanceStream::DEFAULT_WINDOW_PULSES,
            mode: FidelityMode::Expectation,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub models: Vec<ModelName>,
    pub seed: u64,
    pub device: DeviceParams,
    pub decoy: DecoySettings,
    pub finite: FiniteSettings,
    pub channel: Channel,
    pub threshold: Threshold,
    pub scan: Option<ScanSpec>,
    pub stream: StreamSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Decoy,
            models: vec![ModelName::Simplified],
            seed: 1,
            device: DeviceParams::default(),
            decoy: DecoySettings::default(),
            finite: FiniteSettings::default(),
            channel: Channel::Loss {
                loss_db: 29.0,
                sigma: 0.6,
            },
            threshold: Threshold::Auto,
            scan: None,
            stream: StreamSpec::default(),
        }
    }
}

fn num(section: &str, key: &str, value: &str) -> Result<f64, CliError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::invalid(format!("[{section}] {key}: `{value}` is not a number")))
}

fn count(section: &str, key: &str, value: &str) -> Result<u64, CliError> {
    // accept 1e6 style counts
    let v = num(section, key, value)?;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(CliError::invalid(format!("[{section}] {key}: `{value}` is not a count")));
    }
    Ok(v as u64)
}

fn parse_models(value: &str) -> Result<Vec<ModelName>, CliError> {
    let models = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<ModelName>().map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    if models.is_empty() {
        return Err(CliError::invalid("model list is empty"));
    }
    Ok(models)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                if !matches!(
                    current.as_str(),
                    "device" | "decoy" | "finite" | "channel" | "threshold" | "scan" | "stream"
                ) {
                    return Err(CliError::invalid(format!("line {}: unknown section [{current}]", lineno + 1)));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::invalid(format!("line {}: expected key = value", lineno + 1)))?;
            let entry = sections.entry(current.clone()).or_default();
            if entry.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::invalid(format!("line {}: duplicate key `{}`", lineno + 1, k.trim())));
            }
        }

        let mut cfg = RunConfig::default();
        let mut channel_loss = None;
        let mut channel_eta = None;
        let mut sigma = cfg.channel.sigma();
        let mut scan: BTreeMap<String, String> = BTreeMap::new();
        for (section, entries) in &sections {
            for (key, value) in entries {
                let s = section.as_str();
                let unknown = || CliError::invalid(format!("unknown key `{key}` in [{s}]"));
                match s {
                    "" => match key.as_str() {
                        "protocol" => cfg.protocol = value.parse()?,
                        "model" | "models" => cfg.models = parse_models(value)?,
                        "seed" => cfg.seed = count(s, key, value)?,
                        _ => return Err(unknown()),
                    },
                    "device" => {
                        let v = num(s, key, value)?;
                        match key.as_str() {
                            "y0" => cfg.device.y0 = v,
                            "eta_d" => cfg.device.eta_d = v,
                            "e_d" => cfg.device.e_d = v,
                            "f" => cfg.device.f = v,
                            "q" => cfg.device.q = v,
                            _ => return Err(unknown()),
                        }
                    }
                    "decoy" => {
                        let v = num(s, key, value)?;
                        match key.as_str() {
                            "mu" => cfg.decoy.mu = v,
                            "nu" => cfg.decoy.nu = v,
                            "omega" => cfg.decoy.omega = v,
                            _ => return Err(unknown()),
                        }
                    }
                    "finite" => {
                        let v = num(s, key, value)?;
                        let fs = &mut cfg.finite;
                        match key.as_str() {
                            "n_total" => fs.n_total = v,
                            "mu" => fs.mu = v,
                            "nu" => fs.nu = v,
                            "omega" => fs.omega = v,
                            "p_mu" => fs.p_mu = v,
                            "p_nu" => fs.p_nu = v,
                            "q_x" => fs.q_x = v,
                            "eps_sec" => fs.eps_sec = v,
                            "eps_cor" => fs.eps_cor = v,
                            _ => return Err(unknown()),
                        }
                    }
                    "channel" => {
                        let v = num(s, key, value)?;
                        match key.as_str() {
                            "loss_db" => channel_loss = Some(v),
                            "eta0" => channel_eta = Some(v),
                            "sigma" => sigma = v,
                            _ => return Err(unknown()),
                        }
                    }
                    "threshold" => match key.as_str() {
                        "value" => {
                            cfg.threshold = if value == "auto" {
                                Threshold::Auto
                            } else {
                                Threshold::Value(num(s, key, value)?)
                            }
                        }
                        _ => return Err(unknown()),
                    },
                    "scan" => {
                        if !matches!(key.as_str(), "axis" | "start" | "stop" | "steps" | "scale") {
                            return Err(unknown());
                        }
                        scan.insert(key.clone(), value.clone());
                    }
                    "stream" => match key.as_str() {
                        "n_windows" => cfg.stream.n_windows = count(s, key, value)?,
                        "window_pulses" => cfg.stream.window_pulses = count(s, key, value)?,
                        "workers" => cfg.stream.workers = count(s, key, value)?,
                        "mode" => {
                            cfg.stream.mode = match value.as_str() {
                                "expectation" => FidelityMode::Expectation,
                                "event" => FidelityMode::Event,
                                other => return Err(CliError::invalid(format!("unknown stream mode `{other}`"))),
                            }
                        }
                        _ => return Err(unknown()),
                    },
                    _ => unreachable!("sections are checked while reading"),
                }
            }
        }

        cfg.channel = match (channel_loss, channel_eta) {
            (Some(_), Some(_)) => {
                return Err(CliError::invalid("[channel] give either loss_db or eta0, not both"));
            }
            (Some(loss_db), None) => Channel::Loss { loss_db, sigma },
            (None, Some(eta0)) => Channel::Eta { eta0, sigma },
            (None, None) => match cfg.channel {
                Channel::Loss { loss_db, .. } => Channel::Loss { loss_db, sigma },
                Channel::Eta { eta0, .. } => Channel::Eta { eta0, sigma },
            },
        };

        if !scan.is_empty() {
            let get = |k: &str| {
                scan.get(k)
                    .ok_or_else(|| CliError::invalid(format!("[scan] missing `{k}`")))
            };
            let axis = match get("axis")?.as_str() {
                "loss_db" => Axis::LossDb,
                "eta_t" => Axis::EtaT,
                "n_total" => Axis::NTotal,
                other => return Err(CliError::invalid(format!("unknown scan axis `{other}`"))),
            };
            let scale = match scan.get("scale").map(String::as_str).unwrap_or("linear") {
                "linear" => Scale::Linear,
                "log" => Scale::Log,
                other => return Err(CliError::invalid(format!("unknown scan scale `{other}`"))),
            };
            cfg.scan = Some(ScanSpec {
                axis,
                start: num("scan", "start", get("start")?)?,
                stop: num("scan", "stop", get("stop")?)?,
                steps: count("scan", "steps", get("steps")?)? as usize,
                scale,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every invariant; messages name the violated one.
    pub fn validate(&self) -> Result<(), CliError> {
        self.device.validate()?;
        let e_crit = prts::rates::e_critical();
        if self.device.e_d >= e_crit {
            return Err(CliError::invalid(format!(
                "misalignment exceeds e_critical: e_d = {} >= {e_crit:.6}, no key can be distilled",
                self.device.e_d
            )));
        }
        match self.protocol {
            Protocol::SinglePhoton => {
                prts::rates::eta_critical_single_photon(&self.device)?;
            }
            Protocol::Decoy => self.decoy.validate()?,
            Protocol::DecoyFinite => self.finite.validate()?,
        }
        if let Channel::Loss { loss_db, .. } = self.channel {
            if !(loss_db >= 0.0) {
                return Err(CliError::invalid(format!("loss_db = {loss_db} must be >= 0")));
            }
        }
        self.channel.pdtc()?;
        if let Threshold::Value(t) = self.threshold {
            if !(0.0..1.0).contains(&t) {
                return Err(CliError::invalid(format!("threshold {t} must lie in [0, 1)")));
            }
        }
        for m in &self.models {
            let ok = match self.protocol {
                Protocol::SinglePhoton => *m != ModelName::PulseWise,
                Protocol::Decoy => true,
                Protocol::DecoyFinite => matches!(m, ModelName::Static | ModelName::Simplified),
            };
            if !ok {
                return Err(CliError::invalid(format!(
                    "model `{m}` is not available for protocol `{}`",
                    self.protocol
                )));
            }
        }
        if let Some(scan) = &self.scan {
            if scan.steps < 1 {
                return Err(CliError::invalid("scan steps must be >= 1"));
            }
            if scan.scale == Scale::Log && !(scan.start > 0.0 && scan.stop > 0.0) {
                return Err(CliError::invalid("log scan bounds must be positive"));
            }
            match scan.axis {
                Axis::LossDb if scan.start.min(scan.stop) < 0.0 => {
                    return Err(CliError::invalid("loss_db must be >= 0"));
                }
                Axis::EtaT if !(scan.start >= 0.0 && scan.stop < 1.0) => {
                    return Err(CliError::invalid("scanned thresholds must lie in [0, 1)"));
                }
                Axis::NTotal if self.protocol != Protocol::DecoyFinite => {
                    return Err(CliError::invalid("an n_total scan needs protocol decoy-finite"));
                }
                Axis::NTotal if scan.start.min(scan.stop) < prts::finite::MIN_BLOCK => {
                    return Err(CliError::invalid("scanned n_total must be >= 1e6"));
                }
                _ => {}
            }
        }
        if self.stream.n_windows == 0 || self.stream.window_pulses == 0 || self.stream.workers == 0 {
            return Err(CliError::invalid("stream n_windows, window_pulses and workers must be >= 1"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let models: Vec<&str> = self.models.iter().map(ModelName::as_str).collect();
        let _ = writeln!(s, "protocol = {}", self.protocol);
        let _ = writeln!(s, "model = {}", models.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        let d = &self.device;
        let _ = writeln!(s, "\n[device]\ny0 = {:e}\neta_d = {:e}\ne_d = {:e}\nf = {:e}\nq = {:e}", d.y0, d.eta_d, d.e_d, d.f, d.q);
        let c = &self.decoy;
        let _ = writeln!(s, "\n[decoy]\nmu = {:e}\nnu = {:e}\nomega = {:e}", c.mu, c.nu, c.omega);
        let fs = &self.finite;
        let _ = writeln!(
            s,
            "\n[finite]\nn_total = {:e}\nmu = {:e}\nnu = {:e}\nomega = {:e}\np_mu = {:e}\np_nu = {:e}\nq_x = {:e}\neps_sec = {:e}\neps_cor = {:e}",
            fs.n_total, fs.mu, fs.nu, fs.omega, fs.p_mu, fs.p_nu, fs.q_x, fs.eps_sec, fs.eps_cor
        );
        let _ = match self.channel {
            Channel::Loss { loss_db, sigma } => writeln!(s, "\n[channel]\nloss_db = {loss_db:e}\nsigma = {sigma:e}"),
            Channel::Eta { eta0, sigma } => writeln!(s, "\n[channel]\neta0 = {eta0:e}\nsigma = {sigma:e}"),
        };
        let _ = match self.threshold {
            Threshold::Auto => writeln!(s, "\n[threshold]\nvalue = auto"),
            Threshold::Value(t) => writeln!(s, "\n[threshold]\nvalue = {t:e}"),
        };
        if let Some(sc) = &self.scan {
            let scale = match sc.scale {
                Scale::Linear => "linear",
                Scale::Log => "log",
            };
            let _ = writeln!(
                s,
                "\n[scan]\naxis = {}\nstart = {:e}\nstop = {:e}\nsteps = {}\nscale = {scale}",
                sc.axis.as_str(),
                sc.start,
                sc.stop,
                sc.steps
            );
        }
        let st = &self.stream;
        let mode = match st.mode {
            FidelityMode::Expectation => "expectation",
            FidelityMode::Event => "event",
        };
        let _ = writeln!(
            s,
            "\n[stream]\nn_windows = {}\nwindow_pulses = {}\nmode = {mode}\nworkers = {}",
            st.n_windows, st.window_pulses, st.workers
        );
        s
    }
}
