use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prts::ModelName;
use prts_cli::commands;
use prts_cli::config::Protocol;
use prts_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "prts", version, about = "Key rates of free-space QKD with a pre-fixed transmittance threshold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the critical transmittance and the pre-fixed threshold.
    Threshold(Common),
    /// Write a CSV of rates over the configured scan.
    RateCurve(Common),
    /// Simulate real-time selection window by window.
    Stream {
        #[command(flatten)]
        common: Common,
        /// Per-threshold CSV of an `eta_t` scan.
        #[arg(long)]
        scan_out: Option<PathBuf>,
        /// Dump the raw transmittance draws, one per line.
        #[arg(long)]
        export_stream: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value with [section] headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also report rates in bits per second.
    #[arg(long)]
    pulse_rate_hz: Option<f64>,
    /// Comma-separated models: static, simplified, ratewise, pulsewise.
    #[arg(long)]
    model: Option<String>,
    /// single-photon, decoy or decoy-finite.
    #[arg(long)]
    protocol: Option<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.protocol {
            cfg.protocol = p.parse::<Protocol>()?;
        }
        if let Some(m) = &self.model {
            cfg.models = m
                .split(',')
                .map(|s| s.parse::<ModelName>().map_err(CliError::from))
                .collect::<Result<_, _>>()?;
        }
        if let Some(hz) = self.pulse_rate_hz {
            if !(hz > 0.0 && hz.is_finite()) {
                return Err(CliError::invalid(format!("pulse rate {hz} Hz must be positive")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Threshold(common) => {
            let cfg = common.load()?;
            emit(common.out.as_deref(), &commands::threshold_report(&cfg)?)
        }
        Command::RateCurve(common) => {
            let cfg = common.load()?;
            let rows = commands::rate_curve(&cfg)?;
            emit(common.out.as_deref(), &commands::curve_csv(&rows, common.pulse_rate_hz))
        }
        Command::Stream {
            common,
            scan_out,
            export_stream,
        } => {
            let cfg = common.load()?;
            let out = commands::stream(&cfg)?;
            let mut text = out.text.clone();
            if let Some(hz) = common.pulse_rate_hz {
                text.push_str(&format!(
                    "empirical_rate_bps = {}\n",
                    commands::fmt_f64(out.summary.empirical_rate() * hz)
                ));
            }
            emit(common.out.as_deref(), &text)?;
            if let (Some(path), Some(points)) = (&scan_out, &out.scan) {
                emit(Some(path), &commands::scan_csv(points))?;
            }
            if let Some(path) = &export_stream {
                log::warn!("exporting the raw stream stores every window");
                let stream = cfg.channel.pdtc()?.sample(cfg.stream.n_windows as usize, cfg.seed)?;
                stream.write_text(path).map_err(|e| CliError::io(path, e))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
