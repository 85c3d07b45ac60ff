//! Window-by-window simulation of real-time threshold selection.
//!
//! Each coherence window draws one transmittance. Windows below the threshold
//! only bump a counter; kept windows add their detection statistics to running
//! sums. Nothing but the current window is ever held, which the summary
//! records as `peak_buffer_windows`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{check_domain, Error, Result};
use crate::pdtc::ChannelPdtc;
use crate::rates::{
    entropy, gllp_rate, observables, single_photon_qber, DecoyObservables, DecoySettings, DeviceParams,
    Observables, E0,
};

/// A recorded sequence of per-window transmittances.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmittanceStream {
    samples: Vec<f64>,
    window_pulses: u64,
    seed: u64,
}

impl TransmittanceStream {
    /// Pulses per coherence window unless configured otherwise
    /// (a 10 MHz source and a 0.1 ms window).
    pub const DEFAULT_WINDOW_PULSES: u64 = 1000;

    pub fn new(samples: Vec<f64>, window_pulses: u64, seed: u64) -> Self {
        debug_assert!(samples.iter().all(|&x| x > 0.0 && x <= 1.0));
        Self {
            samples,
            window_pulses,
            seed,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn window_pulses(&self) -> u64 {
        self.window_pulses
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One transmittance per line.
    pub fn write_text(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for x in &self.samples {
            writeln!(w, "{x:.17e}")?;
        }
        w.flush()
    }
}

/// How detection statistics of a kept window are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FidelityMode {
    /// Expected gain and error gain of the window.
    #[default]
    Expectation,
    /// Binomially sampled clicks and errors over the window's pulses,
    /// `window_pulses` per intensity.
    Event,
}

/// Which protocol's statistics the stream accumulates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamProtocol {
    /// Single-photon yield and error yield.
    SinglePhoton,
    /// Gains and error gains of the signal, weak and vacuum intensities.
    Decoy(DecoySettings),
}

/// Additive accumulators of one block of windows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamSums {
    pub windows_total: u64,
    pub windows_kept: u64,
    pub eta_kept: f64,
    pub eta_sq_kept: f64,
    /// Per intensity (signal, weak, vacuum); slot 0 only for single photons.
    pub gain: [f64; 3],
    pub error_gain: [f64; 3],
}

impl StreamSums {
    fn add(&mut self, other: &StreamSums) {
        self.windows_total += other.windows_total;
        self.windows_kept += other.windows_kept;
        self.eta_kept += other.eta_kept;
        self.eta_sq_kept += other.eta_sq_kept;
        for k in 0..3 {
            self.gain[k] += other.gain[k];
            self.error_gain[k] += other.error_gain[k];
        }
    }

    fn keep(&mut self, eta: f64, stats: &WindowStats) {
        self.windows_kept += 1;
        self.eta_kept += eta;
        self.eta_sq_kept += eta * eta;
        for k in 0..3 {
            self.gain[k] += stats.gain[k];
            self.error_gain[k] += stats.error_gain[k];
        }
    }

    fn pass_fraction(&self) -> f64 {
        if self.windows_total == 0 {
            0.0
        } else {
            self.windows_kept as f64 / self.windows_total as f64
        }
    }

    /// Key rate per sent pulse implied by these sums.
    fn rate(&self, protocol: &StreamProtocol, dev: &DeviceParams) -> f64 {
        if self.windows_kept == 0 {
            return 0.0;
        }
        let kept = self.windows_kept as f64;
        let mean = |k: usize| Observables::from_error_gain(self.gain[k] / kept, self.error_gain[k] / kept);
        let per_kept = match protocol {
            StreamProtocol::SinglePhoton => {
                let o = mean(0);
                if o.qber >= 0.5 {
                    0.0
                } else {
                    (o.gain * (1.0 - 2.0 * entropy(o.qber))).max(0.0)
                }
            }
            StreamProtocol::Decoy(dec) => {
                let obs = DecoyObservables {
                    signal: mean(0),
                    weak: mean(1),
                    vacuum: mean(2),
                };
                gllp_rate(&obs, dev, dec).unwrap_or(0.0)
            }
        };
        self.pass_fraction() * per_kept
    }
}

/// Aggregate outcome of a stream run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSummary {
    pub eta_t: f64,
    pub window_pulses: u64,
    pub protocol: StreamProtocol,
    pub dev: DeviceParams,
    pub totals: StreamSums,
    /// Consecutive blocks of windows, for batch-means standard errors.
    pub batches: Vec<StreamSums>,
    /// Largest number of windows held in memory at once.
    pub peak_buffer_windows: usize,
}

impl SelectionSummary {
    pub fn windows_total(&self) -> u64 {
        self.totals.windows_total
    }

    pub fn windows_kept(&self) -> u64 {
        self.totals.windows_kept
    }

    pub fn empirical_pass_fraction(&self) -> f64 {
        self.totals.pass_fraction()
    }

    /// Binomial standard error of the pass fraction.
    pub fn pass_fraction_se(&self) -> f64 {
        let p = self.empirical_pass_fraction();
        (p * (1.0 - p) / self.windows_total() as f64).sqrt()
    }

    pub fn empirical_mean_eta_kept(&self) -> f64 {
        if self.windows_kept() == 0 {
            return f64::NAN;
        }
        self.totals.eta_kept / self.windows_kept() as f64
    }

    pub fn mean_eta_se(&self) -> f64 {
        let n = self.windows_kept() as f64;
        let mean = self.empirical_mean_eta_kept();
        let var = (self.totals.eta_sq_kept / n - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }

    /// Mean gain and QBER of intensity slot `k` over kept windows.
    pub fn empirical_observables(&self, k: usize) -> Observables {
        let kept = self.windows_kept() as f64;
        Observables::from_error_gain(self.totals.gain[k] / kept, self.totals.error_gain[k] / kept)
    }

    /// Key rate per sent pulse from the pooled statistics.
    pub fn empirical_rate(&self) -> f64 {
        self.totals.rate(&self.protocol, &self.dev)
    }

    /// Batch-means standard error of [`Self::empirical_rate`].
    pub fn rate_se(&self) -> f64 {
        batch_se(self.batches.iter().map(|b| b.rate(&self.protocol, &self.dev)))
    }

    /// Fold another run over the same configuration into this one.
    pub fn merge(&mut self, other: &SelectionSummary) -> Result<()> {
        if self.eta_t != other.eta_t
            || self.window_pulses != other.window_pulses
            || self.protocol != other.protocol
            || self.dev != other.dev
        {
            return Err(Error::InvalidParameter(
                "cannot merge summaries of different configurations".into(),
            ));
        }
        self.totals.add(&other.totals);
        self.batches.extend_from_slice(&other.batches);
        self.peak_buffer_windows = self.peak_buffer_windows.max(other.peak_buffer_windows);
        Ok(())
    }
}

fn batch_se(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let b = v.len() as f64;
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / b;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

/// Run parameters shared by [`run_stream`] and [`scan_thresholds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    pub n_windows: u64,
    pub window_pulses: u64,
    pub seed: u64,
    pub mode: FidelityMode,
    /// Number of batches for standard errors.
    pub batches: usize,
}

impl StreamConfig {
    pub fn new(n_windows: u64, seed: u64) -> Self {
        Self {
            n_windows,
            window_pulses: TransmittanceStream::DEFAULT_WINDOW_PULSES,
            seed,
            mode: FidelityMode::Expectation,
            batches: 50,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_windows == 0 {
            return Err(Error::InvalidParameter("n_windows must be >= 1".into()));
        }
        if self.window_pulses == 0 {
            return Err(Error::InvalidParameter("window_pulses must be >= 1".into()));
        }
        if self.batches == 0 {
            return Err(Error::InvalidParameter("batches must be >= 1".into()));
        }
        Ok(())
    }

    fn batch_of(&self, window: u64) -> usize {
        let b = (self.batches as u64).min(self.n_windows);
        ((window as u128 * b as u128) / self.n_windows as u128) as usize
    }

    fn batch_count(&self) -> usize {
        (self.batches as u64).min(self.n_windows) as usize
    }
}

/// Seed of worker `worker` in a run split over several workers.
pub fn worker_seed(seed: u64, worker: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ worker.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct WindowStats {
    gain: [f64; 3],
    error_gain: [f64; 3],
}

/// Produces the detection statistics of a window.
struct Detector {
    protocol: StreamProtocol,
    dev: DeviceParams,
    mode: FidelityMode,
    pulses: u64,
    rng: ChaCha8Rng,
}

impl Detector {
    fn new(protocol: StreamProtocol, dev: DeviceParams, cfg: &StreamConfig) -> Self {
        Self {
            protocol,
            dev,
            mode: cfg.mode,
            pulses: cfg.window_pulses,
            rng: ChaCha8Rng::seed_from_u64(worker_seed(cfg.seed, u64::MAX)),
        }
    }

    fn expected(&self, eta: f64) -> ([f64; 3], [f64; 3]) {
        let mut gain = [0.0; 3];
        let mut error_gain = [0.0; 3];
        match self.protocol {
            StreamProtocol::SinglePhoton => {
                let y = self.dev.y0 + self.dev.system_transmittance(eta);
                gain[0] = y;
                error_gain[0] = single_photon_qber(eta, &self.dev) * y;
            }
            StreamProtocol::Decoy(dec) => {
                for (k, &x) in dec.intensities().iter().enumerate() {
                    let o = observables(eta, x, &self.dev);
                    gain[k] = o.gain;
                    error_gain[k] = o.error_gain();
                }
            }
        }
        (gain, error_gain)
    }

    fn window(&mut self, eta: f64) -> WindowStats {
        let (mut gain, mut error_gain) = self.expected(eta);
        if self.mode == FidelityMode::Event {
            let slots = match self.protocol {
                StreamProtocol::SinglePhoton => 1,
                StreamProtocol::Decoy(_) => 3,
            };
            let n = self.pulses as f64;
            for k in 0..slots {
                let p = gain[k].clamp(0.0, 1.0);
                let e = if gain[k] > 0.0 { (error_gain[k] / gain[k]).clamp(0.0, 1.0) } else { E0 };
                let clicks = Binomial::new(self.pulses, p).map_or(0, |d| d.sample(&mut self.rng));
                let errors = Binomial::new(clicks, e).map_or(0, |d| d.sample(&mut self.rng));
                gain[k] = clicks as f64 / n;
                error_gain[k] = errors as f64 / n;
            }
        }
        WindowStats { gain, error_gain }
    }
}

/// Simulate `cfg.n_windows` windows of the channel and keep those at or
/// above `eta_t`.
pub fn run_stream(
    ch: &ChannelPdtc,
    eta_t: f64,
    dev: &DeviceParams,
    protocol: StreamProtocol,
    cfg: &StreamConfig,
) -> Result<SelectionSummary> {
    cfg.validate()?;
    check_domain("eta_T", eta_t, (0.0..1.0).contains(&eta_t), "[0, 1)")?;
    let mut detector = Detector::new(protocol, *dev, cfg);
    let mut batches = vec![StreamSums::default(); cfg.batch_count()];
    let mut peak = 0usize;
    for (j, eta) in ch.sampler(cfg.seed).take(cfg.n_windows as usize).enumerate() {
        // the current window is the only one in memory
        peak = peak.max(1);
        let batch = &mut batches[cfg.batch_of(j as u64)];
        batch.windows_total += 1;
        if eta < eta_t {
            continue;
        }
        let stats = detector.window(eta);
        batch.keep(eta, &stats);
    }
    let mut totals = StreamSums::default();
    for b in &batches {
        totals.add(b);
    }
    Ok(SelectionSummary {
        eta_t,
        window_pulses: cfg.window_pulses,
        protocol,
        dev: *dev,
        totals,
        batches,
        peak_buffer_windows: peak,
    })
}

/// One point of a threshold scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub eta_t: f64,
    pub pass_fraction: f64,
    pub mean_eta: f64,
    pub rate: f64,
    pub rate_se: f64,
}

/// Empirical rate at every threshold of `grid` from a single stream.
///
/// All thresholds see the same windows. Each kept window lands in the bucket
/// between the two grid thresholds that bracket it, and suffix sums over the
/// buckets give the statistics of every threshold in one pass.
pub fn scan_thresholds(
    ch: &ChannelPdtc,
    dev: &DeviceParams,
    protocol: StreamProtocol,
    grid: &[f64],
    cfg: &StreamConfig,
) -> Result<Vec<ScanPoint>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("threshold grid is empty".into()));
    }
    for &t in grid {
        check_domain("eta_T", t, (0.0..1.0).contains(&t), "[0, 1)")?;
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let g = sorted.len();

    let mut detector = Detector::new(protocol, *dev, cfg);
    let nb = cfg.batch_count();
    // bucket i holds windows with sorted[i] <= eta < sorted[i + 1]
    let mut buckets = vec![vec![StreamSums::default(); g]; nb];
    let mut totals = vec![0u64; nb];
    for (j, eta) in ch.sampler(cfg.seed).take(cfg.n_windows as usize).enumerate() {
        let b = cfg.batch_of(j as u64);
        totals[b] += 1;
        let idx = sorted.partition_point(|&t| t <= eta);
        if idx == 0 {
            continue;
        }
        let stats = detector.window(eta);
        buckets[b][idx - 1].keep(eta, &stats);
    }

    // suffix sums turn bucket i into "every window with eta >= sorted[i]"
    for (batch, &total) in buckets.iter_mut().zip(&totals) {
        for i in (0..g).rev() {
            if i + 1 < g {
                let next = batch[i + 1];
                batch[i].add(&StreamSums { windows_total: 0, ..next });
            }
        }
        for s in batch.iter_mut() {
            s.windows_total = total;
        }
    }

    let points_sorted: Vec<ScanPoint> = (0..g)
        .map(|i| {
            let mut pooled = StreamSums::default();
            for batch in &buckets {
                pooled.add(&batch[i]);
            }
            ScanPoint {
                eta_t: sorted[i],
                pass_fraction: pooled.pass_fraction(),
                mean_eta: if pooled.windows_kept > 0 {
                    pooled.eta_kept / pooled.windows_kept as f64
                } else {
                    f64::NAN
                },
                rate: pooled.rate(&protocol, dev),
                rate_se: batch_se(buckets.iter().map(|batch| batch[i].rate(&protocol, dev))),
            }
        })
        .collect();

    Ok(grid
        .iter()
        .map(|t| {
            let i = sorted.partition_point(|s| s < t);
            points_sorted[i]
        })
        .collect())
}
