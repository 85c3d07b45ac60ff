//! Key rates of QKD over turbulent free-space channels with a pre-fixed
//! transmittance threshold.
//!
//! The channel transmittance is log-normal ([`pdtc`]). Windows below a
//! threshold fixed in advance from device parameters alone are discarded in
//! real time; [`models`] composes static-channel rates ([`rates`]) with that
//! selection, [`finite`] adds finite-size statistics and [`montecarlo`]
//! simulates the selection window by window.

pub mod error;
pub mod finite;
pub mod models;
pub mod montecarlo;
pub mod numeric;
pub mod pdtc;
pub mod rates;

pub use error::{Error, Result};
pub use finite::{rate_finite, rate_finite_asymptotic, rate_finite_simplified, FiniteSettings};
pub use models::{
    optimal_threshold, rate_pulsewise, rate_ratewise, rate_simplified, rate_static, ModelKind, ModelName,
    QberAveraging, ThresholdReport,
};
pub use montecarlo::{
    run_stream, scan_thresholds, FidelityMode, SelectionSummary, StreamConfig, StreamProtocol, TransmittanceStream,
};
pub use pdtc::{eta_to_loss_db, loss_db_to_eta, ChannelPdtc};
pub use rates::{DecoyRate, DecoySettings, DeviceParams, KeyRate, SinglePhotonRate};
