//! Convolutive-prediction speech dereverberation and beamforming.
//!
//! This crate separates reverberant multi-speaker mixtures using linear
//! prediction in the STFT domain. The late reverberation of each source is
//! modeled as a filtered copy of an earlier signal and subtracted: classic
//! weighted prediction error (WPE) predicts the mixture from its own past,
//! while forward convolutive prediction (FCP) and its combined (cFCP) and
//! multi-step (msFCP) variants predict it from a per-source estimate, which
//! here comes from an oracle estimator applied to simulated scenes. An MVDR
//! beamformer can then sharpen each dereverberated source spatially.
//!
//! The pieces compose in layers:
//!
//! * [`signal`] and [`stft`] hold time-domain signals, WAV I/O, and the
//!   analysis/synthesis filterbank with exact reconstruction;
//! * [`linpred`] implements the weighted least-squares solver and the WPE
//!   and FCP filter estimators;
//! * [`beamform`] derives steering vectors and MVDR weights from spatial
//!   covariance statistics;
//! * [`simulate`] renders synthetic scenes with known room responses and
//!   emulates source estimators at a chosen quality;
//! * [`metrics`] scores separation with permutation-resolved SI-SDR;
//! * [`pipeline`] chains all of the above, driven by a small text
//!   configuration format, over manifests of scenes.

pub mod beamform;
pub mod error;
mod linalg;
pub mod linpred;
pub mod metrics;
pub mod pipeline;
mod seed;
pub mod signal;
pub mod simulate;
pub mod stft;

pub use error::{Error, Result};
