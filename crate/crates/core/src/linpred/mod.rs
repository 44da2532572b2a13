//! Weighted linear prediction in the STFT domain.
//!
//! This module hosts the shared solver plus the two dereverberation families
//! built on it: weighted prediction error over the mixture's own past
//! ([`wpe`]) and forward convolutive prediction over a source estimate
//! ([`fcp`]).

mod fcp;
mod solver;
mod wpe;

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

pub use fcp::{cfcp_dereverb, fcp_dereverb, fcp_filter, msfcp_run};
pub use solver::solve_weighted_ls;
pub use wpe::{wpe_classic, wpe_classic_trace, wpe_dereverb, wpe_filter, WpeIteration};

/// Relative floor applied to power maps before they are used as weights.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Diagonal loading factor for the prediction normal equations, relative to
/// the mean diagonal of the correlation matrix.
pub const DEFAULT_LOADING: f64 = 1e-5;
/// Filter taps per channel for weighted prediction error.
pub const DEFAULT_WPE_TAPS: usize = 37;
/// Prediction delay in frames for weighted prediction error.
pub const DEFAULT_WPE_DELAY: usize = 3;
/// Filter taps for forward convolutive prediction.
pub const DEFAULT_FCP_TAPS: usize = 40;
/// Alternation steps for multi-speaker forward convolutive prediction.
pub const DEFAULT_MSFCP_STEPS: usize = 2;

/// The dereverberation algorithm that produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DereverbAlgorithm {
    Wpe,
    Fcp,
    Cfcp,
    MsFcp,
}

impl std::fmt::Display for DereverbAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DereverbAlgorithm::Wpe => "wpe",
            DereverbAlgorithm::Fcp => "fcp",
            DereverbAlgorithm::Cfcp => "cfcp",
            DereverbAlgorithm::MsFcp => "msfcp",
        };
        f.write_str(name)
    }
}

/// Per-bin prediction filter taps.
///
/// Taps are stored as a `[bins, taps_total]` matrix. For multichannel
/// prediction the taps of one lag are stored contiguously: entry
/// `k * channels + p` holds the tap for channel `p` at lag `delay + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFilter {
    taps: Array2<Complex64>,
    taps_per_channel: usize,
    delay: usize,
}

impl PredictionFilter {
    pub fn new(
        taps: Array2<Complex64>,
        taps_per_channel: usize,
        delay: usize,
    ) -> Result<PredictionFilter> {
        if taps.is_empty() || taps_per_channel == 0 {
            return Err(Error::EmptyInput);
        }
        if taps.ncols() % taps_per_channel != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} taps not divisible by {} taps per channel",
                taps.ncols(),
                taps_per_channel
            )));
        }
        Ok(PredictionFilter {
            taps,
            taps_per_channel,
            delay,
        })
    }

    pub fn bins(&self) -> usize {
        self.taps.nrows()
    }

    /// Total taps per bin, across all channels.
    pub fn num_taps(&self) -> usize {
        self.taps.ncols()
    }

    pub fn taps_per_channel(&self) -> usize {
        self.taps_per_channel
    }

    pub fn channels(&self) -> usize {
        self.num_taps() / self.taps_per_channel
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn taps(&self) -> ArrayView2<'_, Complex64> {
        self.taps.view()
    }

    /// Writes the filter as a small binary file: four u64 dimension fields
    /// followed by row-major taps as interleaved re/im f64, all little endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = [
            self.bins() as u64,
            self.num_taps() as u64,
            self.taps_per_channel as u64,
            self.delay as u64,
        ];
        for value in header {
            w.write_all(&value.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        for tap in self.taps.iter() {
            w.write_all(&tap.re.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
            w.write_all(&tap.im.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a filter written by [`PredictionFilter::save`].
    pub fn load(path: &Path) -> Result<PredictionFilter> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut u64_buf = [0u8; 8];
        let mut header = [0u64; 4];
        for value in header.iter_mut() {
            r.read_exact(&mut u64_buf).map_err(|e| Error::io(path, e))?;
            *value = u64::from_le_bytes(u64_buf);
        }
        let [bins, num_taps, taps_per_channel, delay] = header.map(|v| v as usize);
        if bins == 0 || num_taps == 0 || taps_per_channel == 0 {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                message: "empty filter dimensions".to_string(),
            });
        }
        let mut taps = Array2::zeros((bins, num_taps));
        for tap in taps.iter_mut() {
            r.read_exact(&mut u64_buf).map_err(|e| Error::io(path, e))?;
            let re = f64::from_le_bytes(u64_buf);
            r.read_exact(&mut u64_buf).map_err(|e| Error::io(path, e))?;
            let im = f64::from_le_bytes(u64_buf);
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::NonFiniteSpectrogram);
            }
            *tap = Complex64::new(re, im);
        }
        PredictionFilter::new(taps, taps_per_channel, delay)
    }
}

/// Strictly positive per-bin weights for the prediction solver, stored as a
/// `[frames, bins]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    values: Array2<f64>,
}

impl WeightMap {
    pub fn new(values: Array2<f64>) -> Result<WeightMap> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !values.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::BadConfig(
                "weights must be strictly positive and finite".to_string(),
            ));
        }
        Ok(WeightMap { values })
    }

    /// All-ones weights, equivalent to an unweighted fit.
    pub fn uniform(frames: usize, bins: usize) -> WeightMap {
        WeightMap {
            values: Array2::ones((frames, bins)),
        }
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub(crate) fn check_shape(&self, frames: usize, bins: usize) -> Result<()> {
        if self.frames() != frames || self.bins() != bins {
            return Err(Error::ShapeMismatch(format!(
                "weights {:?} vs spectrogram ({frames}, {bins})",
                self.values.dim()
            )));
        }
        Ok(())
    }
}

/// Output of one dereverberation run for one source.
#[derive(Debug, Clone)]
pub struct DereverbResult {
    /// Single-channel dereverberated spectrogram.
    pub output: Spectrogram,
    /// The prediction filter that produced it.
    pub filter: PredictionFilter,
    pub algorithm: DereverbAlgorithm,
}

/// Clamps a power map from below at a fraction of its global maximum.
///
/// Every output entry is `max(power, epsilon * max(power))`, which keeps the
/// weights strictly positive so they can divide the prediction residuals.
pub fn weight_floor(power: ArrayView2<'_, f64>, epsilon: f64) -> Result<WeightMap> {
    if power.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(epsilon > 0.0) {
        return Err(Error::BadConfig(format!(
            "weight floor epsilon must be positive, got {epsilon}"
        )));
    }
    let mut max = 0.0f64;
    for &value in power.iter() {
        if !value.is_finite() {
            return Err(Error::NonFiniteSpectrogram);
        }
        if value < 0.0 {
            return Err(Error::NegativePower);
        }
        max = max.max(value);
    }
    if max == 0.0 {
        return Err(Error::SilentSpectrogram);
    }
    let floor = epsilon * max;
    let values = power.mapv(|p| p.max(floor));
    WeightMap::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn floor_clamps_only_below_threshold() {
        let power = array![[1.0, 0.0], [4.0, 2.0]];
        let weights = weight_floor(power.view(), 0.5).unwrap();
        // max = 4, floor = 2
        assert_eq!(weights.values(), &array![[2.0, 2.0], [4.0, 2.0]]);
    }

    #[test]
    fn floor_rejects_silent_power() {
        let power = Array2::<f64>::zeros((3, 4));
        assert!(matches!(
            weight_floor(power.view(), 0.001),
            Err(Error::SilentSpectrogram)
        ));
    }

    #[test]
    fn floor_rejects_bad_epsilon() {
        let power = array![[1.0]];
        assert!(matches!(
            weight_floor(power.view(), 0.0),
            Err(Error::BadConfig(_))
        ));
        assert!(matches!(
            weight_floor(power.view(), -1.0),
            Err(Error::BadConfig(_))
        ));
    }

    #[test]
    fn floor_rejects_negative_power() {
        let power = array![[1.0, -0.1]];
        assert!(matches!(
            weight_floor(power.view(), 0.001),
            Err(Error::NegativePower)
        ));
    }

    #[test]
    fn filter_roundtrips_through_binary_file() {
        let dir = std::env::temp_dir().join(format!("convpred-filter-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("taps.bin");
        let taps = Array2::from_shape_fn((5, 6), |(i, j)| {
            Complex64::new(i as f64 + 0.25, -(j as f64) * 0.5)
        });
        let filter = PredictionFilter::new(taps, 3, 2).unwrap();
        filter.save(&path).unwrap();
        let back = PredictionFilter::load(&path).unwrap();
        assert_eq!(back, filter);
        assert_eq!(back.channels(), 2);
        std::fs::remove_dir_all(dir).ok();
    }

    proptest! {
        // Entries already below the floor can take any other below-floor
        // value without changing the result.
        #[test]
        fn floor_ignores_below_floor_variation(
            values in proptest::collection::vec(0.0f64..10.0, 6..24),
            epsilon in 1e-3f64..0.5,
            replacement in 0.0f64..1.0,
        ) {
            let cols = 3;
            let rows = values.len() / cols;
            let power = Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap();
            prop_assume!(power.iter().any(|p| *p > 0.0));
            let max = power.iter().cloned().fold(0.0f64, f64::max);
            let floor = epsilon * max;
            let mut modified = power.clone();
            let mut touched = false;
            for value in modified.iter_mut() {
                if *value < floor {
                    *value = replacement * 0.999 * floor;
                    touched = true;
                }
            }
            prop_assume!(touched);
            let original = weight_floor(power.view(), epsilon).unwrap();
            let varied = weight_floor(modified.view(), epsilon).unwrap();
            prop_assert_eq!(original.values(), varied.values());
        }

        #[test]
        fn floor_output_dominates_input_and_threshold(
            values in proptest::collection::vec(0.0f64..10.0, 6..24),
            epsilon in 1e-6f64..1.0,
        ) {
            let cols = 3;
            let rows = values.len() / cols;
            let power = Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap();
            prop_assume!(power.iter().any(|p| *p > 0.0));
            let max = power.iter().cloned().fold(0.0f64, f64::max);
            let weights = weight_floor(power.view(), epsilon).unwrap();
            for (w, p) in weights.values().iter().zip(power.iter()) {
                prop_assert!(*w >= *p);
                prop_assert!(*w >= epsilon * max);
                if *p >= epsilon * max {
                    prop_assert_eq!(*w, *p);
                }
            }
        }
    }
}
