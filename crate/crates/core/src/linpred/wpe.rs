use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

use super::solver::solve_weighted_ls;
use super::{weight_floor, DereverbAlgorithm, DereverbResult, PredictionFilter, WeightMap};

/// Estimates a weighted prediction error filter for one reference channel.
///
/// For every bin the filter predicts the reference channel from the delayed
/// past of all channels. The regressor stacks lags outermost: tap
/// `k * channels + p` multiplies channel `p` at lag `delay + k`. Frames
/// before the start of the signal are treated as zero.
pub fn wpe_filter(
    mixture: &Spectrogram,
    weights: &WeightMap,
    taps: usize,
    delay: usize,
    ref_channel: usize,
    loading: f64,
) -> Result<PredictionFilter> {
    if taps == 0 {
        return Err(Error::BadConfig("wpe needs at least one tap".to_string()));
    }
    if delay == 0 {
        return Err(Error::BadConfig(
            "wpe prediction delay must be at least one frame".to_string(),
        ));
    }
    let (channels, frames, bins) = mixture.data().dim();
    if ref_channel >= channels {
        return Err(Error::RefChannelOutOfRange {
            channel: ref_channel,
            channels,
        });
    }
    weights.check_shape(frames, bins)?;

    let total_taps = taps * channels;
    let mut filter_taps = Array2::zeros((bins, total_taps));
    let mut regressors = Array2::zeros((frames, total_taps));
    let mut target = Array1::zeros(frames);
    let mut bin_weights = Array1::zeros(frames);
    for f in 0..bins {
        fill_regressors(mixture, f, taps, delay, &mut regressors);
        for t in 0..frames {
            target[t] = mixture.data()[[ref_channel, t, f]];
            bin_weights[t] = weights.values()[[t, f]];
        }
        let solved = solve_weighted_ls(
            target.view(),
            regressors.view(),
            bin_weights.view(),
            loading,
        )?;
        filter_taps.row_mut(f).assign(&solved);
    }
    PredictionFilter::new(filter_taps, taps, delay)
}

/// Subtracts the filter's prediction from the reference channel.
pub fn wpe_dereverb(
    mixture: &Spectrogram,
    filter: &PredictionFilter,
    ref_channel: usize,
) -> Result<DereverbResult> {
    let (channels, frames, bins) = mixture.data().dim();
    if ref_channel >= channels {
        return Err(Error::RefChannelOutOfRange {
            channel: ref_channel,
            channels,
        });
    }
    if filter.bins() != bins || filter.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "filter for {} bins x {} channels applied to {} bins x {} channels",
            filter.bins(),
            filter.channels(),
            bins,
            channels
        )));
    }
    let taps = filter.taps_per_channel();
    let delay = filter.delay();

    let mut output = Array2::zeros((frames, bins));
    for f in 0..bins {
        let g = filter.taps().row(f).to_owned();
        for t in 0..frames {
            let mut prediction = Complex64::default();
            for k in 0..taps {
                let Some(src) = t.checked_sub(delay + k) else {
                    break;
                };
                for p in 0..channels {
                    prediction += g[k * channels + p].conj() * mixture.data()[[p, src, f]];
                }
            }
            output[[t, f]] = mixture.data()[[ref_channel, t, f]] - prediction;
        }
    }
    let mut spec = Spectrogram::from_channel_data(output, *mixture.config())?;
    if let Some(len) = mixture.source_len() {
        spec = spec.with_source_len(len);
    }
    Ok(DereverbResult {
        output: spec,
        filter: filter.clone(),
        algorithm: DereverbAlgorithm::Wpe,
    })
}

/// One round of the alternating power/filter estimation in
/// [`wpe_classic_trace`].
#[derive(Debug, Clone)]
pub struct WpeIteration {
    /// Power weights the filter was fitted against.
    pub weights: WeightMap,
    pub filter: PredictionFilter,
    /// Dereverberated reference channel produced by the filter.
    pub output: Spectrogram,
}

/// Iterative prediction error dereverberation without an external source
/// estimate, returning every iteration.
///
/// The source power is initialized from the mixture's reference channel,
/// floored, and re-estimated from the dereverberated output after each
/// filter update.
pub fn wpe_classic_trace(
    mixture: &Spectrogram,
    taps: usize,
    delay: usize,
    iterations: usize,
    ref_channel: usize,
    epsilon: f64,
    loading: f64,
) -> Result<Vec<WpeIteration>> {
    if iterations == 0 {
        return Err(Error::BadConfig(
            "wpe needs at least one iteration".to_string(),
        ));
    }
    let mut weights = weight_floor(mixture.power(ref_channel).view(), epsilon)?;
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let filter = wpe_filter(mixture, &weights, taps, delay, ref_channel, loading)?;
        let result = wpe_dereverb(mixture, &filter, ref_channel)?;
        let next_weights = weight_floor(result.output.power(0).view(), epsilon)?;
        trace.push(WpeIteration {
            weights,
            filter,
            output: result.output,
        });
        weights = next_weights;
    }
    Ok(trace)
}

/// Iterative prediction error dereverberation, returning the final output.
pub fn wpe_classic(
    mixture: &Spectrogram,
    taps: usize,
    delay: usize,
    iterations: usize,
    ref_channel: usize,
    epsilon: f64,
    loading: f64,
) -> Result<DereverbResult> {
    let mut trace = wpe_classic_trace(
        mixture,
        taps,
        delay,
        iterations,
        ref_channel,
        epsilon,
        loading,
    )?;
    let last = trace.pop().expect("at least one iteration");
    Ok(DereverbResult {
        output: last.output,
        filter: last.filter,
        algorithm: DereverbAlgorithm::Wpe,
    })
}

fn fill_regressors(
    mixture: &Spectrogram,
    f: usize,
    taps: usize,
    delay: usize,
    regressors: &mut Array2<Complex64>,
) {
    let (channels, frames, _) = mixture.data().dim();
    regressors.fill(Complex64::default());
    for t in 0..frames {
        for k in 0..taps {
            let Some(src) = t.checked_sub(delay + k) else {
                break;
            };
            for p in 0..channels {
                regressors[[t, k * channels + p]] = mixture.data()[[p, src, f]];
            }
        }
    }
}
