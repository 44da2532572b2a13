use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

use super::solver::solve_weighted_ls;
use super::{weight_floor, DereverbAlgorithm, DereverbResult, PredictionFilter, WeightMap};

/// Estimates a forward convolutive prediction filter.
///
/// For every bin the filter predicts the single-channel mixture from the
/// current and past frames of a source estimate, so tap `k` multiplies the
/// estimate at lag `k` with no prediction delay. An estimate with no energy
/// yields a zero filter when loading is positive and an error otherwise.
pub fn fcp_filter(
    mixture: &Spectrogram,
    estimate: &Spectrogram,
    weights: &WeightMap,
    taps: usize,
    loading: f64,
) -> Result<PredictionFilter> {
    fit_to_mixture(mixture.channel_data()?, estimate, weights, taps, loading)
}

/// Removes the predicted reverberation of the estimated source from the
/// mixture, keeping the estimate's own contribution:
/// `output = mixture - (prediction - estimate)`.
pub fn fcp_dereverb(
    mixture: &Spectrogram,
    estimate: &Spectrogram,
    filter: &PredictionFilter,
) -> Result<DereverbResult> {
    let mix = mixture.channel_data()?;
    check_filter(filter, mixture.bins())?;
    check_same_grid(mixture, estimate)?;
    let pred = prediction(estimate, filter)?;
    let est = estimate.channel_data()?;
    // The removed excess is formed from the estimate and filter alone, so
    // the mixture's other content never changes what is subtracted.
    let excess = &pred - &est;
    let output = &mix - &excess;
    Ok(DereverbResult {
        output: single_channel_like(output, mixture)?,
        filter: filter.clone(),
        algorithm: DereverbAlgorithm::Fcp,
    })
}

/// Combined forward convolutive prediction over all sources at once.
///
/// Every source's filtered estimate is subtracted from the mixture and each
/// output adds its own estimate back, so all outputs share one residual:
/// `output(c) = mixture - sum_c' prediction(c') + estimate(c)`.
pub fn cfcp_dereverb(
    mixture: &Spectrogram,
    estimates: &[Spectrogram],
    filters: &[PredictionFilter],
) -> Result<Vec<DereverbResult>> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    if estimates.len() != filters.len() {
        return Err(Error::SpeakerCountMismatch {
            expected: estimates.len(),
            got: filters.len(),
        });
    }
    let mix = mixture.channel_data()?;
    let mut residual = mix.to_owned();
    for (estimate, filter) in estimates.iter().zip(filters.iter()) {
        check_filter(filter, mixture.bins())?;
        check_same_grid(mixture, estimate)?;
        residual -= &prediction(estimate, filter)?;
    }
    estimates
        .iter()
        .zip(filters.iter())
        .map(|(estimate, filter)| {
            let output = &residual + &estimate.channel_data()?;
            Ok(DereverbResult {
                output: single_channel_like(output, mixture)?,
                filter: filter.clone(),
                algorithm: DereverbAlgorithm::Cfcp,
            })
        })
        .collect()
}

/// Multi-step forward convolutive prediction for overlapped sources.
///
/// The first step fits each source's filter against the mixture. Every later
/// step refits source `c` against a cleaned target: the mixture minus the
/// other sources' filtered estimates from the previous step, with weights
/// floored from that target's power. The final outputs subtract each
/// source's own prediction from its cleaned target and add the estimate
/// back.
pub fn msfcp_run(
    mixture: &Spectrogram,
    estimates: &[Spectrogram],
    taps: usize,
    epsilon: f64,
    steps: usize,
    loading: f64,
) -> Result<Vec<DereverbResult>> {
    if steps == 0 {
        return Err(Error::BadConfig(
            "msfcp needs at least one step".to_string(),
        ));
    }
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mix = mixture.channel_data()?;
    for estimate in estimates {
        check_same_grid(mixture, estimate)?;
    }
    let sources = estimates.len();

    let mut filters: Vec<PredictionFilter> = Vec::new();
    let mut predictions: Vec<Array2<Complex64>> = Vec::new();
    let mut targets: Vec<Array2<Complex64>> = Vec::new();
    for step in 0..steps {
        let mut step_filters = Vec::with_capacity(sources);
        let mut step_predictions = Vec::with_capacity(sources);
        let mut step_targets = Vec::with_capacity(sources);
        for c in 0..sources {
            let mut target = mix.to_owned();
            if step > 0 {
                for (other, pred) in predictions.iter().enumerate() {
                    if other != c {
                        target -= pred;
                    }
                }
            }
            let power = target.mapv(|v| v.norm_sqr());
            let weights = weight_floor(power.view(), epsilon)?;
            let filter = fit_to_mixture(target.view(), &estimates[c], &weights, taps, loading)?;
            let pred = prediction(&estimates[c], &filter)?;
            step_filters.push(filter);
            step_predictions.push(pred);
            step_targets.push(target);
        }
        filters = step_filters;
        predictions = step_predictions;
        targets = step_targets;
    }

    (0..sources)
        .map(|c| {
            let excess = &predictions[c] - &estimates[c].channel_data()?;
            let output = &targets[c] - &excess;
            Ok(DereverbResult {
                output: single_channel_like(output, mixture)?,
                filter: filters[c].clone(),
                algorithm: DereverbAlgorithm::MsFcp,
            })
        })
        .collect()
}

fn fit_to_mixture(
    target: ndarray::ArrayView2<'_, Complex64>,
    estimate: &Spectrogram,
    weights: &WeightMap,
    taps: usize,
    loading: f64,
) -> Result<PredictionFilter> {
    if taps == 0 {
        return Err(Error::BadConfig("fcp needs at least one tap".to_string()));
    }
    let est = estimate.channel_data()?;
    let (frames, bins) = est.dim();
    if target.dim() != (frames, bins) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs estimate {:?}",
            target.dim(),
            est.dim()
        )));
    }
    weights.check_shape(frames, bins)?;
    if est.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
        if loading > 0.0 {
            return PredictionFilter::new(Array2::zeros((bins, taps)), taps, 0);
        }
        return Err(Error::DegenerateRegressor);
    }

    let mut filter_taps = Array2::zeros((bins, taps));
    let mut regressors = Array2::zeros((frames, taps));
    let mut bin_target = Array1::zeros(frames);
    let mut bin_weights = Array1::zeros(frames);
    for f in 0..bins {
        regressors.fill(Complex64::default());
        for t in 0..frames {
            for k in 0..taps {
                if let Some(src) = t.checked_sub(k) {
                    regressors[[t, k]] = est[[src, f]];
                }
            }
            bin_target[t] = target[[t, f]];
            bin_weights[t] = weights.values()[[t, f]];
        }
        let solved = solve_weighted_ls(
            bin_target.view(),
            regressors.view(),
            bin_weights.view(),
            loading,
        )
        .map_err(|e| match e {
            Error::RankDeficient => Error::DegenerateRegressor,
            other => other,
        })?;
        filter_taps.row_mut(f).assign(&solved);
    }
    PredictionFilter::new(filter_taps, taps, 0)
}

/// Filtered estimate `sum_k conj(g[k]) * estimate(t - delay - k)`.
fn prediction(estimate: &Spectrogram, filter: &PredictionFilter) -> Result<Array2<Complex64>> {
    let est = estimate.channel_data()?;
    let (frames, bins) = est.dim();
    check_filter(filter, bins)?;
    let taps = filter.num_taps();
    let delay = filter.delay();
    let mut pred = Array2::zeros((frames, bins));
    let filter_taps = filter.taps();
    for f in 0..bins {
        let g = filter_taps.row(f);
        for t in 0..frames {
            let mut value = Complex64::default();
            for (k, tap) in g.iter().enumerate().take(taps) {
                let Some(src) = t.checked_sub(delay + k) else {
                    break;
                };
                value += tap.conj() * est[[src, f]];
            }
            pred[[t, f]] = value;
        }
    }
    Ok(pred)
}

fn check_filter(filter: &PredictionFilter, bins: usize) -> Result<()> {
    if filter.bins() != bins {
        return Err(Error::ShapeMismatch(format!(
            "filter for {} bins applied to {} bins",
            filter.bins(),
            bins
        )));
    }
    if filter.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "fcp filter must be single channel, got {}",
            filter.channels()
        )));
    }
    Ok(())
}

fn check_same_grid(a: &Spectrogram, b: &Spectrogram) -> Result<()> {
    if a.frames() != b.frames() || a.bins() != b.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram ({}, {}) vs ({}, {})",
            a.frames(),
            a.bins(),
            b.frames(),
            b.bins()
        )));
    }
    Ok(())
}

fn single_channel_like(data: Array2<Complex64>, reference: &Spectrogram) -> Result<Spectrogram> {
    let mut spec = Spectrogram::from_channel_data(data, *reference.config())?;
    if let Some(len) = reference.source_len() {
        spec = spec.with_source_len(len);
    }
    Ok(spec)
}

impl Spectrogram {
    /// View of the only channel of a single-channel spectrogram.
    pub(crate) fn channel_data(&self) -> Result<ndarray::ArrayView2<'_, Complex64>> {
        if self.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected a single-channel spectrogram, got {} channels",
                self.channels()
            )));
        }
        Ok(self.channel(0))
    }
}
