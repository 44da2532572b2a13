use ndarray::{Array1, Array2, Array3, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_dot, solve_hermitian};
use crate::stft::Spectrogram;

/// Diagonal loading factor for the non-target covariance, relative to the
/// mean diagonal.
pub const DEFAULT_MVDR_LOADING: f64 = 1e-4;
/// Iteration cap for the principal eigenvector power iteration.
pub const POWER_ITERATIONS: usize = 100;
/// Relative change below which the power iteration stops early.
pub const POWER_TOLERANCE: f64 = 1e-10;

/// How the non-target signal for the beamformer is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NontargetVariant {
    /// Dereverberated channels minus the target estimate. The beamformer is
    /// then applied to the dereverberated signal.
    DereverbResidual,
    /// Mixture minus the target estimate. The beamformer is then applied to
    /// the mixture itself.
    MixtureResidual,
}

/// Per-bin outcome of the steering vector extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteeringStatus {
    /// A dominant direction was found.
    Ok,
    /// The covariance has no dominant direction; the returned vector is an
    /// arbitrary unit vector from its range.
    Isotropic,
    /// The covariance is numerically zero; the vector and any weights
    /// derived from it are zero.
    Degenerate,
}

/// Steering vectors with their per-bin diagnostics.
#[derive(Debug, Clone)]
pub struct SteeringResult {
    /// Unit-norm vectors, `[bins, channels]`.
    pub vectors: Array2<Complex64>,
    pub status: Vec<SteeringStatus>,
}

/// Frequency-domain beamforming weights, `[bins, channels]`.
#[derive(Debug, Clone)]
pub struct Beamformer {
    pub weights: Array2<Complex64>,
    pub ref_channel: usize,
    pub status: Vec<SteeringStatus>,
}

/// Per-bin spatial covariance `sum_t s(t, f) s(t, f)^H`, returned as a
/// `[bins, channels, channels]` tensor.
pub fn spatial_covariance(signal: &Spectrogram) -> Array3<Complex64> {
    let (channels, frames, bins) = signal.data().dim();
    let mut cov: Array3<Complex64> = Array3::zeros((bins, channels, channels));
    for f in 0..bins {
        for t in 0..frames {
            for i in 0..channels {
                let vi = signal.data()[[i, t, f]];
                for j in 0..=i {
                    cov[[f, i, j]] += vi * signal.data()[[j, t, f]].conj();
                }
            }
        }
        for i in 0..channels {
            for j in 0..i {
                cov[[f, j, i]] = cov[[f, i, j]].conj();
            }
        }
    }
    cov
}

/// Forms the multichannel non-target signal for one source.
pub fn nontarget_signal(
    dereverb: &Spectrogram,
    estimate: &Spectrogram,
    mixture: &Spectrogram,
    variant: NontargetVariant,
) -> Result<Spectrogram> {
    match variant {
        NontargetVariant::DereverbResidual => dereverb.sub(estimate),
        NontargetVariant::MixtureResidual => mixture.sub(estimate),
    }
}

/// Extracts the principal eigenvector of each bin's target covariance by
/// power iteration, normalized to unit norm with the first significantly
/// nonzero component rotated to the positive real axis.
pub fn steering_vector(target_cov: &Array3<Complex64>) -> SteeringResult {
    let (bins, channels, _) = target_cov.dim();
    let mut vectors = Array2::zeros((bins, channels));
    let mut status = Vec::with_capacity(bins);
    for f in 0..bins {
        let matrix = target_cov.index_axis(ndarray::Axis(0), f);
        let (vector, state) = principal_eigenvector(matrix);
        vectors.row_mut(f).assign(&vector);
        status.push(state);
    }
    SteeringResult { vectors, status }
}

fn principal_eigenvector(matrix: ArrayView2<'_, Complex64>) -> (Array1<Complex64>, SteeringStatus) {
    let channels = matrix.nrows();
    let trace: f64 = (0..channels).map(|i| matrix[[i, i]].re).sum();
    let frobenius: f64 = matrix.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if frobenius == 0.0 || !frobenius.is_finite() {
        return (Array1::zeros(channels), SteeringStatus::Degenerate);
    }

    // Start from the largest column, which always lies in the range of a
    // Hermitian positive semidefinite matrix.
    let start_col = (0..channels)
        .max_by(|&a, &b| {
            let na: f64 = (0..channels).map(|i| matrix[[i, a]].norm_sqr()).sum();
            let nb: f64 = (0..channels).map(|i| matrix[[i, b]].norm_sqr()).sum();
            na.partial_cmp(&nb).expect("finite norms")
        })
        .expect("at least one channel");
    let mut vector: Array1<Complex64> = matrix.column(start_col).to_owned();
    let norm = vector.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (Array1::zeros(channels), SteeringStatus::Degenerate);
    }
    vector.mapv_inplace(|v| v / norm);

    for _ in 0..POWER_ITERATIONS {
        let mut next = matrix.dot(&vector);
        let norm = next.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return (Array1::zeros(channels), SteeringStatus::Degenerate);
        }
        next.mapv_inplace(|v| v / norm);
        let change = next
            .iter()
            .zip(vector.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        vector = next;
        if change < POWER_TOLERANCE {
            break;
        }
    }

    // Fix the arbitrary global phase.
    let scale = vector.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if let Some(anchor) = vector.iter().find(|v| v.norm() > 1e-12 * scale) {
        let phase = anchor / anchor.norm();
        let correction = phase.conj();
        vector.mapv_inplace(|v| v * correction);
    }

    let rayleigh = {
        let product = matrix.dot(&vector);
        hermitian_dot(vector.view(), product.view()).re
    };
    let state = if channels > 1 && rayleigh <= (1.0 + 1e-6) * trace / channels as f64 {
        SteeringStatus::Isotropic
    } else {
        SteeringStatus::Ok
    };
    (vector, state)
}

/// Computes distortionless minimum-variance weights for each bin:
/// `w = inv(Phi) d / (d^H inv(Phi) d) * conj(d[ref])` with diagonal loading
/// `loading * trace(Phi) / channels` applied to the non-target covariance.
///
/// Bins whose steering is degenerate get zero weights. A non-target
/// covariance with zero trace is treated as identity (the loading direction)
/// when loading is positive and is an error otherwise.
pub fn mvdr_weights(
    steering: &SteeringResult,
    nontarget_cov: &Array3<Complex64>,
    ref_channel: usize,
    loading: f64,
) -> Result<Beamformer> {
    let (bins, channels) = steering.vectors.dim();
    if nontarget_cov.dim() != (bins, channels, channels) {
        return Err(Error::ShapeMismatch(format!(
            "covariance {:?} vs steering {:?}",
            nontarget_cov.dim(),
            steering.vectors.dim()
        )));
    }
    if steering.status.len() != bins {
        return Err(Error::ShapeMismatch(
            "steering status length differs from bin count".to_string(),
        ));
    }
    if ref_channel >= channels {
        return Err(Error::RefChannelOutOfRange {
            channel: ref_channel,
            channels,
        });
    }
    if !(loading >= 0.0) {
        return Err(Error::BadConfig(format!(
            "diagonal loading must be non-negative, got {loading}"
        )));
    }

    let mut weights = Array2::zeros((bins, channels));
    for f in 0..bins {
        if steering.status[f] == SteeringStatus::Degenerate {
            continue;
        }
        let d = steering.vectors.row(f);
        let matrix = nontarget_cov.index_axis(ndarray::Axis(0), f);
        let trace: f64 = (0..channels).map(|i| matrix[[i, i]].re).sum();

        let solved = if trace == 0.0 {
            if loading == 0.0 {
                return Err(Error::SingularCovariance);
            }
            // No interference energy at all: any multiple of the identity is
            // the loaded covariance, and the scale cancels in the quotient.
            d.to_owned()
        } else {
            let delta = loading * trace / channels as f64;
            let mut loaded = matrix.to_owned();
            for i in 0..channels {
                loaded[[i, i]] += Complex64::new(delta, 0.0);
            }
            solve_hermitian(loaded.view(), d).ok_or(Error::SingularCovariance)?
        };

        let denom = hermitian_dot(d, solved.view()).re;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let gain = d[ref_channel].conj() / denom;
        for p in 0..channels {
            weights[[f, p]] = solved[p] * gain;
        }
    }
    Ok(Beamformer {
        weights,
        ref_channel,
        status: steering.status.clone(),
    })
}

/// Applies the beamformer: `output(t, f) = w(f)^H s(t, f)`.
pub fn apply_beamformer(beamformer: &Beamformer, signal: &Spectrogram) -> Result<Spectrogram> {
    let (channels, frames, bins) = signal.data().dim();
    if beamformer.weights.dim() != (bins, channels) {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} vs signal with {} channels x {} bins",
            beamformer.weights.dim(),
            channels,
            bins
        )));
    }
    let mut output = Array2::zeros((frames, bins));
    for f in 0..bins {
        let w = beamformer.weights.row(f);
        for t in 0..frames {
            let mut value = Complex64::default();
            for p in 0..channels {
                value += w[p].conj() * signal.data()[[p, t, f]];
            }
            output[[t, f]] = value;
        }
    }
    let mut spec = Spectrogram::from_channel_data(output, *signal.config())?;
    if let Some(len) = signal.source_len() {
        spec = spec.with_source_len(len);
    }
    Ok(spec)
}
