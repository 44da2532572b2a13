use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

/// Analysis parameters for the short-time Fourier transform.
///
/// Both analysis and synthesis use a square-root periodic Hann window. The
/// defaults give a 32 ms window with an 8 ms hop at 8 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub sample_rate_hz: u32,
}

impl Default for StftConfig {
    fn default() -> StftConfig {
        StftConfig {
            window_len: 256,
            hop: 64,
            fft_size: 256,
            sample_rate_hz: 8000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.fft_size == 0 {
            return Err(Error::BadConfig(
                "stft sizes must be positive".to_string(),
            ));
        }
        if self.hop > self.window_len {
            return Err(Error::BadConfig(format!(
                "hop {} exceeds window length {}",
                self.hop, self.window_len
            )));
        }
        if self.window_len % self.hop != 0 {
            return Err(Error::BadConfig(format!(
                "window length {} is not a multiple of hop {}",
                self.window_len, self.hop
            )));
        }
        if self.fft_size < self.window_len {
            return Err(Error::BadConfig(format!(
                "fft size {} smaller than window length {}",
                self.fft_size, self.window_len
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::BadConfig(format!(
                "fft size {} must be even",
                self.fft_size
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::BadConfig("sample rate must be positive".to_string()));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zero padding prepended and appended before framing, which guarantees
    /// every input sample is covered by a full set of overlapping windows.
    pub fn edge_pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Number of frames produced for a signal of the given length.
    pub fn frames_for_len(&self, len: usize) -> usize {
        let padded = len + 2 * self.edge_pad();
        if padded <= self.window_len {
            1
        } else {
            (padded - self.window_len).div_ceil(self.hop) + 1
        }
    }

    fn analysis_window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| {
                let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos());
                hann.sqrt()
            })
            .collect()
    }

    /// Synthesis window: the analysis window divided by the overlap-add sum
    /// of its square, so that overlapped frames reconstruct exactly.
    fn synthesis_window(&self) -> Vec<f64> {
        let window = self.analysis_window();
        let shifts = self.window_len / self.hop;
        let mut norm = vec![0.0; self.hop];
        for (phase, value) in norm.iter_mut().enumerate() {
            for j in 0..shifts {
                let w = window[phase + j * self.hop];
                *value += w * w;
            }
        }
        window
            .iter()
            .enumerate()
            .map(|(i, w)| w / norm[i % self.hop])
            .collect()
    }
}

/// A complex time-frequency representation stored as `[channels, frames, bins]`.
///
/// Spectrograms produced by [`analyze`] remember the source signal length so
/// that [`synthesize`] can trim its output back to it.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    data: Array3<Complex64>,
    config: StftConfig,
    source_len: Option<usize>,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, config: StftConfig) -> Result<Spectrogram> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if data.dim().2 != config.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bins, got {}",
                config.num_bins(),
                data.dim().2
            )));
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFiniteSpectrogram);
        }
        Ok(Spectrogram {
            data,
            config,
            source_len: None,
        })
    }

    /// Builds a single-channel spectrogram from a `[frames, bins]` matrix.
    pub fn from_channel_data(data: Array2<Complex64>, config: StftConfig) -> Result<Spectrogram> {
        Spectrogram::new(data.insert_axis(Axis(0)), config)
    }

    pub fn with_source_len(mut self, len: usize) -> Spectrogram {
        self.source_len = Some(len);
        self
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn source_len(&self) -> Option<usize> {
        self.source_len
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    /// One channel as a borrowed `[frames, bins]` view.
    pub fn channel(&self, channel: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), channel)
    }

    /// One channel copied out as a single-channel spectrogram.
    pub fn channel_spectrogram(&self, channel: usize) -> Result<Spectrogram> {
        if channel >= self.channels() {
            return Err(Error::RefChannelOutOfRange {
                channel,
                channels: self.channels(),
            });
        }
        Ok(Spectrogram {
            data: self
                .data
                .index_axis(Axis(0), channel)
                .to_owned()
                .insert_axis(Axis(0)),
            config: self.config,
            source_len: self.source_len,
        })
    }

    /// Elementwise squared magnitude of one channel.
    pub fn power(&self, channel: usize) -> Array2<f64> {
        self.data
            .index_axis(Axis(0), channel)
            .mapv(|v| v.norm_sqr())
    }

    /// Sum of squared magnitudes over the whole tensor.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    /// Elementwise sum with an identically shaped spectrogram.
    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        self.check_compatible(other)?;
        Ok(Spectrogram {
            data: &self.data + &other.data,
            config: self.config,
            source_len: self.source_len.or(other.source_len),
        })
    }

    /// Elementwise difference with an identically shaped spectrogram.
    pub fn sub(&self, other: &Spectrogram) -> Result<Spectrogram> {
        self.check_compatible(other)?;
        Ok(Spectrogram {
            data: &self.data - &other.data,
            config: self.config,
            source_len: self.source_len.or(other.source_len),
        })
    }

    /// Copy scaled by a complex constant.
    pub fn scale(&self, factor: Complex64) -> Spectrogram {
        Spectrogram {
            data: self.data.mapv(|v| v * factor),
            config: self.config,
            source_len: self.source_len,
        }
    }

    fn check_compatible(&self, other: &Spectrogram) -> Result<()> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        if self.config != other.config {
            return Err(Error::ShapeMismatch(
                "spectrogram stft configs differ".to_string(),
            ));
        }
        Ok(())
    }
}

/// Transforms a time signal into its spectrogram.
pub fn analyze(signal: &TimeSignal, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    if signal.is_empty() {
        return Err(Error::EmptyInput);
    }
    let channels = signal.channels();
    let len = signal.len();
    let pad = config.edge_pad();
    let frames = config.frames_for_len(len);
    let bins = config.num_bins();
    let window = config.analysis_window();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(config.fft_size);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    let mut data = Array3::zeros((channels, frames, bins));
    let padded_len = (frames - 1) * config.hop + config.window_len;
    let mut padded = vec![0.0; padded_len];
    let mut buffer = vec![Complex64::default(); config.fft_size];
    for ch in 0..channels {
        padded.iter_mut().for_each(|v| *v = 0.0);
        for (i, value) in signal.channel(ch).iter().enumerate() {
            padded[pad + i] = *value;
        }
        for t in 0..frames {
            let start = t * config.hop;
            for i in 0..config.fft_size {
                buffer[i] = if i < config.window_len {
                    Complex64::new(padded[start + i] * window[i], 0.0)
                } else {
                    Complex64::default()
                };
            }
            fft.process_with_scratch(&mut buffer, &mut scratch);
            for (f, value) in buffer.iter().take(bins).enumerate() {
                data[[ch, t, f]] = *value;
            }
        }
    }
    Ok(Spectrogram::new(data, *config)?.with_source_len(len))
}

/// Transforms a spectrogram back into a time signal.
///
/// Each frame is extended to a conjugate-symmetric spectrum, inverse
/// transformed, and overlap-added; the real part is kept. If the spectrogram
/// records a source length the output is trimmed to it.
pub fn synthesize(spec: &Spectrogram) -> Result<TimeSignal> {
    let config = spec.config();
    config.validate()?;
    if !spec
        .data()
        .iter()
        .all(|v| v.re.is_finite() && v.im.is_finite())
    {
        return Err(Error::NonFiniteSpectrogram);
    }
    let channels = spec.channels();
    let frames = spec.frames();
    let bins = spec.bins();
    let pad = config.edge_pad();
    let window = config.synthesis_window();

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(config.fft_size);
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];

    let padded_len = (frames - 1) * config.hop + config.window_len;
    let natural_len = padded_len.saturating_sub(2 * pad);
    let out_len = spec.source_len().unwrap_or(natural_len);

    let inv_n = 1.0 / config.fft_size as f64;
    let mut out = Array2::zeros((channels, out_len));
    let mut padded = vec![0.0; padded_len];
    let mut buffer = vec![Complex64::default(); config.fft_size];
    for ch in 0..channels {
        padded.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            for f in 0..bins {
                buffer[f] = spec.data()[[ch, t, f]];
            }
            for f in 1..bins - 1 {
                buffer[config.fft_size - f] = spec.data()[[ch, t, f]].conj();
            }
            ifft.process_with_scratch(&mut buffer, &mut scratch);
            let start = t * config.hop;
            for i in 0..config.window_len {
                padded[start + i] += buffer[i].re * inv_n * window[i];
            }
        }
        for i in 0..out_len {
            if pad + i < padded_len {
                out[[ch, i]] = padded[pad + i];
            }
        }
    }
    Ok(TimeSignal::new(out, config.sample_rate_hz))
}
