use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// A multichannel discrete-time signal with a fixed sample rate.
///
/// Samples are stored as a dense `[channels, samples]` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Array2<f64>,
    sample_rate_hz: u32,
}

impl TimeSignal {
    pub fn new(samples: Array2<f64>, sample_rate_hz: u32) -> TimeSignal {
        TimeSignal {
            samples,
            sample_rate_hz,
        }
    }

    /// Builds a single-channel signal from a sample vector.
    pub fn from_mono(samples: Vec<f64>, sample_rate_hz: u32) -> TimeSignal {
        let len = samples.len();
        TimeSignal {
            samples: Array2::from_shape_vec((1, len), samples).expect("shape matches input"),
            sample_rate_hz,
        }
    }

    /// Builds an all-zero signal.
    pub fn zeros(channels: usize, len: usize, sample_rate_hz: u32) -> TimeSignal {
        TimeSignal {
            samples: Array2::zeros((channels, len)),
            sample_rate_hz,
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<f64> {
        &mut self.samples
    }

    /// One channel as a borrowed row view.
    pub fn channel(&self, channel: usize) -> ArrayView1<'_, f64> {
        self.samples.row(channel)
    }

    /// One channel copied out as a mono signal.
    pub fn channel_signal(&self, channel: usize) -> Result<TimeSignal> {
        if channel >= self.channels() {
            return Err(Error::RefChannelOutOfRange {
                channel,
                channels: self.channels(),
            });
        }
        Ok(TimeSignal {
            samples: self
                .samples
                .row(channel)
                .to_owned()
                .insert_axis(ndarray::Axis(0)),
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Total energy, summed over all channels.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Root-mean-square amplitude over all channels.
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    /// Elementwise sum of two signals of identical shape and rate.
    pub fn add(&self, other: &TimeSignal) -> Result<TimeSignal> {
        self.check_compatible(other)?;
        Ok(TimeSignal {
            samples: &self.samples + &other.samples,
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Elementwise difference of two signals of identical shape and rate.
    pub fn sub(&self, other: &TimeSignal) -> Result<TimeSignal> {
        self.check_compatible(other)?;
        Ok(TimeSignal {
            samples: &self.samples - &other.samples,
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Copy scaled by a constant.
    pub fn scale(&self, factor: f64) -> TimeSignal {
        TimeSignal {
            samples: &self.samples * factor,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    fn check_compatible(&self, other: &TimeSignal) -> Result<()> {
        if self.samples.dim() != other.samples.dim() {
            return Err(Error::ShapeMismatch(format!(
                "signal {:?} vs {:?}",
                self.samples.dim(),
                other.samples.dim()
            )));
        }
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(Error::ShapeMismatch(format!(
                "sample rate {} Hz vs {} Hz",
                self.sample_rate_hz, other.sample_rate_hz
            )));
        }
        Ok(())
    }

    /// Reads a WAV file. Integer PCM is scaled to nominal full scale 1.0;
    /// float samples are taken as stored.
    pub fn read_wav(path: &Path) -> Result<TimeSignal> {
        let mut reader = WavReader::open(path).map_err(|e| Error::wav(path, e))?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        if channels == 0 {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                message: "zero channels".to_string(),
            });
        }
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => {
                let scale = 1.0 / 32768.0;
                reader
                    .samples::<i16>()
                    .map(|s| s.map(|v| v as f64 * scale))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::wav(path, e))?
            }
            (SampleFormat::Int, 24) | (SampleFormat::Int, 32) => {
                let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f64 * scale))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::wav(path, e))?
            }
            (SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::wav(path, e))?,
            (format, bits) => {
                return Err(Error::Wav {
                    path: path.to_path_buf(),
                    message: format!("unsupported format {format:?} at {bits} bits"),
                });
            }
        };
        let frames = interleaved.len() / channels;
        let mut samples = Array2::zeros((channels, frames));
        for (i, value) in interleaved.iter().enumerate().take(frames * channels) {
            samples[[i % channels, i / channels]] = *value;
        }
        Ok(TimeSignal {
            samples,
            sample_rate_hz: spec.sample_rate,
        })
    }

    /// Writes the signal as 32-bit float WAV, preserving values exactly up to
    /// the f64 to f32 narrowing.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput);
        }
        let spec = WavSpec {
            channels: self.channels() as u16,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut writer = WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
        for frame in 0..self.len() {
            for channel in 0..self.channels() {
                writer
                    .write_sample(self.samples[[channel, frame]] as f32)
                    .map_err(|e| Error::wav(path, e))?;
            }
        }
        writer.finalize().map_err(|e| Error::wav(path, e))?;
        Ok(())
    }

    /// Writes the signal as 16-bit PCM WAV, clipping to [-1, 1).
    pub fn write_wav_pcm16(&self, path: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput);
        }
        let spec = WavSpec {
            channels: self.channels() as u16,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut writer = WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
        for frame in 0..self.len() {
            for channel in 0..self.channels() {
                let value = (self.samples[[channel, frame]] * 32768.0)
                    .round()
                    .clamp(-32768.0, 32767.0) as i16;
                writer
                    .write_sample(value)
                    .map_err(|e| Error::wav(path, e))?;
            }
        }
        writer.finalize().map_err(|e| Error::wav(path, e))?;
        Ok(())
    }
}
