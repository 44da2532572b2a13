//! Python bindings for the convpred dereverberation toolkit.
//!
//! The module mirrors the library's main operations: STFT analysis and
//! synthesis, scene simulation, the configurable enhancement pipeline, and
//! SI-SDR scoring. Audio moves across the boundary as nested lists
//! (`[channels][samples]` floats, `[channels][frames][bins]` complex), which
//! keeps the module free of binary array dependencies.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use convpred::metrics;
use convpred::pipeline::{run_scene, PipelineConfig, SceneInput};
use convpred::signal::TimeSignal;
use convpred::simulate::{make_scene, SceneSpec};
use convpred::stft;
use convpred::Error;

fn to_py_err(error: Error) -> PyErr {
    match error.exit_code() {
        2 => PyValueError::new_err(error.to_string()),
        _ => PyRuntimeError::new_err(error.to_string()),
    }
}

fn signal_from_rows(rows: Vec<Vec<f64>>, sample_rate_hz: u32) -> PyResult<TimeSignal> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("samples must have at least one channel"));
    }
    let len = rows[0].len();
    if rows.iter().any(|row| row.len() != len) {
        return Err(PyValueError::new_err("all channels must have the same length"));
    }
    let mut data = ndarray::Array2::zeros((rows.len(), len));
    for (c, row) in rows.iter().enumerate() {
        for (t, value) in row.iter().enumerate() {
            data[[c, t]] = *value;
        }
    }
    Ok(TimeSignal::new(data, sample_rate_hz))
}

fn signal_to_rows(signal: &TimeSignal) -> Vec<Vec<f64>> {
    (0..signal.channels())
        .map(|c| signal.samples().row(c).to_vec())
        .collect()
}

/// Analysis settings shared by every STFT in a pipeline.
#[pyclass(name = "StftConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyStftConfig {
    inner: stft::StftConfig,
}

#[pymethods]
impl PyStftConfig {
    #[new]
    #[pyo3(signature = (window_len=256, hop=64, fft_size=256, sample_rate_hz=8000))]
    fn new(window_len: usize, hop: usize, fft_size: usize, sample_rate_hz: u32) -> PyResult<Self> {
        let inner = stft::StftConfig {
            window_len,
            hop,
            fft_size,
            sample_rate_hz,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(PyStftConfig { inner })
    }

    #[getter]
    fn window_len(&self) -> usize {
        self.inner.window_len
    }

    #[getter]
    fn hop(&self) -> usize {
        self.inner.hop
    }

    #[getter]
    fn fft_size(&self) -> usize {
        self.inner.fft_size
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.inner.sample_rate_hz
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.fft_size / 2 + 1
    }

    fn __repr__(&self) -> String {
        format!(
            "StftConfig(window_len={}, hop={}, fft_size={}, sample_rate_hz={})",
            self.inner.window_len, self.inner.hop, self.inner.fft_size, self.inner.sample_rate_hz
        )
    }
}

/// Complex STFT of a multichannel signal.
#[pyclass(name = "Spectrogram")]
struct PySpectrogram {
    inner: stft::Spectrogram,
}

#[pymethods]
impl PySpectrogram {
    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames()
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.bins()
    }

    #[getter]
    fn config(&self) -> PyStftConfig {
        PyStftConfig {
            inner: *self.inner.config(),
        }
    }

    /// Returns the coefficients as `[channels][frames][bins]` complex lists.
    fn data(&self) -> Vec<Vec<Vec<Complex64>>> {
        let (channels, frames, bins) = self.inner.data().dim();
        (0..channels)
            .map(|c| {
                (0..frames)
                    .map(|t| (0..bins).map(|f| self.inner.data()[[c, t, f]]).collect())
                    .collect()
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Spectrogram(channels={}, frames={}, bins={})",
            self.inner.channels(),
            self.inner.frames(),
            self.inner.bins()
        )
    }
}

/// Computes the STFT of `samples` (`[channels][samples]`).
#[pyfunction]
fn analyze(samples: Vec<Vec<f64>>, config: &PyStftConfig) -> PyResult<PySpectrogram> {
    let signal = signal_from_rows(samples, config.inner.sample_rate_hz)?;
    let inner = stft::analyze(&signal, &config.inner).map_err(to_py_err)?;
    Ok(PySpectrogram { inner })
}

/// Inverts a spectrogram back to `[channels][samples]` lists.
#[pyfunction]
fn synthesize(spec: &PySpectrogram) -> PyResult<Vec<Vec<f64>>> {
    let signal = stft::synthesize(&spec.inner).map_err(to_py_err)?;
    Ok(signal_to_rows(&signal))
}

/// A simulated reverberant multi-speaker scene.
#[pyclass(name = "Scene")]
struct PyScene {
    mixture: TimeSignal,
    direct: Vec<TimeSignal>,
    reverberant: Vec<TimeSignal>,
    sample_rate_hz: u32,
    seed: u64,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn num_speakers(&self) -> usize {
        self.direct.len()
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.mixture.channels()
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.seed
    }

    /// Mixture as `[channels][samples]`.
    fn mixture(&self) -> Vec<Vec<f64>> {
        signal_to_rows(&self.mixture)
    }

    /// Direct-path image of one speaker as `[channels][samples]`.
    fn direct(&self, speaker: usize) -> PyResult<Vec<Vec<f64>>> {
        self.direct
            .get(speaker)
            .map(signal_to_rows)
            .ok_or_else(|| PyValueError::new_err(format!("no speaker {speaker}")))
    }

    /// Reverberant image of one speaker as `[channels][samples]`.
    fn reverberant(&self, speaker: usize) -> PyResult<Vec<Vec<f64>>> {
        self.reverberant
            .get(speaker)
            .map(signal_to_rows)
            .ok_or_else(|| PyValueError::new_err(format!("no speaker {speaker}")))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(num_speakers={}, num_channels={}, samples={}, seed={})",
            self.direct.len(),
            self.mixture.channels(),
            self.mixture.len(),
            self.seed
        )
    }
}

/// Renders a synthetic reverberant scene.
#[pyfunction]
#[pyo3(signature = (
    num_speakers=2,
    num_channels=2,
    t60_seconds=0.3,
    noise_snr_db=25.0,
    duration_seconds=3.0,
    sample_rate_hz=8000,
    seed=0,
))]
fn simulate_scene(
    num_speakers: usize,
    num_channels: usize,
    t60_seconds: f64,
    noise_snr_db: f64,
    duration_seconds: f64,
    sample_rate_hz: u32,
    seed: u64,
) -> PyResult<PyScene> {
    let spec = SceneSpec {
        num_speakers,
        num_channels,
        t60_seconds,
        noise_snr_db,
        duration_seconds,
        sample_rate_hz,
        seed,
    };
    let scene = make_scene(&spec).map_err(to_py_err)?;
    Ok(PyScene {
        mixture: scene.mixture,
        direct: scene.direct,
        reverberant: scene.reverberant,
        sample_rate_hz,
        seed,
    })
}

/// Output of running a pipeline on one scene.
#[pyclass(name = "PipelineResult")]
struct PyPipelineResult {
    enhanced: Vec<TimeSignal>,
    sample_rate_hz: u32,
    chain: Option<String>,
    permutation: Option<Vec<usize>>,
    per_speaker_db: Option<Vec<f64>>,
    mean_si_sdr_db: Option<f64>,
    mixture_mean_si_sdr_db: Option<f64>,
    improvement_db: Option<f64>,
}

#[pymethods]
impl PyPipelineResult {
    #[getter]
    fn num_speakers(&self) -> usize {
        self.enhanced.len()
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    /// Enhanced mono signal of one speaker.
    fn enhanced(&self, speaker: usize) -> PyResult<Vec<f64>> {
        self.enhanced
            .get(speaker)
            .map(|signal| signal.samples().row(0).to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no speaker {speaker}")))
    }

    #[getter]
    fn chain(&self) -> Option<String> {
        self.chain.clone()
    }

    #[getter]
    fn permutation(&self) -> Option<Vec<usize>> {
        self.permutation.clone()
    }

    #[getter]
    fn per_speaker_db(&self) -> Option<Vec<f64>> {
        self.per_speaker_db.clone()
    }

    #[getter]
    fn mean_si_sdr_db(&self) -> Option<f64> {
        self.mean_si_sdr_db
    }

    #[getter]
    fn mixture_mean_si_sdr_db(&self) -> Option<f64> {
        self.mixture_mean_si_sdr_db
    }

    #[getter]
    fn improvement_db(&self) -> Option<f64> {
        self.improvement_db
    }

    fn __repr__(&self) -> String {
        match self.mean_si_sdr_db {
            Some(mean) => format!(
                "PipelineResult(num_speakers={}, mean_si_sdr_db={mean:.3})",
                self.enhanced.len()
            ),
            None => format!("PipelineResult(num_speakers={})", self.enhanced.len()),
        }
    }
}

/// Runs a pipeline described by `config_text` on a simulated scene.
///
/// The text uses the same format as the CLI's `--config` file: `[stage NAME]`
/// sections with optional `key=value` lines, plus global keys before the
/// first section.
#[pyfunction]
fn run_pipeline(config_text: &str, scene: &PyScene) -> PyResult<PyPipelineResult> {
    let config = PipelineConfig::parse(config_text).map_err(to_py_err)?;
    let input = SceneInput {
        id: format!("scene_{:016x}", scene.seed),
        seed: scene.seed,
        mixture: scene.mixture.clone(),
        direct: scene.direct.clone(),
        reverberant: scene.reverberant.clone(),
    };
    let outcome = run_scene(&input, &config).map_err(to_py_err)?;
    let record = outcome.record;
    Ok(PyPipelineResult {
        enhanced: outcome.enhanced,
        sample_rate_hz: scene.sample_rate_hz,
        chain: record.as_ref().map(|r| r.chain.clone()),
        permutation: record.as_ref().map(|r| r.permutation.clone()),
        per_speaker_db: record.as_ref().map(|r| r.per_speaker_db.clone()),
        mean_si_sdr_db: record.as_ref().map(|r| r.mean_db),
        mixture_mean_si_sdr_db: record.as_ref().and_then(|r| r.mixture_mean_db),
        improvement_db: record.as_ref().and_then(|r| r.improvement_db),
    })
}

/// Scale-invariant SDR of a mono estimate against a mono reference, in dB.
#[pyfunction]
#[pyo3(signature = (estimate, reference, sample_rate_hz=8000))]
fn si_sdr(estimate: Vec<f64>, reference: Vec<f64>, sample_rate_hz: u32) -> PyResult<f64> {
    let estimate = signal_from_rows(vec![estimate], sample_rate_hz)?;
    let reference = signal_from_rows(vec![reference], sample_rate_hz)?;
    metrics::si_sdr(&estimate, &reference).map_err(to_py_err)
}

#[pymodule]
fn convpred_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStftConfig>()?;
    m.add_class::<PySpectrogram>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyPipelineResult>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    Ok(())
}
