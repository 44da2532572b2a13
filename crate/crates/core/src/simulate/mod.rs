//! Synthetic reverberant scene generation.
//!
//! Scenes are built from modulated-noise sources convolved with randomly
//! drawn exponential-decay room responses, mixed with white noise at an
//! exact signal-to-noise ratio. The oracle estimator turns a scene's clean
//! references into controllable source estimates for the pipeline.

mod io;

pub use io::{
    load_scene, scene_id, simulate_corpus, write_scene, CorpusSpec, LoadedScene, Manifest,
    SceneFiles, MANIFEST_NAME,
};

use ndarray::Array2;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::seed::{mix_seed, SALT_NOISE, SALT_OFFSETS, SALT_RIR, SALT_SOURCE};
use crate::signal::TimeSignal;
use crate::stft::Spectrogram;

/// Base direct-path delay in samples shared by all room responses.
pub const DIRECT_DELAY_SAMPLES: usize = 40;
/// Silent gap in samples between the direct tap and the reverberant tail.
pub const EARLY_GAP_SAMPLES: usize = 8;
/// Largest per-speaker, per-channel deviation from the base direct delay.
pub const MAX_DELAY_JITTER: i64 = 2;

/// Parameters of one synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub num_speakers: usize,
    pub num_channels: usize,
    pub t60_seconds: f64,
    pub noise_snr_db: f64,
    pub duration_seconds: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> SceneSpec {
        SceneSpec {
            num_speakers: 2,
            num_channels: 2,
            t60_seconds: 0.3,
            noise_snr_db: 25.0,
            duration_seconds: 3.0,
            sample_rate_hz: 8000,
            seed: 0,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 {
            return Err(Error::BadConfig("scene needs at least one speaker".to_string()));
        }
        if self.num_channels == 0 {
            return Err(Error::BadConfig("scene needs at least one channel".to_string()));
        }
        if !(self.t60_seconds > 0.0) {
            return Err(Error::BadConfig(format!(
                "t60 must be positive, got {}",
                self.t60_seconds
            )));
        }
        if self.noise_snr_db.is_nan() {
            return Err(Error::BadConfig("noise snr must not be NaN".to_string()));
        }
        if !(self.duration_seconds > 0.0) {
            return Err(Error::BadConfig(format!(
                "duration must be positive, got {}",
                self.duration_seconds
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::BadConfig("sample rate must be positive".to_string()));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_seconds * self.sample_rate_hz as f64).round() as usize
    }
}

/// A fully rendered scene with all per-source references kept around.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Dry sources, one per speaker.
    pub sources: Vec<Vec<f64>>,
    /// Room responses, indexed `[speaker][channel]`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    /// Direct-path delay per `[speaker][channel]`.
    pub direct_delays: Vec<Vec<usize>>,
    /// Direct-path images, one multichannel signal per speaker.
    pub direct: Vec<TimeSignal>,
    /// Full reverberant images, one multichannel signal per speaker.
    pub reverberant: Vec<TimeSignal>,
    /// Scaled noise, defined as the mixture minus all reverberant images.
    pub noise: TimeSignal,
    pub mixture: TimeSignal,
}

/// Generates an amplitude-modulated noise test source with unit peak
/// envelope and RMS near 0.1.
pub fn gen_source(seed: u64, len: usize, sample_rate_hz: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f1 = rng.random_range(1.0..3.0);
    let f2 = rng.random_range(3.0..7.0);
    let phase1 = rng.random_range(0.0..std::f64::consts::TAU);
    let phase2 = rng.random_range(0.0..std::f64::consts::TAU);
    let fs = sample_rate_hz as f64;
    let mut out = Vec::with_capacity(len);
    let mut energy = 0.0;
    for n in 0..len {
        let t = n as f64 / fs;
        let env1 = 0.5 + 0.5 * (std::f64::consts::TAU * f1 * t + phase1).sin();
        let env2 = 0.5 + 0.5 * (std::f64::consts::TAU * f2 * t + phase2).sin();
        let envelope = 0.1 + 0.9 * env1 * env2;
        let white: f64 = rng.sample(StandardNormal);
        let sample = envelope * white;
        energy += sample * sample;
        out.push(sample);
    }
    if energy > 0.0 {
        let gain = 0.1 / (energy / len as f64).sqrt();
        for v in out.iter_mut() {
            *v *= gain;
        }
    }
    out
}

/// Draws an exponentially decaying room impulse response.
///
/// The direct path is a unit tap at `direct_delay_samples`, followed by a
/// short silent gap and a Gaussian tail whose envelope decays by 60 dB over
/// `t60_seconds`.
pub fn gen_rir(
    seed: u64,
    t60_seconds: f64,
    direct_delay_samples: usize,
    len: usize,
    sample_rate_hz: u32,
) -> Result<Vec<f64>> {
    if !(t60_seconds > 0.0) {
        return Err(Error::BadConfig(format!(
            "t60 must be positive, got {t60_seconds}"
        )));
    }
    if sample_rate_hz == 0 {
        return Err(Error::BadConfig("sample rate must be positive".to_string()));
    }
    if direct_delay_samples >= len {
        return Err(Error::BadConfig(format!(
            "direct delay {direct_delay_samples} does not fit in rir of length {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rir = vec![0.0; len];
    rir[direct_delay_samples] = 1.0;
    let decay = 3.0 * std::f64::consts::LN_10 / (t60_seconds * sample_rate_hz as f64);
    for (n, value) in rir.iter_mut().enumerate() {
        if n > direct_delay_samples + EARLY_GAP_SAMPLES {
            let g: f64 = rng.sample(StandardNormal);
            // Scale the tail so its average power sits below the direct tap.
            *value = 0.35 * g * (-decay * (n - direct_delay_samples) as f64).exp();
        }
    }
    Ok(rir)
}

/// Renders a scene from externally supplied dry sources.
pub fn render_scene(spec: &SceneSpec, sources: &[Vec<f64>]) -> Result<Scene> {
    spec.validate()?;
    if sources.len() != spec.num_speakers {
        return Err(Error::SpeakerCountMismatch {
            expected: spec.num_speakers,
            got: sources.len(),
        });
    }
    let len = sources.first().map_or(0, Vec::len);
    if len == 0 {
        return Err(Error::EmptyInput);
    }
    if sources.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeMismatch(
            "sources must share one length".to_string(),
        ));
    }

    let delays = draw_direct_delays(spec);
    let fs = spec.sample_rate_hz;
    let decay_len = (spec.t60_seconds * fs as f64).ceil() as usize;
    let rir_len = (DIRECT_DELAY_SAMPLES + MAX_DELAY_JITTER as usize + EARLY_GAP_SAMPLES + decay_len + 1)
        .min(len);

    let mut rirs = Vec::with_capacity(spec.num_speakers);
    let mut direct = Vec::with_capacity(spec.num_speakers);
    let mut reverberant = Vec::with_capacity(spec.num_speakers);
    for (c, source) in sources.iter().enumerate() {
        let mut speaker_rirs = Vec::with_capacity(spec.num_channels);
        let mut direct_image = Array2::zeros((spec.num_channels, len));
        let mut reverb_image = Array2::zeros((spec.num_channels, len));
        for p in 0..spec.num_channels {
            let delay = delays[c][p];
            let rir = gen_rir(
                mix_seed(spec.seed, &[SALT_RIR, c as u64, p as u64]),
                spec.t60_seconds,
                delay,
                rir_len,
                fs,
            )?;
            for n in delay..len {
                direct_image[[p, n]] = source[n - delay];
            }
            let convolved = fft_convolve(source, &rir, len);
            for (n, value) in convolved.iter().enumerate() {
                reverb_image[[p, n]] = *value;
            }
            speaker_rirs.push(rir);
        }
        rirs.push(speaker_rirs);
        direct.push(TimeSignal::new(direct_image, fs));
        reverberant.push(TimeSignal::new(reverb_image, fs));
    }

    let mut reverb_sum = TimeSignal::zeros(spec.num_channels, len, fs);
    for image in &reverberant {
        reverb_sum = reverb_sum.add(image)?;
    }
    let signal_energy = reverb_sum.energy();
    if signal_energy == 0.0 {
        return Err(Error::SilentReference);
    }

    let mut noise = Array2::zeros((spec.num_channels, len));
    if spec.noise_snr_db.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[SALT_NOISE]));
        let mut raw_energy = 0.0;
        for p in 0..spec.num_channels {
            for n in 0..len {
                let g: f64 = rng.sample(StandardNormal);
                noise[[p, n]] = g;
                raw_energy += g * g;
            }
        }
        let target_energy = signal_energy * 10f64.powf(-spec.noise_snr_db / 10.0);
        let gain = (target_energy / raw_energy).sqrt();
        noise.mapv_inplace(|v| v * gain);
    }
    let mixture = reverb_sum.add(&TimeSignal::new(noise, fs))?;

    // Store the noise as the residual of the additive model, computed in
    // speaker order, so mixture - images reproduces it bit for bit.
    let mut residual = mixture.clone();
    for image in &reverberant {
        residual = residual.sub(image)?;
    }

    Ok(Scene {
        spec: *spec,
        sources: sources.to_vec(),
        rirs,
        direct_delays: delays,
        direct,
        reverberant,
        noise: residual,
        mixture,
    })
}

/// Generates the dry sources from the scene seed and renders the scene.
pub fn make_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let len = spec.num_samples();
    let sources: Vec<Vec<f64>> = (0..spec.num_speakers)
        .map(|c| {
            gen_source(
                mix_seed(spec.seed, &[SALT_SOURCE, c as u64]),
                len,
                spec.sample_rate_hz,
            )
        })
        .collect();
    render_scene(spec, &sources)
}

/// Per-speaker direct delay vectors, re-drawn until no two speakers share
/// the same vector so that every speaker keeps a distinct spatial signature.
fn draw_direct_delays(spec: &SceneSpec) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[SALT_OFFSETS]));
    let mut delays: Vec<Vec<usize>> = Vec::with_capacity(spec.num_speakers);
    for _ in 0..spec.num_speakers {
        let mut attempts = 0;
        loop {
            let candidate: Vec<usize> = (0..spec.num_channels)
                .map(|_| {
                    let offset = rng.random_range(-MAX_DELAY_JITTER..=MAX_DELAY_JITTER);
                    (DIRECT_DELAY_SAMPLES as i64 + offset) as usize
                })
                .collect();
            attempts += 1;
            if !delays.contains(&candidate) || attempts > 200 {
                delays.push(candidate);
                break;
            }
        }
    }
    delays
}

/// Linear convolution via FFT, truncated to `out_len` samples.
fn fft_convolve(signal: &[f64], kernel: &[f64], out_len: usize) -> Vec<f64> {
    let full = signal.len() + kernel.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut a = vec![Complex64::default(); size];
    let mut b = vec![Complex64::default(); size];
    for (dst, src) in a.iter_mut().zip(signal.iter()) {
        dst.re = *src;
    }
    for (dst, src) in b.iter_mut().zip(kernel.iter()) {
        dst.re = *src;
    }
    fft.process(&mut a);
    fft.process(&mut b);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= *y;
    }
    ifft.process(&mut a);
    let scale = 1.0 / size as f64;
    a.iter().take(out_len).map(|v| v.re * scale).collect()
}

/// How the oracle estimator perturbs the clean reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// Add complex white noise.
    White,
    /// Add a scaled copy of the residual reverberation (reverberant minus
    /// direct), mimicking an estimator that leaves some tail in place.
    ResidualReverb,
}

/// Error level and shape for the oracle estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateQuality {
    /// Ratio of clean power to perturbation power in dB. Infinite means the
    /// estimate is the clean reference itself.
    pub est_snr_db: f64,
    pub kind: PerturbationKind,
}

impl EstimateQuality {
    /// A perfect estimator.
    pub fn oracle() -> EstimateQuality {
        EstimateQuality {
            est_snr_db: f64::INFINITY,
            kind: PerturbationKind::White,
        }
    }
}

/// Produces a source estimate by perturbing the clean direct-path reference
/// at an exact power ratio.
///
/// Stands in for a learned estimator: `est_snr_db` controls how good that
/// estimator is, and the perturbation kind controls what its errors look
/// like.
pub fn emulate_estimator(
    direct: &Spectrogram,
    reverberant: &Spectrogram,
    quality: &EstimateQuality,
    seed: u64,
) -> Result<Spectrogram> {
    if direct.data().dim() != reverberant.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "direct {:?} vs reverberant {:?}",
            direct.data().dim(),
            reverberant.data().dim()
        )));
    }
    if quality.est_snr_db.is_nan() {
        return Err(Error::BadConfig("estimate snr must not be NaN".to_string()));
    }
    if quality.est_snr_db == f64::INFINITY {
        return Ok(direct.clone());
    }
    let target_energy = direct.energy();
    if target_energy == 0.0 {
        return Err(Error::SilentTarget);
    }
    let desired = target_energy * 10f64.powf(-quality.est_snr_db / 10.0);

    let perturbation = match quality.kind {
        PerturbationKind::ResidualReverb => {
            let residual = reverberant.sub(direct)?;
            if residual.energy() > 0.0 {
                residual
            } else {
                // Anechoic reference: there is no tail to leave in place, so
                // fall back to a white perturbation.
                white_noise_like(direct, seed)
            }
        }
        PerturbationKind::White => white_noise_like(direct, seed),
    };
    let scale = (desired / perturbation.energy()).sqrt();
    direct.add(&perturbation.scale(Complex64::new(scale, 0.0)))
}

fn white_noise_like(reference: &Spectrogram, seed: u64) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = ndarray::Array3::from_shape_fn(reference.data().dim(), |_| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let mut spec = Spectrogram::new(data, *reference.config()).expect("white noise is finite");
    if let Some(len) = reference.source_len() {
        spec = spec.with_source_len(len);
    }
    spec
}
