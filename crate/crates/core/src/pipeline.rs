//! Configurable enhancement pipelines over simulated scenes.
//!
//! A pipeline is an ordered list of stages applied to every scene. The
//! working state holds one spectrogram per speaker, all starting as the
//! mixture; estimate stages attach oracle source estimates, dereverberation
//! stages refine the per-speaker state channel by channel, the beamformer
//! collapses it to one channel, and the evaluate stage scores it against the
//! direct-path references. With multiple passes the whole stage list repeats,
//! refreshing estimates at a per-pass quality.

use std::path::Path;

use itertools::Itertools;
use ndarray::{Array3, Axis};
use rayon::prelude::*;

use crate::beamform::{
    apply_beamformer, mvdr_weights, nontarget_signal, spatial_covariance, steering_vector,
    NontargetVariant, DEFAULT_MVDR_LOADING,
};
use crate::error::{Error, Result};
use crate::linpred::{
    cfcp_dereverb, fcp_dereverb, fcp_filter, msfcp_run, weight_floor, wpe_classic, wpe_dereverb,
    wpe_filter, PredictionFilter, DEFAULT_EPSILON, DEFAULT_FCP_TAPS, DEFAULT_LOADING,
    DEFAULT_MSFCP_STEPS, DEFAULT_WPE_DELAY, DEFAULT_WPE_TAPS,
};
use crate::metrics::{resolve_permutation, write_report, ReportRecord};
use crate::seed::{mix_seed, SALT_ESTIMATE};
use crate::signal::TimeSignal;
use crate::simulate::{
    emulate_estimator, load_scene, EstimateQuality, Manifest, PerturbationKind, SceneFiles,
};
use crate::stft::{analyze, synthesize, Spectrogram, StftConfig};

pub const DEFAULT_REF_CHANNEL: usize = 0;

/// Oracle estimator stage settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateStage {
    pub kind: PerturbationKind,
    /// Estimate quality per pass in dB; the last entry repeats for any
    /// further passes.
    pub est_snr_db: Vec<f64>,
}

impl Default for EstimateStage {
    fn default() -> EstimateStage {
        EstimateStage {
            kind: PerturbationKind::White,
            est_snr_db: vec![f64::INFINITY],
        }
    }
}

/// Weighted prediction error stage settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeStage {
    pub taps: usize,
    pub delay: usize,
    pub epsilon: f64,
    pub loading: f64,
    /// Zero uses the current source estimates as the source power (one
    /// closed-form solve); a positive count runs that many estimate-free
    /// alternating iterations instead.
    pub iterations: usize,
}

impl Default for WpeStage {
    fn default() -> WpeStage {
        WpeStage {
            taps: DEFAULT_WPE_TAPS,
            delay: DEFAULT_WPE_DELAY,
            epsilon: DEFAULT_EPSILON,
            loading: DEFAULT_LOADING,
            iterations: 0,
        }
    }
}

/// Forward convolutive prediction stage settings, shared by the plain and
/// combined variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcpStage {
    pub taps: usize,
    pub epsilon: f64,
    pub loading: f64,
}

impl Default for FcpStage {
    fn default() -> FcpStage {
        FcpStage {
            taps: DEFAULT_FCP_TAPS,
            epsilon: DEFAULT_EPSILON,
            loading: DEFAULT_LOADING,
        }
    }
}

/// Multi-step forward convolutive prediction stage settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsFcpStage {
    pub taps: usize,
    pub epsilon: f64,
    pub loading: f64,
    pub steps: usize,
}

impl Default for MsFcpStage {
    fn default() -> MsFcpStage {
        MsFcpStage {
            taps: DEFAULT_FCP_TAPS,
            epsilon: DEFAULT_EPSILON,
            loading: DEFAULT_LOADING,
            steps: DEFAULT_MSFCP_STEPS,
        }
    }
}

/// Beamforming stage settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvdrStage {
    pub variant: NontargetVariant,
    pub loading: f64,
}

impl Default for MvdrStage {
    fn default() -> MvdrStage {
        MvdrStage {
            variant: NontargetVariant::DereverbResidual,
            loading: DEFAULT_MVDR_LOADING,
        }
    }
}

/// One pipeline stage with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum StageConfig {
    Estimate(EstimateStage),
    Wpe(WpeStage),
    Fcp(FcpStage),
    Cfcp(FcpStage),
    MsFcp(MsFcpStage),
    Mvdr(MvdrStage),
    Evaluate,
}

impl StageConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StageConfig::Estimate(_) => "estimate",
            StageConfig::Wpe(_) => "wpe",
            StageConfig::Fcp(_) => "fcp",
            StageConfig::Cfcp(_) => "cfcp",
            StageConfig::MsFcp(_) => "msfcp",
            StageConfig::Mvdr(_) => "mvdr",
            StageConfig::Evaluate => "evaluate",
        }
    }

    fn requires_estimates(&self) -> bool {
        match self {
            StageConfig::Estimate(_) | StageConfig::Evaluate => false,
            StageConfig::Wpe(stage) => stage.iterations == 0,
            StageConfig::Fcp(_)
            | StageConfig::Cfcp(_)
            | StageConfig::MsFcp(_)
            | StageConfig::Mvdr(_) => true,
        }
    }
}

/// A parsed pipeline: global settings plus the stage list.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub passes: usize,
    pub ref_channel: usize,
    /// Analysis settings; the sample rate is replaced per scene.
    pub stft: StftConfig,
    pub stages: Vec<StageConfig>,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            passes: 1,
            ref_channel: DEFAULT_REF_CHANNEL,
            stft: StftConfig::default(),
            stages: Vec::new(),
        }
    }
}

fn config_err(line: usize, message: String) -> Error {
    Error::ConfigParse { line, message }
}

fn parse_value<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(line, format!("invalid {what}: {value}")))
}

fn parse_snr(value: &str, line: usize) -> Result<f64> {
    match value {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        other => {
            let snr: f64 = parse_value(other, line, "est_snr_db")?;
            if snr.is_nan() {
                return Err(config_err(line, "est_snr_db must not be NaN".to_string()));
            }
            Ok(snr)
        }
    }
}

impl PipelineConfig {
    /// Parses and validates the plain text configuration format: global
    /// `key=value` lines followed by `[stage NAME]` sections.
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        let mut current: Option<StageConfig> = None;
        for (number, raw) in text.lines().enumerate() {
            let line_no = number + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(inner) = rest.strip_suffix(']') else {
                    return Err(config_err(
                        line_no,
                        format!("unterminated section header {line}"),
                    ));
                };
                let Some(stage_name) = inner.trim().strip_prefix("stage ") else {
                    return Err(config_err(
                        line_no,
                        format!("expected [stage NAME], got {line}"),
                    ));
                };
                if let Some(done) = current.take() {
                    config.stages.push(done);
                }
                current = Some(match stage_name.trim() {
                    "estimate" => StageConfig::Estimate(EstimateStage::default()),
                    "wpe" => StageConfig::Wpe(WpeStage::default()),
                    "fcp" => StageConfig::Fcp(FcpStage::default()),
                    "cfcp" => StageConfig::Cfcp(FcpStage::default()),
                    "msfcp" => StageConfig::MsFcp(MsFcpStage::default()),
                    "mvdr" => StageConfig::Mvdr(MvdrStage::default()),
                    "evaluate" => StageConfig::Evaluate,
                    other => {
                        return Err(config_err(line_no, format!("unknown stage {other}")));
                    }
                });
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(line_no, format!("expected key=value, got {line}")));
            };
            let key = key.trim();
            let value = value.trim();
            match current.as_mut() {
                None => match key {
                    "passes" => config.passes = parse_value(value, line_no, "passes")?,
                    "ref_channel" => {
                        config.ref_channel = parse_value(value, line_no, "ref_channel")?
                    }
                    "window_len" => {
                        config.stft.window_len = parse_value(value, line_no, "window_len")?
                    }
                    "hop" => config.stft.hop = parse_value(value, line_no, "hop")?,
                    "fft_size" => config.stft.fft_size = parse_value(value, line_no, "fft_size")?,
                    other => {
                        return Err(config_err(line_no, format!("unknown key {other}")));
                    }
                },
                Some(stage) => set_stage_key(stage, key, value, line_no)?,
            }
        }
        if let Some(done) = current.take() {
            config.stages.push(done);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::BadConfig("passes must be at least 1".to_string()));
        }
        self.stft.validate()?;
        if self.stages.is_empty() {
            return Err(Error::BadConfig("pipeline has no stages".to_string()));
        }
        let mut have_estimates = false;
        for stage in &self.stages {
            if stage.requires_estimates() && !have_estimates {
                return Err(Error::BadConfig(format!(
                    "{} stage requires an earlier estimate stage",
                    stage.name()
                )));
            }
            match stage {
                StageConfig::Estimate(s) => {
                    if s.est_snr_db.is_empty() {
                        return Err(Error::BadConfig(
                            "estimate stage needs at least one est_snr_db value".to_string(),
                        ));
                    }
                    have_estimates = true;
                }
                StageConfig::Wpe(s) => {
                    check_positive(s.taps, "wpe taps")?;
                    check_positive(s.delay, "wpe delay")?;
                    check_epsilon(s.epsilon, "wpe")?;
                    check_loading(s.loading, "wpe")?;
                }
                StageConfig::Fcp(s) | StageConfig::Cfcp(s) => {
                    check_positive(s.taps, "fcp taps")?;
                    check_epsilon(s.epsilon, "fcp")?;
                    check_loading(s.loading, "fcp")?;
                }
                StageConfig::MsFcp(s) => {
                    check_positive(s.taps, "msfcp taps")?;
                    check_positive(s.steps, "msfcp steps")?;
                    check_epsilon(s.epsilon, "msfcp")?;
                    check_loading(s.loading, "msfcp")?;
                }
                StageConfig::Mvdr(s) => check_loading(s.loading, "mvdr")?,
                StageConfig::Evaluate => {}
            }
        }
        Ok(())
    }

    /// Stage names joined for report rows, with a pass-count prefix when the
    /// list repeats.
    pub fn chain_label(&self) -> String {
        let names = self.stages.iter().map(StageConfig::name).join(",");
        if self.passes > 1 {
            format!("{}x({names})", self.passes)
        } else {
            names
        }
    }
}

fn check_positive(value: usize, what: &str) -> Result<()> {
    if value == 0 {
        return Err(Error::BadConfig(format!("{what} must be at least 1")));
    }
    Ok(())
}

fn check_epsilon(value: f64, stage: &str) -> Result<()> {
    if !(value > 0.0) {
        return Err(Error::BadConfig(format!(
            "{stage} epsilon must be positive, got {value}"
        )));
    }
    Ok(())
}

fn check_loading(value: f64, stage: &str) -> Result<()> {
    if !(value >= 0.0) {
        return Err(Error::BadConfig(format!(
            "{stage} loading must be non-negative, got {value}"
        )));
    }
    Ok(())
}

fn set_stage_key(stage: &mut StageConfig, key: &str, value: &str, line: usize) -> Result<()> {
    let unknown = |stage: &str| config_err(line, format!("unknown {stage} key {key}"));
    match stage {
        StageConfig::Estimate(s) => match key {
            "kind" => {
                s.kind = match value {
                    "white" => PerturbationKind::White,
                    "residual_reverb" => PerturbationKind::ResidualReverb,
                    other => {
                        return Err(config_err(line, format!("unknown estimate kind {other}")));
                    }
                }
            }
            "est_snr_db" => {
                s.est_snr_db = value
                    .split(',')
                    .map(|v| parse_snr(v.trim(), line))
                    .collect::<Result<_>>()?;
            }
            _ => return Err(unknown("estimate")),
        },
        StageConfig::Wpe(s) => match key {
            "taps" => s.taps = parse_value(value, line, "taps")?,
            "delay" => s.delay = parse_value(value, line, "delay")?,
            "epsilon" => s.epsilon = parse_value(value, line, "epsilon")?,
            "loading" => s.loading = parse_value(value, line, "loading")?,
            "iterations" => s.iterations = parse_value(value, line, "iterations")?,
            _ => return Err(unknown("wpe")),
        },
        StageConfig::Fcp(s) | StageConfig::Cfcp(s) => match key {
            "taps" => s.taps = parse_value(value, line, "taps")?,
            "epsilon" => s.epsilon = parse_value(value, line, "epsilon")?,
            "loading" => s.loading = parse_value(value, line, "loading")?,
            _ => return Err(unknown("fcp")),
        },
        StageConfig::MsFcp(s) => match key {
            "taps" => s.taps = parse_value(value, line, "taps")?,
            "epsilon" => s.epsilon = parse_value(value, line, "epsilon")?,
            "loading" => s.loading = parse_value(value, line, "loading")?,
            "steps" => s.steps = parse_value(value, line, "steps")?,
            _ => return Err(unknown("msfcp")),
        },
        StageConfig::Mvdr(s) => match key {
            "variant" => {
                s.variant = match value {
                    "dereverb_residual" => NontargetVariant::DereverbResidual,
                    "mixture_residual" => NontargetVariant::MixtureResidual,
                    other => {
                        return Err(config_err(line, format!("unknown mvdr variant {other}")));
                    }
                }
            }
            "loading" => s.loading = parse_value(value, line, "loading")?,
            _ => return Err(unknown("mvdr")),
        },
        StageConfig::Evaluate => return Err(unknown("evaluate")),
    }
    Ok(())
}

/// One scene's signals handed to the pipeline.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub id: String,
    pub seed: u64,
    pub mixture: TimeSignal,
    /// Direct-path reference per speaker, same channel count as the mixture.
    pub direct: Vec<TimeSignal>,
    /// Reverberant image per speaker.
    pub reverberant: Vec<TimeSignal>,
}

/// Result of running a pipeline on one scene.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    /// One mono enhanced signal per speaker.
    pub enhanced: Vec<TimeSignal>,
    /// Scores, present when the pipeline contains an evaluate stage.
    pub record: Option<ReportRecord>,
}

/// Runs the configured pipeline on one scene.
pub fn run_scene(input: &SceneInput, config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let channels = input.mixture.channels();
    let speakers = input.direct.len();
    if speakers == 0 || input.mixture.is_empty() {
        return Err(Error::EmptyInput);
    }
    if input.reverberant.len() != speakers {
        return Err(Error::SpeakerCountMismatch {
            expected: speakers,
            got: input.reverberant.len(),
        });
    }
    if config.ref_channel >= channels {
        return Err(Error::RefChannelOutOfRange {
            channel: config.ref_channel,
            channels,
        });
    }
    for reference in input.direct.iter().chain(input.reverberant.iter()) {
        if reference.channels() != channels || reference.len() != input.mixture.len() {
            return Err(Error::ShapeMismatch(format!(
                "scene {} references must match the mixture shape",
                input.id
            )));
        }
    }

    let mut stft = config.stft;
    stft.sample_rate_hz = input.mixture.sample_rate_hz();
    let mix_spec = analyze(&input.mixture, &stft)?;
    let direct_specs: Vec<Spectrogram> = input
        .direct
        .iter()
        .map(|signal| analyze(signal, &stft))
        .collect::<Result<_>>()?;
    let reverb_specs: Vec<Spectrogram> = input
        .reverberant
        .iter()
        .map(|signal| analyze(signal, &stft))
        .collect::<Result<_>>()?;

    let chain = config.chain_label();
    let mut estimates: Vec<Option<Spectrogram>> = vec![None; speakers];
    let mut enhanced: Option<Vec<TimeSignal>> = None;
    let mut record: Option<ReportRecord> = None;
    let mut current: Vec<Spectrogram> = Vec::new();

    for pass in 0..config.passes {
        current = vec![mix_spec.clone(); speakers];
        // While true, every entry of `current` is the same signal, so joint
        // stages can run one shared fit instead of one per speaker.
        let mut shared = true;
        for stage in &config.stages {
            run_stage(
                stage,
                pass,
                input,
                config,
                &mix_spec,
                &direct_specs,
                &reverb_specs,
                &mut estimates,
                &mut current,
                &mut shared,
                &chain,
                &mut enhanced,
                &mut record,
            )
            .map_err(|e| e.in_stage(stage.name(), &input.id))?;
        }
    }

    let enhanced = match enhanced {
        Some(signals) => signals,
        None => current
            .iter()
            .map(|state| synthesize_reference_channel(state, config.ref_channel))
            .collect::<Result<_>>()?,
    };
    Ok(PipelineOutcome { enhanced, record })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    stage: &StageConfig,
    pass: usize,
    input: &SceneInput,
    config: &PipelineConfig,
    mix_spec: &Spectrogram,
    direct_specs: &[Spectrogram],
    reverb_specs: &[Spectrogram],
    estimates: &mut [Option<Spectrogram>],
    current: &mut Vec<Spectrogram>,
    shared: &mut bool,
    chain: &str,
    enhanced: &mut Option<Vec<TimeSignal>>,
    record: &mut Option<ReportRecord>,
) -> Result<()> {
    let speakers = current.len();
    match stage {
        StageConfig::Estimate(params) => {
            let snr = params.est_snr_db[pass.min(params.est_snr_db.len() - 1)];
            let quality = EstimateQuality {
                est_snr_db: snr,
                kind: params.kind,
            };
            for c in 0..speakers {
                let seed = mix_seed(input.seed, &[SALT_ESTIMATE, pass as u64, c as u64]);
                estimates[c] = Some(emulate_estimator(
                    &direct_specs[c],
                    &reverb_specs[c],
                    &quality,
                    seed,
                )?);
            }
        }
        StageConfig::Wpe(params) => {
            if params.iterations > 0 {
                if *shared {
                    let stacked = wpe_classic_stack(&current[0], params)?;
                    for state in current.iter_mut() {
                        *state = stacked.clone();
                    }
                } else {
                    for state in current.iter_mut() {
                        *state = wpe_classic_stack(state, params)?;
                    }
                }
            } else {
                let ests = required_estimates(estimates, stage.name())?;
                for c in 0..speakers {
                    current[c] =
                        wpe_closed_stack(&current[c], &ests[c], params, config.ref_channel)?;
                }
                *shared = false;
            }
        }
        StageConfig::Fcp(params) => {
            let ests = required_estimates(estimates, stage.name())?;
            for c in 0..speakers {
                current[c] = fcp_stack(&current[c], &ests[c], params, config.ref_channel)?;
            }
            *shared = false;
        }
        StageConfig::Cfcp(params) => {
            let ests = required_estimates(estimates, stage.name())?;
            if *shared {
                *current = cfcp_all(&current[0], &ests, params, config.ref_channel)?;
            } else {
                let mut next = Vec::with_capacity(speakers);
                for (c, state) in current.iter().enumerate() {
                    let mut outputs = cfcp_all(state, &ests, params, config.ref_channel)?;
                    next.push(outputs.swap_remove(c));
                }
                *current = next;
            }
            *shared = false;
        }
        StageConfig::MsFcp(params) => {
            let ests = required_estimates(estimates, stage.name())?;
            if *shared {
                *current = msfcp_all(&current[0], &ests, params, config.ref_channel)?;
            } else {
                let mut next = Vec::with_capacity(speakers);
                for (c, state) in current.iter().enumerate() {
                    let mut outputs = msfcp_all(state, &ests, params, config.ref_channel)?;
                    next.push(outputs.swap_remove(c));
                }
                *current = next;
            }
            *shared = false;
        }
        StageConfig::Mvdr(params) => {
            let ests = required_estimates(estimates, stage.name())?;
            let mut next = Vec::with_capacity(speakers);
            for (c, state) in current.iter().enumerate() {
                if state.channels() < 2 {
                    return Err(Error::BadConfig(
                        "mvdr needs at least two channels".to_string(),
                    ));
                }
                if ests[c].channels() != state.channels() {
                    return Err(Error::ShapeMismatch(format!(
                        "estimate has {} channels, state has {}",
                        ests[c].channels(),
                        state.channels()
                    )));
                }
                let target_cov = spatial_covariance(&ests[c]);
                let steering = steering_vector(&target_cov);
                let (nontarget, apply_to) = match params.variant {
                    NontargetVariant::DereverbResidual => (
                        nontarget_signal(state, &ests[c], mix_spec, params.variant)?,
                        state,
                    ),
                    NontargetVariant::MixtureResidual => (
                        nontarget_signal(state, &ests[c], mix_spec, params.variant)?,
                        mix_spec,
                    ),
                };
                let noise_cov = spatial_covariance(&nontarget);
                let beamformer =
                    mvdr_weights(&steering, &noise_cov, config.ref_channel, params.loading)?;
                next.push(apply_beamformer(&beamformer, apply_to)?);
            }
            *current = next;
            *shared = false;
        }
        StageConfig::Evaluate => {
            let mono: Vec<TimeSignal> = current
                .iter()
                .map(|state| synthesize_reference_channel(state, config.ref_channel))
                .collect::<Result<_>>()?;
            let references: Vec<TimeSignal> = input
                .direct
                .iter()
                .map(|signal| signal.channel_signal(config.ref_channel))
                .collect::<Result<_>>()?;
            let mixture_mono = input.mixture.channel_signal(config.ref_channel)?;
            let eval = resolve_permutation(&mono, &references, Some(&mixture_mono))?;
            *record = Some(ReportRecord::from_eval(&input.id, chain, &eval));
            *enhanced = Some(mono);
        }
    }
    Ok(())
}

fn required_estimates(
    estimates: &[Option<Spectrogram>],
    stage: &str,
) -> Result<Vec<Spectrogram>> {
    estimates
        .iter()
        .map(|e| {
            e.clone().ok_or_else(|| {
                Error::BadConfig(format!("{stage} stage needs an earlier estimate stage"))
            })
        })
        .collect()
}

/// Channel of the estimate to pair with state channel `p`: the matching
/// channel while the state is still multichannel, else the reference
/// channel of the original array.
fn estimate_channel_index(
    estimate: &Spectrogram,
    state_channels: usize,
    p: usize,
    ref_channel: usize,
) -> usize {
    if estimate.channels() == state_channels {
        p
    } else {
        ref_channel.min(estimate.channels() - 1)
    }
}

fn stack_channels(parts: &[Spectrogram], like: &Spectrogram) -> Result<Spectrogram> {
    let (_, frames, bins) = parts[0].data().dim();
    let mut data = Array3::zeros((parts.len(), frames, bins));
    for (p, part) in parts.iter().enumerate() {
        data.index_axis_mut(Axis(0), p).assign(&part.channel(0));
    }
    let mut spec = Spectrogram::new(data, *like.config())?;
    if let Some(len) = like.source_len() {
        spec = spec.with_source_len(len);
    }
    Ok(spec)
}

fn wpe_classic_stack(state: &Spectrogram, params: &WpeStage) -> Result<Spectrogram> {
    let mut parts = Vec::with_capacity(state.channels());
    for p in 0..state.channels() {
        let result = wpe_classic(
            state,
            params.taps,
            params.delay,
            params.iterations,
            p,
            params.epsilon,
            params.loading,
        )?;
        parts.push(result.output);
    }
    stack_channels(&parts, state)
}

fn wpe_closed_stack(
    state: &Spectrogram,
    estimate: &Spectrogram,
    params: &WpeStage,
    ref_channel: usize,
) -> Result<Spectrogram> {
    let mut parts = Vec::with_capacity(state.channels());
    for p in 0..state.channels() {
        let est_ch = estimate_channel_index(estimate, state.channels(), p, ref_channel);
        let weights = weight_floor(estimate.power(est_ch).view(), params.epsilon)?;
        let filter = wpe_filter(state, &weights, params.taps, params.delay, p, params.loading)?;
        parts.push(wpe_dereverb(state, &filter, p)?.output);
    }
    stack_channels(&parts, state)
}

fn fcp_stack(
    state: &Spectrogram,
    estimate: &Spectrogram,
    params: &FcpStage,
    ref_channel: usize,
) -> Result<Spectrogram> {
    let mut parts = Vec::with_capacity(state.channels());
    for p in 0..state.channels() {
        let mix_ch = state.channel_spectrogram(p)?;
        let est_index = estimate_channel_index(estimate, state.channels(), p, ref_channel);
        let est_ch = estimate.channel_spectrogram(est_index)?;
        let weights = weight_floor(mix_ch.power(0).view(), params.epsilon)?;
        let filter = fcp_filter(&mix_ch, &est_ch, &weights, params.taps, params.loading)?;
        parts.push(fcp_dereverb(&mix_ch, &est_ch, &filter)?.output);
    }
    stack_channels(&parts, state)
}

fn cfcp_all(
    state: &Spectrogram,
    estimates: &[Spectrogram],
    params: &FcpStage,
    ref_channel: usize,
) -> Result<Vec<Spectrogram>> {
    let mut per_speaker: Vec<Vec<Spectrogram>> = vec![Vec::new(); estimates.len()];
    for p in 0..state.channels() {
        let mix_ch = state.channel_spectrogram(p)?;
        let weights = weight_floor(mix_ch.power(0).view(), params.epsilon)?;
        let est_chs: Vec<Spectrogram> = estimates
            .iter()
            .map(|e| {
                e.channel_spectrogram(estimate_channel_index(
                    e,
                    state.channels(),
                    p,
                    ref_channel,
                ))
            })
            .collect::<Result<_>>()?;
        let filters: Vec<PredictionFilter> = est_chs
            .iter()
            .map(|e| fcp_filter(&mix_ch, e, &weights, params.taps, params.loading))
            .collect::<Result<_>>()?;
        let results = cfcp_dereverb(&mix_ch, &est_chs, &filters)?;
        for (c, result) in results.into_iter().enumerate() {
            per_speaker[c].push(result.output);
        }
    }
    per_speaker
        .into_iter()
        .map(|parts| stack_channels(&parts, state))
        .collect()
}

fn msfcp_all(
    state: &Spectrogram,
    estimates: &[Spectrogram],
    params: &MsFcpStage,
    ref_channel: usize,
) -> Result<Vec<Spectrogram>> {
    let mut per_speaker: Vec<Vec<Spectrogram>> = vec![Vec::new(); estimates.len()];
    for p in 0..state.channels() {
        let mix_ch = state.channel_spectrogram(p)?;
        let est_chs: Vec<Spectrogram> = estimates
            .iter()
            .map(|e| {
                e.channel_spectrogram(estimate_channel_index(
                    e,
                    state.channels(),
                    p,
                    ref_channel,
                ))
            })
            .collect::<Result<_>>()?;
        let results = msfcp_run(
            &mix_ch,
            &est_chs,
            params.taps,
            params.epsilon,
            params.steps,
            params.loading,
        )?;
        for (c, result) in results.into_iter().enumerate() {
            per_speaker[c].push(result.output);
        }
    }
    per_speaker
        .into_iter()
        .map(|parts| stack_channels(&parts, state))
        .collect()
}

fn synthesize_reference_channel(state: &Spectrogram, ref_channel: usize) -> Result<TimeSignal> {
    if state.channels() == 1 {
        synthesize(state)
    } else {
        synthesize(&state.channel_spectrogram(ref_channel)?)
    }
}

/// Runs the pipeline over every manifest scene, writes the enhanced WAV
/// files plus `report.txt` under `out_dir`, and returns the records.
///
/// `jobs` selects scene-level parallelism: 0 uses the default thread pool,
/// any other value builds a pool of exactly that size. Outputs do not
/// depend on the job count.
pub fn run_manifest(
    manifest: &Manifest,
    base: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<ReportRecord>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let run_one = |entry: &SceneFiles| -> Result<Option<ReportRecord>> {
        let loaded = load_scene(entry, base)?;
        let input = SceneInput {
            id: entry.id.clone(),
            seed: entry.seed,
            mixture: loaded.mixture,
            direct: loaded.direct,
            reverberant: loaded.reverberant,
        };
        let outcome = run_scene(&input, config)?;
        let scene_dir = out_dir.join(&entry.id);
        std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
        for (c, signal) in outcome.enhanced.iter().enumerate() {
            signal.write_wav(&scene_dir.join(format!("enhanced_s{c}.wav")))?;
        }
        Ok(outcome.record)
    };

    let results: Result<Vec<Option<ReportRecord>>> = if jobs == 1 {
        manifest.entries.iter().map(run_one).collect()
    } else if jobs == 0 {
        manifest.entries.par_iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::BadConfig(format!("cannot build thread pool: {e}")))?;
        pool.install(|| manifest.entries.par_iter().map(run_one).collect())
    };
    let mut records: Vec<ReportRecord> = results?.into_iter().flatten().collect();
    records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, write_report(&records)).map_err(|e| Error::io(&report_path, e))?;
    Ok(records)
}

/// Scores previously written enhanced signals against a manifest's
/// references and writes `eval_report.txt` under `enhanced_dir`.
pub fn eval_manifest(
    manifest: &Manifest,
    base: &Path,
    enhanced_dir: &Path,
    ref_channel: usize,
) -> Result<Vec<ReportRecord>> {
    let mut records = Vec::new();
    for entry in &manifest.entries {
        let loaded = load_scene(entry, base)?;
        let mut enhanced = Vec::new();
        for c in 0..entry.num_speakers {
            let path = enhanced_dir.join(&entry.id).join(format!("enhanced_s{c}.wav"));
            let signal = TimeSignal::read_wav(&path)?;
            if signal.channels() != 1 {
                return Err(Error::ManifestScene {
                    id: entry.id.clone(),
                    message: format!("enhanced_s{c}.wav must be mono"),
                });
            }
            enhanced.push(signal);
        }
        let references: Vec<TimeSignal> = loaded
            .direct
            .iter()
            .map(|signal| signal.channel_signal(ref_channel))
            .collect::<Result<_>>()?;
        let mixture_mono = loaded.mixture.channel_signal(ref_channel)?;
        let eval = resolve_permutation(&enhanced, &references, Some(&mixture_mono))?;
        records.push(ReportRecord::from_eval(&entry.id, "eval", &eval));
    }
    records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let report_path = enhanced_dir.join("eval_report.txt");
    std::fs::write(&report_path, write_report(&records)).map_err(|e| Error::io(&report_path, e))?;
    Ok(records)
}
