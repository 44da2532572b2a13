use std::fmt::Write as _;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

/// Scores are clamped to this magnitude in dB; numerically exact matches
/// would otherwise produce unbounded values.
pub const SI_SDR_CAP_DB: f64 = 80.0;
/// Exhaustive permutation search is limited to this many sources.
pub const MAX_PERMUTATION_SOURCES: usize = 4;

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// The reference is rescaled by its least-squares projection coefficient
/// before the ratio is formed, so the score ignores any global gain on
/// either signal.
pub fn si_sdr(estimate: &TimeSignal, reference: &TimeSignal) -> Result<f64> {
    if estimate.channels() != 1 || reference.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "si_sdr expects mono signals, got {} and {} channels",
            estimate.channels(),
            reference.channels()
        )));
    }
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "si_sdr lengths {} vs {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::SilentReference);
    }
    let mut inner = 0.0;
    for (e, r) in estimate.channel(0).iter().zip(reference.channel(0).iter()) {
        inner += e * r;
    }
    let alpha = inner / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let mut distortion_energy = 0.0;
    for (e, r) in estimate.channel(0).iter().zip(reference.channel(0).iter()) {
        let d = e - alpha * r;
        distortion_energy += d * d;
    }
    if target_energy == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    if distortion_energy == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / distortion_energy).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Permutation-resolved scores for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `permutation[r]` is the estimate index assigned to reference `r`.
    pub permutation: Vec<usize>,
    /// Score per reference under the best assignment.
    pub per_speaker_db: Vec<f64>,
    pub mean_db: f64,
    /// Score of the unprocessed mixture against each reference, if a
    /// mixture was supplied.
    pub mixture_per_speaker_db: Option<Vec<f64>>,
    /// Mean score improvement over the mixture.
    pub improvement_db: Option<f64>,
}

/// Scores every estimate against every reference and picks the assignment
/// with the highest mean score, searching all permutations.
///
/// If the mono mixture is supplied its score against each reference is
/// reported too, along with the mean improvement over it.
pub fn resolve_permutation(
    estimates: &[TimeSignal],
    references: &[TimeSignal],
    mixture: Option<&TimeSignal>,
) -> Result<EvalReport> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    if estimates.len() != references.len() {
        return Err(Error::SpeakerCountMismatch {
            expected: references.len(),
            got: estimates.len(),
        });
    }
    let sources = estimates.len();
    if sources > MAX_PERMUTATION_SOURCES {
        return Err(Error::BadConfig(format!(
            "permutation search supports at most {MAX_PERMUTATION_SOURCES} sources, got {sources}"
        )));
    }

    let mut scores = vec![vec![0.0; sources]; sources];
    for (e, estimate) in estimates.iter().enumerate() {
        for (r, reference) in references.iter().enumerate() {
            scores[e][r] = si_sdr(estimate, reference)?;
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for assignment in (0..sources).permutations(sources) {
        let mean = assignment
            .iter()
            .enumerate()
            .map(|(r, &e)| scores[e][r])
            .sum::<f64>()
            / sources as f64;
        if best.as_ref().is_none_or(|(best_mean, _)| mean > *best_mean) {
            best = Some((mean, assignment));
        }
    }
    let (mean_db, permutation) = best.expect("at least one permutation");
    let per_speaker_db: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(r, &e)| scores[e][r])
        .collect();

    let (mixture_per_speaker_db, improvement_db) = match mixture {
        Some(mix) => {
            let per: Vec<f64> = references
                .iter()
                .map(|reference| si_sdr(mix, reference))
                .collect::<Result<_>>()?;
            let mix_mean = per.iter().sum::<f64>() / per.len() as f64;
            (Some(per), Some(mean_db - mix_mean))
        }
        None => (None, None),
    };

    Ok(EvalReport {
        permutation,
        per_speaker_db,
        mean_db,
        mixture_per_speaker_db,
        improvement_db,
    })
}

/// One scene's row in a run report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub scene_id: String,
    pub chain: String,
    pub num_speakers: usize,
    pub permutation: Vec<usize>,
    pub per_speaker_db: Vec<f64>,
    pub mean_db: f64,
    pub mixture_mean_db: Option<f64>,
    pub improvement_db: Option<f64>,
}

impl ReportRecord {
    pub fn from_eval(scene_id: &str, chain: &str, report: &EvalReport) -> ReportRecord {
        ReportRecord {
            scene_id: scene_id.to_string(),
            chain: chain.to_string(),
            num_speakers: report.per_speaker_db.len(),
            permutation: report.permutation.clone(),
            per_speaker_db: report.per_speaker_db.clone(),
            mean_db: report.mean_db,
            mixture_mean_db: report
                .mixture_per_speaker_db
                .as_ref()
                .map(|per| per.iter().sum::<f64>() / per.len() as f64),
            improvement_db: report.improvement_db,
        }
    }
}

/// Renders records as deterministic text: sorted by scene id, fixed-width
/// float formatting, one `[result]` section per scene.
pub fn write_report(records: &[ReportRecord]) -> String {
    let mut sorted: Vec<&ReportRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let mut text = String::from("version=1\n");
    for record in sorted {
        let _ = write!(
            text,
            "\n[result {}]\nchain={}\nnum_speakers={}\npermutation={}\n",
            record.scene_id,
            record.chain,
            record.num_speakers,
            record
                .permutation
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        for (r, score) in record.per_speaker_db.iter().enumerate() {
            let _ = writeln!(text, "si_sdr_db_{r}={score:.6}");
        }
        let _ = writeln!(text, "mean_si_sdr_db={:.6}", record.mean_db);
        if let Some(mix) = record.mixture_mean_db {
            let _ = writeln!(text, "mixture_mean_si_sdr_db={mix:.6}");
        }
        if let Some(improvement) = record.improvement_db {
            let _ = writeln!(text, "improvement_db={improvement:.6}");
        }
    }
    text
}
