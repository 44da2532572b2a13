//! Command line front end: simulate scene corpora, run enhancement
//! pipelines over them, and score the results.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use convpred::metrics::ReportRecord;
use convpred::pipeline::{eval_manifest, run_manifest, PipelineConfig};
use convpred::simulate::{simulate_corpus, CorpusSpec, Manifest, MANIFEST_NAME};
use convpred::{Error, Result};

#[derive(Parser)]
#[command(
    name = "convpred",
    version,
    about = "Convolutive-prediction dereverberation and beamforming over simulated scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic reverberant scenes and write a manifest.
    Simulate(SimulateArgs),
    /// Run a pipeline configuration over every scene in a manifest.
    Run(RunArgs),
    /// Score previously written enhanced signals against a manifest.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory that receives the scene folders and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Base seed; everything else derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Speakers per scene.
    #[arg(long, default_value_t = 2)]
    speakers: usize,
    /// Microphone channels per scene.
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Scene length in seconds.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    /// Smallest per-scene reverberation time in seconds.
    #[arg(long, default_value_t = 0.2)]
    t60_min: f64,
    /// Largest per-scene reverberation time in seconds.
    #[arg(long, default_value_t = 0.5)]
    t60_max: f64,
    /// Smallest per-scene noise SNR in dB.
    #[arg(long, default_value_t = 20.0)]
    snr_min: f64,
    /// Largest per-scene noise SNR in dB.
    #[arg(long, default_value_t = 30.0)]
    snr_max: f64,
    /// Worker threads; 0 uses all cores, 1 runs serially.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Manifest written by `simulate`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory that receives enhanced WAVs and report.txt.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses all cores, 1 runs serially.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest written by `simulate`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding per-scene `enhanced_sN.wav` files; receives
    /// eval_report.txt.
    #[arg(long)]
    enhanced_dir: PathBuf,
    /// Reference microphone channel.
    #[arg(long, default_value_t = 0)]
    ref_channel: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = dispatch(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let corpus = CorpusSpec {
        count: args.count,
        seed: args.seed,
        num_speakers: args.speakers,
        num_channels: args.channels,
        duration_seconds: args.duration,
        sample_rate_hz: args.sample_rate,
        t60_range: (args.t60_min, args.t60_max),
        noise_snr_range: (args.snr_min, args.snr_max),
    };
    let manifest = simulate_corpus(&corpus, &args.out, args.jobs)?;
    println!(
        "wrote {} scenes and {} under {}",
        manifest.entries.len(),
        MANIFEST_NAME,
        args.out.display()
    );
    Ok(())
}

/// Directory that manifest-relative paths resolve against.
fn manifest_base(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(parent) if parent != Path::new("") => parent.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn print_summary(records: &[ReportRecord]) {
    if records.is_empty() {
        println!("no evaluate stage; no scores to report");
        return;
    }
    let mean = |values: Vec<f64>| values.iter().sum::<f64>() / values.len() as f64;
    let mean_db = mean(records.iter().map(|r| r.mean_db).collect());
    println!("scenes scored: {}", records.len());
    println!("mean SI-SDR: {mean_db:.6} dB");
    let improvements: Vec<f64> = records.iter().filter_map(|r| r.improvement_db).collect();
    if improvements.len() == records.len() {
        println!("mean improvement: {:.6} dB", mean(improvements));
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let text =
        std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let config = PipelineConfig::parse(&text)?;
    let manifest = Manifest::read(&args.manifest)?;
    let base = manifest_base(&args.manifest);
    let records = run_manifest(&manifest, &base, &config, &args.out, args.jobs)?;
    println!(
        "ran {} over {} scenes into {}",
        config.chain_label(),
        manifest.entries.len(),
        args.out.display()
    );
    print_summary(&records);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let manifest = Manifest::read(&args.manifest)?;
    let base = manifest_base(&args.manifest);
    let records = eval_manifest(&manifest, &base, &args.enhanced_dir, args.ref_channel)?;
    print_summary(&records);
    Ok(())
}
