//! Command-line front end: synthesize, align, match and report.
//!
//! Exit status is 0 on success, 1 when input data fails validation and 2 on
//! a usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use ibi_eval::afscreen;
use ibi_eval::io;
use ibi_eval::metrics;
use ibi_eval::pipeline::{self, PipelineConfig, RecordingInput};
use ibi_eval::synth::{self, SynthConfig};
use ibi_eval::{BeatSeries, Rhythm};

#[derive(Parser)]
#[command(
    name = "ibi-eval",
    version,
    about = "Evaluate wearable beat series against an ECG reference"
)]
struct Cli {
    /// TOML file with [validation], [search], [matching], [ectopic], [af]
    /// and [synth] tables; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reference series and a corrupted device copy.
    Synth(SynthArgs),
    /// Estimate the device clock map and optionally write aligned beats.
    Sync(SyncArgs),
    /// Classify device beats as correct, extra or missing.
    Match(PairArgs),
    /// Interval error statistics over clean windows.
    Metrics(PairArgs),
    /// Time-domain HRV of one series after ectopic exclusion.
    Hrv(SingleArgs),
    /// Rolling std20 AF screen of one series.
    Afscreen(SingleArgs),
    /// Full pipeline over one or more recording pairs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RhythmArg {
    Sr,
    Af,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sr")]
    rhythm: RhythmArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_ms: Option<i64>,
    #[arg(long)]
    mean_rr_ms: Option<f64>,
    /// Probability of a spurious device beat per interval.
    #[arg(long)]
    extra_rate: Option<f64>,
    /// Probability of dropping each reference beat.
    #[arg(long)]
    missed_rate: Option<f64>,
    #[arg(long)]
    noise_ms: Option<f64>,
    /// Device clock offset relative to the reference.
    #[arg(long, allow_hyphen_values = true)]
    clock_offset_ms: Option<f64>,
    /// Device clock drift relative to the reference.
    #[arg(long, allow_hyphen_values = true)]
    clock_drift_ppm: Option<f64>,
    /// Output directory for ref.csv, det.csv and det_truth.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct ValidationArgs {
    /// Shortest plausible interval.
    #[arg(long)]
    min_interval_ms: Option<i64>,
    /// Longest plausible interval.
    #[arg(long)]
    max_interval_ms: Option<i64>,
    /// Reject files with out-of-range intervals instead of warning.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Default)]
struct SearchArgs {
    /// Half-width of the global offset search.
    #[arg(long)]
    offset_range_ms: Option<i64>,
    /// Half-width of the global drift search.
    #[arg(long)]
    slope_range_ppm: Option<i64>,
    /// Half-width of the per-window residual offset search.
    #[arg(long)]
    window_offset_range_ms: Option<i64>,
    /// Window length for alignment and clean-window filtering.
    #[arg(long, value_parser = clap::value_parser!(i64).range(1..))]
    window_ms: Option<i64>,
}

#[derive(Args, Default)]
struct EctopicArgs {
    /// Premature-beat threshold as a fraction of the running median.
    #[arg(long)]
    ectopic_threshold: Option<f64>,
    /// Keep every interval.
    #[arg(long)]
    no_ectopic: bool,
}

#[derive(Args, Default)]
struct AfArgs {
    /// Advance between std20 windows: 1 (sliding) or 20 (disjoint).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    stride: Option<u64>,
    /// A window is AF when its std20 exceeds this.
    #[arg(long)]
    std_threshold_ms: Option<f64>,
}

#[derive(Args)]
struct SyncArgs {
    #[arg(long)]
    det: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Write the aligned device beats here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    validation: ValidationArgs,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    det: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Align the device clock before matching.
    #[arg(long)]
    sync: bool,
    /// Write per-beat match classes (match) or Bland-Altman points (metrics).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    validation: ValidationArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    ectopic: EctopicArgs,
}

#[derive(Args)]
struct SingleArgs {
    #[arg(long)]
    input: PathBuf,
    /// afscreen: write the std20 series here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    validation: ValidationArgs,
    #[command(flatten)]
    ectopic: EctopicArgs,
    #[command(flatten)]
    af: AfArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Device beat file; repeat together with --ref for batch mode.
    #[arg(long, required = true)]
    det: Vec<PathBuf>,
    /// Reference beat file, paired with --det by position.
    #[arg(long = "ref", required = true)]
    reference: Vec<PathBuf>,
    /// Directory for report.json, report.txt and the per-recording CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Assume the device clock is already aligned.
    #[arg(long)]
    skip_sync: bool,
    #[command(flatten)]
    validation: ValidationArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    ectopic: EctopicArgs,
    #[command(flatten)]
    af: AfArgs,
}

/// Bad flag combinations that clap cannot express.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FileConfig {
    #[serde(flatten)]
    pipeline: PipelineConfig,
    synth: Option<SynthConfig>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::Error::new(UsageError(format!("--config {}: {e}", path.display()))))
}

fn apply_validation(cfg: &mut PipelineConfig, a: &ValidationArgs) {
    if let Some(v) = a.min_interval_ms {
        cfg.validation.min_interval_ms = v;
    }
    if let Some(v) = a.max_interval_ms {
        cfg.validation.max_interval_ms = v;
    }
    cfg.validation.strict |= a.strict;
}

fn apply_search(cfg: &mut PipelineConfig, a: &SearchArgs) {
    if let Some(v) = a.offset_range_ms {
        cfg.search.offset_range_ms = v;
    }
    if let Some(v) = a.slope_range_ppm {
        cfg.search.slope_range_ppm = v;
    }
    if let Some(v) = a.window_offset_range_ms {
        cfg.search.window_offset_range_ms = v;
    }
    if let Some(v) = a.window_ms {
        *cfg = std::mem::take(cfg).with_window_len(v);
    }
}

fn apply_ectopic(cfg: &mut PipelineConfig, a: &EctopicArgs) {
    if let Some(v) = a.ectopic_threshold {
        cfg.ectopic.premature_fraction = v;
    }
    if a.no_ectopic {
        cfg.ectopic.premature_fraction = f64::INFINITY;
        cfg.ectopic.isolated_fraction = f64::INFINITY;
    }
}

fn apply_af(cfg: &mut PipelineConfig, a: &AfArgs) {
    if let Some(v) = a.stride {
        cfg.af.stride = v as usize;
    }
    if let Some(v) = a.std_threshold_ms {
        cfg.af.std_threshold_ms = v;
    }
}

fn load(path: &Path, cfg: &PipelineConfig) -> Result<BeatSeries> {
    Ok(io::load_beat_file_with(path, &cfg.validation)?)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth_cmd(a: &SynthArgs, file: FileConfig) -> Result<()> {
    let rhythm = match a.rhythm {
        RhythmArg::Sr => Rhythm::SR,
        RhythmArg::Af => Rhythm::AF,
    };
    let mut cfg = match file.synth {
        Some(c) => SynthConfig { rhythm, ..c },
        None => SynthConfig::for_rhythm(rhythm, 0),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.duration_ms {
        cfg.duration_ms = v;
    }
    if let Some(v) = a.mean_rr_ms {
        cfg.mean_rr_ms = v;
    }
    if let Some(v) = a.extra_rate {
        cfg.artifacts.extra_beat_rate = v;
    }
    if let Some(v) = a.missed_rate {
        cfg.artifacts.missed_beat_rate = v;
    }
    if let Some(v) = a.noise_ms {
        cfg.artifacts.timestamp_noise_std_ms = v;
    }
    if let Some(v) = a.clock_offset_ms {
        cfg.clock.offset_ms = v;
    }
    if let Some(v) = a.clock_drift_ppm {
        cfg.clock.slope = 1.0 + v * 1e-6;
    }
    let (rec, cor) = synth::generate_pair(&cfg)?;
    io::write_beat_file(&rec.reference, a.out.join("ref.csv"))?;
    io::write_beat_file(&cor.device, a.out.join("det.csv"))?;
    io::write_atomic(
        &a.out.join("det_truth.csv"),
        io::format_ground_truth(&cor.truth).as_bytes(),
    )?;
    log::info!(
        "wrote {} reference and {} device beats to {}",
        rec.reference.len(),
        cor.device.len(),
        a.out.display()
    );
    Ok(())
}

fn sync_cmd(a: &SyncArgs, mut cfg: PipelineConfig) -> Result<()> {
    apply_validation(&mut cfg, &a.validation);
    apply_search(&mut cfg, &a.search);
    let det = load(&a.det, &cfg)?;
    let reference = load(&a.reference, &cfg)?;
    let (map, report) = ibi_eval::sync::synchronize(&det, &reference, &cfg.search)?;
    if let Some(out) = &a.out {
        io::write_beat_file(&map.apply(&det)?, out)?;
    }
    let (slope, offset) = map.device_model();
    print_json(&json!({
        "device_offset_ms": offset,
        "device_drift_ppm": (slope - 1.0) * 1e6,
        "clock_map": map,
        "report": report,
    }))
}

fn pair_config(a: &PairArgs, mut cfg: PipelineConfig) -> PipelineConfig {
    apply_validation(&mut cfg, &a.validation);
    apply_search(&mut cfg, &a.search);
    apply_ectopic(&mut cfg, &a.ectopic);
    cfg.skip_sync = !a.sync;
    cfg
}

fn evaluate_pair(a: &PairArgs, cfg: &PipelineConfig) -> Result<pipeline::RecordingOutcome> {
    let det = load(&a.det, cfg)?;
    let reference = load(&a.reference, cfg)?;
    let input = RecordingInput::new(stem(&a.det), det, reference);
    Ok(pipeline::evaluate_recording(&input, cfg)?)
}

fn match_cmd(a: &PairArgs, cfg: PipelineConfig) -> Result<()> {
    let cfg = pair_config(a, cfg);
    let o = evaluate_pair(a, &cfg)?;
    if let Some(out) = &a.out {
        io::write_atomic(out, o.audit().as_bytes())?;
    }
    print_json(&json!({
        "detection": o.report.detection,
        "windows_total": o.report.windows_total,
        "windows_clean": o.report.windows_clean,
        "likely_unaligned": o.report.likely_unaligned,
        "nearest_mae_ms": o.matched.nearest_mae_ms,
    }))
}

fn metrics_cmd(a: &PairArgs, cfg: PipelineConfig) -> Result<()> {
    let cfg = pair_config(a, cfg);
    let o = evaluate_pair(a, &cfg)?;
    if let Some(out) = &a.out {
        let text = o
            .bland_altman
            .as_ref()
            .map(io::format_bland_altman)
            .unwrap_or_else(|| "mean_ms,diff_ms\n".into());
        io::write_atomic(out, text.as_bytes())?;
    }
    print_json(&json!({
        "errors": o.report.errors,
        "bland_altman": o.report.bland_altman,
        "pairs_used": o.report.pairs_used,
        "pairs_dropped_unclean": o.report.pairs_dropped_unclean,
        "pairs_dropped_ectopic": o.report.pairs_dropped_ectopic,
    }))
}

fn single_config(a: &SingleArgs, mut cfg: PipelineConfig) -> PipelineConfig {
    apply_validation(&mut cfg, &a.validation);
    apply_ectopic(&mut cfg, &a.ectopic);
    apply_af(&mut cfg, &a.af);
    cfg
}

fn hrv_cmd(a: &SingleArgs, cfg: PipelineConfig) -> Result<()> {
    let cfg = single_config(a, cfg);
    let series = load(&a.input, &cfg)?;
    let ectopic = metrics::exclude_ectopic(&series, &cfg.ectopic)?;
    let hrv = metrics::hrv_stats(&series.intervals()?, &ectopic.excluded)?;
    print_json(&json!({
        "hrv": hrv,
        "ectopic_excluded": ectopic.excluded_indices.len(),
        "ectopic_fraction": ectopic.excluded_fraction(),
    }))
}

fn afscreen_cmd(a: &SingleArgs, cfg: PipelineConfig) -> Result<()> {
    let cfg = single_config(a, cfg);
    let series = load(&a.input, &cfg)?;
    let intervals = series.intervals()?.as_f64();
    let result = afscreen::screen(&intervals, &cfg.af)?;
    if let Some(out) = &a.out {
        io::write_atomic(out, io::format_std20(&result.window_scores).as_bytes())?;
    }
    print_json(&json!({
        "n_windows": result.window_scores.len(),
        "fraction_af": result.fraction_af,
        "overall_label": result.overall_label,
        "std_threshold_ms": cfg.af.std_threshold_ms,
    }))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into())
}

/// Recording names from device file stems, made unique and path-safe.
fn recording_names(paths: &[PathBuf]) -> Vec<String> {
    let mut names: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let base: String = stem(p)
            .chars()
            .map(|c| {
                if c.is_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let mut name = base.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{base}-{k}");
            k += 1;
        }
        names.push(name);
    }
    names
}

fn report_cmd(a: &ReportArgs, mut cfg: PipelineConfig) -> Result<()> {
    if a.det.len() != a.reference.len() {
        return Err(UsageError(format!(
            "--det given {} time(s) but --ref {} time(s); pass them in pairs",
            a.det.len(),
            a.reference.len()
        ))
        .into());
    }
    apply_validation(&mut cfg, &a.validation);
    apply_search(&mut cfg, &a.search);
    apply_ectopic(&mut cfg, &a.ectopic);
    apply_af(&mut cfg, &a.af);
    cfg.skip_sync |= a.skip_sync;

    let names = recording_names(&a.det);
    let mut inputs = Vec::with_capacity(a.det.len());
    for ((d, r), name) in a.det.iter().zip(&a.reference).zip(names) {
        inputs.push(RecordingInput::new(name, load(d, &cfg)?, load(r, &cfg)?));
    }
    let (report, outcomes) =
        pipeline::run(&inputs, &cfg).map_err(|(name, e)| anyhow::Error::new(e).context(format!("recording {name}")))?;
    io::write_report(&a.out, &report, &outcomes)?;
    print!("{}", pipeline::render_tables(&report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    let cfg = file.pipeline.clone();
    match &cli.command {
        Command::Synth(a) => synth_cmd(a, file),
        Command::Sync(a) => sync_cmd(a, cfg),
        Command::Match(a) => match_cmd(a, cfg),
        Command::Metrics(a) => metrics_cmd(a, cfg),
        Command::Hrv(a) => hrv_cmd(a, cfg),
        Command::Afscreen(a) => afscreen_cmd(a, cfg),
        Command::Report(a) => report_cmd(a, cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
