//! End-to-end evaluation of device recordings against their references:
//! validate, align, match, keep clean windows, drop ectopic intervals, then
//! error, HRV and AF-screening statistics per recording and per rhythm group.
//!
//! Group statistics come in two flavours: pooled over every interval pair of
//! the group, and the unweighted mean of the per-recording values.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afscreen::{self, AfConfig, AfScreenResult, OverallLabel};
use crate::beatmatch::{self, DetectionSummary, MatchConfig, MatchCounts, MatchResult};
use crate::error::{Error, Result};
use crate::metrics::{self, BlandAltmanData, EctopicConfig, ErrorStats, HrvStats, PairSet};
use crate::model::{BeatSeries, Rhythm, ValidationConfig};
use crate::sync::{self, ClockMap, SearchConfig, SyncReport};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub validation: ValidationConfig,
    pub search: SearchConfig,
    /// Treat the device clock as already aligned.
    pub skip_sync: bool,
    pub matching: MatchConfig,
    pub ectopic: EctopicConfig,
    pub af: AfConfig,
}

impl PipelineConfig {
    /// Keeps the sync windows and the clean-window grid the same length.
    pub fn with_window_len(mut self, window_len_ms: i64) -> Self {
        self.search.window_len_ms = window_len_ms;
        self.matching.window_len_ms = window_len_ms;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RecordingInput {
    pub name: String,
    pub det: BeatSeries,
    pub reference: BeatSeries,
}

impl RecordingInput {
    pub fn new(name: impl Into<String>, det: BeatSeries, reference: BeatSeries) -> Self {
        Self {
            name: name.into(),
            det,
            reference,
        }
    }

    /// Rhythm label of the reference, falling back to the device file's.
    pub fn rhythm(&self) -> Rhythm {
        self.reference.rhythm.or(self.det.rhythm).unwrap_or(Rhythm::Unknown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AfSummary {
    pub n_windows: usize,
    pub fraction_af: f64,
    pub overall_label: OverallLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementLimits {
    pub n_points: usize,
    pub bias_ms: f64,
    pub sd_ms: f64,
    pub loa_low_ms: f64,
    pub loa_high_ms: f64,
}

impl From<&BlandAltmanData> for AgreementLimits {
    fn from(d: &BlandAltmanData) -> Self {
        Self {
            n_points: d.points.len(),
            bias_ms: d.bias_ms,
            sd_ms: d.sd_ms,
            loa_low_ms: d.loa_low_ms,
            loa_high_ms: d.loa_high_ms,
        }
    }
}

/// Machine-readable summary of one recording. Statistics that need more
/// data than survived filtering are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingReport {
    pub name: String,
    pub subject_id: String,
    pub rhythm: Rhythm,
    pub det_beats: usize,
    pub ref_beats: usize,
    pub det_out_of_range: usize,
    pub ref_out_of_range: usize,
    pub clock_map: ClockMap,
    pub sync: Option<SyncReport>,
    pub likely_unaligned: bool,
    pub detection: DetectionSummary,
    pub windows_total: usize,
    pub windows_clean: usize,
    pub ref_ectopic_excluded: usize,
    pub pairs_used: usize,
    pub pairs_dropped_unclean: usize,
    pub pairs_dropped_ectopic: usize,
    pub errors: Option<ErrorStats>,
    pub bland_altman: Option<AgreementLimits>,
    pub hrv_device: Option<HrvStats>,
    pub hrv_reference: Option<HrvStats>,
    pub af_screen: Option<AfSummary>,
}

/// Everything computed for one recording, including the per-beat and
/// per-window data behind the plot CSVs.
#[derive(Debug, Clone)]
pub struct RecordingOutcome {
    pub report: RecordingReport,
    pub aligned_det: BeatSeries,
    pub matched: MatchResult,
    pub pairs: PairSet,
    pub bland_altman: Option<BlandAltmanData>,
    pub af_screen: Option<AfScreenResult>,
    /// Intervals and exclusion flags behind the HRV figures, kept for pooling.
    det_intervals: Vec<f64>,
    det_excluded: Vec<bool>,
    ref_intervals: Vec<f64>,
    ref_excluded: Vec<bool>,
    reference: BeatSeries,
}

impl RecordingOutcome {
    /// Per-beat match audit CSV for this recording.
    pub fn audit(&self) -> String {
        crate::io::format_match_audit(&self.matched, &self.aligned_det, &self.reference)
    }
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::TooShort { .. } | Error::EmptyPairSet | Error::EmptySeries) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate_recording(input: &RecordingInput, config: &PipelineConfig) -> Result<RecordingOutcome> {
    let (det, det_check) = input.det.revalidate(&config.validation)?;
    let (reference, ref_check) = input.reference.revalidate(&config.validation)?;

    let (clock_map, sync_report) = if config.skip_sync {
        (ClockMap::identity(), None)
    } else {
        let (map, report) = sync::synchronize(&det, &reference, &config.search)?;
        (map, Some(report))
    };
    let aligned_det = clock_map.apply(&det)?;

    let matched = beatmatch::match_beats_with(&aligned_det, &reference, &config.matching)?;
    if matched.likely_unaligned {
        log::warn!(
            "{}: device beats sit {:.0} ms from the reference on average; alignment looks off",
            input.name,
            matched.nearest_mae_ms
        );
    }
    let detection = matched.summarize()?;
    let windows = beatmatch::mark_clean_windows(&matched, &matched.grid.windows(reference.last_ms()));

    let ectopic = metrics::exclude_ectopic(&reference, &config.ectopic)?;
    let pairs = metrics::build_pair_set(&aligned_det, &reference, &matched, &windows, &ectopic.excluded);

    let errors = optional(metrics::error_stats(&pairs))?;
    let bland_altman = optional(metrics::bland_altman(&pairs))?;

    let det_intervals = aligned_det.intervals()?.as_f64();
    let ref_intervals = reference.intervals()?.as_f64();
    let det_excluded: Vec<bool> = pairs.det_usable_mask(det_intervals.len()).iter().map(|u| !u).collect();
    let ref_excluded: Vec<bool> = pairs.ref_usable_mask(ref_intervals.len()).iter().map(|u| !u).collect();
    let hrv_device = optional(metrics::hrv_stats_masked(&det_intervals, &det_excluded))?;
    let hrv_reference = optional(metrics::hrv_stats_masked(&ref_intervals, &ref_excluded))?;

    // Screen only the device intervals that survived every filter.
    let usable_ibi: Vec<f64> = pairs.pairs.iter().map(|p| p.ibi_ms).collect();
    let af_screen = optional(afscreen::screen(&usable_ibi, &config.af))?;

    let report = RecordingReport {
        name: input.name.clone(),
        subject_id: if reference.subject_id.is_empty() {
            det.subject_id.clone()
        } else {
            reference.subject_id.clone()
        },
        rhythm: input.rhythm(),
        det_beats: det.len(),
        ref_beats: reference.len(),
        det_out_of_range: det_check.out_of_range.len(),
        ref_out_of_range: ref_check.out_of_range.len(),
        clock_map,
        sync: sync_report,
        likely_unaligned: matched.likely_unaligned,
        detection,
        windows_total: windows.len(),
        windows_clean: windows.iter().filter(|w| w.clean).count(),
        ref_ectopic_excluded: ectopic.excluded_indices.len(),
        pairs_used: pairs.len(),
        pairs_dropped_unclean: pairs.dropped_unclean,
        pairs_dropped_ectopic: pairs.dropped_ectopic,
        errors,
        bland_altman: bland_altman.as_ref().map(AgreementLimits::from),
        hrv_device,
        hrv_reference,
        af_screen: af_screen.as_ref().map(|a| AfSummary {
            n_windows: a.window_scores.len(),
            fraction_af: a.fraction_af,
            overall_label: a.overall_label,
        }),
    };
    Ok(RecordingOutcome {
        report,
        aligned_det,
        matched,
        pairs,
        bland_altman,
        af_screen,
        det_intervals,
        det_excluded,
        ref_intervals,
        ref_excluded,
        reference,
    })
}

/// Evaluates recordings in parallel. The first failure, in input order, is
/// returned together with the recording name.
pub fn evaluate_batch(
    inputs: &[RecordingInput],
    config: &PipelineConfig,
) -> std::result::Result<Vec<RecordingOutcome>, (String, Error)> {
    let results: Vec<Result<RecordingOutcome>> = inputs.par_iter().map(|i| evaluate_recording(i, config)).collect();
    results
        .into_iter()
        .zip(inputs)
        .map(|(r, i)| r.map_err(|e| (i.name.clone(), e)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanErrorStats {
    pub me_ms: f64,
    pub mae_ms: f64,
    pub mape_pct: f64,
    pub rmse_ms: f64,
    pub n_recordings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanHrvStats {
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
    pub std_ms: f64,
    pub n_recordings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub rhythm: Rhythm,
    pub n_recordings: usize,
    pub detection: DetectionSummary,
    pub errors_pooled: Option<ErrorStats>,
    pub errors_mean: Option<MeanErrorStats>,
    pub bland_altman_pooled: Option<AgreementLimits>,
    pub hrv_device_pooled: Option<HrvStats>,
    pub hrv_reference_pooled: Option<HrvStats>,
    pub hrv_device_mean: Option<MeanHrvStats>,
    pub hrv_reference_mean: Option<MeanHrvStats>,
    /// Recordings screened per overall label, in SR, AF, Mixed order.
    pub af_labels: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub config: PipelineConfig,
    pub recordings: Vec<RecordingReport>,
    pub groups: Vec<GroupSummary>,
}

fn mean_errors(stats: &[ErrorStats]) -> Option<MeanErrorStats> {
    if stats.is_empty() {
        return None;
    }
    let n = stats.len() as f64;
    let avg = |f: fn(&ErrorStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
    Some(MeanErrorStats {
        me_ms: avg(|s| s.me_ms),
        mae_ms: avg(|s| s.mae_ms),
        mape_pct: avg(|s| s.mape_pct),
        rmse_ms: avg(|s| s.rmse_ms),
        n_recordings: stats.len(),
    })
}

fn mean_hrv(stats: &[HrvStats]) -> Option<MeanHrvStats> {
    if stats.is_empty() {
        return None;
    }
    let n = stats.len() as f64;
    let avg = |f: fn(&HrvStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
    Some(MeanHrvStats {
        rmssd_ms: avg(|s| s.rmssd_ms),
        pnn50_pct: avg(|s| s.pnn50_pct),
        std_ms: avg(|s| s.std_ms),
        n_recordings: stats.len(),
    })
}

/// HRV over the concatenation of several recordings. An excluded separator
/// keeps successive differences from spanning two recordings.
fn pooled_hrv<'a>(parts: impl Iterator<Item = (&'a [f64], &'a [bool])>) -> Result<Option<HrvStats>> {
    let mut intervals = Vec::new();
    let mut excluded = Vec::new();
    for (iv, ex) in parts {
        if !intervals.is_empty() {
            intervals.push(0.0);
            excluded.push(true);
        }
        intervals.extend_from_slice(iv);
        excluded.extend_from_slice(ex);
    }
    optional(metrics::hrv_stats_masked(&intervals, &excluded))
}

fn summarize_group(rhythm: Rhythm, members: &[&RecordingOutcome]) -> Result<GroupSummary> {
    let mut counts = MatchCounts::default();
    for m in members {
        counts += m.matched.counts;
    }
    let merged = PairSet::merge(members.iter().map(|m| &m.pairs));
    let collect = |f: fn(&RecordingReport) -> Option<HrvStats>| -> Vec<HrvStats> {
        members.iter().filter_map(|m| f(&m.report)).collect()
    };
    let mut af_labels = [0; 3];
    for m in members {
        if let Some(a) = &m.report.af_screen {
            af_labels[a.overall_label as usize] += 1;
        }
    }
    Ok(GroupSummary {
        rhythm,
        n_recordings: members.len(),
        detection: beatmatch::summarize(&counts)?,
        errors_pooled: optional(metrics::error_stats(&merged))?,
        errors_mean: mean_errors(&members.iter().filter_map(|m| m.report.errors).collect::<Vec<_>>()),
        bland_altman_pooled: optional(metrics::bland_altman(&merged))?
            .as_ref()
            .map(AgreementLimits::from),
        hrv_device_pooled: pooled_hrv(members.iter().map(|m| (&m.det_intervals[..], &m.det_excluded[..])))?,
        hrv_reference_pooled: pooled_hrv(members.iter().map(|m| (&m.ref_intervals[..], &m.ref_excluded[..])))?,
        hrv_device_mean: mean_hrv(&collect(|r| r.hrv_device)),
        hrv_reference_mean: mean_hrv(&collect(|r| r.hrv_reference)),
        af_labels,
    })
}

/// Builds the report with one group per rhythm present, ordered SR, AF,
/// then unlabelled.
pub fn build_report(outcomes: &[RecordingOutcome], config: &PipelineConfig) -> Result<EvaluationReport> {
    let mut groups = Vec::new();
    for rhythm in [Rhythm::SR, Rhythm::AF, Rhythm::Unknown] {
        let members: Vec<&RecordingOutcome> = outcomes.iter().filter(|o| o.report.rhythm == rhythm).collect();
        if !members.is_empty() {
            groups.push(summarize_group(rhythm, &members)?);
        }
    }
    Ok(EvaluationReport {
        config: config.clone(),
        recordings: outcomes.iter().map(|o| o.report.clone()).collect(),
        groups,
    })
}

pub fn run(
    inputs: &[RecordingInput],
    config: &PipelineConfig,
) -> std::result::Result<(EvaluationReport, Vec<RecordingOutcome>), (String, Error)> {
    let outcomes = evaluate_batch(inputs, config)?;
    let report = build_report(&outcomes, config).map_err(|e| ("report".to_string(), e))?;
    Ok((report, outcomes))
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "-".into(),
    }
}

fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let _ = writeln!(out, "{title}");
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "{}", line(&head));
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    );
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
}

/// Human-readable tables: detection performance, interval errors, HRV and
/// AF screening. Values are rounded to two decimals for display only.
pub fn render_tables(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let group_name = |g: &GroupSummary| g.rhythm.as_str().to_string();

    let mut rows = Vec::new();
    for r in &report.recordings {
        let d = &r.detection;
        rows.push(vec![
            r.name.clone(),
            d.counts.total_ref.to_string(),
            d.counts.total_det.to_string(),
            format!("{:.2}", d.correct_pct),
            format!("{:.2}", d.extra_pct),
            format!("{:.2}", d.missing_pct),
            format!("{}/{}", r.windows_clean, r.windows_total),
        ]);
    }
    for g in &report.groups {
        let d = &g.detection;
        rows.push(vec![
            format!("[{}]", group_name(g)),
            d.counts.total_ref.to_string(),
            d.counts.total_det.to_string(),
            format!("{:.2}", d.correct_pct),
            format!("{:.2}", d.extra_pct),
            format!("{:.2}", d.missing_pct),
            String::new(),
        ]);
    }
    table(
        &mut out,
        "Beat detection performance",
        &[
            "recording",
            "ref beats",
            "det beats",
            "correct %",
            "extra %",
            "missing %",
            "clean windows",
        ],
        &rows,
    );

    let err_row = |name: String, e: Option<ErrorStats>| {
        vec![
            name,
            e.map(|e| e.n_pairs.to_string()).unwrap_or_else(|| "0".into()),
            cell(e.map(|e| e.me_ms)),
            cell(e.map(|e| e.mae_ms)),
            cell(e.map(|e| e.mape_pct)),
            cell(e.map(|e| e.rmse_ms)),
        ]
    };
    let mut rows: Vec<Vec<String>> = report
        .recordings
        .iter()
        .map(|r| err_row(r.name.clone(), r.errors))
        .collect();
    for g in &report.groups {
        rows.push(err_row(format!("[{}] pooled", group_name(g)), g.errors_pooled));
        let m = g.errors_mean;
        rows.push(vec![
            format!("[{}] per-recording mean", group_name(g)),
            m.map(|m| m.n_recordings.to_string()).unwrap_or_else(|| "0".into()),
            cell(m.map(|m| m.me_ms)),
            cell(m.map(|m| m.mae_ms)),
            cell(m.map(|m| m.mape_pct)),
            cell(m.map(|m| m.rmse_ms)),
        ]);
    }
    table(
        &mut out,
        "Interval error, device vs reference (clean windows)",
        &["recording", "n", "ME ms", "MAE ms", "MAPE %", "RMSE ms"],
        &rows,
    );

    let hrv_cells = |h: Option<HrvStats>| {
        [
            cell(h.map(|h| h.rmssd_ms)),
            cell(h.map(|h| h.pnn50_pct)),
            cell(h.map(|h| h.std_ms)),
        ]
    };
    let mean_cells = |h: Option<MeanHrvStats>| {
        [
            cell(h.map(|h| h.rmssd_ms)),
            cell(h.map(|h| h.pnn50_pct)),
            cell(h.map(|h| h.std_ms)),
        ]
    };
    let mut rows = Vec::new();
    for r in &report.recordings {
        let mut row = vec![r.name.clone()];
        row.extend(hrv_cells(r.hrv_device));
        row.extend(hrv_cells(r.hrv_reference));
        rows.push(row);
    }
    for g in &report.groups {
        let mut row = vec![format!("[{}] pooled", group_name(g))];
        row.extend(hrv_cells(g.hrv_device_pooled));
        row.extend(hrv_cells(g.hrv_reference_pooled));
        rows.push(row);
        let mut row = vec![format!("[{}] per-recording mean", group_name(g))];
        row.extend(mean_cells(g.hrv_device_mean));
        row.extend(mean_cells(g.hrv_reference_mean));
        rows.push(row);
    }
    table(
        &mut out,
        "Heart rate variability",
        &[
            "recording",
            "dev RMSSD ms",
            "dev pNN50 %",
            "dev STD ms",
            "ref RMSSD ms",
            "ref pNN50 %",
            "ref STD ms",
        ],
        &rows,
    );

    let rows: Vec<Vec<String>> = report
        .recordings
        .iter()
        .map(|r| {
            let a = r.af_screen;
            vec![
                r.name.clone(),
                r.rhythm.as_str().to_string(),
                a.map(|a| a.n_windows.to_string()).unwrap_or_else(|| "0".into()),
                cell(a.map(|a| 100.0 * a.fraction_af)),
                a.map(|a| a.overall_label.as_str().to_string())
                    .unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    table(
        &mut out,
        &format!("AF screening (std20 > {:.2} ms)", report.config.af.std_threshold_ms),
        &["recording", "label", "windows", "AF windows %", "screen"],
        &rows,
    );

    let rows: Vec<Vec<String>> = report
        .recordings
        .iter()
        .map(|r| {
            let (slope, offset) = r.clock_map.device_model();
            vec![
                r.name.clone(),
                format!("{offset:.2}"),
                format!("{:.2}", (slope - 1.0) * 1e6),
                cell(r.sync.as_ref().map(|s| s.interval_mae_before_ms)),
                cell(r.sync.as_ref().map(|s| s.interval_mae_after_ms)),
            ]
        })
        .collect();
    table(
        &mut out,
        "Clock alignment (device = slope * reference + offset)",
        &["recording", "offset ms", "drift ppm", "interval MAE before", "after"],
        &rows,
    );
    out
}
