//! Beat files and plot-data CSVs.
//!
//! A beat file is a small CSV with `#` metadata lines:
//!
//! ```text
//! # subject_id: S01
//! # source: reference
//! # rhythm_label: SR
//! timestamp_ms,interval_ms
//! 0,
//! 812,812
//! 1650,838
//! ```
//!
//! `interval_ms` is optional. When present it must equal the difference to
//! the previous timestamp (empty on the first row). All writers go through
//! [`write_atomic`], so readers never observe a half-written file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::afscreen::WindowScore;
use crate::beatmatch::{BeatClass, MatchResult};
use crate::error::{Error, Result};
use crate::metrics::BlandAltmanData;
use crate::model::{self, BeatSeries, Rhythm, Source, ValidationConfig};
use crate::pipeline::{render_tables, EvaluationReport, RecordingOutcome};
use crate::synth::{BeatLabel, GroundTruth};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn parse_beat_file(text: &str, path: &Path) -> Result<BeatSeries> {
    parse_beat_file_with(text, path, &ValidationConfig::default())
}

/// Parses and validates a beat file. Validation failures that point at a
/// beat are reported against that beat's line.
pub fn parse_beat_file_with(text: &str, path: &Path, validation: &ValidationConfig) -> Result<BeatSeries> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut subject_id = String::new();
    let mut source = None;
    let mut rhythm = None;
    let mut has_interval = None;
    let mut ts: Vec<i64> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let Some((key, value)) = meta.split_once(':').or_else(|| meta.split_once('=')) else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "subject_id" => subject_id = value.to_string(),
                "source" => {
                    source = Some(
                        Source::parse(value).ok_or_else(|| parse_err(line_no, format!("unknown source '{value}'")))?,
                    )
                }
                "rhythm_label" => {
                    rhythm = Some(
                        Rhythm::parse(value)
                            .ok_or_else(|| parse_err(line_no, format!("unknown rhythm label '{value}'")))?,
                    )
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(with_interval) = has_interval else {
            has_interval = Some(match fields.as_slice() {
                ["timestamp_ms"] => false,
                ["timestamp_ms", "interval_ms"] => true,
                _ => {
                    return Err(parse_err(
                        line_no,
                        format!("expected header 'timestamp_ms[,interval_ms]', found '{line}'"),
                    ))
                }
            });
            continue;
        };
        let expected = if with_interval { 2 } else { 1 };
        if fields.len() != expected {
            return Err(parse_err(
                line_no,
                format!("expected {expected} column(s), found {}", fields.len()),
            ));
        }
        let t: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid timestamp '{}'", fields[0])))?;
        if let Some(&prev) = ts.last() {
            if t <= prev {
                return Err(Error::Consistency {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("timestamp {t} does not increase on {prev}"),
                });
            }
        }
        if with_interval && !fields[1].is_empty() {
            let iv: i64 = fields[1]
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid interval '{}'", fields[1])))?;
            let consistent = ts.last().is_some_and(|&prev| t - prev == iv);
            if !consistent {
                return Err(Error::Consistency {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: match ts.last() {
                        Some(prev) => format!("interval_ms {iv} differs from timestamp difference {}", t - prev),
                        None => format!("interval_ms {iv} on the first beat has no preceding timestamp"),
                    },
                });
            }
        }
        ts.push(t);
        lines.push(line_no);
    }
    if has_interval.is_none() {
        return Err(parse_err(text.lines().count().max(1), "missing header".into()));
    }
    if ts.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: ts.len(),
        });
    }
    let (series, _) = model::validate_series(&ts, source.unwrap_or(Source::Reference), validation).map_err(|e| {
        let index = match &e {
            Error::NonMonotonic { index, .. } | Error::PhysiologicallyInvalid { index, .. } => Some(*index),
            _ => None,
        };
        match index.and_then(|i| lines.get(i)) {
            Some(&line) => Error::AtLine {
                path: path.to_path_buf(),
                line,
                source: Box::new(e),
            },
            None => e,
        }
    })?;
    let mut series = series.with_subject(subject_id);
    series.rhythm = rhythm;
    Ok(series)
}

pub fn load_beat_file(path: impl AsRef<Path>) -> Result<BeatSeries> {
    load_beat_file_with(path, &ValidationConfig::default())
}

pub fn load_beat_file_with(path: impl AsRef<Path>, validation: &ValidationConfig) -> Result<BeatSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_beat_file_with(&text, path, validation)
}

pub fn format_beat_file(series: &BeatSeries) -> String {
    let mut out = String::new();
    if !series.subject_id.is_empty() {
        let _ = writeln!(out, "# subject_id: {}", series.subject_id);
    }
    let _ = writeln!(out, "# source: {}", series.source.as_str());
    if let Some(r) = series.rhythm {
        let _ = writeln!(out, "# rhythm_label: {}", r.as_str());
    }
    out.push_str("timestamp_ms,interval_ms\n");
    let mut prev = None;
    for &t in series.timestamps() {
        match prev {
            Some(p) => {
                let _ = writeln!(out, "{t},{}", t - p);
            }
            None => {
                let _ = writeln!(out, "{t},");
            }
        }
        prev = Some(t);
    }
    out
}

pub fn write_beat_file(series: &BeatSeries, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_beat_file(series).as_bytes())
}

/// One row per beat of either series, in time order:
/// `series,index,timestamp_ms,class,paired_index`.
pub fn format_match_audit(result: &MatchResult, det: &BeatSeries, reference: &BeatSeries) -> String {
    struct Row {
        t: i64,
        series: &'static str,
        index: usize,
        class: BeatClass,
        paired: Option<usize>,
    }
    let mut rows = Vec::with_capacity(det.len() + reference.len());
    let det_to_ref = result.det_to_ref();
    let mut ref_to_det = vec![None; reference.len()];
    for &(j, k) in &result.pairs {
        ref_to_det[j] = Some(k);
    }
    for (j, (&t, class)) in reference.timestamps().iter().zip(result.ref_classes()).enumerate() {
        rows.push(Row {
            t,
            series: "ref",
            index: j,
            class,
            paired: ref_to_det[j],
        });
    }
    for (k, (&t, class)) in det.timestamps().iter().zip(result.det_classes()).enumerate() {
        rows.push(Row {
            t,
            series: "det",
            index: k,
            class,
            paired: det_to_ref[k],
        });
    }
    rows.sort_by_key(|r| (r.t, r.series != "ref", r.index));
    let mut out = String::from("series,index,timestamp_ms,class,paired_index\n");
    for r in rows {
        let paired = r.paired.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.series, r.index, r.t, r.class.as_str(), paired);
    }
    out
}

pub fn format_bland_altman(data: &BlandAltmanData) -> String {
    let mut out = String::from("mean_ms,diff_ms\n");
    for p in &data.points {
        let _ = writeln!(out, "{},{}", p.mean_ms, p.diff_ms);
    }
    out
}

pub fn format_std20(scores: &[WindowScore]) -> String {
    let mut out = String::from("start_index,std20_ms,label\n");
    for s in scores {
        let _ = writeln!(out, "{},{},{}", s.start_index, s.std20_ms, s.label.as_str());
    }
    out
}

/// Sidecar for synthetic device files: `beat_index,label,ref_index`. Device
/// beats come first; deleted reference beats follow with an empty
/// `beat_index`.
pub fn format_ground_truth(truth: &GroundTruth) -> String {
    let mut out = String::from("beat_index,label,ref_index\n");
    for (k, label) in truth.det_labels.iter().enumerate() {
        match label {
            BeatLabel::Genuine { ref_index } => {
                let _ = writeln!(out, "{k},genuine,{ref_index}");
            }
            BeatLabel::Inserted => {
                let _ = writeln!(out, "{k},inserted,");
            }
        }
    }
    for j in &truth.deleted_ref_indices {
        let _ = writeln!(out, ",deleted,{j}");
    }
    out
}

pub fn write_json<T: serde::Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes `report.json`, `report.txt` and, per recording, the plot and
/// audit CSVs plus the aligned device beats. A single recording writes its
/// files next to the report; several recordings get one subdirectory each.
pub fn write_report(dir: &Path, report: &EvaluationReport, outcomes: &[RecordingOutcome]) -> Result<()> {
    write_json(report, dir.join("report.json"))?;
    write_atomic(&dir.join("report.txt"), render_tables(report).as_bytes())?;
    for o in outcomes {
        let sub = if outcomes.len() == 1 {
            dir.to_path_buf()
        } else {
            dir.join(&o.report.name)
        };
        let ba = o
            .bland_altman
            .as_ref()
            .map(format_bland_altman)
            .unwrap_or_else(|| "mean_ms,diff_ms\n".into());
        write_atomic(&sub.join("bland_altman.csv"), ba.as_bytes())?;
        let scores = o.af_screen.as_ref().map(|a| &a.window_scores[..]).unwrap_or(&[]);
        write_atomic(&sub.join("std20.csv"), format_std20(scores).as_bytes())?;
        write_atomic(&sub.join("match_audit.csv"), o.audit().as_bytes())?;
        write_beat_file(&o.aligned_det, sub.join("aligned_det.csv"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("beats.csv")
    }

    #[test]
    fn parses_metadata_and_both_layouts() {
        let s = parse_beat_file(
            "# subject_id: S07\n# source: device\n# rhythm_label: AF\ntimestamp_ms,interval_ms\n0,\n800,800\n1650,850\n",
            p(),
        )
        .unwrap();
        assert_eq!(s.timestamps(), &[0, 800, 1650]);
        assert_eq!(s.subject_id, "S07");
        assert_eq!(s.source, Source::DeviceUnderTest);
        assert_eq!(s.rhythm, Some(Rhythm::AF));

        let s = parse_beat_file("timestamp_ms\n10\n1010\n", p()).unwrap();
        assert_eq!(s.timestamps(), &[10, 1010]);
        assert_eq!(s.rhythm, None);
    }

    #[test]
    fn interval_mismatch_names_the_row() {
        let err = parse_beat_file("timestamp_ms,interval_ms\n0,\n800,800\n1650,849\n", p()).unwrap_err();
        match err {
            Error::Consistency { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_too_short() {
        assert!(matches!(
            parse_beat_file("timestamp_ms\n", p()),
            Err(Error::TooShort { needed: 2, got: 0 })
        ));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse_beat_file("# x\ntimestamp_ms\n0\nabc\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let err = parse_beat_file("time\n0\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_beat_file("timestamp_ms\n0\n1000\n900\n", p()).unwrap_err();
        assert!(matches!(err, Error::Consistency { line: 4, .. }));
        let err = parse_beat_file("timestamp_ms,interval_ms\n0,5\n1000,1000\n", p()).unwrap_err();
        assert!(matches!(err, Error::Consistency { line: 2, .. }));
        assert!(err.to_string().starts_with("beats.csv:2:"));
    }

    #[test]
    fn strict_validation_points_at_the_row() {
        let err =
            parse_beat_file_with("# a\ntimestamp_ms\n0\n1000\n1100\n", p(), &ValidationConfig::strict()).unwrap_err();
        assert!(matches!(err, Error::AtLine { line: 5, .. }), "{err:?}");
        assert!(err.to_string().starts_with("beats.csv:5: interval of 100 ms"));
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/ref.csv");
        let s = BeatSeries::new(vec![-320, 700, 1650, 2400], Source::Reference)
            .unwrap()
            .with_subject("P3")
            .with_rhythm(Rhythm::SR);
        write_beat_file(&s, &path).unwrap();
        assert_eq!(load_beat_file(&path).unwrap(), s);
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn ground_truth_sidecar_layout() {
        let truth = GroundTruth {
            det_labels: vec![
                BeatLabel::Genuine { ref_index: 0 },
                BeatLabel::Inserted,
                BeatLabel::Genuine { ref_index: 2 },
            ],
            deleted_ref_indices: vec![1],
        };
        assert_eq!(
            format_ground_truth(&truth),
            "beat_index,label,ref_index\n0,genuine,0\n1,inserted,\n2,genuine,2\n,deleted,1\n"
        );
    }
}
