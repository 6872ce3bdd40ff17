//! Interval error statistics, Bland-Altman agreement, ectopic exclusion and
//! time-domain HRV.
//!
//! Errors are signed device minus reference (`ibi - rri`), so a device that
//! reads short yields a negative mean error. MAPE is relative to the
//! reference interval and STD is the sample (n - 1) estimator.

use serde::{Deserialize, Serialize};

use crate::beatmatch::MatchResult;
use crate::error::{Error, Result};
use crate::model::{BeatSeries, IntervalView, MinuteWindow};

/// Running-median ectopic detector.
///
/// An interval shorter than `(1 - premature_fraction)` times the median of
/// the preceding `median_window` intervals, followed by one longer than
/// `(1 + premature_fraction)` times that median, is a premature beat with its
/// compensatory pause: both intervals are excluded. Any other interval that
/// strays from the median by more than `isolated_fraction` is excluded on its
/// own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EctopicConfig {
    pub premature_fraction: f64,
    pub isolated_fraction: f64,
    pub median_window: usize,
    /// Intervals with less history than this are never flagged.
    pub min_history: usize,
}

impl Default for EctopicConfig {
    fn default() -> Self {
        Self {
            premature_fraction: 0.30,
            isolated_fraction: 0.50,
            median_window: 11,
            min_history: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EctopicReport {
    /// One flag per interval of the series.
    pub excluded: Vec<bool>,
    pub excluded_indices: Vec<usize>,
}

impl EctopicReport {
    pub fn excluded_fraction(&self) -> f64 {
        if self.excluded.is_empty() {
            0.0
        } else {
            self.excluded_indices.len() as f64 / self.excluded.len() as f64
        }
    }
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Flags ectopic intervals. The median history uses raw intervals, flagged
/// or not, so a lasting change of rate is absorbed after a few beats.
pub fn ectopic_mask(intervals_ms: &[f64], config: &EctopicConfig) -> Vec<bool> {
    let n = intervals_ms.len();
    let mut excluded = vec![false; n];
    let window = config.median_window.max(1);
    let mut buf = Vec::with_capacity(window);
    let mut i = 0;
    while i < n {
        let history = i.min(window);
        if history < config.min_history.max(1) {
            i += 1;
            continue;
        }
        buf.clear();
        buf.extend_from_slice(&intervals_ms[i - history..i]);
        let med = median(&mut buf);
        let x = intervals_ms[i];
        let premature = x < (1.0 - config.premature_fraction) * med;
        if premature && i + 1 < n && intervals_ms[i + 1] > (1.0 + config.premature_fraction) * med {
            excluded[i] = true;
            excluded[i + 1] = true;
            i += 2;
            continue;
        }
        if (x - med).abs() > config.isolated_fraction * med {
            excluded[i] = true;
        }
        i += 1;
    }
    excluded
}

/// Runs [`ectopic_mask`] over the intervals of a series. The series itself
/// is left untouched; excluded intervals are reported, not removed.
pub fn exclude_ectopic(series: &BeatSeries, config: &EctopicConfig) -> Result<EctopicReport> {
    let iv = series.intervals()?;
    let excluded = ectopic_mask(&iv.as_f64(), config);
    let excluded_indices = excluded
        .iter()
        .enumerate()
        .filter(|(_, &e)| e)
        .map(|(i, _)| i)
        .collect();
    Ok(EctopicReport {
        excluded,
        excluded_indices,
    })
}

/// One reference interval and the device interval matched to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalPair {
    pub rri_ms: f64,
    pub ibi_ms: f64,
    pub end_timestamp_ms: i64,
    pub window_index: usize,
    /// Index of the interval within the reference and device series.
    pub ref_interval: usize,
    pub det_interval: usize,
}

impl IntervalPair {
    pub fn error_ms(&self) -> f64 {
        self.ibi_ms - self.rri_ms
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PairSet {
    pub pairs: Vec<IntervalPair>,
    /// Consecutive matched intervals dropped because their window is not clean.
    pub dropped_unclean: usize,
    pub dropped_ectopic: usize,
}

impl PairSet {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            pairs: pairs
                .iter()
                .enumerate()
                .map(|(i, &(rri_ms, ibi_ms))| IntervalPair {
                    rri_ms,
                    ibi_ms,
                    end_timestamp_ms: 0,
                    window_index: 0,
                    ref_interval: i,
                    det_interval: i,
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn merge<'a>(sets: impl IntoIterator<Item = &'a PairSet>) -> PairSet {
        let mut out = PairSet::default();
        for s in sets {
            out.pairs.extend_from_slice(&s.pairs);
            out.dropped_unclean += s.dropped_unclean;
            out.dropped_ectopic += s.dropped_ectopic;
        }
        out
    }

    /// Usable flags for the device intervals: set where an interval belongs
    /// to the pair set.
    pub fn det_usable_mask(&self, n_intervals: usize) -> Vec<bool> {
        let mut m = vec![false; n_intervals];
        for p in &self.pairs {
            if p.det_interval < n_intervals {
                m[p.det_interval] = true;
            }
        }
        m
    }

    pub fn ref_usable_mask(&self, n_intervals: usize) -> Vec<bool> {
        let mut m = vec![false; n_intervals];
        for p in &self.pairs {
            if p.ref_interval < n_intervals {
                m[p.ref_interval] = true;
            }
        }
        m
    }
}

/// Collects interval pairs from consecutive matched beats. A pair is kept
/// when both of its beats are matched to consecutive reference beats, its
/// reference window is clean and the reference interval is not ectopic.
pub fn build_pair_set(
    det: &BeatSeries,
    reference: &BeatSeries,
    matched: &MatchResult,
    windows: &[MinuteWindow],
    ref_ectopic: &[bool],
) -> PairSet {
    let d = det.timestamps();
    let r = reference.timestamps();
    let det_to_ref = matched.det_to_ref();
    let mut out = PairSet::default();
    for k in 1..d.len() {
        let (Some(jp), Some(j)) = (det_to_ref[k - 1], det_to_ref[k]) else {
            continue;
        };
        if j != jp + 1 {
            continue;
        }
        let w = matched.grid.index_of_ms(r[j]);
        let clean = windows.get(w).is_some_and(|win| win.clean);
        if !clean {
            out.dropped_unclean += 1;
            continue;
        }
        if ref_ectopic.get(jp).copied().unwrap_or(false) {
            out.dropped_ectopic += 1;
            continue;
        }
        out.pairs.push(IntervalPair {
            rri_ms: (r[j] - r[jp]) as f64,
            ibi_ms: (d[k] - d[k - 1]) as f64,
            end_timestamp_ms: r[j],
            window_index: w,
            ref_interval: jp,
            det_interval: k - 1,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub me_ms: f64,
    pub mae_ms: f64,
    pub mape_pct: f64,
    pub rmse_ms: f64,
    pub n_pairs: usize,
}

pub fn error_stats(pairs: &PairSet) -> Result<ErrorStats> {
    let n = pairs.len();
    if n == 0 {
        return Err(Error::EmptyPairSet);
    }
    let (mut sum, mut sum_abs, mut sum_pct, mut sum_sq) = (0.0, 0.0, 0.0, 0.0);
    for p in &pairs.pairs {
        let e = p.error_ms();
        sum += e;
        sum_abs += e.abs();
        sum_pct += e.abs() / p.rri_ms;
        sum_sq += e * e;
    }
    let nf = n as f64;
    Ok(ErrorStats {
        me_ms: sum / nf,
        mae_ms: sum_abs / nf,
        mape_pct: 100.0 * sum_pct / nf,
        rmse_ms: (sum_sq / nf).sqrt(),
        n_pairs: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HrvStats {
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
    pub std_ms: f64,
    pub n_intervals: usize,
    pub n_differences: usize,
}

/// RMSSD, pNN50 and STD over the usable intervals.
///
/// `excluded[i]` removes interval `i` from STD and every successive
/// difference touching it. Successive differences only join intervals that
/// are adjacent in the series.
pub fn hrv_stats_masked(intervals_ms: &[f64], excluded: &[bool]) -> Result<HrvStats> {
    let usable = |i: usize| !excluded.get(i).copied().unwrap_or(false);
    let kept: Vec<f64> = intervals_ms
        .iter()
        .enumerate()
        .filter(|&(i, _)| usable(i))
        .map(|(_, &v)| v)
        .collect();
    if kept.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: kept.len(),
        });
    }
    let diffs: Vec<f64> = (1..intervals_ms.len())
        .filter(|&i| usable(i) && usable(i - 1))
        .map(|i| intervals_ms[i] - intervals_ms[i - 1])
        .collect();
    if diffs.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let nd = diffs.len() as f64;
    let rmssd_ms = (diffs.iter().map(|d| d * d).sum::<f64>() / nd).sqrt();
    let pnn50_pct = 100.0 * diffs.iter().filter(|d| d.abs() > 50.0).count() as f64 / nd;
    Ok(HrvStats {
        rmssd_ms,
        pnn50_pct,
        std_ms: sample_std(&kept),
        n_intervals: kept.len(),
        n_differences: diffs.len(),
    })
}

pub fn hrv_stats(intervals: &IntervalView, excluded: &[bool]) -> Result<HrvStats> {
    hrv_stats_masked(&intervals.as_f64(), excluded)
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlandAltmanPoint {
    pub mean_ms: f64,
    pub diff_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlandAltmanData {
    pub points: Vec<BlandAltmanPoint>,
    pub bias_ms: f64,
    pub sd_ms: f64,
    pub loa_low_ms: f64,
    pub loa_high_ms: f64,
}

/// Difference-versus-mean points with 95% limits of agreement
/// (`bias ± 1.96 SD`).
pub fn bland_altman(pairs: &PairSet) -> Result<BlandAltmanData> {
    if pairs.len() < 2 {
        return Err(Error::EmptyPairSet);
    }
    let points: Vec<BlandAltmanPoint> = pairs
        .pairs
        .iter()
        .map(|p| BlandAltmanPoint {
            mean_ms: 0.5 * (p.rri_ms + p.ibi_ms),
            diff_ms: p.error_ms(),
        })
        .collect();
    let diffs: Vec<f64> = points.iter().map(|p| p.diff_ms).collect();
    // Same accumulation as error_stats so the bias equals the mean error bit for bit.
    let bias_ms = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sd_ms = sample_std(&diffs);
    Ok(BlandAltmanData {
        points,
        bias_ms,
        sd_ms,
        loa_low_ms: bias_ms - 1.96 * sd_ms,
        loa_high_ms: bias_ms + 1.96 * sd_ms,
    })
}
