//! Shared domain types: beat series, interval views and one-minute windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default analysis window, one minute.
pub const DEFAULT_WINDOW_MS: i64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    DeviceUnderTest,
    Reference,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::DeviceUnderTest => "device",
            Source::Reference => "reference",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "device" | "device_under_test" | "det" | "ppg" | "ibi" => Some(Source::DeviceUnderTest),
            "reference" | "ref" | "ecg" | "rri" => Some(Source::Reference),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rhythm {
    SR,
    AF,
    Unknown,
}

impl Rhythm {
    pub fn as_str(self) -> &'static str {
        match self {
            Rhythm::SR => "SR",
            Rhythm::AF => "AF",
            Rhythm::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sr" | "sinus" => Some(Rhythm::SR),
            "af" | "afib" => Some(Rhythm::AF),
            "unknown" | "" => Some(Rhythm::Unknown),
            _ => None,
        }
    }
}

/// Physiological plausibility bounds for consecutive-beat intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub min_interval_ms: i64,
    pub max_interval_ms: i64,
    /// Reject the series on the first out-of-range interval instead of
    /// reporting it.
    pub strict: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            min_interval_ms: 200,
            max_interval_ms: 4000,
            strict: false,
        }
    }
}

impl ValidationConfig {
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::default()
        }
    }
}

/// Strictly increasing beat times in integer milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatSeries {
    timestamps_ms: Vec<i64>,
    pub source: Source,
    pub subject_id: String,
    pub rhythm: Option<Rhythm>,
}

/// Outcome of [`validate_series`] in non-strict mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Index of the beat that ends each out-of-range interval.
    pub out_of_range: Vec<usize>,
}

/// Checks ordering, length and interval bounds.
///
/// Out-of-range intervals fail the call in strict mode; otherwise the beats
/// ending them are listed in the returned report.
pub fn validate_series(
    raw: &[i64],
    source: Source,
    config: &ValidationConfig,
) -> Result<(BeatSeries, ValidationReport)> {
    if raw.is_empty() {
        return Err(Error::Empty);
    }
    if raw.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: raw.len(),
        });
    }
    let mut report = ValidationReport::default();
    for (i, w) in raw.windows(2).enumerate() {
        let (prev, value) = (w[0], w[1]);
        if value <= prev {
            return Err(Error::NonMonotonic {
                index: i + 1,
                prev,
                value,
            });
        }
        let interval = value - prev;
        if interval < config.min_interval_ms || interval > config.max_interval_ms {
            if config.strict {
                return Err(Error::PhysiologicallyInvalid {
                    index: i + 1,
                    interval_ms: interval,
                    min_ms: config.min_interval_ms,
                    max_ms: config.max_interval_ms,
                });
            }
            report.out_of_range.push(i + 1);
        }
    }
    if !report.out_of_range.is_empty() {
        log::debug!(
            "{} interval(s) outside [{}, {}] ms",
            report.out_of_range.len(),
            config.min_interval_ms,
            config.max_interval_ms
        );
    }
    Ok((
        BeatSeries {
            timestamps_ms: raw.to_vec(),
            source,
            subject_id: String::new(),
            rhythm: None,
        },
        report,
    ))
}

impl BeatSeries {
    /// Validates with the default non-strict bounds.
    pub fn new(timestamps_ms: Vec<i64>, source: Source) -> Result<Self> {
        let (series, _) = validate_series(&timestamps_ms, source, &ValidationConfig::default())?;
        Ok(series)
    }

    /// Builds a series from consecutive intervals, first beat at `start_ms`.
    pub fn from_intervals(start_ms: i64, intervals_ms: &[i64], source: Source) -> Result<Self> {
        let mut ts = Vec::with_capacity(intervals_ms.len() + 1);
        ts.push(start_ms);
        let mut t = start_ms;
        for &rr in intervals_ms {
            t += rr;
            ts.push(t);
        }
        Self::new(ts, source)
    }

    pub fn with_subject(mut self, subject_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self
    }

    pub fn with_rhythm(mut self, rhythm: Rhythm) -> Self {
        self.rhythm = Some(rhythm);
        self
    }

    /// Re-runs validation on an existing series. Valid input comes back unchanged.
    pub fn revalidate(&self, config: &ValidationConfig) -> Result<(BeatSeries, ValidationReport)> {
        let (mut series, report) = validate_series(&self.timestamps_ms, self.source, config)?;
        series.subject_id = self.subject_id.clone();
        series.rhythm = self.rhythm;
        Ok((series, report))
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps_ms
    }

    pub fn len(&self) -> usize {
        self.timestamps_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_ms.is_empty()
    }

    pub fn first_ms(&self) -> i64 {
        self.timestamps_ms[0]
    }

    pub fn last_ms(&self) -> i64 {
        self.timestamps_ms[self.timestamps_ms.len() - 1]
    }

    pub fn span_ms(&self) -> i64 {
        self.last_ms() - self.first_ms()
    }

    /// Copies metadata onto a new set of timestamps, revalidating ordering.
    pub fn with_timestamps(&self, timestamps_ms: Vec<i64>) -> Result<BeatSeries> {
        let mut out = BeatSeries::new(timestamps_ms, self.source)?;
        out.subject_id = self.subject_id.clone();
        out.rhythm = self.rhythm;
        Ok(out)
    }

    pub fn intervals(&self) -> Result<IntervalView> {
        intervals(self)
    }

    pub fn windows(&self, window_len_ms: i64) -> Result<Vec<MinuteWindow>> {
        windows(self, window_len_ms)
    }
}

/// Consecutive-beat differences, each tagged with the time of the beat that
/// ends it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntervalView {
    pub intervals_ms: Vec<i64>,
    pub end_timestamps_ms: Vec<i64>,
}

impl IntervalView {
    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.intervals_ms.iter().map(|&v| v as f64).collect()
    }
}

pub fn intervals(series: &BeatSeries) -> Result<IntervalView> {
    let ts = series.timestamps();
    if ts.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: ts.len(),
        });
    }
    Ok(IntervalView {
        intervals_ms: ts.windows(2).map(|w| w[1] - w[0]).collect(),
        end_timestamps_ms: ts[1..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinuteWindow {
    pub index: usize,
    pub start_ms: i64,
    /// Exclusive.
    pub end_ms: i64,
    pub clean: bool,
    /// The recording ends before this window does.
    pub partial: bool,
}

impl MinuteWindow {
    pub fn contains(&self, t_ms: i64) -> bool {
        t_ms >= self.start_ms && t_ms < self.end_ms
    }
}

/// Regular tiling anchored at the first beat of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub origin_ms: i64,
    pub len_ms: i64,
    pub count: usize,
}

impl WindowGrid {
    pub fn covering(series: &BeatSeries, window_len_ms: i64) -> Result<Self> {
        if window_len_ms <= 0 {
            return Err(Error::InvalidWindowLength(window_len_ms));
        }
        if series.is_empty() {
            return Err(Error::Empty);
        }
        let count = (series.span_ms() / window_len_ms) as usize + 1;
        Ok(Self {
            origin_ms: series.first_ms(),
            len_ms: window_len_ms,
            count,
        })
    }

    /// Window holding `t_ms`; times outside the grid clamp to the first or
    /// last window.
    pub fn index_of(&self, t_ms: f64) -> usize {
        let k = ((t_ms - self.origin_ms as f64) / self.len_ms as f64).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.count - 1)
        }
    }

    pub fn index_of_ms(&self, t_ms: i64) -> usize {
        let k = (t_ms - self.origin_ms).div_euclid(self.len_ms);
        if k <= 0 {
            0
        } else {
            (k as usize).min(self.count - 1)
        }
    }

    pub fn windows(&self, last_ms: i64) -> Vec<MinuteWindow> {
        (0..self.count)
            .map(|k| {
                let start_ms = self.origin_ms + k as i64 * self.len_ms;
                let end_ms = start_ms + self.len_ms;
                MinuteWindow {
                    index: k,
                    start_ms,
                    end_ms,
                    clean: true,
                    partial: end_ms - 1 > last_ms,
                }
            })
            .collect()
    }
}

/// Tiles the recording from its first beat into `window_len_ms` windows. The
/// last window is kept even when the recording stops inside it, and is then
/// flagged partial.
pub fn windows(series: &BeatSeries, window_len_ms: i64) -> Result<Vec<MinuteWindow>> {
    let grid = WindowGrid::covering(series, window_len_ms)?;
    Ok(grid.windows(series.last_ms()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(ts: &[i64]) -> BeatSeries {
        BeatSeries::new(ts.to_vec(), Source::Reference).unwrap()
    }

    #[test]
    fn validates_uniform_series() {
        let (s, report) = validate_series(&[0, 1000, 2000], Source::Reference, &ValidationConfig::default()).unwrap();
        assert_eq!(s.intervals().unwrap().intervals_ms, vec![1000, 1000]);
        assert!(report.out_of_range.is_empty());
    }

    #[test]
    fn rejects_non_monotonic() {
        let err = validate_series(&[0, 1000, 900], Source::Reference, &ValidationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonMonotonic { index: 2, .. }));
        let err = validate_series(&[0, 1000, 1000], Source::Reference, &ValidationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonMonotonic { .. }));
    }

    #[test]
    fn strict_mode_rejects_short_intervals() {
        let err = validate_series(&[0, 100, 200], Source::DeviceUnderTest, &ValidationConfig::strict()).unwrap_err();
        assert!(matches!(
            err,
            Error::PhysiologicallyInvalid {
                index: 1,
                interval_ms: 100,
                ..
            }
        ));
        let (_, report) =
            validate_series(&[0, 100, 200], Source::DeviceUnderTest, &ValidationConfig::default()).unwrap();
        assert_eq!(report.out_of_range, vec![1, 2]);
    }

    #[test]
    fn upper_bound_is_inclusive() {
        let cfg = ValidationConfig::strict();
        assert!(validate_series(&[0, 4000, 4200], Source::Reference, &cfg).is_ok());
        assert!(validate_series(&[0, 4001], Source::Reference, &cfg).is_err());
    }

    #[test]
    fn too_short_and_empty() {
        let cfg = ValidationConfig::default();
        assert!(matches!(
            validate_series(&[], Source::Reference, &cfg),
            Err(Error::Empty)
        ));
        assert!(matches!(
            validate_series(&[5], Source::Reference, &cfg),
            Err(Error::TooShort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn interval_view_examples() {
        let v = series(&[0, 800, 1650]).intervals().unwrap();
        assert_eq!(v.intervals_ms, vec![800, 850]);
        assert_eq!(v.end_timestamps_ms, vec![800, 1650]);
        assert_eq!(series(&[0, 1000]).intervals().unwrap().intervals_ms, vec![1000]);
        let uniform: Vec<i64> = (0..25).map(|k| k * 750).collect();
        let v = series(&uniform).intervals().unwrap();
        assert_eq!(v.len(), 24);
        assert!(v.intervals_ms.iter().all(|&x| x == 750));
    }

    #[test]
    fn window_tiling_counts() {
        // 90 minutes of 1 s beats.
        let ts: Vec<i64> = (0..5400).map(|k| k * 1000).collect();
        assert_eq!(series(&ts).windows(DEFAULT_WINDOW_MS).unwrap().len(), 90);

        let w = series(&[0, 30_000, 59_999]).windows(DEFAULT_WINDOW_MS).unwrap();
        assert_eq!(w.len(), 1);

        let w = series(&[0, 30_000, 60_001]).windows(DEFAULT_WINDOW_MS).unwrap();
        assert_eq!(w.len(), 2);
        assert!(!w[0].partial);
        assert!(w[1].partial);
        assert_eq!((w[1].start_ms, w[1].end_ms), (60_000, 120_000));
    }

    #[test]
    fn window_length_must_be_positive() {
        assert!(matches!(
            series(&[0, 1000]).windows(0),
            Err(Error::InvalidWindowLength(0))
        ));
    }

    #[test]
    fn grid_clamps_outside_times() {
        let grid = WindowGrid::covering(&series(&[1000, 2000, 130_000]), DEFAULT_WINDOW_MS).unwrap();
        assert_eq!(grid.count, 3);
        assert_eq!(grid.index_of(-5.0), 0);
        assert_eq!(grid.index_of_ms(500), 0);
        assert_eq!(grid.index_of(61_000.0), 1);
        assert_eq!(grid.index_of_ms(61_000), 1);
        assert_eq!(grid.index_of(1e9), 2);
    }
}
