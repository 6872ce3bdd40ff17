//! AF screening from the rolling standard deviation of 20 consecutive
//! intervals ("std20"), with windowed RMSSD and pNN50 as side features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{hrv_stats_masked, sample_std};
use crate::model::Rhythm;

pub const STD_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfConfig {
    /// A window is AF when its std20 exceeds this.
    pub std_threshold_ms: f64,
    /// Overall AF when at least this fraction of windows is AF.
    pub af_fraction: f64,
    /// Overall SR when at most this fraction of windows is AF.
    pub sr_fraction: f64,
    /// 1 for sliding windows, 20 for disjoint groups.
    pub stride: usize,
}

impl Default for AfConfig {
    fn default() -> Self {
        Self {
            std_threshold_ms: 100.0,
            af_fraction: 0.5,
            sr_fraction: 0.1,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverallLabel {
    SR,
    AF,
    Mixed,
}

impl OverallLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            OverallLabel::SR => "SR",
            OverallLabel::AF => "AF",
            OverallLabel::Mixed => "Mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowFeatures {
    pub start_index: usize,
    pub std20_ms: f64,
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowScore {
    pub start_index: usize,
    pub std20_ms: f64,
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
    pub label: Rhythm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AfScreenResult {
    pub window_scores: Vec<WindowScore>,
    pub fraction_af: f64,
    pub overall_label: OverallLabel,
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    Ok(())
}

fn window_starts(n: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=n.saturating_sub(STD_WINDOW))
        .step_by(stride)
        .take_while(move |&s| s + STD_WINDOW <= n)
}

/// Sample standard deviation of each group of 20 consecutive intervals,
/// advancing `stride` intervals at a time.
pub fn rolling_std20(intervals_ms: &[f64], stride: usize) -> Result<Vec<f64>> {
    check_stride(stride)?;
    if intervals_ms.len() < STD_WINDOW {
        return Err(Error::TooShort {
            needed: STD_WINDOW,
            got: intervals_ms.len(),
        });
    }
    Ok(window_starts(intervals_ms.len(), stride)
        .map(|s| sample_std(&intervals_ms[s..s + STD_WINDOW]))
        .collect())
}

pub fn window_features(intervals_ms: &[f64], stride: usize) -> Result<Vec<WindowFeatures>> {
    let stds = rolling_std20(intervals_ms, stride)?;
    Ok(window_starts(intervals_ms.len(), stride)
        .zip(stds)
        .map(|(s, std20_ms)| {
            let hrv = hrv_stats_masked(&intervals_ms[s..s + STD_WINDOW], &[])
                .expect("a 20-interval window always has successive differences");
            WindowFeatures {
                start_index: s,
                std20_ms,
                rmssd_ms: hrv.rmssd_ms,
                pnn50_pct: hrv.pnn50_pct,
            }
        })
        .collect())
}

fn label_window(std20_ms: f64, threshold_ms: f64) -> Rhythm {
    if std20_ms > threshold_ms {
        Rhythm::AF
    } else {
        Rhythm::SR
    }
}

/// Labels each window and the recording as a whole. An empty feature list
/// screens as SR with an AF fraction of zero.
pub fn classify(features: &[WindowFeatures], config: &AfConfig) -> AfScreenResult {
    let window_scores: Vec<WindowScore> = features
        .iter()
        .map(|f| WindowScore {
            start_index: f.start_index,
            std20_ms: f.std20_ms,
            rmssd_ms: f.rmssd_ms,
            pnn50_pct: f.pnn50_pct,
            label: label_window(f.std20_ms, config.std_threshold_ms),
        })
        .collect();
    let n_af = window_scores.iter().filter(|w| w.label == Rhythm::AF).count();
    let fraction_af = if window_scores.is_empty() {
        0.0
    } else {
        n_af as f64 / window_scores.len() as f64
    };
    let overall_label = if !window_scores.is_empty() && fraction_af >= config.af_fraction {
        OverallLabel::AF
    } else if fraction_af <= config.sr_fraction {
        OverallLabel::SR
    } else {
        OverallLabel::Mixed
    };
    AfScreenResult {
        window_scores,
        fraction_af,
        overall_label,
    }
}

pub fn screen(intervals_ms: &[f64], config: &AfConfig) -> Result<AfScreenResult> {
    Ok(classify(&window_features(intervals_ms, config.stride)?, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub config: AfConfig,
    pub balanced_accuracy: f64,
    pub n_sr_windows: usize,
    pub n_af_windows: usize,
}

/// Balanced accuracy of the rule "AF iff std20 > threshold" over windows of
/// known class. `sr` and `af` must be sorted ascending.
pub fn balanced_accuracy(sr: &[f64], af: &[f64], threshold: f64) -> f64 {
    let sr_correct = sr.partition_point(|&v| v <= threshold);
    let af_correct = af.len() - af.partition_point(|&v| v <= threshold);
    0.5 * (sr_correct as f64 / sr.len() as f64 + af_correct as f64 / af.len() as f64)
}

/// Picks the std20 threshold maximising balanced accuracy over the windows
/// of labelled runs, scanning whole milliseconds across the observed score
/// range. When a run of consecutive thresholds ties for the optimum, the
/// midpoint of the first such run is returned. Runs labelled `Unknown` are
/// ignored.
pub fn calibrate_threshold(labeled_runs: &[(Vec<f64>, Rhythm)], base: &AfConfig) -> Result<Calibration> {
    check_stride(base.stride)?;
    let mut sr = Vec::new();
    let mut af = Vec::new();
    for (intervals, rhythm) in labeled_runs {
        let target = match rhythm {
            Rhythm::SR => &mut sr,
            Rhythm::AF => &mut af,
            Rhythm::Unknown => continue,
        };
        target.extend(rolling_std20(intervals, base.stride)?);
    }
    match (sr.is_empty(), af.is_empty()) {
        (true, true) => return Err(Error::SingleClass("neither".into())),
        (true, false) => return Err(Error::SingleClass("AF".into())),
        (false, true) => return Err(Error::SingleClass("SR".into())),
        _ => {}
    }
    sr.sort_by(f64::total_cmp);
    af.sort_by(f64::total_cmp);
    let lo = sr[0].min(af[0]).floor() as i64;
    let hi = sr[sr.len() - 1].max(af[af.len() - 1]).ceil() as i64;

    let mut best = f64::NEG_INFINITY;
    let mut block = (lo, lo);
    let mut in_block = false;
    for t in lo..=hi {
        let ba = balanced_accuracy(&sr, &af, t as f64);
        if ba > best {
            best = ba;
            block = (t, t);
            in_block = true;
        } else if ba == best && in_block && block.1 == t - 1 {
            block.1 = t;
        } else {
            in_block = false;
        }
    }
    let threshold = 0.5 * (block.0 + block.1) as f64;
    Ok(Calibration {
        config: AfConfig {
            std_threshold_ms: threshold,
            ..*base
        },
        balanced_accuracy: balanced_accuracy(&sr, &af, threshold),
        n_sr_windows: sr.len(),
        n_af_windows: af.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_window_has_zero_std() {
        assert_eq!(rolling_std20(&[800.0; 20], 1).unwrap(), vec![0.0]);
    }

    #[test]
    fn alternating_window_known_answer() {
        let x: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 600.0 } else { 1200.0 }).collect();
        let s = rolling_std20(&x, 1).unwrap();
        assert_eq!((s[0] * 1000.0).round() / 1000.0, 307.794);
    }

    #[test]
    fn window_counts_by_stride() {
        let x = vec![900.0; 65];
        assert_eq!(rolling_std20(&x, 1).unwrap().len(), 46);
        assert_eq!(rolling_std20(&x, 20).unwrap().len(), 3);
        assert!(matches!(rolling_std20(&x[..19], 1), Err(Error::TooShort { .. })));
        assert!(matches!(rolling_std20(&x, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn flat_series_screens_sr() {
        let r = screen(&[1000.0; 40], &AfConfig::default()).unwrap();
        assert_eq!(r.overall_label, OverallLabel::SR);
        assert_eq!(r.fraction_af, 0.0);
        assert_eq!(r.window_scores.len(), 21);
    }

    #[test]
    fn overall_label_thresholds() {
        let feats = |stds: &[f64]| -> Vec<WindowFeatures> {
            stds.iter()
                .enumerate()
                .map(|(i, &s)| WindowFeatures {
                    start_index: i,
                    std20_ms: s,
                    rmssd_ms: 0.0,
                    pnn50_pct: 0.0,
                })
                .collect()
        };
        let cfg = AfConfig::default();
        assert_eq!(
            classify(&feats(&[150.0, 150.0, 20.0, 20.0]), &cfg).overall_label,
            OverallLabel::AF
        );
        assert_eq!(
            classify(&feats(&[150.0, 20.0, 20.0, 20.0]), &cfg).overall_label,
            OverallLabel::Mixed
        );
        let mut ten = vec![20.0; 9];
        ten.push(150.0);
        assert_eq!(classify(&feats(&ten), &cfg).overall_label, OverallLabel::SR);
        // Exactly at the threshold stays SR.
        assert_eq!(classify(&feats(&[100.0]), &cfg).window_scores[0].label, Rhythm::SR);
        assert_eq!(classify(&[], &cfg).overall_label, OverallLabel::SR);
    }

    #[test]
    fn separable_calibration_returns_gap_midpoint() {
        let sr: Vec<f64> = (0..40)
            .map(|i| 1000.0 + if i % 2 == 0 { 30.0 } else { -30.0 })
            .collect();
        let af: Vec<f64> = (0..40)
            .map(|i| 900.0 + if i % 2 == 0 { 200.0 } else { -200.0 })
            .collect();
        let sr_std = rolling_std20(&sr, 1).unwrap()[0];
        let af_std = rolling_std20(&af, 1).unwrap()[0];
        let cal = calibrate_threshold(&[(sr, Rhythm::SR), (af, Rhythm::AF)], &AfConfig::default()).unwrap();
        let t = cal.config.std_threshold_ms;
        assert!(t > sr_std && t < af_std);
        assert!((t - 0.5 * (sr_std + af_std)).abs() <= 1.0, "{t}");
        assert_eq!(cal.balanced_accuracy, 1.0);
    }

    #[test]
    fn calibration_needs_both_classes() {
        let x = vec![(vec![1000.0; 30], Rhythm::SR)];
        assert!(matches!(
            calibrate_threshold(&x, &AfConfig::default()),
            Err(Error::SingleClass(_))
        ));
    }
}
