//! Beat-level agreement between an aligned device series and the reference.
//!
//! Each device beat at time `t`, with `l` the interval ending at it, looks
//! for reference beats in `[t - l/2, t + l/2]`. Device beats are processed in
//! ascending time; a beat with at least one unclaimed candidate is correct
//! and claims the nearest one (the earlier beat on an exact tie), a beat with
//! none is extra, and reference beats left unclaimed are missing. The first
//! device beat has no preceding interval and uses the following one.
//!
//! Nearest-first claiming can strand a device beat whose only candidate was
//! taken by a neighbour that had another option. A repair pass re-routes
//! such claims, so the correct count is always the largest achievable under
//! the window rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BeatSeries, MinuteWindow, WindowGrid, DEFAULT_WINDOW_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BeatClass {
    Correct,
    Extra,
    Missing,
}

impl BeatClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BeatClass::Correct => "correct",
            BeatClass::Extra => "extra",
            BeatClass::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub total_ref: usize,
    pub total_det: usize,
    pub correct: usize,
    pub extra: usize,
    pub missing: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.total_ref += o.total_ref;
        self.total_det += o.total_det;
        self.correct += o.correct;
        self.extra += o.extra;
        self.missing += o.missing;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub window_len_ms: i64,
    /// Mean nearest-beat distance above which the inputs look unaligned.
    pub unaligned_mae_ms: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            window_len_ms: DEFAULT_WINDOW_MS,
            unaligned_mae_ms: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(ref_index, det_index)`, ordered by device beat.
    pub pairs: Vec<(usize, usize)>,
    pub extra_det_indices: Vec<usize>,
    pub missing_ref_indices: Vec<usize>,
    pub counts: MatchCounts,
    /// Counts per window of [`MatchResult::grid`]. Reference beats fall in the
    /// window of their own time; a correct device beat is booked with the
    /// reference beat it claimed.
    pub per_window_counts: Vec<MatchCounts>,
    pub grid: WindowGrid,
    /// Set when the mean distance from device beats to their nearest
    /// reference beat exceeds the configured bound.
    pub likely_unaligned: bool,
    pub nearest_mae_ms: f64,
}

/// Percentages as reported in detection tables. Correct and missing are
/// relative to the reference beat count, extra to the device beat count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub counts: MatchCounts,
    pub correct_pct: f64,
    pub extra_pct: f64,
    pub missing_pct: f64,
}

pub fn match_beats(det: &BeatSeries, reference: &BeatSeries) -> Result<MatchResult> {
    match_beats_with(det, reference, &MatchConfig::default())
}

pub fn match_beats_with(det: &BeatSeries, reference: &BeatSeries, config: &MatchConfig) -> Result<MatchResult> {
    let d = det.timestamps();
    let r = reference.timestamps();
    if d.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: d.len(),
        });
    }
    if r.is_empty() {
        return Err(Error::Empty);
    }
    let grid = WindowGrid::covering(reference, config.window_len_ms)?;

    let mut claimed_by: Vec<Option<usize>> = vec![None; r.len()];
    let mut det_match: Vec<Option<usize>> = vec![None; d.len()];
    let mut candidates: Vec<(usize, usize)> = Vec::with_capacity(d.len());
    for (k, &t) in d.iter().enumerate() {
        let l = if k == 0 { d[1] - d[0] } else { t - d[k - 1] };
        // 2|x - t| <= l keeps the half-interval bound exact in integers.
        let lo = r.partition_point(|&x| 2 * (x - t) < -l);
        let hi = r.partition_point(|&x| 2 * (x - t) <= l);
        candidates.push((lo, hi));
        let mut best: Option<(usize, i64)> = None;
        for (j, &x) in r.iter().enumerate().take(hi).skip(lo) {
            if claimed_by[j].is_some() {
                continue;
            }
            let dist = (x - t).abs();
            if best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((j, dist));
            }
        }
        if let Some((j, _)) = best {
            claimed_by[j] = Some(k);
            det_match[k] = Some(j);
        }
    }
    repair(d, r, &candidates, &mut det_match, &mut claimed_by);

    let pairs: Vec<(usize, usize)> = det_match
        .iter()
        .enumerate()
        .filter_map(|(k, m)| m.map(|j| (j, k)))
        .collect();
    let extra_det_indices: Vec<usize> = (0..d.len()).filter(|&k| det_match[k].is_none()).collect();
    let missing_ref_indices: Vec<usize> = (0..r.len()).filter(|&j| claimed_by[j].is_none()).collect();

    let counts = MatchCounts {
        total_ref: r.len(),
        total_det: d.len(),
        correct: pairs.len(),
        extra: extra_det_indices.len(),
        missing: missing_ref_indices.len(),
    };

    let mut per_window_counts = vec![MatchCounts::default(); grid.count];
    for (j, &x) in r.iter().enumerate() {
        let w = &mut per_window_counts[grid.index_of_ms(x)];
        w.total_ref += 1;
        match claimed_by[j] {
            Some(_) => {
                w.correct += 1;
                w.total_det += 1;
            }
            None => w.missing += 1,
        }
    }
    for &k in &extra_det_indices {
        let w = &mut per_window_counts[grid.index_of_ms(d[k])];
        w.total_det += 1;
        w.extra += 1;
    }

    let nearest_mae_ms = nearest_mae(d, r);
    let likely_unaligned = nearest_mae_ms > config.unaligned_mae_ms;
    if likely_unaligned {
        log::warn!(
            "mean nearest-beat distance {nearest_mae_ms:.1} ms exceeds {} ms; were the series synchronized?",
            config.unaligned_mae_ms
        );
    }

    Ok(MatchResult {
        pairs,
        extra_det_indices,
        missing_ref_indices,
        counts,
        per_window_counts,
        grid,
        likely_unaligned,
        nearest_mae_ms,
    })
}

/// Second pass over the greedy claims: for each unmatched device beat, in
/// time order, look for a chain of re-claims that frees a reference beat in
/// its window (an augmenting path). Candidates are tried nearest first, so
/// claims move as little as possible. Afterwards no device beat can be added
/// without dropping another, i.e. the correct count is maximal.
fn repair(
    d: &[i64],
    r: &[i64],
    candidates: &[(usize, usize)],
    det_match: &mut [Option<usize>],
    claimed_by: &mut [Option<usize>],
) {
    fn by_distance(d: &[i64], r: &[i64], k: usize, (lo, hi): (usize, usize)) -> Vec<usize> {
        let mut js: Vec<usize> = (lo..hi).collect();
        js.sort_by_key(|&j| ((r[j] - d[k]).abs(), j));
        js
    }

    fn augment(
        k: usize,
        ctx: (&[i64], &[i64], &[(usize, usize)]),
        stamp: usize,
        seen: &mut [usize],
        det_match: &mut [Option<usize>],
        claimed_by: &mut [Option<usize>],
    ) -> bool {
        let (d, r, candidates) = ctx;
        for j in by_distance(d, r, k, candidates[k]) {
            if seen[j] == stamp {
                continue;
            }
            seen[j] = stamp;
            let free = match claimed_by[j] {
                None => true,
                Some(other) => augment(other, ctx, stamp, seen, det_match, claimed_by),
            };
            if free {
                claimed_by[j] = Some(k);
                det_match[k] = Some(j);
                return true;
            }
        }
        false
    }

    let mut seen = vec![usize::MAX; r.len()];
    for k in 0..d.len() {
        let (lo, hi) = candidates[k];
        if det_match[k].is_some() || lo == hi {
            continue;
        }
        augment(k, (d, r, candidates), k, &mut seen, det_match, claimed_by);
    }
}

fn nearest_mae(d: &[i64], r: &[i64]) -> f64 {
    let total: i64 = d
        .iter()
        .map(|&t| {
            let i = r.partition_point(|&x| x < t);
            let after = r.get(i).map(|&x| x - t);
            let before = i.checked_sub(1).map(|i| t - r[i]);
            match (before, after) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => 0,
            }
        })
        .sum();
    total as f64 / d.len() as f64
}

impl MatchResult {
    pub fn det_classes(&self) -> Vec<BeatClass> {
        let mut out = vec![BeatClass::Correct; self.counts.total_det];
        for &k in &self.extra_det_indices {
            out[k] = BeatClass::Extra;
        }
        out
    }

    pub fn ref_classes(&self) -> Vec<BeatClass> {
        let mut out = vec![BeatClass::Correct; self.counts.total_ref];
        for &j in &self.missing_ref_indices {
            out[j] = BeatClass::Missing;
        }
        out
    }

    /// Reference index claimed by each device beat.
    pub fn det_to_ref(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.counts.total_det];
        for &(j, k) in &self.pairs {
            out[k] = Some(j);
        }
        out
    }

    pub fn summarize(&self) -> Result<DetectionSummary> {
        summarize(&self.counts)
    }
}

pub fn summarize(counts: &MatchCounts) -> Result<DetectionSummary> {
    if counts.total_ref == 0 || counts.total_det == 0 {
        return Err(Error::EmptySeries);
    }
    let r = counts.total_ref as f64;
    let d = counts.total_det as f64;
    Ok(DetectionSummary {
        counts: *counts,
        correct_pct: 100.0 * counts.correct as f64 / r,
        extra_pct: 100.0 * counts.extra as f64 / d,
        missing_pct: 100.0 * counts.missing as f64 / r,
    })
}

/// A window is clean when it holds no extra and no missing beat.
pub fn mark_clean_windows(result: &MatchResult, windows: &[MinuteWindow]) -> Vec<MinuteWindow> {
    windows
        .iter()
        .map(|w| {
            let clean = match result.per_window_counts.get(w.index) {
                Some(c) => c.extra == 0 && c.missing == 0,
                None => {
                    log::warn!("window {} has no match counts; leaving it unchanged", w.index);
                    w.clean
                }
            };
            MinuteWindow { clean, ..*w }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;

    fn ser(ts: &[i64], source: Source) -> BeatSeries {
        BeatSeries::new(ts.to_vec(), source).unwrap()
    }

    fn run(reference: &[i64], det: &[i64]) -> MatchResult {
        match_beats(&ser(det, Source::DeviceUnderTest), &ser(reference, Source::Reference)).unwrap()
    }

    #[test]
    fn identity_is_all_correct() {
        let m = run(&[0, 1000, 2000, 3000], &[0, 1000, 2000, 3000]);
        assert_eq!((m.counts.correct, m.counts.extra, m.counts.missing), (4, 0, 0));
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        let s = m.summarize().unwrap();
        assert_eq!((s.correct_pct, s.extra_pct, s.missing_pct), (100.0, 0.0, 0.0));
    }

    #[test]
    fn inserted_beat_is_extra() {
        let m = run(&[0, 1000, 2000], &[0, 1000, 1500, 2000]);
        assert_eq!((m.counts.correct, m.counts.extra, m.counts.missing), (3, 1, 0));
        assert_eq!(m.extra_det_indices, vec![2]);
    }

    #[test]
    fn dropped_beat_is_missing() {
        let m = run(&[0, 1000, 2000, 3000], &[0, 1000, 3000]);
        assert_eq!((m.counts.correct, m.counts.extra, m.counts.missing), (3, 0, 1));
        assert_eq!(m.missing_ref_indices, vec![2]);
        let s = m.summarize().unwrap();
        assert_eq!(s.correct_pct, 75.0);
        assert_eq!(s.missing_pct, 25.0);
    }

    #[test]
    fn window_edges_are_inclusive() {
        // det beat at 2000 with l = 1000 reaches exactly 1500 and 2500.
        let m = run(&[0, 1000, 2500], &[0, 1000, 2000]);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let m = run(&[0, 1000, 2501], &[0, 1000, 2000]);
        assert_eq!(m.counts.extra, 1);
        assert_eq!(m.counts.missing, 1);
    }

    #[test]
    fn nearest_candidate_wins_and_earlier_breaks_ties() {
        // det beat 2 at 2000, l = 1000, window [1500, 2500] holds 1600 and 2450.
        let m = run(&[0, 1000, 1600, 2450], &[0, 1000, 2000]);
        assert!(m.pairs.contains(&(2, 2)));
        assert_eq!(m.missing_ref_indices, vec![3]);
        let m = run(&[0, 1000, 1600, 2300], &[0, 1000, 2000]);
        assert!(m.pairs.contains(&(3, 2)));
        assert_eq!(m.missing_ref_indices, vec![2]);
        // Equidistant 1800 / 2200: the earlier one is claimed.
        let m = run(&[0, 1000, 1800, 2200], &[0, 1000, 2000]);
        assert!(m.pairs.contains(&(2, 2)));
    }

    #[test]
    fn first_beat_uses_following_interval() {
        // First det beat at 0 with next interval 800: window [-400, 400].
        let m = run(&[350, 1000, 2000], &[0, 800, 2000]);
        assert_eq!(m.pairs[0], (0, 0));
        let m = run(&[450, 1000, 2000], &[0, 800, 2000]);
        assert!(m.extra_det_indices.contains(&0));
    }

    #[test]
    fn claimed_beats_are_not_reused() {
        // Two det beats competing for the single ref beat at 1000.
        let m = run(&[0, 1000, 3000], &[0, 980, 1020, 3000]);
        assert_eq!(m.counts.correct, 3);
        assert_eq!(m.extra_det_indices, vec![2]);
    }

    #[test]
    fn per_window_counts_sum_to_totals() {
        let reference: Vec<i64> = (0..200).map(|k| k * 900).collect();
        let mut det = reference.clone();
        det.remove(70);
        det.insert(129, reference[129] + 300);
        let m = run(&reference, &det);
        let mut total = MatchCounts::default();
        for c in &m.per_window_counts {
            assert_eq!(c.correct + c.missing, c.total_ref);
            assert_eq!(c.correct + c.extra, c.total_det);
            total += *c;
        }
        assert_eq!(total, m.counts);
        let windows = ser(&reference, Source::Reference).windows(DEFAULT_WINDOW_MS).unwrap();
        let marked = mark_clean_windows(&m, &windows);
        let dirty: Vec<usize> = marked.iter().filter(|w| !w.clean).map(|w| w.index).collect();
        assert_eq!(dirty, vec![1]);
    }

    #[test]
    fn flags_unaligned_inputs() {
        let reference: Vec<i64> = (0..50).map(|k| k * 1000).collect();
        let det: Vec<i64> = reference.iter().map(|t| t + 450).collect();
        let m = run(&reference, &det);
        assert!(m.likely_unaligned);
        assert!(!run(&reference, &reference).likely_unaligned);
    }

    #[test]
    fn summary_rejects_empty_counts() {
        assert!(matches!(summarize(&MatchCounts::default()), Err(Error::EmptySeries)));
    }

    #[test]
    fn stranded_beat_is_re_routed() {
        // Nearest-first, 1800 would take 2000 and leave 2050 with nothing.
        let m = run(&[0, 1000, 2000, 3000], &[0, 1800, 2050, 3000]);
        assert_eq!(m.counts.correct, 4);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }
}
