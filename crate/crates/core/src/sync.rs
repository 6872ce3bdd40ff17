//! Clock alignment of the device series onto the reference timeline.
//!
//! Alignment is a two-stage grid search. The global stage fits a linear
//! clock map `t_ref = slope * t_det + offset` over a coarse grid and then a
//! fine grid around the coarse optimum. The per-window stage then searches a
//! small residual offset for every one-minute window of the reference.
//!
//! Both stages minimise the same alignment cost. Each device beat is paired
//! with the nearest reference beat (within `pair_cap_ms`). Per beat the cost
//! is the absolute difference between the device interval ending there and
//! the interval between the two paired reference beats, plus
//! `timestamp_weight` times the absolute timestamp residual, each capped at
//! `pair_cap_ms`. The interval term locks the search onto the right beat
//! lattice; the timestamp term resolves offsets below one beat, to which
//! interval differences alone are blind.
//!
//! Internally the slope pivots on the midpoint of the device recording, so
//! the offset grid is the shift applied there and a slope change cannot
//! stand in for an offset error. Ties go to the smallest shift, then the
//! smallest slope deviation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BeatSeries, MinuteWindow, WindowGrid, DEFAULT_WINDOW_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub offset_range_ms: i64,
    pub offset_step_ms: i64,
    pub offset_fine_range_ms: i64,
    pub offset_fine_step_ms: i64,
    pub slope_range_ppm: i64,
    pub slope_step_ppm: i64,
    pub slope_fine_range_ppm: i64,
    pub slope_fine_step_ppm: i64,
    /// Nearest-beat pairing radius; also the cap on each cost term.
    pub pair_cap_ms: f64,
    pub timestamp_weight: f64,
    /// Device beats sampled (evenly) for the coarse and fine global grids.
    pub coarse_sample: usize,
    pub fine_sample: usize,
    pub window_len_ms: i64,
    pub window_offset_range_ms: i64,
    pub window_offset_step_ms: i64,
    /// Windows with fewer paired beats inherit the previous window's offset.
    pub min_window_matches: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            offset_range_ms: 60_000,
            offset_step_ms: 100,
            offset_fine_range_ms: 200,
            offset_fine_step_ms: 1,
            slope_range_ppm: 500,
            slope_step_ppm: 10,
            slope_fine_range_ppm: 20,
            slope_fine_step_ppm: 1,
            pair_cap_ms: 500.0,
            timestamp_weight: 0.1,
            coarse_sample: 200,
            fine_sample: 1000,
            window_len_ms: DEFAULT_WINDOW_MS,
            window_offset_range_ms: 250,
            window_offset_step_ms: 1,
            min_window_matches: 10,
        }
    }
}

impl SearchConfig {
    fn check(&self) -> Result<()> {
        let steps = [
            ("offset_step_ms", self.offset_step_ms),
            ("offset_fine_step_ms", self.offset_fine_step_ms),
            ("slope_step_ppm", self.slope_step_ppm),
            ("slope_fine_step_ppm", self.slope_fine_step_ppm),
            ("window_offset_step_ms", self.window_offset_step_ms),
        ];
        for (name, v) in steps {
            if v <= 0 {
                return Err(Error::DegenerateSearch(format!("{name} must be positive, got {v}")));
            }
        }
        let ranges = [
            ("offset_range_ms", self.offset_range_ms),
            ("offset_fine_range_ms", self.offset_fine_range_ms),
            ("slope_range_ppm", self.slope_range_ppm),
            ("slope_fine_range_ppm", self.slope_fine_range_ppm),
            ("window_offset_range_ms", self.window_offset_range_ms),
        ];
        for (name, v) in ranges {
            if v < 0 {
                return Err(Error::DegenerateSearch(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.slope_range_ppm >= 1_000_000 {
            return Err(Error::DegenerateSearch("slope range must stay below 1e6 ppm".into()));
        }
        if self.pair_cap_ms.is_nan()
            || self.pair_cap_ms <= 0.0
            || self.timestamp_weight.is_nan()
            || self.timestamp_weight < 0.0
        {
            return Err(Error::DegenerateSearch(
                "pair_cap_ms must be positive and timestamp_weight non-negative".into(),
            ));
        }
        if self.coarse_sample == 0 || self.fine_sample == 0 {
            return Err(Error::DegenerateSearch("sample sizes must be positive".into()));
        }
        if self.window_len_ms <= 0 {
            return Err(Error::InvalidWindowLength(self.window_len_ms));
        }
        Ok(())
    }
}

/// Maps device time onto reference time:
/// `t' = slope * t + offset_ms + per_window_offset_ms[w]`, where `w` is the
/// reference window holding `slope * t + offset_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockMap {
    pub slope: f64,
    pub offset_ms: f64,
    pub window_origin_ms: i64,
    pub window_len_ms: i64,
    pub per_window_offset_ms: Vec<i64>,
}

impl ClockMap {
    pub fn identity() -> Self {
        Self::linear(1.0, 0.0)
    }

    pub fn linear(slope: f64, offset_ms: f64) -> Self {
        Self {
            slope,
            offset_ms,
            window_origin_ms: 0,
            window_len_ms: DEFAULT_WINDOW_MS,
            per_window_offset_ms: Vec::new(),
        }
    }

    pub fn slope_ppm(&self) -> f64 {
        (self.slope - 1.0) * 1e6
    }

    /// The device clock as a function of reference time,
    /// `t_det = slope * t_ref + offset_ms`, ignoring per-window residuals.
    pub fn device_model(&self) -> (f64, f64) {
        (1.0 / self.slope, -self.offset_ms / self.slope)
    }

    fn global(&self, t: f64) -> f64 {
        self.slope * t + self.offset_ms
    }

    fn window_offset(&self, global_t: f64) -> f64 {
        if self.per_window_offset_ms.is_empty() {
            return 0.0;
        }
        let grid = WindowGrid {
            origin_ms: self.window_origin_ms,
            len_ms: self.window_len_ms,
            count: self.per_window_offset_ms.len(),
        };
        self.per_window_offset_ms[grid.index_of(global_t)] as f64
    }

    pub fn map_time(&self, t_ms: i64) -> f64 {
        let g = self.global(t_ms as f64);
        g + self.window_offset(g)
    }

    pub fn apply(&self, det: &BeatSeries) -> Result<BeatSeries> {
        apply(self, det)
    }
}

/// Maps every device timestamp onto the reference clock, rounding to whole
/// milliseconds. Fails with `NonMonotonic` when per-window offsets reorder
/// beats around a window boundary.
pub fn apply(map: &ClockMap, det: &BeatSeries) -> Result<BeatSeries> {
    let ts: Vec<i64> = det
        .timestamps()
        .iter()
        .map(|&t| map.map_time(t).round() as i64)
        .collect();
    det.with_timestamps(ts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncReport {
    /// Alignment cost (ms) over all device beats with the identity map.
    pub cost_before_ms: f64,
    /// Cost after the global linear fit.
    pub cost_global_ms: f64,
    /// Cost of the returned map.
    pub cost_after_ms: f64,
    /// Mean |device interval - reference interval| over consecutive pairs.
    pub interval_mae_before_ms: f64,
    pub interval_mae_after_ms: f64,
    pub per_window_cost_ms: Vec<f64>,
    /// Windows whose offset was inherited from a neighbour.
    pub inherited_windows: Vec<usize>,
    pub coarse_grid: GridSpan,
    pub fine_grid: GridSpan,
    pub evaluations: u64,
    /// The search could not beat the identity map, which was returned instead.
    pub fell_back_to_identity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridSpan {
    pub offset_min_ms: i64,
    pub offset_max_ms: i64,
    pub offset_step_ms: i64,
    pub slope_min_ppm: i64,
    pub slope_max_ppm: i64,
    pub slope_step_ppm: i64,
}

impl GridSpan {
    fn points(&self) -> u64 {
        let n_off = (self.offset_max_ms - self.offset_min_ms) / self.offset_step_ms + 1;
        let n_slope = (self.slope_max_ppm - self.slope_min_ppm) / self.slope_step_ppm + 1;
        (n_off * n_slope) as u64
    }
}

/// Farther from any beat than a pairing cap can reach, yet small enough that
/// differences stay finite.
/// Upper bound on fine-grid re-centrings.
const MAX_FINE_PASSES: usize = 25;

const SENTINEL_MS: f64 = 1e15;

/// Reference times plus the device beats they are compared against.
struct CostModel<'a> {
    det: &'a [i64],
    reference: Vec<f64>,
    /// `reference` between two far-away sentinels.
    padded: Vec<f64>,
    cap: f64,
    weight: f64,
}

fn nearest_around(r: &[f64], idx: usize, x: f64, cap: f64) -> Option<(usize, f64)> {
    let before = idx.checked_sub(1).map(|i| (i, x - r[i]));
    let after = r.get(idx).map(|&v| (idx, x - v));
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if a.1.abs() < b.1.abs() {
                a
            } else {
                b
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    (best.1.abs() <= cap).then_some(best)
}

impl<'a> CostModel<'a> {
    fn new(det: &'a BeatSeries, reference: &BeatSeries, config: &SearchConfig) -> Self {
        Self {
            det: det.timestamps(),
            reference: reference.timestamps().iter().map(|&v| v as f64).collect(),
            padded: std::iter::once(-SENTINEL_MS)
                .chain(reference.timestamps().iter().map(|&v| v as f64))
                .chain(std::iter::once(SENTINEL_MS))
                .collect(),
            cap: config.pair_cap_ms,
            weight: config.timestamp_weight,
        }
    }

    fn nearest(&self, x: f64) -> Option<(usize, f64)> {
        let idx = self.reference.partition_point(|&v| v < x);
        nearest_around(&self.reference, idx, x, self.cap)
    }

    fn unpaired_cost(&self) -> f64 {
        self.cap * (1.0 + self.weight)
    }

    /// Cost of device beat `i` given the pairing of beats `i - 1` and `i`.
    fn term(&self, prev: Option<(usize, f64)>, cur: Option<(usize, f64)>, det_interval: f64) -> f64 {
        let Some((j, dt)) = cur else {
            return self.unpaired_cost();
        };
        let interval_term = match prev {
            Some((jp, _)) => (det_interval - (self.reference[j] - self.reference[jp]))
                .abs()
                .min(self.cap),
            None => self.cap,
        };
        interval_term + self.weight * dt.abs()
    }

    /// Summed cost over `sample` (device beat indices >= 1) for every offset
    /// in `offsets` (ascending, evenly spaced), with the beats mapped by
    /// `slope * t + base`.
    ///
    /// Same arithmetic as [`CostModel::term`]. The offsets are walked in runs
    /// over which both probes stay between the same two reference beats, so
    /// the inner loop is branch-free: this is where the search spends its time.
    fn sweep(&self, slope: f64, base: f64, offsets: &[f64], sample: &[usize]) -> Vec<f64> {
        let n = offsets.len();
        let mut acc = vec![0.0; n];
        if n == 0 {
            return acc;
        }
        let step = if n > 1 { offsets[1] - offsets[0] } else { 1.0 };
        let r = &self.padded[..];
        let last = r.len() - 1;
        let (cap, w) = (self.cap, self.weight);
        let unpaired = self.unpaired_cost();

        // First offset index at or after `from` where `x + offset` passes `r[k]`.
        let run_end = |x: f64, k: usize, from: usize| -> usize {
            if k == last {
                return n;
            }
            let passed = |h: usize| r[k] < x + offsets[h];
            let guess = ((r[k] - x - offsets[from]) / step).floor();
            let mut h = if guess.is_finite() && guess > 0.0 {
                (from + guess as usize).min(n)
            } else {
                from + 1
            };
            h = h.max(from + 1);
            while h > from + 1 && passed(h - 1) {
                h -= 1;
            }
            while h < n && !passed(h) {
                h += 1;
            }
            h
        };

        for &i in sample {
            let x_prev = slope * self.det[i - 1] as f64 + base;
            let x_cur = slope * self.det[i] as f64 + base;
            let det_interval = x_cur - x_prev;
            // First padded index with r >= probe; the sentinels keep it in 1..=last.
            let mut ip = r.partition_point(|&v| v < x_prev + offsets[0]).clamp(1, last);
            let mut ic = r.partition_point(|&v| v < x_cur + offsets[0]).clamp(1, last);
            let mut g = 0;
            while g < n {
                while ip < last && r[ip] < x_prev + offsets[g] {
                    ip += 1;
                }
                while ic < last && r[ic] < x_cur + offsets[g] {
                    ic += 1;
                }
                let end = run_end(x_prev, ip, g).min(run_end(x_cur, ic, g));
                let (ap, bp, ac, bc) = (r[ip], r[ip - 1], r[ic], r[ic - 1]);
                for (a, &off) in acc[g..end].iter_mut().zip(&offsets[g..end]) {
                    let xp = x_prev + off;
                    let rp = if ap - xp < xp - bp { ap } else { bp };
                    let xc = x_cur + off;
                    let rc = if ac - xc < xc - bc { ac } else { bc };
                    let dtp = (xp - rp).abs();
                    let dt = (xc - rc).abs();
                    let interval = (det_interval - (rc - rp)).abs().min(cap);
                    let interval = if dtp <= cap { interval } else { cap };
                    *a += if dt <= cap { interval + w * dt } else { unpaired };
                }
                g = end;
            }
        }
        acc
    }

    /// Cost over `sample` for an arbitrary device-to-reference mapping.
    fn cost_with(&self, sample: &[usize], map: impl Fn(i64) -> f64) -> f64 {
        if sample.is_empty() {
            return self.unpaired_cost();
        }
        let total: f64 = sample
            .iter()
            .map(|&i| {
                let x_prev = map(self.det[i - 1]);
                let x_cur = map(self.det[i]);
                self.term(self.nearest(x_prev), self.nearest(x_cur), x_cur - x_prev)
            })
            .sum();
        total / sample.len() as f64
    }

    fn interval_mae(&self, map: impl Fn(i64) -> f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 1..self.det.len() {
            let (x_prev, x_cur) = (map(self.det[i - 1]), map(self.det[i]));
            if let (Some((jp, _)), Some((j, _))) = (self.nearest(x_prev), self.nearest(x_cur)) {
                if j == jp + 1 {
                    sum += ((x_cur - x_prev) - (self.reference[j] - self.reference[jp])).abs();
                    n += 1;
                }
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }
}

/// Evenly spaced device beat indices in `1..n`, at most `k` of them.
fn even_sample(n: usize, k: usize) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let m = n - 1;
    if m <= k {
        return (1..n).collect();
    }
    (0..k).map(|q| 1 + q * m / k).collect()
}

fn int_grid(center: i64, half: i64, step: i64, lo: i64, hi: i64) -> Vec<i64> {
    // Anchored on `center` so the centre itself is always a grid point.
    let mut v = Vec::new();
    let mut x = center - (half / step) * step;
    while x <= center + half {
        if x >= lo && x <= hi {
            v.push(x);
        }
        x += step;
    }
    v
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    shift: i64,
    ppm: i64,
}

impl Candidate {
    fn better_than(&self, o: &Candidate) -> bool {
        let key = |c: &Candidate| (c.shift.abs(), c.ppm.abs(), c.shift, c.ppm);
        match self.cost.total_cmp(&o.cost) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => key(self) < key(o),
        }
    }
}

fn best_of(cands: impl IntoIterator<Item = Candidate>) -> Option<Candidate> {
    cands.into_iter().fold(None, |best, c| match best {
        Some(b) if !c.better_than(&b) => Some(b),
        _ => Some(c),
    })
}

struct GlobalFit {
    map: ClockMap,
    coarse: GridSpan,
    fine: GridSpan,
    evaluations: u64,
}

fn search_grid(model: &CostModel, pivot: f64, ppms: &[i64], shifts: &[i64], sample: &[usize]) -> Option<Candidate> {
    let offsets: Vec<f64> = shifts.iter().map(|&s| s as f64).collect();
    let per_slope: Vec<Option<Candidate>> = ppms
        .par_iter()
        .map(|&ppm| {
            let slope = 1.0 + ppm as f64 * 1e-6;
            // slope * t + base, with base chosen so that the pivot maps to itself.
            let base = pivot * (1.0 - slope);
            let costs = model.sweep(slope, base, &offsets, sample);
            best_of(
                costs
                    .iter()
                    .zip(shifts)
                    .map(|(&cost, &shift)| Candidate { cost, shift, ppm }),
            )
        })
        .collect();
    best_of(per_slope.into_iter().flatten())
}

fn fit_global(det: &BeatSeries, reference: &BeatSeries, config: &SearchConfig) -> Result<GlobalFit> {
    config.check()?;
    let span = det.span_ms() as f64;
    let slack = config.offset_range_ms as f64 + config.slope_range_ppm as f64 * 1e-6 * span + config.pair_cap_ms;
    if det.last_ms() as f64 + slack < reference.first_ms() as f64
        || det.first_ms() as f64 - slack > reference.last_ms() as f64
    {
        return Err(Error::NoOverlap);
    }

    let model = CostModel::new(det, reference, config);
    let pivot = 0.5 * (det.first_ms() + det.last_ms()) as f64;
    let r_ppm = config.slope_range_ppm;

    let coarse_ppms = int_grid(0, r_ppm, config.slope_step_ppm, -r_ppm, r_ppm);
    let coarse_shifts = int_grid(0, config.offset_range_ms, config.offset_step_ms, i64::MIN, i64::MAX);
    let coarse_sample = even_sample(det.len(), config.coarse_sample);
    let coarse_best = search_grid(&model, pivot, &coarse_ppms, &coarse_shifts, &coarse_sample)
        .ok_or_else(|| Error::DegenerateSearch("coarse grid is empty".into()))?;
    if coarse_best.cost >= model.unpaired_cost() * coarse_sample.len() as f64 {
        return Err(Error::NoOverlap);
    }

    // The coarse offset step blurs the slope, so the coarse pick can sit
    // more than one fine range away from the optimum. Re-centre the fine grid
    // until its best point is interior (or pinned against the slope bound).
    let fine_sample = even_sample(det.len(), config.fine_sample);
    let mut centre = coarse_best;
    let mut fine_evaluations = 0;
    let mut passes = 0;
    let (fine_ppms, fine_shifts, fine_best) = loop {
        let ppms = int_grid(
            centre.ppm,
            config.slope_fine_range_ppm,
            config.slope_fine_step_ppm,
            -r_ppm,
            r_ppm,
        );
        let shifts = int_grid(
            centre.shift,
            config.offset_fine_range_ms,
            config.offset_fine_step_ms,
            i64::MIN,
            i64::MAX,
        );
        let best = search_grid(&model, pivot, &ppms, &shifts, &fine_sample)
            .ok_or_else(|| Error::DegenerateSearch("fine grid is empty".into()))?;
        fine_evaluations += (ppms.len() * shifts.len()) as u64;
        let on_edge =
            |v: i64, grid: &[i64], lo: i64, hi: i64| (v == grid[0] && v > lo) || (v == grid[grid.len() - 1] && v < hi);
        let moved = on_edge(best.ppm, &ppms, -r_ppm, r_ppm) || on_edge(best.shift, &shifts, i64::MIN, i64::MAX);
        passes += 1;
        if !moved || passes >= MAX_FINE_PASSES {
            break (ppms, shifts, best);
        }
        log::debug!(
            "fine optimum on grid edge at {} ppm, {} ms; re-centring",
            best.ppm,
            best.shift
        );
        centre = best;
    };

    let span_of = |ppms: &[i64], shifts: &[i64], s_step: i64, o_step: i64| GridSpan {
        offset_min_ms: shifts[0],
        offset_max_ms: shifts[shifts.len() - 1],
        offset_step_ms: o_step,
        slope_min_ppm: ppms[0],
        slope_max_ppm: ppms[ppms.len() - 1],
        slope_step_ppm: s_step,
    };
    let coarse = span_of(
        &coarse_ppms,
        &coarse_shifts,
        config.slope_step_ppm,
        config.offset_step_ms,
    );
    let fine = span_of(
        &fine_ppms,
        &fine_shifts,
        config.slope_fine_step_ppm,
        config.offset_fine_step_ms,
    );
    let evaluations = coarse.points() + fine_evaluations;

    let slope = 1.0 + fine_best.ppm as f64 * 1e-6;
    let offset_ms = fine_best.shift as f64 + pivot * (1.0 - slope);
    Ok(GlobalFit {
        map: ClockMap {
            slope,
            offset_ms,
            window_origin_ms: reference.first_ms(),
            window_len_ms: config.window_len_ms,
            per_window_offset_ms: Vec::new(),
        },
        coarse,
        fine,
        evaluations,
    })
}

/// Global linear alignment (slope and offset only).
pub fn estimate_global_alignment(det: &BeatSeries, reference: &BeatSeries, config: &SearchConfig) -> Result<ClockMap> {
    Ok(fit_global(det, reference, config)?.map)
}

struct Refinement {
    map: ClockMap,
    per_window_cost_ms: Vec<f64>,
    inherited: Vec<usize>,
}

fn refine(
    det: &BeatSeries,
    reference: &BeatSeries,
    map: &ClockMap,
    windows: &[MinuteWindow],
    config: &SearchConfig,
) -> Refinement {
    let mut out = map.clone();
    out.per_window_offset_ms = Vec::new();
    if windows.is_empty() {
        return Refinement {
            map: out,
            per_window_cost_ms: Vec::new(),
            inherited: Vec::new(),
        };
    }
    let grid = WindowGrid {
        origin_ms: windows[0].start_ms,
        len_ms: windows[0].end_ms - windows[0].start_ms,
        count: windows.len(),
    };
    out.window_origin_ms = grid.origin_ms;
    out.window_len_ms = grid.len_ms;

    let model = CostModel::new(det, reference, config);
    let d = det.timestamps();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); grid.count];
    for (i, &t) in d.iter().enumerate().skip(1) {
        members[grid.index_of(map.global(t as f64))].push(i);
    }

    let deltas = int_grid(
        0,
        config.window_offset_range_ms,
        config.window_offset_step_ms,
        i64::MIN,
        i64::MAX,
    );
    let offsets: Vec<f64> = deltas.iter().map(|&v| v as f64).collect();
    let found: Vec<(Option<i64>, f64)> = members
        .par_iter()
        .map(|sample| {
            let matched = sample
                .iter()
                .filter(|&&i| model.nearest(map.global(d[i] as f64)).is_some())
                .count();
            if sample.is_empty() || matched < config.min_window_matches {
                return (None, f64::NAN);
            }
            let costs = model.sweep(map.slope, map.offset_ms, &offsets, sample);
            let best = best_of(
                costs
                    .iter()
                    .zip(&deltas)
                    .map(|(&cost, &shift)| Candidate { cost, shift, ppm: 0 }),
            )
            .expect("delta grid contains zero");
            (Some(best.shift), best.cost / sample.len() as f64)
        })
        .collect();

    let first_valid = found.iter().find_map(|(o, _)| *o).unwrap_or(0);
    let mut offsets_out = Vec::with_capacity(found.len());
    let mut inherited = Vec::new();
    let mut last = first_valid;
    for (k, (o, _)) in found.iter().enumerate() {
        match o {
            Some(v) => last = *v,
            None => inherited.push(k),
        }
        offsets_out.push(last);
    }
    out.per_window_offset_ms = offsets_out;
    Refinement {
        map: out,
        per_window_cost_ms: found.into_iter().map(|(_, c)| c).collect(),
        inherited,
    }
}

/// Per-window residual offsets on top of a global map. Windows with too few
/// paired beats take the previous window's offset (the first valid one when
/// they lead the recording).
pub fn refine_per_window(
    det: &BeatSeries,
    reference: &BeatSeries,
    map: &ClockMap,
    windows: &[MinuteWindow],
    config: &SearchConfig,
) -> Result<ClockMap> {
    config.check()?;
    Ok(refine(det, reference, map, windows, config).map)
}

/// Full alignment: global fit, per-window refinement over windows of the
/// reference, and a report. The returned map never costs more than the
/// identity map.
pub fn synchronize(det: &BeatSeries, reference: &BeatSeries, config: &SearchConfig) -> Result<(ClockMap, SyncReport)> {
    let fit = fit_global(det, reference, config)?;
    let windows = reference.windows(config.window_len_ms)?;
    let refined = refine(det, reference, &fit.map, &windows, config);

    let model = CostModel::new(det, reference, config);
    let all: Vec<usize> = (1..det.len()).collect();
    let identity = ClockMap::identity();
    let cost_before_ms = model.cost_with(&all, |t| identity.map_time(t));
    let cost_global_ms = model.cost_with(&all, |t| fit.map.map_time(t));
    let mut cost_after_ms = model.cost_with(&all, |t| refined.map.map_time(t));

    let window_evals = refined.per_window_cost_ms.iter().filter(|c| !c.is_nan()).count() as u64
        * (2 * (config.window_offset_range_ms / config.window_offset_step_ms) + 1) as u64;

    let mut map = refined.map;
    let mut fell_back_to_identity = false;
    if cost_after_ms > cost_before_ms {
        log::warn!("alignment search did not improve on the identity map; keeping device clock");
        map = ClockMap::identity();
        cost_after_ms = cost_before_ms;
        fell_back_to_identity = true;
    }

    let report = SyncReport {
        cost_before_ms,
        cost_global_ms,
        cost_after_ms,
        interval_mae_before_ms: model.interval_mae(|t| identity.map_time(t)),
        interval_mae_after_ms: model.interval_mae(|t| map.map_time(t)),
        per_window_cost_ms: refined.per_window_cost_ms,
        inherited_windows: refined.inherited,
        coarse_grid: fit.coarse,
        fine_grid: fit.fine,
        evaluations: fit.evaluations + window_evals,
        fell_back_to_identity,
    };
    Ok((map, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;
    use crate::synth::{self, ArtifactParams, SynthConfig};

    fn reference(seed: u64, minutes: i64) -> BeatSeries {
        let mut cfg = SynthConfig::sinus(seed);
        cfg.duration_ms = minutes * 60_000;
        synth::generate(&cfg).unwrap().reference
    }

    fn distort(r: &BeatSeries, slope: f64, offset: f64) -> BeatSeries {
        let ts: Vec<i64> = r
            .timestamps()
            .iter()
            .map(|&t| (slope * t as f64 + offset).round() as i64)
            .collect();
        BeatSeries::new(ts, Source::DeviceUnderTest).unwrap()
    }

    #[test]
    fn identity_recovers_identity() {
        let r = reference(1, 10);
        let map = estimate_global_alignment(&r, &r, &SearchConfig::default()).unwrap();
        assert_eq!(map.slope, 1.0);
        assert_eq!(map.offset_ms, 0.0);
    }

    #[test]
    fn recovers_pure_shift() {
        let r = reference(2, 10);
        let det = distort(&r, 1.0, 320.0);
        let map = estimate_global_alignment(&det, &r, &SearchConfig::default()).unwrap();
        let (slope, offset) = map.device_model();
        assert!((offset - 320.0).abs() <= 1.0, "{offset}");
        assert!(((slope - 1.0) * 1e6).abs() <= 1.0, "{slope}");
    }

    #[test]
    fn recovers_stretch_over_an_hour() {
        let r = reference(3, 60);
        let det = distort(&r, 1.0 + 100e-6, 0.0);
        let map = estimate_global_alignment(&det, &r, &SearchConfig::default()).unwrap();
        let (slope, _) = map.device_model();
        assert!(((slope - 1.0) * 1e6 - 100.0).abs() <= 5.0, "{slope}");
    }

    #[test]
    fn fine_grid_follows_an_off_target_coarse_pick() {
        // Here the coarse pick lands 30 ppm from the truth, beyond one fine range.
        let cfg = SynthConfig {
            duration_ms: 30 * 60_000,
            clock: synth::ClockDistortion {
                slope: 1.0 + 50e-6,
                offset_ms: 320.0,
            },
            ..SynthConfig::sinus(7)
        };
        let (rec, cor) = synth::generate_pair(&cfg).unwrap();
        let (slope, offset) = estimate_global_alignment(&cor.device, &rec.reference, &SearchConfig::default())
            .unwrap()
            .device_model();
        assert!(((slope - 1.0) * 1e6 - 50.0).abs() <= 1.0, "{slope}");
        assert!((offset - 320.0).abs() <= 2.0, "{offset}");
    }

    #[test]
    fn apply_shifts_and_identity() {
        let r = reference(4, 2);
        assert_eq!(ClockMap::identity().apply(&r).unwrap().timestamps(), r.timestamps());
        let shifted = ClockMap::linear(1.0, -320.0).apply(&r).unwrap();
        for (a, b) in shifted.timestamps().iter().zip(r.timestamps()) {
            assert_eq!(*a, b - 320);
        }
    }

    #[test]
    fn apply_rejects_reordering_offsets() {
        let det = BeatSeries::new(vec![0, 59_900, 60_050, 61_000], Source::DeviceUnderTest).unwrap();
        let map = ClockMap {
            slope: 1.0,
            offset_ms: 0.0,
            window_origin_ms: 0,
            window_len_ms: 60_000,
            per_window_offset_ms: vec![200, -200],
        };
        assert!(matches!(map.apply(&det), Err(Error::NonMonotonic { .. })));
    }

    #[test]
    fn per_window_recovers_local_shift() {
        let r = reference(5, 10);
        let ts: Vec<i64> = r
            .timestamps()
            .iter()
            .map(|&t| if (180_000..360_000).contains(&t) { t + 40 } else { t })
            .collect();
        let det = BeatSeries::new(ts, Source::DeviceUnderTest).unwrap();
        let cfg = SearchConfig::default();
        let (map, report) = synchronize(&det, &r, &cfg).unwrap();
        assert!(!report.fell_back_to_identity);
        // The correction undoes the +40 ms shift in minutes 3-5.
        for k in 0..map.per_window_offset_ms.len() - 1 {
            let mid = k as i64 * 60_000 + 30_000;
            let expect = if (3..6).contains(&k) { -40.0 } else { 0.0 };
            let correction = map.map_time(mid) - mid as f64;
            assert!((correction - expect).abs() <= 2.0, "window {k}: {correction}");
        }
    }

    #[test]
    fn aligned_series_have_zero_window_offsets() {
        let r = reference(6, 5);
        let (map, report) = synchronize(&r, &r, &SearchConfig::default()).unwrap();
        assert!(map.per_window_offset_ms.iter().all(|&o| o.abs() <= 1));
        assert!(report.cost_after_ms <= report.cost_before_ms);
        assert!(report.inherited_windows.is_empty());
    }

    #[test]
    fn sparse_window_inherits_previous_offset() {
        let r = reference(7, 5);
        // Keep only three beats of minute 2.
        let mut kept: Vec<i64> = Vec::new();
        let mut in_w2 = 0;
        for &t in r.timestamps() {
            if (120_000..180_000).contains(&t) {
                in_w2 += 1;
                if in_w2 > 3 {
                    continue;
                }
            }
            kept.push(t);
        }
        let det = BeatSeries::new(kept.iter().map(|t| t + 30).collect(), Source::DeviceUnderTest).unwrap();
        let cfg = SearchConfig::default();
        let global = ClockMap::linear(1.0, -30.0);
        let windows = r.windows(cfg.window_len_ms).unwrap();
        let refined = refine(&det, &r, &global, &windows, &cfg);
        assert_eq!(refined.inherited, vec![2]);
        assert_eq!(refined.map.per_window_offset_ms[2], refined.map.per_window_offset_ms[1]);
    }

    #[test]
    fn disjoint_series_do_not_overlap() {
        let r = reference(8, 2);
        let det = distort(&r, 1.0, 10_000_000.0);
        assert!(matches!(
            estimate_global_alignment(&det, &r, &SearchConfig::default()),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn rejects_degenerate_grid() {
        let r = reference(9, 2);
        let cfg = SearchConfig {
            offset_step_ms: 0,
            ..SearchConfig::default()
        };
        assert!(matches!(
            estimate_global_alignment(&r, &r, &cfg),
            Err(Error::DegenerateSearch(_))
        ));
    }

    #[test]
    fn even_sample_spans_the_series() {
        assert_eq!(even_sample(1, 10), Vec::<usize>::new());
        assert_eq!(even_sample(5, 10), vec![1, 2, 3, 4]);
        let s = even_sample(1001, 4);
        assert_eq!(s, vec![1, 251, 501, 751]);
    }

    #[test]
    fn int_grid_is_centred() {
        assert_eq!(int_grid(5, 2, 1, i64::MIN, i64::MAX), vec![3, 4, 5, 6, 7]);
        assert_eq!(int_grid(0, 25, 10, -15, 15), vec![-10, 0, 10]);
    }

    #[test]
    fn artifacts_do_not_break_alignment() {
        let mut cfg = SynthConfig::af(10);
        cfg.duration_ms = 20 * 60_000;
        cfg.artifacts = ArtifactParams {
            extra_beat_rate: 0.05,
            missed_beat_rate: 0.02,
            timestamp_noise_std_ms: 5.0,
        };
        cfg.clock.offset_ms = -1500.0;
        let (rec, det) = synth::generate_pair(&cfg).unwrap();
        let map = estimate_global_alignment(&det.device, &rec.reference, &SearchConfig::default()).unwrap();
        let (_, offset) = map.device_model();
        assert!((offset + 1500.0).abs() <= 3.0, "{offset}");
    }
}
