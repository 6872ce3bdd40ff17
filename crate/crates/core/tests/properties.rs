mod common;

use ibi_eval::afscreen::{self, AfConfig, WindowFeatures};
use ibi_eval::beatmatch;
use ibi_eval::io;
use ibi_eval::metrics::{self, PairSet};
use ibi_eval::model::{self, ValidationConfig};
use ibi_eval::sync::ClockMap;
use ibi_eval::synth::{self, ArtifactParams, SynthConfig};
use ibi_eval::{BeatSeries, Rhythm, Source};
use proptest::prelude::*;

fn intervals_strategy(min_len: usize, max_len: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(250i64..2500, min_len..max_len)
}

fn series_strategy() -> impl Strategy<Value = BeatSeries> {
    (-100_000i64..100_000, intervals_strategy(1, 400))
        .prop_map(|(start, iv)| BeatSeries::from_intervals(start, &iv, Source::Reference).unwrap())
}

fn pairs_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((300i64..2000, -300i64..300), 2..200)
        .prop_map(|v| v.into_iter().map(|(rri, e)| (rri as f64, (rri + e) as f64)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn intervals_invert_cumulative_sum(start in -1_000_000i64..1_000_000, iv in intervals_strategy(1, 300)) {
        let s = BeatSeries::from_intervals(start, &iv, Source::Reference).unwrap();
        let view = s.intervals().unwrap();
        prop_assert_eq!(&view.intervals_ms, &iv);
        prop_assert_eq!(view.end_timestamps_ms.as_slice(), &s.timestamps()[1..]);
    }

    #[test]
    fn windows_tile_the_recording(s in series_strategy(), len in 1_000i64..120_000) {
        let w = model::windows(&s, len).unwrap();
        prop_assert_eq!(w[0].start_ms, s.first_ms());
        for pair in w.windows(2) {
            prop_assert_eq!(pair[0].end_ms, pair[1].start_ms);
        }
        for &t in s.timestamps() {
            prop_assert_eq!(w.iter().filter(|x| x.contains(t)).count(), 1);
        }
        prop_assert!(w.last().unwrap().end_ms > s.last_ms());
    }

    #[test]
    fn validation_is_idempotent(s in series_strategy()) {
        let cfg = ValidationConfig::default();
        let (once, r1) = s.revalidate(&cfg).unwrap();
        let (twice, r2) = once.revalidate(&cfg).unwrap();
        prop_assert_eq!(&once, &s);
        prop_assert_eq!(once, twice);
        prop_assert_eq!(r1, r2);
    }

    #[test]
    fn accounting_identities_hold(seed in any::<u64>()) {
        let (det, reference) = common::random_instance(&mut common::rng(seed), 80);
        let m = beatmatch::match_beats(&det, &reference).unwrap();
        let c = m.counts;
        prop_assert_eq!(c.correct + c.missing, c.total_ref);
        prop_assert_eq!(c.correct + c.extra, c.total_det);
        let s = m.summarize().unwrap();
        prop_assert!((s.correct_pct + s.missing_pct - 100.0).abs() < 1e-9);
        let mut refs: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        refs.sort_unstable();
        refs.dedup();
        prop_assert_eq!(refs.len(), m.pairs.len());
    }

    #[test]
    fn deleting_a_reference_beat_never_adds_correct_beats(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let (det, reference) = common::random_instance(&mut common::rng(seed), 40);
        prop_assume!(reference.len() > 1);
        let before = beatmatch::match_beats(&det, &reference).unwrap().counts.correct;
        let mut ts = reference.timestamps().to_vec();
        ts.remove(pick.index(ts.len()));
        let fewer = BeatSeries::new(ts, Source::Reference).unwrap();
        let after = beatmatch::match_beats(&det, &fewer).unwrap().counts.correct;
        prop_assert!(after <= before);
    }

    // Removing a device beat widens the window of the beat after it, so the
    // count can rise; it can fall by at most the one pair the beat held.
    #[test]
    fn deleting_a_device_beat_loses_at_most_one_pair(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let (det, reference) = common::random_instance(&mut common::rng(seed), 40);
        prop_assume!(det.len() > 2);
        let before = beatmatch::match_beats(&det, &reference).unwrap().counts.correct;
        let mut ts = det.timestamps().to_vec();
        ts.remove(1 + pick.index(ts.len() - 1));
        let fewer = BeatSeries::new(ts, Source::DeviceUnderTest).unwrap();
        let after = beatmatch::match_beats(&fewer, &reference).unwrap().counts.correct;
        prop_assert!(after + 1 >= before);
    }

    #[test]
    fn norm_chain(pairs in pairs_strategy()) {
        let s = metrics::error_stats(&PairSet::from_pairs(&pairs)).unwrap();
        let tol = 1e-9 * s.rmse_ms.max(1.0);
        prop_assert!(s.me_ms.abs() <= s.mae_ms + tol);
        prop_assert!(s.mae_ms <= s.rmse_ms + tol);
    }

    #[test]
    fn bland_altman_bias_is_mean_error(pairs in pairs_strategy()) {
        let ps = PairSet::from_pairs(&pairs);
        let ba = metrics::bland_altman(&ps).unwrap();
        prop_assert_eq!(ba.bias_ms, metrics::error_stats(&ps).unwrap().me_ms);
        prop_assert!(ba.loa_low_ms <= ba.bias_ms && ba.bias_ms <= ba.loa_high_ms);
    }

    #[test]
    fn hrv_ignores_time_shift(iv in intervals_strategy(3, 200), shift in -10_000_000i64..10_000_000) {
        let a = BeatSeries::from_intervals(0, &iv, Source::Reference).unwrap();
        let b = BeatSeries::from_intervals(shift, &iv, Source::Reference).unwrap();
        let ha = metrics::hrv_stats(&a.intervals().unwrap(), &[]).unwrap();
        let hb = metrics::hrv_stats(&b.intervals().unwrap(), &[]).unwrap();
        prop_assert_eq!(ha, hb);
    }

    #[test]
    fn hrv_scales_linearly(iv in intervals_strategy(3, 200), k in 1i64..5) {
        let x: Vec<f64> = iv.iter().map(|&v| v as f64).collect();
        let kx: Vec<f64> = x.iter().map(|v| v * k as f64).collect();
        let h = metrics::hrv_stats_masked(&x, &[]).unwrap();
        let hk = metrics::hrv_stats_masked(&kx, &[]).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        prop_assert!(close(hk.rmssd_ms, k as f64 * h.rmssd_ms));
        prop_assert!(close(hk.std_ms, k as f64 * h.std_ms));
    }

    #[test]
    fn rolling_std20_count(iv in prop::collection::vec(300.0f64..2000.0, 20..300)) {
        prop_assert_eq!(afscreen::rolling_std20(&iv, 1).unwrap().len(), iv.len() - 19);
        prop_assert_eq!(afscreen::rolling_std20(&iv, 20).unwrap().len(), (iv.len() - 20) / 20 + 1);
    }

    #[test]
    fn std20_ignores_order_within_window(mut iv in prop::collection::vec(300i64..2000, 20), seed in any::<u64>()) {
        let x: Vec<f64> = iv.iter().map(|&v| v as f64).collect();
        let a = afscreen::rolling_std20(&x, 1).unwrap()[0];
        let mut rng = common::rng(seed);
        use rand::seq::SliceRandom;
        iv.shuffle(&mut rng);
        let y: Vec<f64> = iv.iter().map(|&v| v as f64).collect();
        let b = afscreen::rolling_std20(&y, 1).unwrap()[0];
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn raising_threshold_never_creates_af(stds in prop::collection::vec(0.0f64..400.0, 1..100), t in 0.0f64..300.0, dt in 0.0f64..200.0) {
        let feats: Vec<WindowFeatures> = stds
            .iter()
            .enumerate()
            .map(|(i, &s)| WindowFeatures { start_index: i, std20_ms: s, rmssd_ms: 0.0, pnn50_pct: 0.0 })
            .collect();
        let lo = afscreen::classify(&feats, &AfConfig { std_threshold_ms: t, ..AfConfig::default() });
        let hi = afscreen::classify(&feats, &AfConfig { std_threshold_ms: t + dt, ..AfConfig::default() });
        for (a, b) in lo.window_scores.iter().zip(&hi.window_scores) {
            prop_assert!(!(a.label == Rhythm::SR && b.label == Rhythm::AF));
        }
        prop_assert!(hi.fraction_af <= lo.fraction_af);
    }

    #[test]
    fn beat_files_round_trip(s in series_strategy(), subject in "[A-Za-z0-9_-]{0,12}", af in any::<bool>()) {
        let mut s = s.with_subject(subject);
        if af {
            s = s.with_rhythm(Rhythm::AF);
        }
        let text = io::format_beat_file(&s);
        let back = io::parse_beat_file(&text, std::path::Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn identity_map_changes_nothing(s in series_strategy()) {
        prop_assert_eq!(ClockMap::identity().apply(&s).unwrap(), s);
    }

    #[test]
    fn ground_truth_labels_cover_the_device_series(seed in 0u64..10_000, extra in 0.0f64..0.2, missed in 0.0f64..0.2) {
        let mut cfg = SynthConfig::sinus(seed);
        cfg.duration_ms = 120_000;
        cfg.artifacts = ArtifactParams { extra_beat_rate: extra, missed_beat_rate: missed, ..ArtifactParams::default() };
        let (rec, cor) = synth::generate_pair(&cfg).unwrap();
        prop_assert_eq!(cor.truth.inserted_count() + cor.truth.genuine_count(), cor.device.len());
        prop_assert_eq!(cor.truth.genuine_count() + cor.truth.deleted_ref_indices.len(), rec.reference.len());
    }
}

#[test]
fn deleting_a_device_beat_can_widen_the_next_window() {
    let reference = BeatSeries::new(vec![0, 1620], Source::Reference).unwrap();
    let det = BeatSeries::new(vec![0, 100, 1100], Source::DeviceUnderTest).unwrap();
    let fewer = BeatSeries::new(vec![0, 1100], Source::DeviceUnderTest).unwrap();
    assert_eq!(beatmatch::match_beats(&det, &reference).unwrap().counts.correct, 1);
    assert_eq!(beatmatch::match_beats(&fewer, &reference).unwrap().counts.correct, 2);
}
