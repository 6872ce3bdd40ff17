#![allow(dead_code)]

use ibi_eval::{BeatSeries, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference beats each device beat may claim: those inside
/// `[t - l/2, t + l/2]`, `l` the interval ending at the beat (the following
/// one for the first beat).
pub fn candidates(det: &[i64], reference: &[i64]) -> Vec<Vec<usize>> {
    det.iter()
        .enumerate()
        .map(|(k, &t)| {
            let l = if k == 0 { det[1] - det[0] } else { t - det[k - 1] };
            reference
                .iter()
                .enumerate()
                .filter(|&(_, &x)| 2 * (x - t).abs() <= l)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Size of a maximum bipartite matching (augmenting paths).
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    (0..adj.len())
        .filter(|&u| augment(u, adj, &mut vec![false; n_right], &mut owner))
        .count()
}

/// A small reference series and a perturbed device copy: jittered beats,
/// some dropped, some spurious ones added.
pub fn random_instance(rng: &mut ChaCha8Rng, max_beats: usize) -> (BeatSeries, BeatSeries) {
    let n = rng.random_range(3..=max_beats);
    let mut t = rng.random_range(-2000..2000);
    let mut reference = Vec::with_capacity(n);
    for _ in 0..n {
        reference.push(t);
        t += rng.random_range(350..1500);
    }
    let jitter = rng.random_range(0..=150);
    let mut det = Vec::with_capacity(n + n / 5);
    for &x in &reference {
        if rng.random::<f64>() >= 0.1 {
            det.push(x + rng.random_range(-jitter..=jitter));
        }
    }
    let extra = rng.random_range(0..=n / 5);
    for _ in 0..extra {
        det.push(rng.random_range(reference[0] - 500..=t));
    }
    det.sort_unstable();
    det.dedup();
    while det.len() < 2 {
        det.push(det.last().copied().unwrap_or(0) + 800);
    }
    (
        BeatSeries::new(det, Source::DeviceUnderTest).unwrap(),
        BeatSeries::new(reference, Source::Reference).unwrap(),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
