//! Seeded generators for sinus-rhythm and AF reference series, plus
//! device-side corruption (timestamp noise, dropped and inserted beats,
//! clock distortion).
//!
//! Randomness comes from ChaCha8 seeded with [`SynthConfig::seed`] via
//! `seed_from_u64`; rhythm generation draws from stream 0 and corruption
//! from stream 1, so the two stages never perturb each other and outputs
//! are bit-identical across platforms for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beatmatch::{BeatClass, MatchResult};
use crate::error::{Error, Result};
use crate::model::{BeatSeries, Rhythm, Source};

const RHYTHM_STREAM: u64 = 0;
const ARTIFACT_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinusParams {
    pub rsa_amplitude_ms: f64,
    pub rsa_period_ms: f64,
    pub jitter_std_ms: f64,
}

impl Default for SinusParams {
    fn default() -> Self {
        Self {
            rsa_amplitude_ms: 40.0,
            rsa_period_ms: 4300.0,
            jitter_std_ms: 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfParams {
    pub rr_std_ms: f64,
}

impl Default for AfParams {
    fn default() -> Self {
        Self { rr_std_ms: 180.0 }
    }
}

/// Device-side corruption. Rates are per beat (deletion) or per interval
/// (insertion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactParams {
    pub extra_beat_rate: f64,
    pub missed_beat_rate: f64,
    pub timestamp_noise_std_ms: f64,
}

impl Default for ArtifactParams {
    fn default() -> Self {
        Self {
            extra_beat_rate: 0.0,
            missed_beat_rate: 0.0,
            timestamp_noise_std_ms: 5.0,
        }
    }
}

impl ArtifactParams {
    pub fn none() -> Self {
        Self {
            extra_beat_rate: 0.0,
            missed_beat_rate: 0.0,
            timestamp_noise_std_ms: 0.0,
        }
    }
}

/// Device clock as seen from the reference: `t_device = slope * t_ref + offset_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockDistortion {
    pub slope: f64,
    pub offset_ms: f64,
}

impl Default for ClockDistortion {
    fn default() -> Self {
        Self {
            slope: 1.0,
            offset_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub duration_ms: i64,
    pub mean_rr_ms: f64,
    pub rhythm: Rhythm,
    pub rr_min_ms: f64,
    pub rr_max_ms: f64,
    pub sinus: SinusParams,
    pub af: AfParams,
    pub artifacts: ArtifactParams,
    pub clock: ClockDistortion,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::sinus(0)
    }
}

impl SynthConfig {
    /// Ten minutes of sinus rhythm around 60 bpm.
    pub fn sinus(seed: u64) -> Self {
        Self {
            seed,
            duration_ms: 600_000,
            mean_rr_ms: 1000.0,
            rhythm: Rhythm::SR,
            rr_min_ms: 300.0,
            rr_max_ms: 2000.0,
            sinus: SinusParams::default(),
            af: AfParams::default(),
            artifacts: ArtifactParams::default(),
            clock: ClockDistortion::default(),
        }
    }

    /// Ten minutes of AF: i.i.d. intervals around 900 ms, 180 ms spread.
    pub fn af(seed: u64) -> Self {
        Self {
            mean_rr_ms: 900.0,
            rhythm: Rhythm::AF,
            ..Self::sinus(seed)
        }
    }

    pub fn for_rhythm(rhythm: Rhythm, seed: u64) -> Self {
        match rhythm {
            Rhythm::AF => Self::af(seed),
            _ => Self::sinus(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.rhythm == Rhythm::Unknown {
            return bad("rhythm must be SR or AF".into());
        }
        if self.duration_ms <= 0 {
            return bad(format!("duration_ms must be positive, got {}", self.duration_ms));
        }
        if !(self.rr_min_ms >= 200.0 && self.rr_max_ms <= 4000.0 && self.rr_min_ms < self.rr_max_ms) {
            return bad(format!(
                "interval bounds [{}, {}] ms must satisfy 200 <= min < max <= 4000",
                self.rr_min_ms, self.rr_max_ms
            ));
        }
        if !(self.mean_rr_ms >= self.rr_min_ms && self.mean_rr_ms <= self.rr_max_ms) {
            return bad(format!("mean_rr_ms {} outside interval bounds", self.mean_rr_ms));
        }
        let a = &self.artifacts;
        for (name, rate) in [
            ("extra_beat_rate", a.extra_beat_rate),
            ("missed_beat_rate", a.missed_beat_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        for (name, v) in [
            ("timestamp_noise_std_ms", a.timestamp_noise_std_ms),
            ("jitter_std_ms", self.sinus.jitter_std_ms),
            ("rr_std_ms", self.af.rr_std_ms),
            ("rsa_amplitude_ms", self.sinus.rsa_amplitude_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.sinus.rsa_period_ms.is_nan() || self.sinus.rsa_period_ms <= 0.0 {
            return bad("rsa_period_ms must be positive".into());
        }
        if !(self.clock.slope.is_finite() && self.clock.slope > 0.0 && self.clock.offset_ms.is_finite()) {
            return bad("clock slope must be positive and offset finite".into());
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub reference: BeatSeries,
    pub rhythm: Rhythm,
}

/// Generates a reference series starting at t = 0.
///
/// Sinus rhythm follows `rr(t) = mean + A sin(2πt/P) + N(0, jitter)`; AF
/// draws each interval independently from a gaussian truncated to the
/// configured bounds (rejection sampling).
pub fn generate(config: &SynthConfig) -> Result<SyntheticRecording> {
    config.validate()?;
    let mut rng = config.rng(RHYTHM_STREAM);
    let mut ts = vec![0i64];
    let mut t = 0i64;
    match config.rhythm {
        Rhythm::SR => {
            let p = config.sinus;
            let jitter = Normal::new(0.0, p.jitter_std_ms).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            loop {
                let phase = std::f64::consts::TAU * t as f64 / p.rsa_period_ms;
                let rr = config.mean_rr_ms + p.rsa_amplitude_ms * phase.sin() + jitter.sample(&mut rng);
                let rr = rr.clamp(config.rr_min_ms, config.rr_max_ms).round() as i64;
                t += rr;
                if t >= config.duration_ms {
                    break;
                }
                ts.push(t);
            }
        }
        Rhythm::AF => {
            let dist =
                Normal::new(config.mean_rr_ms, config.af.rr_std_ms).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            loop {
                let rr = loop {
                    let x = dist.sample(&mut rng);
                    if x >= config.rr_min_ms && x <= config.rr_max_ms {
                        break x;
                    }
                };
                t += rr.round() as i64;
                if t >= config.duration_ms {
                    break;
                }
                ts.push(t);
            }
        }
        Rhythm::Unknown => unreachable!("rejected by validate"),
    }
    if ts.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "duration {} ms too short for a single interval",
            config.duration_ms
        )));
    }
    let reference = BeatSeries::new(ts, Source::Reference)?
        .with_subject(format!(
            "synth-{}-{}",
            config.rhythm.as_str().to_ascii_lowercase(),
            config.seed
        ))
        .with_rhythm(config.rhythm);
    Ok(SyntheticRecording {
        reference,
        rhythm: config.rhythm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeatLabel {
    /// Device beat produced by a real reference beat.
    Genuine { ref_index: usize },
    /// Spurious device beat inserted inside a genuine interval.
    Inserted,
}

/// What the corruption did, beat by beat.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// One label per device beat.
    pub det_labels: Vec<BeatLabel>,
    /// Reference beats with no device counterpart.
    pub deleted_ref_indices: Vec<usize>,
}

impl GroundTruth {
    pub fn inserted_count(&self) -> usize {
        self.det_labels
            .iter()
            .filter(|l| matches!(l, BeatLabel::Inserted))
            .count()
    }

    pub fn genuine_count(&self) -> usize {
        self.det_labels.len() - self.inserted_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedRecording {
    pub device: BeatSeries,
    pub truth: GroundTruth,
}

/// Derives a device series from a reference, applying in order: timestamp
/// noise, beat deletion, beat insertion and clock distortion.
pub fn corrupt(reference: &BeatSeries, config: &SynthConfig) -> Result<CorruptedRecording> {
    config.validate()?;
    let mut rng = config.rng(ARTIFACT_STREAM);
    let a = config.artifacts;

    // (time, origin) where origin is the reference index or None for inserted beats.
    let mut beats: Vec<(i64, Option<usize>)> = reference
        .timestamps()
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, Some(i)))
        .collect();

    if a.timestamp_noise_std_ms > 0.0 {
        let noise = Normal::new(0.0, a.timestamp_noise_std_ms).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut prev = i64::MIN;
        for beat in &mut beats {
            let t = (beat.0 as f64 + noise.sample(&mut rng)).round() as i64;
            beat.0 = t.max(prev.saturating_add(1));
            prev = beat.0;
        }
    }

    let mut deleted = Vec::new();
    if a.missed_beat_rate > 0.0 {
        beats.retain(|&(_, origin)| {
            let drop = rng.random_bool(a.missed_beat_rate);
            if drop {
                deleted.push(origin.expect("only genuine beats exist before insertion"));
            }
            !drop
        });
    }

    if a.extra_beat_rate > 0.0 && beats.len() >= 2 {
        let mut out = Vec::with_capacity(beats.len() + beats.len() / 8);
        out.push(beats[0]);
        for w in beats.windows(2) {
            let (lo, hi) = (w[0].0, w[1].0);
            if rng.random_bool(a.extra_beat_rate) && hi - lo >= 2 {
                out.push((rng.random_range(lo + 1..hi), None));
            }
            out.push(w[1]);
        }
        beats = out;
    }

    if beats.len() < 2 {
        return Err(Error::InvalidConfig("corruption left fewer than two beats".into()));
    }

    let clock = config.clock;
    let mut prev = i64::MIN;
    let mut ts = Vec::with_capacity(beats.len());
    let mut labels = Vec::with_capacity(beats.len());
    for &(t, origin) in &beats {
        let mapped = (clock.slope * t as f64 + clock.offset_ms).round() as i64;
        let mapped = mapped.max(prev.saturating_add(1));
        prev = mapped;
        ts.push(mapped);
        labels.push(match origin {
            Some(ref_index) => BeatLabel::Genuine { ref_index },
            None => BeatLabel::Inserted,
        });
    }

    let mut device = BeatSeries::new(ts, Source::DeviceUnderTest)?.with_subject(reference.subject_id.clone());
    device.rhythm = reference.rhythm;
    Ok(CorruptedRecording {
        device,
        truth: GroundTruth {
            det_labels: labels,
            deleted_ref_indices: deleted,
        },
    })
}

/// `generate` followed by `corrupt` under one config.
pub fn generate_pair(config: &SynthConfig) -> Result<(SyntheticRecording, CorruptedRecording)> {
    let rec = generate(config)?;
    let det = corrupt(&rec.reference, config)?;
    Ok((rec, det))
}

/// How well a match result recovers the corruption that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RecoveryScore {
    pub inserted: usize,
    pub inserted_recovered: usize,
    pub deleted: usize,
    pub deleted_recovered: usize,
    /// Genuine device beats classified extra that no insertion explains.
    pub spurious_extra: usize,
    /// Reference beats classified missing that were never deleted.
    pub spurious_missing: usize,
}

impl RecoveryScore {
    /// Fraction of injected artifacts recovered; 1.0 when nothing was injected.
    pub fn agreement(&self) -> f64 {
        let total = self.inserted + self.deleted;
        if total == 0 {
            1.0
        } else {
            (self.inserted_recovered + self.deleted_recovered) as f64 / total as f64
        }
    }
}

/// Compares a match result with the ground truth of [`corrupt`].
///
/// An insertion placed late in an interval claims the following reference
/// beat under the window rule, which pushes the extra label onto the genuine
/// beat right after it. That beat is credited to the insertion, since the
/// count of extra beats per interval is what the rule measures.
pub fn score_recovery(result: &MatchResult, truth: &GroundTruth) -> RecoveryScore {
    let det_class = result.det_classes();
    let mut score = RecoveryScore::default();
    let mut credited = vec![false; det_class.len()];
    for (k, label) in truth.det_labels.iter().enumerate() {
        if *label != BeatLabel::Inserted {
            continue;
        }
        score.inserted += 1;
        if det_class[k] == BeatClass::Extra && !credited[k] {
            credited[k] = true;
            score.inserted_recovered += 1;
        } else if k + 1 < det_class.len()
            && det_class[k + 1] == BeatClass::Extra
            && !credited[k + 1]
            && matches!(truth.det_labels[k + 1], BeatLabel::Genuine { .. })
        {
            credited[k + 1] = true;
            score.inserted_recovered += 1;
        }
    }
    score.spurious_extra = det_class
        .iter()
        .zip(&credited)
        .zip(&truth.det_labels)
        .filter(|((c, cr), l)| **c == BeatClass::Extra && !**cr && matches!(l, BeatLabel::Genuine { .. }))
        .count();

    let missing: std::collections::HashSet<usize> = result.missing_ref_indices.iter().copied().collect();
    score.deleted = truth.deleted_ref_indices.len();
    score.deleted_recovered = truth.deleted_ref_indices.iter().filter(|i| missing.contains(i)).count();
    let deleted: std::collections::HashSet<usize> = truth.deleted_ref_indices.iter().copied().collect();
    score.spurious_missing = result
        .missing_ref_indices
        .iter()
        .filter(|i| !deleted.contains(i))
        .count();
    score
}
