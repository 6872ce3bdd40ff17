//! Generating a labelled corpus and checking the matcher against its ground truth.

use anyhow::Result;
use ibi_eval::synth::{self, ArtifactParams, SynthConfig};
use ibi_eval::{beatmatch, io};

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("ibi-eval-corpus");
    for seed in 0..4 {
        let mut cfg = if seed % 2 == 0 {
            SynthConfig::sinus(seed)
        } else {
            SynthConfig::af(seed)
        };
        cfg.artifacts = ArtifactParams {
            extra_beat_rate: 0.03,
            missed_beat_rate: 0.02,
            ..ArtifactParams::default()
        };
        let (rec, cor) = synth::generate_pair(&cfg)?;

        let m = beatmatch::match_beats(&cor.device, &rec.reference)?;
        let score = synth::score_recovery(&m, &cor.truth);
        println!(
            "seed {seed} {:?}: {} inserted ({} found), {} deleted ({} found), agreement {:.3}",
            cfg.rhythm,
            score.inserted,
            score.inserted_recovered,
            score.deleted,
            score.deleted_recovered,
            score.agreement()
        );

        let dir = out.join(format!("rec{seed}"));
        io::write_beat_file(&rec.reference, dir.join("ref.csv"))?;
        io::write_beat_file(&cor.device, dir.join("det.csv"))?;
    }
    println!("wrote corpus under {}", out.display());
    Ok(())
}
