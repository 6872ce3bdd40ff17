//! The whole evaluation over a small batch: sync, match, metrics, HRV and
//! AF screening, grouped by rhythm.
//!
//! Pass a directory to also write report.json, report.txt and per-recording
//! CSVs there.

use anyhow::Result;
use ibi_eval::io;
use ibi_eval::pipeline::{self, PipelineConfig, RecordingInput};
use ibi_eval::synth::{self, ArtifactParams, ClockDistortion, SynthConfig};

fn main() -> Result<()> {
    env_logger::init();
    let mut inputs = Vec::new();
    for seed in 0..6u64 {
        let mut cfg = if seed < 3 {
            SynthConfig::sinus(seed)
        } else {
            SynthConfig::af(seed)
        };
        cfg.artifacts = ArtifactParams {
            extra_beat_rate: 0.01,
            missed_beat_rate: 0.01,
            ..ArtifactParams::default()
        };
        cfg.clock = ClockDistortion {
            slope: 1.0 + (seed as f64 * 10.0 - 25.0) * 1e-6,
            offset_ms: 150.0 * seed as f64,
        };
        let (rec, cor) = synth::generate_pair(&cfg)?;
        inputs.push(RecordingInput::new(format!("rec{seed}"), cor.device, rec.reference));
    }

    let (report, outcomes) =
        pipeline::run(&inputs, &PipelineConfig::default()).map_err(|(name, e)| anyhow::anyhow!("{name}: {e}"))?;
    print!("{}", pipeline::render_tables(&report));

    if let Some(dir) = std::env::args().nth(1) {
        io::write_report(dir.as_ref(), &report, &outcomes)?;
        println!("\nwrote {dir}");
    }
    Ok(())
}
