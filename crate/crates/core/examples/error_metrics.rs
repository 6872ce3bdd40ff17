//! Interval error and Bland-Altman agreement for a noisy device.

use anyhow::Result;
use ibi_eval::metrics::{self, PairSet};
use ibi_eval::pipeline::{self, PipelineConfig, RecordingInput};
use ibi_eval::synth::{self, ArtifactParams, SynthConfig};

fn main() -> Result<()> {
    // Hand-made pairs first: (reference, device).
    let ps = PairSet::from_pairs(&[(800.0, 810.0), (820.0, 805.0), (790.0, 800.0), (805.0, 805.0)]);
    let e = metrics::error_stats(&ps)?;
    println!(
        "ME {:.2}  MAE {:.2}  MAPE {:.2}%  RMSE {:.2}",
        e.me_ms, e.mae_ms, e.mape_pct, e.rmse_ms
    );

    // Then a whole recording, where only matched beats in clean windows count.
    let cfg = SynthConfig {
        artifacts: ArtifactParams {
            timestamp_noise_std_ms: 8.0,
            extra_beat_rate: 0.01,
            ..ArtifactParams::default()
        },
        ..SynthConfig::sinus(3)
    };
    let (rec, cor) = synth::generate_pair(&cfg)?;
    let o = pipeline::evaluate_recording(
        &RecordingInput::new("noisy", cor.device, rec.reference),
        &PipelineConfig::default(),
    )?;
    let r = &o.report;
    println!(
        "pairs used {}, dropped: {} unclean, {} ectopic",
        r.pairs_used, r.pairs_dropped_unclean, r.pairs_dropped_ectopic
    );
    if let Some(ba) = &o.bland_altman {
        println!(
            "bias {:.2} ms, limits [{:.2}, {:.2}]",
            ba.bias_ms, ba.loa_low_ms, ba.loa_high_ms
        );
        for p in ba.points.iter().take(3) {
            println!("  mean {:.1}  diff {:.1}", p.mean_ms, p.diff_ms);
        }
    }
    Ok(())
}
