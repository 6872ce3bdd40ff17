//! Recovering a device clock that runs fast and starts late.

use anyhow::Result;
use ibi_eval::sync::{self, SearchConfig};
use ibi_eval::synth::{self, ClockDistortion, SynthConfig};

fn main() -> Result<()> {
    let cfg = SynthConfig {
        duration_ms: 30 * 60_000,
        clock: ClockDistortion {
            slope: 1.0 + 50e-6,
            offset_ms: 320.0,
        },
        ..SynthConfig::sinus(7)
    };
    let (rec, cor) = synth::generate_pair(&cfg)?;

    let (map, report) = sync::synchronize(&cor.device, &rec.reference, &SearchConfig::default())?;
    let (slope, offset) = map.device_model();
    println!(
        "true      offset {:>8.2} ms  drift {:>6.2} ppm",
        cfg.clock.offset_ms,
        (cfg.clock.slope - 1.0) * 1e6
    );
    println!(
        "estimated offset {:>8.2} ms  drift {:>6.2} ppm",
        offset,
        (slope - 1.0) * 1e6
    );
    println!(
        "interval MAE {:.2} -> {:.2} ms, {} cost evaluations",
        report.interval_mae_before_ms, report.interval_mae_after_ms, report.evaluations
    );
    println!("per-window residual offsets: {:?}", map.per_window_offset_ms);

    let aligned = map.apply(&cor.device)?;
    println!(
        "first beats: device {:?} -> aligned {:?}",
        &cor.device.timestamps()[..3],
        &aligned.timestamps()[..3]
    );
    Ok(())
}
