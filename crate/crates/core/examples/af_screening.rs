//! Rolling std20 screening, and calibrating its threshold.

use anyhow::Result;
use ibi_eval::afscreen::{self, AfConfig};
use ibi_eval::synth::{self, SynthConfig};
use ibi_eval::Rhythm;

fn intervals(cfg: &SynthConfig) -> Result<Vec<f64>> {
    Ok(synth::generate(cfg)?.reference.intervals()?.as_f64())
}

fn main() -> Result<()> {
    let cfg = AfConfig::default();
    for (name, syn) in [("sinus", SynthConfig::sinus(1)), ("af", SynthConfig::af(1))] {
        let r = afscreen::screen(&intervals(&syn)?, &cfg)?;
        println!(
            "{name:>5}: {} windows, {:.1}% AF -> {}",
            r.window_scores.len(),
            100.0 * r.fraction_af,
            r.overall_label.as_str()
        );
    }

    // Disjoint groups of 20 instead of a sliding window.
    let disjoint = AfConfig { stride: 20, ..cfg };
    let r = afscreen::screen(&intervals(&SynthConfig::af(1))?, &disjoint)?;
    println!("stride 20: {} windows", r.window_scores.len());

    let mut runs = Vec::new();
    for seed in 0..10 {
        runs.push((intervals(&SynthConfig::sinus(seed))?, Rhythm::SR));
        runs.push((intervals(&SynthConfig::af(100 + seed))?, Rhythm::AF));
    }
    let cal = afscreen::calibrate_threshold(&runs, &cfg)?;
    println!(
        "calibrated threshold {:.1} ms, balanced accuracy {:.4} over {} SR / {} AF windows",
        cal.config.std_threshold_ms, cal.balanced_accuracy, cal.n_sr_windows, cal.n_af_windows
    );
    Ok(())
}
