//! HRV statistics with and without ectopic beats.

use anyhow::Result;
use ibi_eval::metrics::{self, EctopicConfig};
use ibi_eval::{BeatSeries, Source};

fn main() -> Result<()> {
    let mut iv = vec![1000i64, 980, 1010, 990, 1005, 995, 1000, 985, 1010, 1000];
    // A premature beat and its compensatory pause.
    iv.splice(5..5, [600, 1400]);
    let series = BeatSeries::from_intervals(0, &iv, Source::Reference)?;

    let view = series.intervals()?;
    let raw = metrics::hrv_stats(&view, &[])?;
    let ectopic = metrics::exclude_ectopic(&series, &EctopicConfig::default())?;
    let clean = metrics::hrv_stats(&view, &ectopic.excluded)?;

    println!("excluded intervals: {:?}", ectopic.excluded_indices);
    println!("          RMSSD    pNN50    STD");
    println!(
        "raw    {:>8.2} {:>8.2} {:>6.2}",
        raw.rmssd_ms, raw.pnn50_pct, raw.std_ms
    );
    println!(
        "clean  {:>8.2} {:>8.2} {:>6.2}",
        clean.rmssd_ms, clean.pnn50_pct, clean.std_ms
    );
    Ok(())
}
