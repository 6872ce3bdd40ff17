//! Loading a beat file, checking it, and looking at its intervals.
//!
//! ```bash
//! cargo run --example validate_series
//! ```

use anyhow::Result;
use ibi_eval::{io, BeatSeries, Source, ValidationConfig};

const FILE: &str = "# subject_id: s01
# source: reference
timestamp_ms,interval_ms
0,
812,812
1630,818
1990,360
2804,814
";

fn main() -> Result<()> {
    let series = io::parse_beat_file(FILE, "s01.csv".as_ref())?;
    println!("{} beats, span {} ms", series.len(), series.span_ms());

    let view = series.intervals()?;
    for (iv, end) in view.intervals_ms.iter().zip(&view.end_timestamps_ms) {
        println!("  interval {iv:>4} ms ending at {end}");
    }

    // 360 ms is in range by default; tighten the floor and it gets flagged.
    let tight = ValidationConfig {
        min_interval_ms: 400,
        ..ValidationConfig::default()
    };
    let (_, report) = series.revalidate(&tight)?;
    println!("out of range with 400 ms floor: beats {:?}", report.out_of_range);

    // Strict mode refuses the same series, naming the line.
    match io::parse_beat_file_with(FILE, "s01.csv".as_ref(), &ValidationConfig { strict: true, ..tight }) {
        Ok(_) => println!("strict: accepted"),
        Err(e) => println!("strict: {e}"),
    }

    let bad = BeatSeries::new(vec![0, 800, 700], Source::DeviceUnderTest);
    println!("non-monotonic: {}", bad.unwrap_err());
    Ok(())
}
