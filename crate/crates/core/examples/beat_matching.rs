//! Classifying device beats as correct, extra or missing.

use anyhow::Result;
use ibi_eval::beatmatch::{self, BeatClass};
use ibi_eval::{BeatSeries, Source};

fn main() -> Result<()> {
    let reference = BeatSeries::new(vec![0, 1000, 2000, 3000, 4000, 5000], Source::Reference)?;
    // 1500 is spurious, 3000 was never detected, the rest are a bit off.
    let det = BeatSeries::new(vec![10, 990, 1500, 2030, 4020, 4985], Source::DeviceUnderTest)?;

    let m = beatmatch::match_beats(&det, &reference)?;
    for (k, class) in m.det_classes().iter().enumerate() {
        let tag = match class {
            BeatClass::Correct => "correct",
            BeatClass::Extra => "extra",
            BeatClass::Missing => "missing",
        };
        println!("det {:>5} ms  {tag}", det.timestamps()[k]);
    }
    println!("missing reference beats: {:?}", m.missing_ref_indices);

    let s = m.summarize()?;
    println!(
        "correct {:.1}%  extra {:.1}%  missing {:.1}%",
        s.correct_pct, s.extra_pct, s.missing_pct
    );
    Ok(())
}
