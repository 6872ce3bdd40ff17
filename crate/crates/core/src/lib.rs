//! Validation toolkit for beat-to-beat interval series recorded by a wearable
//! device, scored against an ECG-derived reference.
//!
//! The pipeline mirrors how such a device is evaluated in practice:
//!
//! 1. [`model`] validates raw beat timestamps into a [`BeatSeries`].
//! 2. [`sync`] maps the device clock onto the reference clock (linear drift
//!    plus per-minute residual offsets).
//! 3. [`beatmatch`] labels every beat correct, extra or missing.
//! 4. [`metrics`] scores interval errors, Bland-Altman agreement and HRV
//!    statistics over the clean one-minute windows.
//! 5. [`afscreen`] screens an interval series for atrial fibrillation from
//!    the rolling standard deviation of 20 consecutive intervals.
//!
//! [`synth`] generates seeded sinus-rhythm and AF recordings with clock
//! distortion and motion artifacts, and [`io`] / [`pipeline`] handle beat
//! files, reports and the end-to-end evaluation.

pub mod afscreen;
pub mod beatmatch;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sync;
pub mod synth;

pub use error::{Error, Result};
pub use model::{BeatSeries, IntervalView, MinuteWindow, Rhythm, Source, ValidationConfig};
