//! Inputs shared by the benchmarks.

use aegan_core::tfr::Waveform;

/// Two-tone test track of `len` samples at 16 kHz.
pub fn test_track(len: usize) -> Waveform {
    let s = (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            0.3 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 2300.0 * t).sin()
        })
        .collect();
    Waveform::from_samples(s).expect("non-empty")
}
