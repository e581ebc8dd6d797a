//! Embedding, inversion and mixing checked against independent references.

use std::f64::consts::PI;
use std::fs;

use aegan_core::audio::{build_manifest, mix_at_snr, write_wav, Split, SplitRule};
use aegan_core::inverse::{interior_sdr, ls_istft};
use aegan_core::tfr::{adjust_length, compute_overlap, stft_embed, StftConfig, Waveform};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::from_samples(v).unwrap()
}

/// Sum of random sinusoids strictly below the highest kept bin.
fn band_limited(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| (rng.random_range(50.0..7800.0), rng.random_range(0.01..0.2), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            parts.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum()
        })
        .collect()
}

proptest! {
    #[test]
    fn overlap_fills_the_grid(len in 1usize..=98_304) {
        let cfg = StftConfig::default();
        let o = compute_overlap(len, &cfg).unwrap();
        prop_assert!(o >= cfg.min_overlap() && o < cfg.window_len);
        let adjusted = cfg.n_time * (cfg.window_len - o) + o;
        prop_assert!(adjusted >= len);
        // Frames that fit in the adjusted track.
        prop_assert_eq!((adjusted - cfg.window_len) / (cfg.window_len - o) + 1, cfg.n_time);
        let w = adjust_length(&wave(vec![0.25; len]), o, &cfg).unwrap();
        prop_assert_eq!(w.len(), adjusted);
        prop_assert!(w.samples()[..len].iter().all(|v| *v == 0.25));
        prop_assert!(w.samples()[len..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hop_is_the_smallest_that_covers(len in 1usize..=98_304) {
        let cfg = StftConfig::default();
        let hop = cfg.window_len - compute_overlap(len, &cfg).unwrap();
        prop_assert!(cfg.n_time * hop >= len && cfg.n_time * (hop - 1) < len);
    }
}

#[test]
fn too_long_tracks_are_rejected() {
    let cfg = StftConfig::default();
    assert!(compute_overlap(98_305, &cfg).is_err());
    assert!(compute_overlap(0, &cfg).is_err());
}

/// Magnitude and phase of bins 0..n_freq by direct summation.
fn naive_dft(frame: &[f64], window: &[f64], n_freq: usize) -> Vec<(f64, f64)> {
    let s = frame.len() as f64;
    (0..n_freq)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, (x, w)) in frame.iter().zip(window).enumerate() {
                let a = -2.0 * PI * k as f64 * n as f64 / s;
                re += x * w * a.cos();
                im += x * w * a.sin();
            }
            ((re * re + im * im).sqrt(), im.atan2(re))
        })
        .collect()
}

#[test]
fn embedding_matches_a_direct_dft() {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = 40_000;
    // A pure bin-centred tone plus a random off-bin mixture.
    let x: Vec<f64> = band_limited(&mut rng, len)
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.5 * (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin())
        .collect();
    let g = stft_embed(&wave(x.clone()), &cfg).unwrap();
    let hop = cfg.window_len - g.overlap;
    let window: Vec<f64> = (0..cfg.window_len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / cfg.window_len as f64).cos())
        .collect();
    let mut padded = x;
    padded.resize(g.adjusted_len, 0.0);
    for t in [0, 1, 100, 255] {
        let frame = &padded[t * hop..t * hop + cfg.window_len];
        for (k, (m, p)) in naive_dft(frame, &window, cfg.n_freq).into_iter().enumerate() {
            assert!((g.magnitude[[k, t]] - m).abs() < 1e-9, "mag bin {k} frame {t}");
            if m > 1e-6 {
                let d = (g.phase[[k, t]] - p).rem_euclid(2.0 * PI);
                assert!(d.min(2.0 * PI - d) < 1e-7, "phase bin {k} frame {t}");
            }
        }
    }
    // 1 kHz lands on bin 32 of a 512-point frame at 16 kHz.
    let col = g.magnitude.column(100);
    let peak = (0..cfg.n_freq).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
    assert_eq!(peak, 32);
}

#[test]
fn round_trip_reaches_forty_db_across_overlaps() {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        // Spread the implied overlap over its admissible range.
        let target_o = 128 + (i * (448 - 128)) / 49;
        let len = cfg.n_time * (cfg.window_len - target_o);
        let x = band_limited(&mut rng, len);
        let g = stft_embed(&wave(x.clone()), &cfg).unwrap();
        assert_eq!(g.overlap, target_o);
        let y = ls_istft(&g.magnitude, &g.phase, g.overlap, &cfg).unwrap();
        let sdr = interior_sdr(&x, y.samples(), cfg.window_len).unwrap();
        assert!(sdr >= 40.0, "overlap {target_o}: {sdr:.2} dB");
    }
}

#[test]
fn inversion_is_linear_in_the_complex_spectrum() {
    let cfg = StftConfig::square(64);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let planes = |rng: &mut ChaCha8Rng| {
        let m = Array2::from_shape_fn((64, 64), |_| rng.random_range(0.0..1.0));
        let p = Array2::from_shape_fn((64, 64), |_| rng.random_range(-PI..PI));
        (m, p)
    };
    let (m1, p1) = planes(&mut rng);
    let (m2, p2) = planes(&mut rng);
    let (a, b) = (0.7, -1.3);
    let mut ms = Array2::zeros((64, 64));
    let mut ps = Array2::zeros((64, 64));
    for ((i, j), v) in m1.indexed_iter() {
        let re = a * v * p1[[i, j]].cos() + b * m2[[i, j]] * p2[[i, j]].cos();
        let im = a * v * p1[[i, j]].sin() + b * m2[[i, j]] * p2[[i, j]].sin();
        ms[[i, j]] = re.hypot(im);
        ps[[i, j]] = im.atan2(re);
    }
    let o = 40;
    let y1 = ls_istft(&m1, &p1, o, &cfg).unwrap();
    let y2 = ls_istft(&m2, &p2, o, &cfg).unwrap();
    let ys = ls_istft(&ms, &ps, o, &cfg).unwrap();
    for ((s, u), v) in ys.samples().iter().zip(y1.samples()).zip(y2.samples()) {
        assert!((s - (a * u + b * v)).abs() < 1e-10);
    }
}

#[test]
fn mixer_hits_the_requested_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let clean = wave(band_limited(&mut rng, 16_000));
    let noise = wave((0..40_000).map(|_| rng.random_range(-1.0..1.0)).collect());
    for snr in [0.0, 5.0, 10.0, -5.0, 20.0] {
        let offset = 1234;
        let mixed = mix_at_snr(&clean, &noise, snr, offset).unwrap();
        let p_clean: f64 = clean.samples().iter().map(|v| v * v).sum();
        let p_noise: f64 = mixed.samples().iter().zip(clean.samples()).map(|(m, c)| (m - c) * (m - c)).sum();
        let measured = 10.0 * (p_clean / p_noise).log10();
        assert!((measured - snr).abs() < 1e-6, "{snr}: {measured}");
    }
}

#[test]
fn speaker_holdout_keeps_speakers_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let noise = dir.path().join("noise");
    fs::create_dir_all(&noise).unwrap();
    let tone = wave(vec![0.1; 800]);
    for spk in 0..6 {
        let d = clean.join(format!("s{spk}"));
        fs::create_dir_all(&d).unwrap();
        for t in 0..3 {
            write_wav(d.join(format!("t{t}.wav")), &tone).unwrap();
        }
    }
    write_wav(noise.join("n.wav"), &tone).unwrap();
    let m = build_manifest(&clean, &noise, &[0.0, 5.0], SplitRule::SpeakerHoldout { test_fraction: 0.34, seed: 3 })
        .unwrap();
    assert_eq!(m.len(), 36);
    let speaker = |r: &aegan_core::ManifestRecord| r.clean.parent().unwrap().to_path_buf();
    let train: Vec<_> = m.split(Split::Train).map(speaker).collect();
    let test: Vec<_> = m.split(Split::Test).map(speaker).collect();
    assert!(!train.is_empty() && !test.is_empty());
    assert!(test.iter().all(|s| !train.contains(s)));
}
