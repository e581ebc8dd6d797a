//! Short-time objective intelligibility.
//!
//! Follows the published procedure: resample to 10 kHz, drop frames more
//! than 40 dB below the loudest clean frame, take 15 one-third-octave band
//! envelopes from a 512-point STFT, and average the clipped, normalised
//! correlations of 30-frame (384 ms) segments.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::MetricError;

const FS: usize = 10_000;
const N_FRAME: usize = 256;
const HOP: usize = N_FRAME / 2;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// STOI of `degraded` against `clean`, both at `rate` Hz.
pub fn stoi(clean: &[f64], degraded: &[f64], rate: u32) -> Result<f64, MetricError> {
    if clean.len() != degraded.len() {
        return Err(MetricError::LengthMismatch(clean.len(), degraded.len()));
    }
    if clean.iter().all(|v| *v == 0.0) {
        return Err(MetricError::SilentReference);
    }
    let (x, y) = if rate as usize == FS {
        (clean.to_vec(), degraded.to_vec())
    } else {
        let (p, q) = reduce(FS, rate as usize);
        (resample(clean, p, q), resample(degraded, p, q))
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let xs = band_envelopes(&x);
    let ys = band_envelopes(&y);
    let frames = xs.first().map_or(0, Vec::len);
    if frames < SEGMENT {
        return Err(MetricError::TooShort {
            frames,
            needed: SEGMENT,
        });
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let n_segments = frames - SEGMENT + 1;
    for m in SEGMENT..=frames {
        for (xb, yb) in xs.iter().zip(&ys) {
            let xseg = &xb[m - SEGMENT..m];
            let yseg = &yb[m - SEGMENT..m];
            let scale = norm(xseg) / (norm(yseg) + EPS);
            let yp: Vec<f64> = yseg
                .iter()
                .zip(xseg)
                .map(|(yv, xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            total += correlation(xseg, &yp);
        }
    }
    Ok((total / (NUM_BANDS * n_segments) as f64).clamp(0.0, 1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let a: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let dot: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
    dot / ((norm(&a) + EPS) * (norm(&b) + EPS))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reduce(p: usize, q: usize) -> (usize, usize) {
    let g = gcd(p, q);
    (p / g, q / g)
}

/// Hann window without its zero end points, `len` samples.
fn hann_inner(len: usize) -> Vec<f64> {
    let m = (len + 2) as f64;
    (1..=len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (m - 1.0)).cos()).collect()
}

fn bessel_i0(x: f64) -> f64 {
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-17 * sum {
        term *= (x / (2.0 * k)).powi(2);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-windowed sinc low-pass for rational resampling by `p/q`, with the
/// 60 dB rejection used by common STOI implementations.
fn resample_filter(p: usize, q: usize) -> Vec<f64> {
    let rejection_db = 60.0;
    let cutoff = 1.0 / (2.0 * p.max(q) as f64);
    let roll_off = cutoff / 10.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
    let beta = 0.1102 * (rejection_db - 8.7);
    let len = (2 * half + 1) as f64;
    (-half..=half)
        .map(|t| {
            let t = t as f64;
            let arg = 2.0 * cutoff * t;
            let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let r = 2.0 * (t + half as f64) / (len - 1.0) - 1.0;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
            2.0 * p as f64 * cutoff * sinc * kaiser
        })
        .collect()
}

/// Polyphase resampling by `p/q` with a zero-phase filter; the output has
/// `ceil(len·p/q)` samples.
fn resample(x: &[f64], p: usize, q: usize) -> Vec<f64> {
    let h = resample_filter(p, q);
    let delay = (h.len() - 1) / 2;
    let out_len = (x.len() * p).div_ceil(q);
    (0..out_len)
        .map(|m| {
            // Upsampled index of output m, shifted by the filter delay.
            let centre = m * q + delay;
            // Only taps landing on non-zero upsampled samples contribute.
            let first = centre % p;
            let mut acc = 0.0;
            let mut k = first;
            while k < h.len() {
                let up = centre - k;
                let i = up / p;
                if i < x.len() {
                    acc += h[k] * x[i];
                }
                if k + p > centre {
                    break;
                }
                k += p;
            }
            acc
        })
        .collect()
}

fn frames(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    if x.len() < N_FRAME {
        return Vec::new();
    }
    (0..=x.len() - N_FRAME)
        .step_by(HOP)
        .map(|i| x[i..i + N_FRAME].iter().zip(window).map(|(a, w)| a * w).collect())
        .collect()
}

fn overlap_add(frames: &[&Vec<f64>]) -> Vec<f64> {
    if frames.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; (frames.len() - 1) * HOP + N_FRAME];
    for (i, f) in frames.iter().enumerate() {
        for (o, v) in out[i * HOP..].iter_mut().zip(f.iter()) {
            *o += v;
        }
    }
    out
}

/// Keeps frames whose clean energy lies within the dynamic range of the
/// loudest clean frame, then re-synthesises both signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(N_FRAME);
    let xf = frames(x, &w);
    let yf = frames(y, &w);
    let energy: Vec<f64> = xf.iter().map(|f| 20.0 * (norm(f) + EPS).log10()).collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len()).filter(|&i| max - DYN_RANGE_DB - energy[i] < 0.0).collect();
    let xs: Vec<&Vec<f64>> = keep.iter().map(|&i| &xf[i]).collect();
    let ys: Vec<&Vec<f64>> = keep.iter().map(|&i| &yf[i]).collect();
    (overlap_add(&xs), overlap_add(&ys))
}

/// One-third-octave band edges as FFT bin ranges `[lo, hi)`.
fn band_bins() -> Vec<(usize, usize)> {
    let bin_hz = FS as f64 / NFFT as f64;
    let nearest = |f: f64| ((f / bin_hz).round() as usize).min(NFFT / 2);
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]` of a 10 kHz signal.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann_inner(N_FRAME);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let bands = band_bins();
    let mut env = vec![Vec::new(); NUM_BANDS];
    if x.len() <= N_FRAME {
        return env;
    }
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    // The last complete frame is excluded, as in the reference code.
    for start in (0..x.len() - N_FRAME).step_by(HOP) {
        buf.fill(Complex::new(0.0, 0.0));
        for (b, (v, wv)) in buf.iter_mut().zip(x[start..start + N_FRAME].iter().zip(&w)) {
            *b = Complex::new(v * wv, 0.0);
        }
        fft.process(&mut buf);
        for (e, &(lo, hi)) in env.iter_mut().zip(&bands) {
            let power: f64 = buf[lo..hi].iter().map(|z| z.norm_sqr()).sum();
            e.push(power.sqrt());
        }
    }
    env
}
