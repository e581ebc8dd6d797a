//! RIFF/WAVE reader and writer restricted to 16-bit PCM mono at 16 kHz.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tfr::{Waveform, SAMPLE_RATE};

const PCM_SCALE: f64 = 32768.0;
const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("WAV contains no samples")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a WAV byte buffer into a 16 kHz waveform.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::CorruptHeader("missing RIFF/WAVE signature".into()));
    }
    let mut format = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                WavError::CorruptHeader(format!(
                    "chunk {:?} overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::CorruptHeader("fmt chunk shorter than 16 bytes".into()));
                }
                let mut tag = u16_at(bytes, body);
                if tag == FORMAT_EXTENSIBLE && size >= 26 {
                    tag = u16_at(bytes, body + 24);
                }
                format = Some(Format {
                    tag,
                    channels: u16_at(bytes, body + 2),
                    sample_rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    let format = format.ok_or_else(|| WavError::CorruptHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::CorruptHeader("no data chunk".into()))?;
    if format.tag != FORMAT_PCM {
        return Err(WavError::UnsupportedFormat(format!("format tag {}", format.tag)));
    }
    if format.channels != 1 {
        return Err(WavError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            format.channels
        )));
    }
    if format.sample_rate != SAMPLE_RATE {
        return Err(WavError::UnsupportedFormat(format!(
            "{} Hz, expected {SAMPLE_RATE} Hz",
            format.sample_rate
        )));
    }
    if format.bits != 16 {
        return Err(WavError::UnsupportedFormat(format!(
            "{}-bit samples, expected 16-bit",
            format.bits
        )));
    }
    if data.len() % 2 != 0 {
        return Err(WavError::CorruptHeader("odd-sized 16-bit data chunk".into()));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / PCM_SCALE)
        .collect();
    if samples.is_empty() {
        return Err(WavError::Empty);
    }
    Ok(Waveform::new(samples, format.sample_rate).expect("validated rate and length"))
}

/// Encodes `w` as 16-bit PCM; amplitudes are clipped to [-1, 1] first.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = w.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in w.samples() {
        out.extend_from_slice(&quantize(x).to_le_bytes());
    }
    out
}

fn quantize(x: f64) -> i16 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    (x * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, WavError> {
    decode_wav(&fs::read(path)?)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<(), WavError> {
    fs::write(path, encode_wav(w))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, rate: u32, bits: u16, tag: u16) -> Vec<u8> {
        let mut b = encode_wav(&Waveform::from_samples(vec![0.25, -0.5]).unwrap());
        b[20..22].copy_from_slice(&tag.to_le_bytes());
        b[22..24].copy_from_slice(&channels.to_le_bytes());
        b[24..28].copy_from_slice(&rate.to_le_bytes());
        b[34..36].copy_from_slice(&bits.to_le_bytes());
        b
    }

    #[test]
    fn decodes_what_it_encodes() {
        let w = Waveform::from_samples(vec![0.0, 0.5, -0.5, 1.0, -1.0, 0.123]).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.len(), w.len());
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        assert_eq!(back.samples()[4], -1.0);
    }

    #[test]
    fn clips_out_of_range() {
        let w = Waveform::from_samples(vec![3.0, -7.0]).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.samples(), &[32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn rejects_unsupported_formats() {
        for bytes in [
            header(2, 16_000, 16, 1),
            header(1, 44_100, 16, 1),
            header(1, 16_000, 24, 1),
            header(1, 16_000, 16, 3),
        ] {
            assert!(matches!(decode_wav(&bytes), Err(WavError::UnsupportedFormat(_))));
        }
    }

    #[test]
    fn rejects_corrupt_headers() {
        assert!(matches!(decode_wav(b"RIFX"), Err(WavError::CorruptHeader(_))));
        let mut b = encode_wav(&Waveform::from_samples(vec![0.1; 8]).unwrap());
        b.truncate(b.len() - 3);
        assert!(matches!(decode_wav(&b), Err(WavError::CorruptHeader(_))));
        let b = &encode_wav(&Waveform::from_samples(vec![0.1; 8]).unwrap())[..36];
        assert!(matches!(decode_wav(b), Err(WavError::CorruptHeader(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::from_samples(vec![0.5, -0.25]).unwrap();
        let plain = encode_wav(&w);
        let mut b = plain[..36].to_vec();
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]);
        b.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&b).unwrap(), w);
    }
}
