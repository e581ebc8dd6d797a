//! Objective quality measures and manifest-level evaluation reports.

mod stoi;

pub use stoi::stoi;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::audio::{DatasetManifest, Split};
use crate::inverse::sdr_slices;
use crate::pipeline::{Denoiser, TrackCache};
use crate::tfr::Waveform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("signals differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("signal too short: {frames} analysis frames, {needed} needed")]
    TooShort { frames: usize, needed: usize },
    #[error("reference signal is silent")]
    SilentReference,
}

pub const SEG_FRAME: usize = 512;
pub const SEG_FLOOR_DB: f64 = -10.0;
pub const SEG_CEIL_DB: f64 = 35.0;
/// Frames quieter than this fraction of the loudest clean frame are skipped.
const SEG_ACTIVE_RATIO: f64 = 1e-4;

/// Mean over active frames of the clamped per-frame SNR.
pub fn segmental_snr(
    clean: &[f64],
    degraded: &[f64],
    frame: usize,
    floor_db: f64,
    ceil_db: f64,
) -> Result<f64, MetricError> {
    if clean.len() != degraded.len() {
        return Err(MetricError::LengthMismatch(clean.len(), degraded.len()));
    }
    let n = clean.len() / frame.max(1);
    if frame == 0 || n == 0 {
        return Err(MetricError::TooShort { frames: 0, needed: 1 });
    }
    let energies: Vec<(f64, f64)> = clean
        .chunks_exact(frame)
        .zip(degraded.chunks_exact(frame))
        .map(|(c, d)| {
            let signal: f64 = c.iter().map(|v| v * v).sum();
            let noise: f64 = c.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
            (signal, noise)
        })
        .collect();
    let loudest = energies.iter().map(|e| e.0).fold(0.0, f64::max);
    if loudest == 0.0 {
        return Err(MetricError::SilentReference);
    }
    let active: Vec<f64> = energies
        .iter()
        .filter(|(s, _)| *s > loudest * SEG_ACTIVE_RATIO)
        .map(|&(s, e)| {
            let db = if e == 0.0 { ceil_db } else { 10.0 * (s / e).log10() };
            db.clamp(floor_db, ceil_db)
        })
        .collect();
    Ok(active.iter().sum::<f64>() / active.len() as f64)
}

/// Scores of one evaluated track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub stoi: f64,
    pub seg_snr_db: f64,
    pub sdr_db: f64,
}

pub fn score(clean: &Waveform, estimate: &Waveform) -> Result<Scores, String> {
    let stoi = stoi(clean.samples(), estimate.samples(), clean.sample_rate()).map_err(|e| e.to_string())?;
    let seg_snr_db = segmental_snr(clean.samples(), estimate.samples(), SEG_FRAME, SEG_FLOOR_DB, SEG_CEIL_DB)
        .map_err(|e| e.to_string())?;
    let sdr_db = sdr_slices(clean.samples(), estimate.samples()).map_err(|e| e.to_string())?;
    Ok(Scores {
        stoi,
        seg_snr_db,
        sdr_db,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub track: String,
    pub noise_type: String,
    pub snr_db: f64,
    /// Scores, or the reason this record could not be scored.
    pub result: Result<Scores, String>,
}

/// Mean scores of one (noise type, SNR) condition.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMean {
    pub noise_type: String,
    pub snr_db: f64,
    pub count: usize,
    pub mean: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

pub const REPORT_HEADER: &str = "track,noise_type,snr_db,stoi,seg_snr_db,sdr_db";

fn mean_of(scores: &[Scores]) -> Scores {
    let n = scores.len() as f64;
    Scores {
        stoi: scores.iter().map(|s| s.stoi).sum::<f64>() / n,
        seg_snr_db: scores.iter().map(|s| s.seg_snr_db).sum::<f64>() / n,
        sdr_db: scores.iter().map(|s| s.sdr_db).sum::<f64>() / n,
    }
}

impl MetricReport {
    /// Means over successfully scored rows, by noise type then SNR.
    pub fn groups(&self) -> Vec<GroupMean> {
        let mut by: BTreeMap<(String, i64), (f64, Vec<Scores>)> = BTreeMap::new();
        for r in &self.rows {
            if let Ok(s) = r.result {
                let key = (r.noise_type.clone(), (r.snr_db * 1e6).round() as i64);
                by.entry(key).or_insert_with(|| (r.snr_db, Vec::new())).1.push(s);
            }
        }
        by.into_iter()
            .map(|((noise_type, _), (snr_db, s))| GroupMean {
                noise_type,
                snr_db,
                count: s.len(),
                mean: mean_of(&s),
            })
            .collect()
    }

    /// Mean over every successfully scored row.
    pub fn overall(&self) -> Option<Scores> {
        let ok: Vec<Scores> = self.rows.iter().filter_map(|r| r.result.clone().ok()).collect();
        (!ok.is_empty()).then(|| mean_of(&ok))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let cells = |s: &Scores| format!("{:.6},{:.6},{:.6}", s.stoi, s.seg_snr_db, s.sdr_db);
        for r in &self.rows {
            let scores = r.result.as_ref().map_or_else(|_| ",,".to_string(), cells);
            let _ = writeln!(out, "{},{},{},{scores}", r.track, r.noise_type, r.snr_db);
        }
        out.push('\n');
        for g in self.groups() {
            let _ = writeln!(
                out,
                "MEAN:{0}:{1},{0},{1},{2}",
                g.noise_type,
                g.snr_db,
                cells(&g.mean)
            );
        }
        out
    }
}

/// Which records to evaluate and how to rebuild their mixtures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Seeds the noise offsets; must match the value used for training.
    pub seed: u64,
    /// Restricts evaluation to one split; `None` scores every record.
    pub split: Option<Split>,
}

/// Scores every selected record, noisy or denoised, against its clean track.
/// Per-record failures are recorded in the row rather than aborting.
pub fn evaluate(manifest: &DatasetManifest, denoiser: Option<&Denoiser>, opts: EvalOptions) -> MetricReport {
    let mut cache = TrackCache::new();
    let rows = manifest
        .records
        .iter()
        .filter(|r| opts.split.is_none_or(|s| r.split == s))
        .map(|record| {
            let result = cache
                .mix(record, opts.seed)
                .map_err(|e| e.to_string())
                .and_then(|(clean, noisy)| {
                    let estimate = match denoiser {
                        Some(d) => d.denoise(&noisy).map_err(|e| e.to_string())?,
                        None => noisy,
                    };
                    score(&clean, &estimate)
                });
            MetricRow {
                track: record.track_id(),
                noise_type: record.noise_type(),
                snr_db: record.snr_db,
                result,
            }
        })
        .collect();
    MetricReport { rows }
}
