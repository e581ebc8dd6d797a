//! Paired-corpus manifests.
//!
//! A manifest is the cross product of clean tracks, noise files and SNR
//! levels, each record tagged with a train or test split. On disk it is a
//! UTF-8 text file with a `#aegan-manifest v1` header followed by one
//! tab-separated `clean_path noise_path snr_db split` line per record.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MANIFEST_HEADER: &str = "#aegan-manifest v1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no WAV files found under {0}")]
    EmptyCorpus(PathBuf),
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("path {0:?} cannot be stored in a manifest")]
    UnrepresentablePath(PathBuf),
    #[error("invalid SNR {0}")]
    InvalidSnr(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub split: Split,
}

impl ManifestRecord {
    /// Stable identifier used to seed per-record randomness.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}",
            self.clean.display(),
            self.noise.display(),
            self.snr_db
        )
    }

    /// File stem of the noise recording, used as the noise-type label.
    pub fn noise_type(&self) -> String {
        stem(&self.noise)
    }

    pub fn track_id(&self) -> String {
        stem(&self.clean)
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// How clean tracks are assigned to train and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    All(Split),
    /// Holds out a seeded random fraction of speakers for testing.
    SpeakerHoldout { test_fraction: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self {
            records,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_text(&self) -> Result<String, ManifestError> {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            let clean = path_field(&r.clean)?;
            let noise = path_field(&r.noise)?;
            let _ = writeln!(out, "{clean}\t{noise}\t{}\t{}", r.snr_db, r.split.as_str());
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MANIFEST_HEADER)) => {}
            Some((_, other)) => {
                return Err(ManifestError::Parse {
                    line: 1,
                    msg: format!("expected header {MANIFEST_HEADER:?}, found {other:?}"),
                })
            }
            None => {
                return Err(ManifestError::Parse {
                    line: 1,
                    msg: "empty manifest".into(),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ManifestError::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let snr_db: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad SNR {:?}", fields[2])))?;
            if !snr_db.is_finite() {
                return Err(err(format!("non-finite SNR {snr_db}")));
            }
            let split = Split::parse(fields[3]).ok_or_else(|| err(format!("bad split {:?}", fields[3])))?;
            records.push(ManifestRecord {
                clean: PathBuf::from(fields[0]),
                noise: PathBuf::from(fields[1]),
                snr_db,
                split,
            });
        }
        Ok(Self::new(records))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }
}

fn path_field(p: &Path) -> Result<&str, ManifestError> {
    p.to_str()
        .filter(|s| !s.is_empty() && !s.contains(['\t', '\n', '\r']))
        .ok_or_else(|| ManifestError::UnrepresentablePath(p.to_owned()))
}

/// Sorted list of `.wav` files below `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>, ManifestError> {
    let mut out = Vec::new();
    collect_wavs(dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ManifestError> {
    let io_err = |source| ManifestError::Io {
        path: dir.to_owned(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Speaker label of a clean track: its parent directory relative to the
/// corpus root, or the file stem for files directly in the root.
pub fn speaker_of(clean_root: &Path, track: &Path) -> String {
    match track.parent().and_then(|p| p.strip_prefix(clean_root).ok()) {
        Some(rel) if !rel.as_os_str().is_empty() => rel.to_string_lossy().into_owned(),
        _ => stem(track),
    }
}

/// Cross product of clean tracks × noise files × SNRs with a split assignment.
pub fn build_manifest(
    clean_dir: &Path,
    noise_dir: &Path,
    snrs: &[f64],
    rule: SplitRule,
) -> Result<DatasetManifest, ManifestError> {
    if let Some(&bad) = snrs.iter().find(|s| !s.is_finite()) {
        return Err(ManifestError::InvalidSnr(bad));
    }
    let clean = list_wavs(clean_dir)?;
    if clean.is_empty() {
        return Err(ManifestError::EmptyCorpus(clean_dir.to_owned()));
    }
    let noise = list_wavs(noise_dir)?;
    if noise.is_empty() {
        return Err(ManifestError::EmptyCorpus(noise_dir.to_owned()));
    }

    let speakers: BTreeSet<String> = clean.iter().map(|c| speaker_of(clean_dir, c)).collect();
    let test_speakers: BTreeSet<String> = match rule {
        SplitRule::All(Split::Train) => BTreeSet::new(),
        SplitRule::All(Split::Test) => speakers.clone(),
        SplitRule::SpeakerHoldout {
            test_fraction,
            seed,
        } => {
            let mut order: Vec<&String> = speakers.iter().collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n = order.len();
            let mut n_test = (test_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
            if test_fraction > 0.0 && n >= 2 {
                n_test = n_test.clamp(1, n - 1);
            }
            order.into_iter().take(n_test).cloned().collect()
        }
    };

    let mut records = Vec::with_capacity(clean.len() * noise.len() * snrs.len());
    for c in &clean {
        let split = if test_speakers.contains(&speaker_of(clean_dir, c)) {
            Split::Test
        } else {
            Split::Train
        };
        for n in &noise {
            for &snr_db in snrs {
                records.push(ManifestRecord {
                    clean: c.clone(),
                    noise: n.clone(),
                    snr_db,
                    split,
                });
            }
        }
    }
    Ok(DatasetManifest::new(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = DatasetManifest::new(vec![
            ManifestRecord {
                clean: "c/a.wav".into(),
                noise: "n/cafe.wav".into(),
                snr_db: 5.0,
                split: Split::Train,
            },
            ManifestRecord {
                clean: "c/b.wav".into(),
                noise: "n/street.wav".into(),
                snr_db: -2.5,
                split: Split::Test,
            },
        ]);
        let text = m.to_text().unwrap();
        assert_eq!(
            text,
            "#aegan-manifest v1\nc/a.wav\tn/cafe.wav\t5\ttrain\nc/b.wav\tn/street.wav\t-2.5\ttest\n"
        );
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            DatasetManifest::parse("a\tb\t0\ttrain\n"),
            Err(ManifestError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            DatasetManifest::parse("#aegan-manifest v1\na\tb\tx\ttrain\n"),
            Err(ManifestError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            DatasetManifest::parse("#aegan-manifest v1\na\tb\t0\tdev\n"),
            Err(ManifestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_tabs_in_paths() {
        let m = DatasetManifest::new(vec![ManifestRecord {
            clean: "a\tb.wav".into(),
            noise: "n.wav".into(),
            snr_db: 0.0,
            split: Split::Train,
        }]);
        assert!(matches!(m.to_text(), Err(ManifestError::UnrepresentablePath(_))));
    }

    #[test]
    fn speaker_labels() {
        let root = Path::new("/corpus");
        assert_eq!(speaker_of(root, Path::new("/corpus/dr1/fcjf0/sa1.wav")), "dr1/fcjf0");
        assert_eq!(speaker_of(root, Path::new("/corpus/x.wav")), "x");
    }
}
