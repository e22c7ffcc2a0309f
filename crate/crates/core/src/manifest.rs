//! JSON-lines manifests for corpora and pre-perturbed variants.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("duplicate segment ({song_id}, {segment_index})")]
    Duplicate { song_id: String, segment_index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

/// One segment of a song, in the song's original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub song_id: String,
    pub segment_index: usize,
    pub audio_path: PathBuf,
    #[serde(default)]
    pub split: Split,
    /// Paired speech rendition of the same content, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_path: Option<PathBuf>,
    /// Phoneme transcript, space separated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phonemes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0_path: Option<PathBuf>,
}

/// A pre-perturbed variant of a corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub source_id: String,
    pub song_id: String,
    pub segment_index: usize,
    pub variant: usize,
    pub seed: u64,
    pub feature_path: PathBuf,
    pub f0_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<PathBuf>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, ManifestError> {
    let path = path.as_ref();
    let io = |source| ManifestError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|source| ManifestError::Parse { path: path.to_path_buf(), line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let io = |source| ManifestError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Rejects manifests where a `(song_id, segment_index)` pair repeats.
pub fn check_unique(records: &[CorpusRecord]) -> Result<(), ManifestError> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !seen.insert((r.song_id.as_str(), r.segment_index)) {
            return Err(ManifestError::Duplicate { song_id: r.song_id.clone(), segment_index: r.segment_index });
        }
    }
    Ok(())
}

/// Resolves a path relative to the manifest's directory.
pub fn resolve(manifest: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}
