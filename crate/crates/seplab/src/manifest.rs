//! Dataset manifest: one JSON object per line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSummary {
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub t60: f64,
}

/// Audio paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Seed of the accepted scene; re-simulates the utterance directly.
    pub seed: u64,
    pub mixture_path: PathBuf,
    pub target_paths: Vec<PathBuf>,
    pub noise_path: PathBuf,
    /// Measured overlap ratio.
    pub overlap: f64,
    pub rel_snr_db: f64,
    pub noise_snr_db: f64,
    pub room: RoomSummary,
    pub split: Split,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(|err| Error::format(path, err))?;
        out.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|err| Error::format(path, format!("line {}: {err}", i + 1)))?;
        entries.push(e);
    }
    Ok(entries)
}

pub fn split_entries(entries: &[ManifestEntry], split: Split) -> Vec<ManifestEntry> {
    entries.iter().filter(|e| e.split == split).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            seed: 7,
            mixture_path: "test/x/mixture.wav".into(),
            target_paths: vec!["a.wav".into(), "b.wav".into()],
            noise_path: "n.wav".into(),
            overlap: 0.25,
            rel_snr_db: 1.5,
            noise_snr_db: 12.0,
            room: RoomSummary { l: 4.0, w: 5.0, h: 3.0, t60: 0.3 },
            split,
        }
    }

    #[test]
    fn round_trip_and_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.jsonl");
        let es = vec![entry("a", Split::Train), entry("b", Split::Test)];
        write_manifest(&p, &es).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), es);
        let line = fs::read_to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["id", "mixture_path", "noise_path", "noise_snr_db", "overlap", "rel_snr_db", "room", "seed", "split", "target_paths"]
        );
        assert_eq!(split_entries(&es, Split::Test).len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "{\"id\": 1}\n").unwrap();
        let err = read_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
