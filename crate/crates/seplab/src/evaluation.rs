//! Scoring a model over a manifest split and persisting the records.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use seplab_core::eval::{score, EvalRecord};
use seplab_core::models::SeparationModel;

use crate::dataset::load_example;
use crate::error::{Error, Result};
use crate::manifest::ManifestEntry;

/// One record per entry, in manifest order. Utterances run in parallel.
pub fn evaluate_manifest(model: &SeparationModel, entries: &[ManifestEntry], base: &Path) -> Result<Vec<EvalRecord>> {
    entries
        .par_iter()
        .map(|e| {
            let ex = load_example(base, e)?;
            let est = model.separate(&ex.mixture)?;
            Ok(score(&e.id, e.overlap, &ex.mixture, &est, &ex.targets)?)
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::format(path, e))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e)))
        .collect()
}
