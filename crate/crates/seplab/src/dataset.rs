//! Desk-scale dataset generation: scene sampling, source material, mixing and
//! persistence of audio plus manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use seplab_core::rng;
use seplab_core::scene::{self, mix_scene, sample_feasible_scene, sample_scene_with, Convolver, MixtureExample, Placement, SceneRanges, SceneSpec};
use seplab_core::train::TrainExample;

use crate::error::{Error, Result};
use crate::fftconv::FftConvolver;
use crate::manifest::{read_manifest, write_manifest, ManifestEntry, RoomSummary, Split};
use crate::wav::{read_mono, write_wav};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_ECHO_FILE: &str = "dataset.json";

/// Where speech and noise come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Procedural speech-like signals and coloured noise.
    Synth,
    /// `speech/*.wav` and optional `noise/*.wav` under the given directory.
    WavDir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Relative to the working directory.
    pub out_dir: PathBuf,
    pub source: SourceMode,
    pub scene: SceneRanges,
    /// Scene redraws allowed for acoustically infeasible rooms.
    pub attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: 200,
            valid: 50,
            test: 50,
            out_dir: "data".into(),
            source: SourceMode::Synth,
            scene: SceneRanges::default(),
            attempts: 100,
        }
    }
}

impl DatasetConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempts == 0 {
            return Err(Error::config("dataset.attempts", "must be positive"));
        }
        if self.scene.utterance_len < 2 {
            return Err(Error::config("dataset.scene.utterance_len", "must be at least 2 samples"));
        }
        let r = &self.scene;
        for (name, (lo, hi)) in [("overlap", r.overlap), ("t60", r.t60), ("length", r.length), ("width", r.width), ("height", r.height)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(format!("dataset.scene.{name}"), format!("empty range ({lo}, {hi})")));
            }
        }
        if !(0.0 <= r.overlap.0 && r.overlap.1 <= 1.0) {
            return Err(Error::config("dataset.scene.overlap", "must lie within [0, 1]"));
        }
        Ok(())
    }
}

/// Provider of raw speech and noise material.
pub trait SourceMaterial: Sync {
    fn speech(&self, seed: u64, samples: usize) -> Result<Vec<f64>>;
    fn noise(&self, seed: u64, samples: usize) -> Result<Vec<f64>>;
}

pub struct SynthSources;

impl SourceMaterial for SynthSources {
    fn speech(&self, seed: u64, samples: usize) -> Result<Vec<f64>> {
        Ok(scene::synth_speechlike(seed, samples))
    }

    fn noise(&self, seed: u64, samples: usize) -> Result<Vec<f64>> {
        Ok(scene::synth_noise(seed, samples))
    }
}

/// Mono WAV corpus. Files are picked by seed and tiled to the needed length.
pub struct WavDirSources {
    speech: Vec<PathBuf>,
    noise: Vec<PathBuf>,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

impl WavDirSources {
    pub fn open(root: &Path) -> Result<Self> {
        let speech = wav_files(&root.join("speech"))?;
        if speech.is_empty() {
            return Err(Error::format(root.join("speech"), "no .wav files"));
        }
        Ok(WavDirSources { speech, noise: wav_files(&root.join("noise"))? })
    }

    fn pick(files: &[PathBuf], seed: u64, samples: usize) -> Result<Vec<f64>> {
        let path = &files[(rng::mix(seed) % files.len() as u64) as usize];
        let x = read_mono(path)?;
        if x.is_empty() {
            return Err(Error::format(path, "empty audio"));
        }
        Ok(x.iter().copied().cycle().take(samples).collect())
    }
}

impl SourceMaterial for WavDirSources {
    fn speech(&self, seed: u64, samples: usize) -> Result<Vec<f64>> {
        Self::pick(&self.speech, seed, samples)
    }

    fn noise(&self, seed: u64, samples: usize) -> Result<Vec<f64>> {
        if self.noise.is_empty() {
            return Ok(scene::synth_noise(seed, samples));
        }
        Self::pick(&self.noise, seed, samples)
    }
}

pub fn open_sources(mode: &SourceMode, workdir: &Path) -> Result<Box<dyn SourceMaterial>> {
    Ok(match mode {
        SourceMode::Synth => Box::new(SynthSources),
        SourceMode::WavDir(dir) => Box::new(WavDirSources::open(&workdir.join(dir))?),
    })
}

/// Seed of the `index`-th utterance of `split` before any redraw.
pub fn utterance_seed(root_seed: u64, split: Split, index: usize) -> u64 {
    let code = match split {
        Split::Train => 1u64,
        Split::Valid => 2,
        Split::Test => 3,
    };
    rng::derive(root_seed, (code << 40) | index as u64)
}

/// Full pipeline for one scene; a pure function of `spec` and the material.
pub fn simulate_scene(spec: &SceneSpec, sources: &dyn SourceMaterial, conv: &dyn Convolver) -> Result<MixtureExample> {
    let place = Placement::new(spec.utterance_len, spec.overlap_ratio_target)?;
    let s1 = sources.speech(rng::derive(spec.seed, 1), place.len1)?;
    let s2 = sources.speech(rng::derive(spec.seed, 2), place.len2)?;
    let n = sources.noise(rng::derive(spec.seed, 3), spec.utterance_len)?;
    Ok(mix_scene(spec, [&s1, &s2], &n, conv)?)
}

/// Rebuilds the example behind a manifest line from its seed.
pub fn resimulate(entry: &ManifestEntry, ranges: &SceneRanges, sources: &dyn SourceMaterial) -> Result<MixtureExample> {
    simulate_scene(&sample_scene_with(entry.seed, ranges), sources, &FftConvolver::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetEcho {
    root_seed: u64,
    config: DatasetConfig,
}

/// Generates every split under `out_dir` and returns the manifest path. An
/// existing dataset produced by the same config and seed is reused.
pub fn generate_dataset(config: &DatasetConfig, root_seed: u64, out_dir: &Path, sources: &dyn SourceMaterial) -> Result<PathBuf> {
    config.validate()?;
    let manifest = out_dir.join(MANIFEST_FILE);
    let echo_path = out_dir.join(DATASET_ECHO_FILE);
    let echo = DatasetEcho { root_seed, config: config.clone() };
    if manifest.is_file() {
        if let Ok(text) = fs::read_to_string(&echo_path) {
            if serde_json::from_str::<DatasetEcho>(&text).ok().as_ref() == Some(&echo) {
                log::info!("dataset at {} is up to date", out_dir.display());
                return Ok(manifest);
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _ = fs::remove_file(&echo_path);

    let jobs: Vec<(Split, usize)> = Split::ALL.iter().flat_map(|&s| (0..config.count(s)).map(move |i| (s, i))).collect();
    let conv = FftConvolver::new();
    let entries = jobs
        .par_iter()
        .map(|&(split, index)| {
            let spec = sample_feasible_scene(utterance_seed(root_seed, split, index), &config.scene, config.attempts)?;
            let ex = simulate_scene(&spec, sources, &conv)?;
            write_example(out_dir, split, index, &ex)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&manifest, &entries)?;
    let text = serde_json::to_string_pretty(&echo).expect("dataset echo serialises");
    fs::write(&echo_path, text).map_err(|e| Error::io(&echo_path, e))?;
    Ok(manifest)
}

fn write_example(out_dir: &Path, split: Split, index: usize, ex: &MixtureExample) -> Result<ManifestEntry> {
    let id = format!("{}-{index:05}", split.name());
    let rel = PathBuf::from(split.name()).join(&id);
    let dir = out_dir.join(&rel);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let put = |name: &str, x: &[f64]| -> Result<PathBuf> {
        write_wav(&dir.join(name), x)?;
        Ok(rel.join(name))
    };
    let mixture_path = put("mixture.wav", &ex.mixture)?;
    let target_paths = ex.targets.iter().enumerate().map(|(i, t)| put(&format!("s{}.wav", i + 1), t)).collect::<Result<Vec<_>>>()?;
    let noise_path = put("noise.wav", &ex.noise_image)?;
    let room = &ex.scene.room;
    Ok(ManifestEntry {
        id,
        seed: ex.scene.seed,
        mixture_path,
        target_paths,
        noise_path,
        overlap: ex.measured_overlap,
        rel_snr_db: ex.scene.rel_snr_db,
        noise_snr_db: ex.scene.noise_snr_db,
        room: RoomSummary { l: room.length, w: room.width, h: room.height, t60: room.t60 },
        split,
    })
}

/// Mixture and targets of one manifest line, read from disk.
pub fn load_example(base: &Path, entry: &ManifestEntry) -> Result<TrainExample> {
    let mixture = read_mono(&base.join(&entry.mixture_path))?;
    let targets = entry.target_paths.iter().map(|p| read_mono(&base.join(p))).collect::<Result<Vec<_>>>()?;
    Ok(TrainExample { mixture, targets })
}

pub fn load_split(manifest: &Path, split: Split) -> Result<Vec<(ManifestEntry, TrainExample)>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_par_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let ex = load_example(base, &e)?;
            Ok((e, ex))
        })
        .collect()
}
