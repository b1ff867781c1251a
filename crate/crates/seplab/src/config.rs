//! Experiment configuration: a TOML file with `--set key.path=value`
//! overrides, validated before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use seplab_core::models::{Design, FusionInput, ModelConfig};
use seplab_core::report::Metric;
use seplab_core::rng;
use seplab_core::train::TrainConfig;

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::manifest::Split;

/// Environment variable that replaces the root seed.
pub const SEED_ENV: &str = "SEPLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Desk,
    Micro,
}

/// Model section: a size preset plus optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub design: Design,
    /// Defaults to `M` (SIMO-only), 2 (mixed) or 1 (iterative).
    pub k: Option<usize>,
    pub sources: usize,
    pub blocks: Option<usize>,
    pub width: Option<usize>,
    pub hidden: Option<usize>,
    pub chunk_len: Option<usize>,
    pub filters: Option<usize>,
    pub window: Option<usize>,
    pub hop: Option<usize>,
    pub mask_variant: bool,
    pub fusion_inputs: Option<Vec<FusionInput>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: Preset::Desk,
            design: Design::Mixed,
            k: None,
            sources: 2,
            blocks: None,
            width: None,
            hidden: None,
            chunk_len: None,
            filters: None,
            window: None,
            hop: None,
            mask_variant: false,
            fusion_inputs: None,
        }
    }
}

impl ModelSection {
    /// Preset widths with this section's design and overrides; `k` is left to
    /// the caller when `None`.
    pub fn base(&self) -> ModelConfig {
        let mut c = match self.preset {
            Preset::Full => ModelConfig::full(self.design, 0),
            Preset::Desk => ModelConfig::desk(self.design, 0),
            Preset::Micro => ModelConfig::micro(self.design, 0),
        };
        let b = &mut c.backbone;
        b.blocks = self.blocks.unwrap_or(b.blocks);
        b.width = self.width.unwrap_or(b.width);
        b.hidden = self.hidden.unwrap_or(b.hidden);
        b.chunk_len = self.chunk_len.unwrap_or(b.chunk_len);
        let codec = &mut c.codec;
        codec.filters = self.filters.unwrap_or(codec.filters);
        codec.window = self.window.unwrap_or(codec.window);
        codec.hop = self.hop.unwrap_or(codec.hop);
        c.sources = self.sources;
        c.mask_variant = self.mask_variant;
        c.fusion_inputs = self.fusion_inputs.clone();
        c
    }

    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut c = self.base();
        c.k = self.k.unwrap_or(match self.design {
            Design::SimoOnly => c.backbone.blocks,
            Design::Mixed => 2,
            Design::SisoIterative => 1,
        });
        c.validate().map_err(|e| Error::config("model", e))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Defaults to the generated dataset's manifest.
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub report_dir: PathBuf,
    pub metric: Metric,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { manifest: None, split: Split::Test, report_dir: "reports".into(), metric: Metric::SiSdr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; every other seed is derived from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    /// `train.seed` selects a stream under the root seed.
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig { batch_size: 4, ..TrainConfig::default() },
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.resolve()?;
        self.train.validate().map_err(|e| Error::config("train", e))?;
        self.dataset.validate()
    }

    /// Initialisation seed for a model.
    pub fn init_seed(&self) -> u64 {
        rng::derive(self.seed, 0x1_417)
    }

    /// Training config with its shuffling seed derived from the root seed.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig { seed: rng::derive(self.seed, 0x7_2A1 ^ self.train.seed), ..self.train.clone() }
    }

    pub fn manifest_path(&self, workdir: &Path) -> PathBuf {
        match &self.eval.manifest {
            Some(p) => workdir.join(p),
            None => workdir.join(&self.dataset.out_dir).join(crate::dataset::MANIFEST_FILE),
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `key.path=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::config(assignment, "override must look like key.path=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut node = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| Error::config(parts[..=i].join("."), "not a table"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Builds a config from optional TOML text, `SEPLAB_SEED` and overrides, in
/// that order of precedence (later wins).
pub fn parse_config(text: Option<&str>, env_seed: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = match text {
        Some(t) => toml::from_str(t).map_err(|e| Error::config("<file>", e.to_string().trim_end()))?,
        None => toml::Table::new(),
    };
    if let Some(seed) = env_seed {
        let v: u64 = seed.trim().parse().map_err(|_| Error::config(SEED_ENV, format!("not an unsigned integer: {seed:?}")))?;
        table.insert("seed".into(), toml::Value::Integer(v as i64));
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string().trim_end())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let env = std::env::var(SEED_ENV).ok();
    parse_config(text.as_deref(), env.as_deref(), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let c = parse_config(None, None, &[]).unwrap();
        assert_eq!((c.dataset.train, c.dataset.valid, c.dataset.test), (200, 50, 50));
        let m = c.model.resolve().unwrap();
        assert_eq!((m.design, m.k, m.backbone.width, m.blocks()), (Design::Mixed, 2, 16, 6));
        assert_eq!(c.train.lr0, 1e-3);
    }

    #[test]
    fn file_env_and_overrides_layer() {
        let text = "seed = 3\n[model]\ndesign = \"siso_iterative\"\nk = 2\n[train]\nmax_epochs = 17\n";
        let c = parse_config(Some(text), None, &[]).unwrap();
        assert_eq!((c.seed, c.model.k, c.train.max_epochs), (3, Some(2), 17));
        let c = parse_config(Some(text), Some("11"), &["train.max_epochs=19".into(), "model.preset=full".into()]).unwrap();
        assert_eq!((c.seed, c.train.max_epochs, c.model.preset), (11, 19, Preset::Full));
        let c = parse_config(Some(text), Some("11"), &["seed=4".into(), "dataset.source={ wav_dir = \"corpus\" }".into()]).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.dataset.source, crate::dataset::SourceMode::WavDir("corpus".into()));
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse_config(Some("[train]\nlr = 0.1\n"), None, &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("train"), "{err}");
        let err = parse_config(None, None, &["dataset.scene.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("dataset.scene"), "{err}");
        let err = parse_config(Some("[model]\ndesign = \"mixed\"\nk = 7\n"), None, &[]).unwrap_err();
        assert!(err.to_string().contains("K=7"), "{err}");
        assert_eq!(parse_config(None, Some("x"), &[]).unwrap_err().exit_code(), 2);
        assert!(parse_config(Some("seed = "), None, &[]).is_err());
    }

    #[test]
    fn override_syntax() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "a.b.c=hello").unwrap();
        apply_override(&mut t, "a.n=2.5").unwrap();
        assert_eq!(t["a"]["b"]["c"].as_str(), Some("hello"));
        assert_eq!(t["a"]["n"].as_float(), Some(2.5));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a.b.c.d=1").is_err());
    }
}
