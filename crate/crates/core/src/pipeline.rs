//! Pipeline configuration, stage orchestration with on-disk caching, and
//! run metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_manifest, save_manifest, CaptureRecord, Manifest, SplitSpec};
use crate::evalreport::{emit_table, run_experiment_matrix, ExperimentArm, ExperimentResult, Layout, MatrixConfig, TableFormat};
use crate::maskproc::{filter_regions, BinaryMask, Connectivity};
use crate::model::{BackboneName, HeadSpec};
use crate::registration::{register_manifest, MatcherConfig, MatcherKind, RegisterOptions};
use crate::seed::content_hash;
use crate::synthgen::{generate_dataset, GenConfig};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

pub const RUN_META_FILE: &str = "run_meta.json";
const STAMP_FILE: &str = "stage.stamp";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {message}", path.display())]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Existing manifest to use instead of synthesizing one.
    pub manifest: Option<PathBuf>,
    pub output_root: PathBuf,
    /// Pretrained-asset cache; falls back to the environment variable.
    pub weights_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { manifest: None, output_root: PathBuf::from("run"), weights_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationStage {
    pub enabled: bool,
    pub matcher: MatcherKind,
    pub config: MatcherConfig,
}

impl Default for RegistrationStage {
    fn default() -> Self {
        Self { enabled: false, matcher: MatcherKind::Builtin, config: MatcherConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskprocStage {
    pub enabled: bool,
    pub min_area: usize,
    pub connectivity: Connectivity,
}

impl Default for MaskprocStage {
    fn default() -> Self {
        Self { enabled: true, min_area: 20, connectivity: Connectivity::Eight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Classifier input `[height, width]`.
    pub input_size: [usize; 2],
    pub hidden_sizes: [usize; 2],
    pub dropout: f64,
    pub share_weights: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let head = HeadSpec::default();
        Self {
            input_size: [224, 224],
            hidden_sizes: head.hidden_sizes,
            dropout: head.dropout_rate,
            share_weights: false,
        }
    }
}

impl ModelSection {
    pub fn head(&self) -> HeadSpec {
        HeadSpec { hidden_sizes: self.hidden_sizes, dropout_rate: self.dropout, ..HeadSpec::default() }
    }
}

/// Whole-pipeline configuration. `master_seed` overrides the seed fields
/// of the synth, split and training sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub master_seed: u64,
    pub synth: GenConfig,
    pub registration: RegistrationStage,
    pub maskproc: MaskprocStage,
    pub split: SplitSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub models: Vec<BackboneName>,
    pub arms: Vec<ExperimentArm>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            master_seed: 42,
            synth: GenConfig::default(),
            registration: RegistrationStage::default(),
            maskproc: MaskprocStage::default(),
            split: SplitSpec::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            models: vec![BackboneName::Tiny],
            arms: ExperimentArm::ALL.to_vec(),
        }
    }
}

impl PipelineConfig {
    /// Small config that trains in minutes on a laptop CPU: tiny backbone,
    /// 64x64 classifier inputs, 10 fruits per class at 12 views.
    pub fn desk_scale(output_root: impl Into<PathBuf>) -> Self {
        Self {
            paths: PathsConfig { output_root: output_root.into(), ..PathsConfig::default() },
            model: ModelSection { input_size: [64, 64], ..ModelSection::default() },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.paths.manifest.is_none() {
            self.synth.validate().map_err(|e| invalid(&e))?;
        }
        self.train.validate().map_err(|e| invalid(&e))?;
        if self.model.input_size.contains(&0) {
            return Err(ConfigError::Invalid("model.input_size must be positive".into()));
        }
        if self.models.is_empty() || self.arms.is_empty() {
            return Err(ConfigError::Invalid("models and arms must be nonempty".into()));
        }
        if !(0.0..1.0).contains(&self.split.val_fraction) {
            return Err(ConfigError::Invalid(format!("split.val_fraction {} outside [0, 1)", self.split.val_fraction)));
        }
        Ok(())
    }

    /// The config with `master_seed` pushed into every stage.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.synth.master_seed = self.master_seed;
        c.synth.output_dir = self.paths.output_root.join("data");
        c.split.seed = self.master_seed;
        c.train.seed = self.master_seed;
        c.registration.config.ransac.seed = self.master_seed;
        c
    }

    pub fn matrix_config(&self) -> MatrixConfig {
        let c = self.effective();
        MatrixConfig {
            models: c.models.clone(),
            arms: c.arms.clone(),
            train: c.train.clone(),
            split: c.split,
            input_size: c.model.input_size,
            head: c.model.head(),
            share_weights: c.model.share_weights,
            master_seed: c.master_seed,
            weights_dir: c.paths.weights_dir.clone(),
        }
    }

    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Reproduction record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub artifact_version: String,
    pub config: serde_json::Value,
}

impl RunMeta {
    pub fn new<C: Serialize>(command: &str, master_seed: u64, config: &C) -> Self {
        let value = serde_json::to_value(config).expect("config serializes");
        Self {
            command: command.to_string(),
            config_hash: content_hash(&serde_json::to_vec(&value).expect("value serializes")),
            master_seed,
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            config: value,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join(RUN_META_FILE);
        let json = serde_json::to_string_pretty(self).expect("meta serializes") + "\n";
        fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Filters every record's mask and writes it under `out` (same relative
/// layout); the returned manifest is rooted at `out` and still points at
/// the original photographs.
pub fn maskproc_manifest(m: &Manifest, out: &Path, min_area: usize, connectivity: Connectivity) -> Result<Manifest> {
    use rayon::prelude::*;
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let rebased = m.rebased(out);
    let records: Vec<CaptureRecord> = m
        .records
        .par_iter()
        .zip(rebased.records.par_iter())
        .map(|(orig, moved)| -> Result<CaptureRecord> {
            let Some(mask_rel) = &orig.mask_path else { return Ok(moved.clone()) };
            let mask = BinaryMask::load_png(&m.resolve(mask_rel))?;
            let filtered = filter_regions(&mask, min_area.max(1), connectivity);
            let rel = orig.output_relative(mask_rel);
            let dst = out.join(&rel);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
            filtered.save_png(&dst)?;
            Ok(CaptureRecord { mask_path: Some(rel), ..moved.clone() })
        })
        .collect::<Result<_>>()?;
    let result = Manifest { records, ..rebased };
    save_manifest(&result, &out.join("manifest.json"))?;
    Ok(result)
}

/// Runs `build` unless `dir` holds a manifest stamped with `key`.
fn cached_stage(dir: &Path, key: &str, build: impl FnOnce() -> Result<Manifest>) -> Result<(Manifest, bool)> {
    let stamp = dir.join(STAMP_FILE);
    let manifest_path = dir.join("manifest.json");
    if fs::read_to_string(&stamp).is_ok_and(|s| s.trim() == key) && manifest_path.is_file() {
        return Ok((load_manifest(&manifest_path)?, true));
    }
    let m = build()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    fs::write(&stamp, format!("{key}\n")).map_err(|e| Error::io(stamp.display().to_string(), e))?;
    Ok((m, false))
}

fn stage_key<S: Serialize>(parts: &S) -> String {
    content_hash(&serde_json::to_vec(parts).expect("stage key serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub manifest: Manifest,
    pub results: Vec<ExperimentResult>,
    /// Stages answered from cache, by name.
    pub cached_stages: Vec<String>,
    pub tables: Vec<PathBuf>,
}

/// synth (or given manifest) -> registration -> maskproc -> matrix -> tables.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let c = cfg.effective();
    let root = &c.paths.output_root;
    let mut cached = Vec::new();

    let (mut manifest, mut key) = match &c.paths.manifest {
        Some(p) => {
            let m = load_manifest(p)?;
            let k = m.content_hash();
            (m, k)
        }
        None => {
            let key = stage_key(&("synth", crate::ARTIFACT_VERSION, &c.synth));
            let (m, hit) = cached_stage(&c.synth.output_dir, &key, || Ok(generate_dataset(&c.synth)?))?;
            if hit {
                cached.push("synth".to_string());
            }
            (m, key)
        }
    };

    if c.registration.enabled {
        key = stage_key(&("register", &key, &c.registration));
        let dir = root.join("registered");
        let opts = RegisterOptions { matcher: c.registration.matcher, config: c.registration.config };
        let (m, hit) = cached_stage(&dir, &key, || Ok(register_manifest(&manifest, &dir, &opts)?.0))?;
        if hit {
            cached.push("register".to_string());
        }
        manifest = m;
    }

    if c.maskproc.enabled && manifest.has_all_masks() {
        key = stage_key(&("maskproc", &key, &c.maskproc));
        let dir = root.join("masks");
        let mp = &c.maskproc;
        let (m, hit) =
            cached_stage(&dir, &key, || maskproc_manifest(&manifest, &dir, mp.min_area, mp.connectivity))?;
        if hit {
            cached.push("maskproc".to_string());
        }
        manifest = m;
    }

    let results = run_experiment_matrix::<f32>(&manifest, &c.matrix_config(), &root.join("results"))?;

    let tables_dir = root.join("tables");
    fs::create_dir_all(&tables_dir).map_err(|e| Error::io(tables_dir.display().to_string(), e))?;
    let mut tables = Vec::new();
    for (name, layout) in [("table1", Layout::Table1), ("table2", Layout::Table2), ("table3", Layout::Table3)] {
        for (ext, format) in [("txt", TableFormat::Text), ("csv", TableFormat::Csv)] {
            let path = tables_dir.join(format!("{name}.{ext}"));
            fs::write(&path, emit_table(&results, layout, format)).map_err(|e| Error::io(path.display().to_string(), e))?;
            tables.push(path);
        }
    }
    RunMeta::new("pipeline", c.master_seed, cfg).write(root)?;
    Ok(PipelineReport { manifest, results, cached_stages: cached, tables })
}
