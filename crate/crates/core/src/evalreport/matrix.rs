use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{accuracy, confusion_matrix, EvalError, ExperimentArm};
use crate::dataset::{split_grouped, Manifest, SplitSpec};
use crate::loader::{load_tensor, Modality};
use crate::model::{load_weights, BackboneName, BackboneSpec, Batch, Classifier, ClassifierSpec, HeadSpec};
use crate::seed::{content_hash, derive_seed};
use crate::trainer::{evaluate, train, TensorDataset, TrainConfig, HISTORY_FILE};
use crate::{Error, Scalar};

pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub models: Vec<BackboneName>,
    pub arms: Vec<ExperimentArm>,
    pub train: TrainConfig,
    pub split: SplitSpec,
    /// Classifier input `[height, width]`.
    pub input_size: [usize; 2],
    pub head: HeadSpec,
    pub share_weights: bool,
    pub master_seed: u64,
    /// Pretrained asset directory; not part of any cache key.
    pub weights_dir: Option<PathBuf>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            models: vec![BackboneName::Tiny],
            arms: ExperimentArm::ALL.to_vec(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            input_size: [224, 224],
            head: HeadSpec::default(),
            share_weights: false,
            master_seed: 42,
            weights_dir: None,
        }
    }
}

impl MatrixConfig {
    pub fn classifier_spec(&self, model: BackboneName, arm: ExperimentArm) -> ClassifierSpec {
        let [h, w] = self.input_size;
        let backbone = BackboneSpec::new(model, model != BackboneName::Tiny, h, w);
        let mut spec = match (arm.is_multi(), self.share_weights) {
            (false, _) => ClassifierSpec::single(backbone),
            (true, false) => ClassifierSpec::multi(backbone),
            (true, true) => ClassifierSpec::shared(backbone),
        };
        spec.head = self.head.clone();
        spec
    }

    /// Training config of one cell; its seed is derived from the master seed.
    pub fn cell_train_config(&self, model: BackboneName, arm: ExperimentArm) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.master_seed, &["train", model.as_str(), arm.as_str()]),
            ..self.train.clone()
        }
    }

    pub fn cell_init_seed(&self, model: BackboneName, arm: ExperimentArm) -> u64 {
        derive_seed(self.master_seed, &["init", model.as_str(), arm.as_str()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub model_name: String,
    pub arm: ExperimentArm,
    /// Validation accuracy of the best-epoch checkpoint, percent.
    pub accuracy_pct: f64,
    /// Validation accuracy after the last epoch, percent.
    #[serde(default)]
    pub final_accuracy_pct: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    pub confusion: Vec<Vec<u64>>,
    pub history_path: PathBuf,
    #[serde(default)]
    pub cache_key: String,
}

impl ExperimentResult {
    /// A result carrying only an accuracy, with a 10,000-sample confusion
    /// matrix whose trace matches it. Used to render published numbers.
    pub fn fixture(model_name: &str, arm: ExperimentArm, accuracy_pct: f64) -> Self {
        const N: u64 = 10_000;
        let correct = (accuracy_pct * (N as f64) / 100.0).round() as u64;
        let sizes = [N - 2 * (N / 3), N / 3, N / 3];
        let mut confusion = vec![vec![0u64; 3]; 3];
        for (i, &size) in sizes.iter().enumerate() {
            let c = correct / 3 + u64::from((i as u64) < correct % 3);
            confusion[i][i] = c;
            confusion[i][(i + 1) % 3] = size - c;
        }
        Self {
            model_name: model_name.to_string(),
            arm,
            accuracy_pct,
            final_accuracy_pct: None,
            best_epoch: None,
            confusion,
            history_path: PathBuf::new(),
            cache_key: String::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let json = serde_json::to_string_pretty(self).expect("result serializes") + "\n";
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let bad = |message: String| EvalError::BadResult { path: path.to_path_buf(), message };
        let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    }
}

/// Every `<model>/<arm>/result.json` under `dir`, in path order.
pub fn load_results(dir: &Path) -> Result<Vec<ExperimentResult>, Error> {
    let mut paths = Vec::new();
    let list = |d: &Path| -> Result<Vec<PathBuf>, Error> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Error::io(d.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    for model_dir in list(dir)? {
        for arm_dir in list(&model_dir)? {
            let p = arm_dir.join(RESULT_FILE);
            if p.is_file() {
                paths.push(p);
            }
        }
    }
    paths.iter().map(|p| ExperimentResult::load(p).map_err(Error::from)).collect()
}

fn cell_key(cfg: &MatrixConfig, manifest: &Manifest, model: BackboneName, arm: ExperimentArm) -> String {
    let key = serde_json::json!({
        "version": crate::ARTIFACT_VERSION,
        "spec": cfg.classifier_spec(model, arm),
        "arm": arm,
        "train": cfg.cell_train_config(model, arm),
        "init_seed": cfg.cell_init_seed(model, arm),
        "split": cfg.split,
        "manifest": manifest.content_hash(),
    });
    content_hash(&serde_json::to_vec(&key).expect("key serializes"))
}

fn check_modalities(manifest: &Manifest, arms: &[ExperimentArm]) -> Result<(), EvalError> {
    for &arm in arms {
        if arm.modalities().contains(&Modality::Mask) && !manifest.has_all_masks() {
            return Err(EvalError::MissingModality { arm: arm.to_string(), modality: "mask".into() });
        }
    }
    Ok(())
}

/// Train/validation tensors per modality, loaded on first use.
struct TensorCache<'a, T> {
    train: &'a Manifest,
    val: &'a Manifest,
    size: [usize; 2],
    loaded: HashMap<Modality, (Array4<T>, Array4<T>)>,
}

impl<T: Scalar> TensorCache<'_, T> {
    fn get(&mut self, m: Modality) -> Result<&(Array4<T>, Array4<T>), Error> {
        if !self.loaded.contains_key(&m) {
            let [h, w] = self.size;
            let pair = (load_tensor(self.train, m, w, h)?, load_tensor(self.val, m, w, h)?);
            self.loaded.insert(m, pair);
        }
        Ok(&self.loaded[&m])
    }

    fn datasets(&mut self, arm: ExperimentArm) -> Result<(TensorDataset<T>, TensorDataset<T>), Error> {
        let (a, b) = arm.inputs();
        let (ta, va) = self.get(a)?.clone();
        let (tb, vb) = match b {
            Some(m) => {
                let (t, v) = self.get(m)?.clone();
                (Some(t), Some(v))
            }
            None => (None, None),
        };
        Ok((
            TensorDataset::new(Batch { a: ta, b: tb }, self.train.labels())?,
            TensorDataset::new(Batch { a: va, b: vb }, self.val.labels())?,
        ))
    }
}

/// Trains and evaluates every (model, arm) cell, reusing any
/// `result.json` whose cache key still matches.
pub fn run_experiment_matrix<T: Scalar>(
    manifest: &Manifest,
    cfg: &MatrixConfig,
    results_dir: &Path,
) -> Result<Vec<ExperimentResult>, Error> {
    check_modalities(manifest, &cfg.arms)?;
    let (train_m, val_m) = split_grouped(manifest, cfg.split)?;
    let mut tensors = TensorCache::<T> { train: &train_m, val: &val_m, size: cfg.input_size, loaded: HashMap::new() };
    let mut results = Vec::new();
    for &model in &cfg.models {
        for &arm in &cfg.arms {
            let dir = results_dir.join(model.as_str()).join(arm.as_str());
            let key = cell_key(cfg, manifest, model, arm);
            let result_path = dir.join(RESULT_FILE);
            if let Ok(cached) = ExperimentResult::load(&result_path) {
                if cached.cache_key == key {
                    results.push(cached);
                    continue;
                }
            }
            let (train_set, val_set) = tensors.datasets(arm)?;
            let spec = cfg.classifier_spec(model, arm);
            let train_cfg = cfg.cell_train_config(model, arm);
            let mut classifier =
                Classifier::<T>::build(&spec, cfg.cell_init_seed(model, arm), cfg.weights_dir.as_deref())?;
            let outcome = train(&mut classifier, &train_set, &val_set, &train_cfg, &dir)?;
            let best = match &outcome.best_checkpoint {
                Some(p) => load_weights::<T>(&spec, p)?,
                None => classifier,
            };
            let (_, preds) = evaluate(&best, &val_set, train_cfg.batch_size)?;
            let result = ExperimentResult {
                model_name: model.display_name().to_string(),
                arm,
                accuracy_pct: accuracy(&preds, &val_set.labels)?,
                final_accuracy_pct: outcome.history.epochs.last().map(|e| e.val_accuracy),
                best_epoch: outcome.history.best().map(|e| e.epoch),
                confusion: confusion_matrix(&preds, &val_set.labels, spec.head.num_classes)?,
                history_path: dir.join(HISTORY_FILE),
                cache_key: key,
            };
            result.save(&result_path)?;
            results.push(result);
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalreport::trace;

    #[test]
    fn fixture_trace_matches_accuracy() {
        for acc in [98.8, 33.36, 75.14, 100.0, 0.0, 36.36] {
            let r = ExperimentResult::fixture("M", ExperimentArm::SingleNb, acc);
            let total: u64 = r.confusion.iter().flatten().sum();
            assert_eq!(total, 10_000);
            assert!((100.0 * trace(&r.confusion) as f64 / 10_000.0 - acc).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_seeds_are_per_cell() {
        let cfg = MatrixConfig::default();
        let a = cfg.cell_train_config(BackboneName::Tiny, ExperimentArm::SingleNb).seed;
        let b = cfg.cell_train_config(BackboneName::Tiny, ExperimentArm::SingleVis).seed;
        assert_ne!(a, b);
        assert_eq!(a, MatrixConfig::default().cell_train_config(BackboneName::Tiny, ExperimentArm::SingleNb).seed);
    }

    #[test]
    fn shared_flag_selects_tied_branches() {
        let cfg = MatrixConfig { share_weights: true, input_size: [32, 32], ..Default::default() };
        let spec = cfg.classifier_spec(BackboneName::Tiny, ExperimentArm::MultiNbVis);
        assert!(spec.share_weights);
        assert_eq!(spec.backbone_a.input_size, [32, 32, 3]);
        assert!(!cfg.classifier_spec(BackboneName::Vgg19, ExperimentArm::SingleNb).share_weights);
    }
}
