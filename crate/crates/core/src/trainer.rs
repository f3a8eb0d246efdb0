//! Seeded Adam training loop with best/last checkpoints and resume.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{argmax_rows, cross_entropy, Archive, Batch, BackboneName, Classifier, ClassifierSpec, Gradients, Mode, ModelError};
use crate::seed::{derive_seed, rng_for};
use crate::Scalar;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Inputs and integer labels held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset<T> {
    pub inputs: Batch<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> TensorDataset<T> {
    pub fn new(inputs: Batch<T>, labels: Vec<usize>) -> Result<Self, TrainError> {
        if inputs.len() != labels.len() || inputs.b.as_ref().is_some_and(|b| b.dim().0 != labels.len()) {
            return Err(TrainError::InvalidConfig(format!(
                "{} samples but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
    pub adam: AdamParams,
    /// `None` trains tiny end to end and freezes pretrained backbones.
    pub train_backbone: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-4,
            epochs: 25,
            batch_size: 32,
            seed: 42,
            loss: Loss::CategoricalCrossEntropy,
            adam: AdamParams::default(),
            train_backbone: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(TrainError::InvalidConfig(format!("bad Adam parameters {a:?}")));
        }
        Ok(())
    }

    pub fn trains_backbone(&self, spec: &ClassifierSpec) -> bool {
        self.train_backbone.unwrap_or(spec.backbone_a.name == BackboneName::Tiny)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Percent.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Epoch with the highest validation accuracy (earliest on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, e| match best {
                Some(b) if b.val_accuracy >= e.val_accuracy => Some(b),
                _ => Some(e),
            })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let json = serde_json::to_string_pretty(self).expect("history serializes");
        fs::write(path, json + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Resume(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: History,
    /// Written whenever validation accuracy improved; absent for zero epochs.
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Seeded permutation of `0..n` split into `batch_size` chunks.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &["batches".to_string(), epoch.to_string()]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Adam moments per parameter tensor; entries stay empty until first updated.
#[derive(Debug, Clone, PartialEq)]
struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    fn new(n_params: usize) -> Self {
        Self { m: vec![Vec::new(); n_params], v: vec![Vec::new(); n_params], t: 0 }
    }

    fn step(&mut self, params: Vec<&mut [T]>, grads: &Gradients<T>, lr: f64, hp: AdamParams) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - hp.beta1), T::lit(1.0 - hp.beta2));
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(hp.epsilon);
        for (i, (p, g)) in params.into_iter().zip(&grads.entries).enumerate() {
            let Some(g) = g else { continue };
            if self.m[i].is_empty() {
                self.m[i] = vec![T::zero(); g.len()];
                self.v[i] = vec![T::zero(); g.len()];
            }
            for (((w, &gi), m), v) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *m = b1 * *m + one_b1 * gi;
                *v = b2 * *v + one_b2 * gi * gi;
                *w -= step * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

fn check_labels(ds: &[usize], num_classes: usize) -> Result<(), TrainError> {
    match ds.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(TrainError::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

/// Mean loss and eval-mode predictions over `ds`, in chunks of `batch_size`.
pub fn evaluate<T: Scalar>(
    classifier: &Classifier<T>,
    ds: &TensorDataset<T>,
    batch_size: usize,
) -> Result<(f64, Vec<usize>), TrainError> {
    check_labels(&ds.labels, classifier.num_classes())?;
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let part = ds.subset(chunk);
        let logits = classifier.logits(&part.inputs, Mode::Eval)?;
        total += cross_entropy(&logits, &part.labels).as_f64() * chunk.len() as f64;
        preds.extend(argmax_rows(&logits));
    }
    let n = ds.len().max(1) as f64;
    Ok((total / n, preds))
}

fn percent_correct(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LastMeta {
    config: TrainConfig,
    epochs_completed: usize,
    adam_t: u64,
    history: History,
}

struct Run<'a, T> {
    train_set: &'a TensorDataset<T>,
    val_set: &'a TensorDataset<T>,
    cfg: &'a TrainConfig,
    out_dir: &'a Path,
}

/// Trains `classifier` in place for `cfg.epochs` epochs, writing
/// `best.ckpt`, `last.ckpt` and `history.json` into `out_dir`.
pub fn train<T: Scalar>(
    classifier: &mut Classifier<T>,
    train_set: &TensorDataset<T>,
    val_set: &TensorDataset<T>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    let adam = Adam::new(classifier.param_names().len());
    Run { train_set, val_set, cfg, out_dir }.go(classifier, adam, History::default())
}

/// Continues a run from `out_dir/last.ckpt`. The config must equal the
/// one the checkpoint was written with, apart from `epochs`.
pub fn resume<T: Scalar>(
    spec: &ClassifierSpec,
    train_set: &TensorDataset<T>,
    val_set: &TensorDataset<T>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(Classifier<T>, TrainOutcome), TrainError> {
    let archive = Archive::read(&out_dir.join(LAST_CHECKPOINT))?;
    let (mut classifier, meta) = Classifier::<T>::from_archive(spec, &archive)?;
    let meta: LastMeta = serde_json::from_value(meta).map_err(|e| TrainError::Resume(format!("metadata: {e}")))?;
    if (TrainConfig { epochs: cfg.epochs, ..meta.config.clone() }) != *cfg {
        return Err(TrainError::Resume("training config differs from the checkpoint's".into()));
    }
    if meta.history.len() != meta.epochs_completed {
        return Err(TrainError::Resume("history length disagrees with completed epochs".into()));
    }
    let n = classifier.param_names().len();
    let mut adam = Adam::new(n);
    adam.t = meta.adam_t;
    for i in 0..n {
        if let (Some(m), Some(v)) = (archive.get(&format!("adam.m.{i}")), archive.get(&format!("adam.v.{i}"))) {
            adam.m[i] = m.iter().map(|&x| T::lit(x)).collect();
            adam.v[i] = v.iter().map(|&x| T::lit(x)).collect();
        }
    }
    let outcome = Run { train_set, val_set, cfg, out_dir }.go(&mut classifier, adam, meta.history)?;
    Ok((classifier, outcome))
}

impl<T: Scalar> Run<'_, T> {
    fn go(&self, classifier: &mut Classifier<T>, mut adam: Adam<T>, mut history: History) -> Result<TrainOutcome, TrainError> {
        let cfg = self.cfg;
        cfg.validate()?;
        let k = classifier.num_classes();
        check_labels(&self.train_set.labels, k)?;
        check_labels(&self.val_set.labels, k)?;
        fs::create_dir_all(self.out_dir).map_err(io_err(self.out_dir))?;
        let history_path = self.out_dir.join(HISTORY_FILE);
        let best_path = self.out_dir.join(BEST_CHECKPOINT);
        let last_path = self.out_dir.join(LAST_CHECKPOINT);
        let start = history.len();
        if start >= cfg.epochs {
            history.save(&history_path)?;
            let done = start > 0;
            return Ok(TrainOutcome {
                history,
                best_checkpoint: (done && best_path.is_file()).then_some(best_path),
                last_checkpoint: done.then_some(last_path),
            });
        }
        if self.train_set.is_empty() {
            return Err(TrainError::EmptyDataset("training set".into()));
        }
        if self.val_set.is_empty() {
            return Err(TrainError::EmptyDataset("validation set".into()));
        }
        let backbone = cfg.trains_backbone(classifier.spec());
        let mut best_acc = history.best().map(|e| e.val_accuracy);

        for epoch in start..cfg.epochs {
            let mut loss_sum = 0.0;
            for (bi, idx) in make_batches(self.train_set.len(), cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
                let part = self.train_set.subset(idx);
                let dropout_seed = derive_seed(cfg.seed, &["dropout".to_string(), epoch.to_string(), bi.to_string()]);
                let (loss, _, grads) =
                    classifier.loss_and_grad(&part.inputs, &part.labels, Mode::Train { dropout_seed }, backbone)?;
                let loss = loss.as_f64();
                if !loss.is_finite() || grads.entries.iter().flatten().flatten().any(|g| !g.is_finite()) {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
                }
                loss_sum += loss * idx.len() as f64;
                adam.step(classifier.params_mut(), &grads, cfg.learning_rate, cfg.adam);
                classifier.update_norm_stats(&grads.norm_stats);
            }
            let (val_loss, preds) = evaluate(classifier, self.val_set, cfg.batch_size)?;
            if !val_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: usize::MAX });
            }
            let val_accuracy = percent_correct(&preds, &self.val_set.labels);
            history.epochs.push(EpochRecord {
                epoch,
                train_loss: loss_sum / self.train_set.len() as f64,
                val_loss,
                val_accuracy,
            });
            if best_acc.is_none_or(|b| val_accuracy > b) {
                best_acc = Some(val_accuracy);
                classifier
                    .to_archive(serde_json::json!({ "epoch": epoch, "val_accuracy": val_accuracy }))
                    .write(&best_path)?;
            }
            self.save_last(classifier, &adam, &history, &last_path)?;
            history.save(&history_path)?;
        }
        Ok(TrainOutcome {
            history,
            best_checkpoint: Some(best_path),
            last_checkpoint: Some(last_path),
        })
    }

    fn save_last(&self, classifier: &Classifier<T>, adam: &Adam<T>, history: &History, path: &Path) -> Result<(), TrainError> {
        let meta = LastMeta {
            config: self.cfg.clone(),
            epochs_completed: history.len(),
            adam_t: adam.t,
            history: history.clone(),
        };
        let mut archive = classifier.to_archive(serde_json::to_value(meta).expect("meta serializes"));
        for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
            if !m.is_empty() {
                archive.push(format!("adam.m.{i}"), m.iter().map(|x| x.as_f64()).collect());
                archive.push(format!("adam.v.{i}"), v.iter().map(|x| x.as_f64()).collect());
            }
        }
        archive.write(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn batches_cover_every_record_once() {
        let b = make_batches(10, 4, 7, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let all: BTreeSet<usize> = b.iter().flatten().copied().collect();
        assert_eq!(all, (0..10).collect());
    }

    #[test]
    fn batch_order_depends_on_epoch() {
        // oracle: the same seeded shuffle reproduced directly
        let mut expected: Vec<usize> = (0..10).collect();
        expected.shuffle(&mut rng_for(3, &["batches", "1"]));
        assert_eq!(make_batches(10, 10, 3, 1), vec![expected]);
        assert_ne!(make_batches(10, 10, 3, 0), make_batches(10, 10, 3, 1));
    }

    #[test]
    fn oversized_batch_is_single() {
        let b = make_batches(5, 32, 1, 0);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let mut adam = Adam::<f64>::new(1);
        let mut w = vec![1.0, -2.0];
        let g = Gradients::new(vec![Some(vec![0.5, -3.0])]);
        adam.step(vec![&mut w[..]], &g, 0.1, AdamParams::default());
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn adam_skips_frozen_entries() {
        let mut adam = Adam::<f64>::new(2);
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        let g = Gradients::new(vec![None, Some(vec![1.0])]);
        adam.step(vec![&mut a[..], &mut b[..]], &g, 0.1, AdamParams::default());
        assert_eq!(a, [1.0]);
        assert!(b[0] < 1.0);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn history_best_prefers_earliest() {
        let rec = |epoch, acc| EpochRecord { epoch, train_loss: 1.0, val_loss: 1.0, val_accuracy: acc };
        let h = History { epochs: vec![rec(0, 50.0), rec(1, 80.0), rec(2, 80.0)] };
        assert_eq!(h.best().unwrap().epoch, 1);
    }
}
