use std::path::Path;

use ndarray::{concatenate, s, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::backbone::{fill, fill1, Backbone, ConvLayout, NormStats};
use super::checkpoint::Archive;
use super::layers::{dims, dropout_mask, global_average_pool, global_average_pool_backward, log_sum_exp, relu, softmax, Dense};
use super::spec::{ClassifierSpec, InputMode};
use super::ModelError;
use crate::seed::rng_for;
use crate::Scalar;

/// Inputs for one forward pass. `b` is required in multi-input mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub a: Array4<T>,
    pub b: Option<Array4<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn single(a: Array4<T>) -> Self {
        Self { a, b: None }
    }

    pub fn pair(a: Array4<T>, b: Array4<T>) -> Self {
        Self { a, b: Some(b) }
    }

    pub fn len(&self) -> usize {
        self.a.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `indices` of every input, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            a: self.a.select(Axis(0), indices),
            b: self.b.as_ref().map(|b| b.select(Axis(0), indices)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Deterministic; dropout off, running normalization statistics.
    Eval,
    /// Dropout masks drawn from a stream keyed by `dropout_seed`; batch
    /// normalization statistics.
    Train { dropout_seed: u64 },
}

impl Mode {
    fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Gradients aligned with [`Classifier::param_names`]. Entries are `None`
/// for parameters that were not differentiated (frozen backbone).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub entries: Vec<Option<Vec<T>>>,
    /// Batch statistics of input A's branch, then input B's, in train mode.
    pub norm_stats: Vec<NormStats<T>>,
}

impl<T> Gradients<T> {
    pub fn new(entries: Vec<Option<Vec<T>>>) -> Self {
        Self { entries, norm_stats: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: String,
    spec: ClassifierSpec,
    layout_a: Vec<ConvLayout>,
    layout_b: Option<Vec<ConvLayout>>,
    #[serde(default)]
    meta: serde_json::Value,
}

const CHECKPOINT_FORMAT: &str = "nbdefect-classifier";

#[derive(Debug, Clone, PartialEq)]
struct Head<T> {
    fc1: Dense<T>,
    fc2: Dense<T>,
    out: Dense<T>,
    dropout_rate: f64,
}

/// Activations kept for the head's backward pass.
struct HeadTrace<T> {
    pooled: Array2<T>,
    pre1: Array2<T>,
    h1: Array2<T>,
    pre2: Array2<T>,
    h2: Array2<T>,
    masks: Option<(Array2<T>, Array2<T>)>,
    logits: Array2<T>,
}

impl<T: Scalar> Head<T> {
    fn forward(&self, pooled: Array2<T>, mode: Mode) -> HeadTrace<T> {
        let n = pooled.nrows();
        let masks = match mode {
            Mode::Eval => None,
            Mode::Train { dropout_seed } => {
                let mut rng = rng_for(dropout_seed, &["dropout"]);
                let m1 = dropout_mask(n, self.fc1.outputs(), self.dropout_rate, &mut rng);
                let m2 = dropout_mask(n, self.fc2.outputs(), self.dropout_rate, &mut rng);
                Some((m1, m2))
            }
        };
        let pre1 = self.fc1.forward(&pooled);
        let mut h1 = pre1.mapv(relu);
        if let Some((m1, _)) = &masks {
            h1 *= m1;
        }
        let pre2 = self.fc2.forward(&h1);
        let mut h2 = pre2.mapv(relu);
        if let Some((_, m2)) = &masks {
            h2 *= m2;
        }
        let logits = self.out.forward(&h2);
        HeadTrace { pooled, pre1, h1, pre2, h2, masks, logits }
    }

    /// Returns (d_pooled, [fc1.w, fc1.b, fc2.w, fc2.b, out.w, out.b]).
    fn backward(&self, t: &HeadTrace<T>, dlogits: &Array2<T>) -> (Array2<T>, Vec<Vec<T>>) {
        let (mut dh2, dw3, db3) = self.out.backward(&t.h2, dlogits);
        if let Some((_, m2)) = &t.masks {
            dh2 *= m2;
        }
        relu_backward(&mut dh2, &t.pre2);
        let (mut dh1, dw2, db2) = self.fc2.backward(&t.h1, &dh2);
        if let Some((m1, _)) = &t.masks {
            dh1 *= m1;
        }
        relu_backward(&mut dh1, &t.pre1);
        let (dp, dw1, db1) = self.fc1.backward(&t.pooled, &dh1);
        let grads = [dw1.into_raw_vec_and_offset().0, db1.into_raw_vec_and_offset().0, dw2.into_raw_vec_and_offset().0, db2.into_raw_vec_and_offset().0, dw3.into_raw_vec_and_offset().0, db3.into_raw_vec_and_offset().0];
        (dp, grads.into())
    }
}

fn relu_backward<T: Scalar>(g: &mut Array2<T>, pre: &Array2<T>) {
    ndarray::Zip::from(g).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Backbone branch(es) plus the pooled dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    spec: ClassifierSpec,
    branch_a: Backbone<T>,
    /// Present only for untied multi-input models.
    branch_b: Option<Backbone<T>>,
    head: Head<T>,
}

pub fn build_single_input<T: Scalar>(
    spec: &ClassifierSpec,
    init_seed: u64,
    weights_dir: Option<&Path>,
) -> Result<Classifier<T>, ModelError> {
    if spec.mode != InputMode::Single {
        return Err(ModelError::SpecMismatch("build_single_input needs mode = single".into()));
    }
    Classifier::build(spec, init_seed, weights_dir)
}

pub fn build_multi_input<T: Scalar>(
    spec: &ClassifierSpec,
    init_seed: u64,
    weights_dir: Option<&Path>,
) -> Result<Classifier<T>, ModelError> {
    if spec.mode != InputMode::Multi {
        return Err(ModelError::SpecMismatch("build_multi_input needs mode = multi".into()));
    }
    Classifier::build(spec, init_seed, weights_dir)
}

impl<T: Scalar> Classifier<T> {
    /// Builds either mode. Random initialization is keyed by `init_seed`.
    pub fn build(spec: &ClassifierSpec, init_seed: u64, weights_dir: Option<&Path>) -> Result<Self, ModelError> {
        spec.validate()?;
        let branch_a = Backbone::build(&spec.backbone_a, rng_seed(init_seed, "a"), weights_dir)?;
        let branch_b = match (spec.mode, spec.share_weights) {
            (InputMode::Multi, false) => {
                let b = spec.backbone_b.expect("validated");
                Some(Backbone::build(&b, rng_seed(init_seed, "b"), weights_dir)?)
            }
            _ => None,
        };
        let mut rng = rng_for(init_seed, &["head"]);
        let [h1, h2] = spec.head.hidden_sizes;
        let head = Head {
            fc1: Dense::zeros(spec.fused_depth(), h1).he_init(&mut rng),
            fc2: Dense::zeros(h1, h2).he_init(&mut rng),
            out: Dense::zeros(h2, spec.head.num_classes).glorot_init(&mut rng),
            dropout_rate: spec.head.dropout_rate,
        };
        Ok(Self { spec: spec.clone(), branch_a, branch_b, head })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.head.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.head.fc1.param_count() + self.head.fc2.param_count() + self.head.out.param_count()
    }

    /// Parameters held by the backbone branch(es); shared branches count once.
    pub fn branch_param_count(&self) -> usize {
        self.branch_a.param_count() + self.branch_b.as_ref().map_or(0, Backbone::param_count)
    }

    pub fn branch_a(&self) -> &Backbone<T> {
        &self.branch_a
    }

    /// Backbone applied to input B, whether tied or not.
    pub fn branch_b(&self) -> Option<&Backbone<T>> {
        match self.spec.mode {
            InputMode::Single => None,
            InputMode::Multi => Some(self.branch_b.as_ref().unwrap_or(&self.branch_a)),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &[T])> {
        let mut out = self.branch_a.named_params("a.");
        if let Some(b) = &self.branch_b {
            out.extend(b.named_params("b."));
        }
        for (name, d) in [("fc1", &self.head.fc1), ("fc2", &self.head.fc2), ("out", &self.head.out)] {
            out.push((format!("head.{name}.weight"), d.weight.as_slice().expect("standard layout")));
            out.push((format!("head.{name}.bias"), d.bias.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    /// Mutable views in [`Classifier::param_names`] order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.branch_a.params_mut();
        if let Some(b) = &mut self.branch_b {
            out.extend(b.params_mut());
        }
        let head = &mut self.head;
        for d in [&mut head.fc1, &mut head.fc2, &mut head.out] {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Whether the parameter at `index` belongs to a backbone branch.
    pub fn is_backbone_param(&self, index: usize) -> bool {
        index < self.branch_a.tensor_count() + self.branch_b.as_ref().map_or(0, Backbone::tensor_count)
    }

    /// Running statistics of the normalized backbone layers.
    pub fn named_buffers(&self) -> Vec<(String, &[T])> {
        let mut out = self.branch_a.named_buffers("a.");
        if let Some(b) = &self.branch_b {
            out.extend(b.named_buffers("b."));
        }
        out
    }

    /// Folds the batch statistics of a training step into the running
    /// averages. Tied branches receive input A's statistics, then input B's.
    pub fn update_norm_stats(&mut self, stats: &[NormStats<T>]) {
        let mut it = stats.iter();
        if let Some(sa) = it.next() {
            self.branch_a.update_running_stats(sa);
        }
        if let Some(sb) = it.next() {
            match &mut self.branch_b {
                Some(b) => b.update_running_stats(sb),
                None => self.branch_a.update_running_stats(sb),
            }
        }
    }

    fn check_inputs(&self, batch: &Batch<T>) -> Result<(), ModelError> {
        let [h, w, c] = self.spec.backbone_a.input_size;
        let check = |x: &Array4<T>, which: &str| {
            let [_, xh, xw, xc] = dims(x);
            if (xh, xw, xc) != (h, w, c) {
                return Err(ModelError::ShapeMismatch(format!(
                    "input {which} is {xh}x{xw}x{xc}, expected {h}x{w}x{c}"
                )));
            }
            Ok(())
        };
        check(&batch.a, "a")?;
        match (self.spec.mode, &batch.b) {
            (InputMode::Single, None) => Ok(()),
            (InputMode::Single, Some(_)) => Err(ModelError::ShapeMismatch("single-input model given two inputs".into())),
            (InputMode::Multi, None) => Err(ModelError::ShapeMismatch("multi-input model needs input b".into())),
            (InputMode::Multi, Some(b)) => {
                check(b, "b")?;
                if b.dim().0 != batch.a.dim().0 {
                    return Err(ModelError::ShapeMismatch("inputs a and b have different batch sizes".into()));
                }
                Ok(())
            }
        }
    }

    /// Pooled (N, D) features; concatenating pooled branches along depth
    /// equals pooling the depth-concatenated feature maps.
    fn pooled_features(&self, batch: &Batch<T>, train: bool) -> Array2<T> {
        let pa = global_average_pool(&self.branch_a.forward(&batch.a, train));
        match (self.branch_b(), &batch.b) {
            (Some(bb), Some(xb)) => {
                let pb = global_average_pool(&bb.forward(xb, train));
                concatenate(Axis(1), &[pa.view(), pb.view()]).expect("same batch size")
            }
            _ => pa,
        }
    }

    /// Class logits, `(N, num_classes)`.
    pub fn logits(&self, batch: &Batch<T>, mode: Mode) -> Result<Array2<T>, ModelError> {
        self.check_inputs(batch)?;
        if batch.is_empty() {
            return Ok(Array2::zeros((0, self.num_classes())));
        }
        Ok(self.head.forward(self.pooled_features(batch, mode.is_train()), mode).logits)
    }

    /// Probability rows, `(N, num_classes)`.
    pub fn forward(&self, batch: &Batch<T>, mode: Mode) -> Result<Array2<T>, ModelError> {
        Ok(softmax(&self.logits(batch, mode)?))
    }

    /// Eval-mode argmax labels.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Vec<usize>, ModelError> {
        Ok(argmax_rows(&self.logits(batch, Mode::Eval)?))
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, batch: &Batch<T>, labels: &[usize], mode: Mode) -> Result<T, ModelError> {
        let logits = self.logits(batch, mode)?;
        self.check_labels(labels, logits.nrows())?;
        Ok(cross_entropy(&logits, labels))
    }

    /// Pooled branch features `(N, D)` that feed the head.
    pub fn features(&self, batch: &Batch<T>, mode: Mode) -> Result<Array2<T>, ModelError> {
        self.check_inputs(batch)?;
        Ok(self.pooled_features(batch, mode.is_train()))
    }

    /// Mean cross-entropy of the head alone on precomputed `features`.
    pub fn head_loss(&self, features: &Array2<T>, labels: &[usize], mode: Mode) -> Result<T, ModelError> {
        let depth = self.spec.fused_depth();
        if features.ncols() != depth {
            return Err(ModelError::ShapeMismatch(format!("{} feature columns, head expects {depth}", features.ncols())));
        }
        self.check_labels(labels, features.nrows())?;
        Ok(cross_entropy(&self.head.forward(features.clone(), mode).logits, labels))
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<(), ModelError> {
        if labels.len() != n {
            return Err(ModelError::ShapeMismatch(format!("{} labels for {n} samples", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(ModelError::ShapeMismatch(format!("label {bad} out of range")));
        }
        Ok(())
    }

    /// Mean cross-entropy, the logits, and gradients of the loss. Backbone
    /// gradients are computed only when `backbone_grads` is set.
    pub fn loss_and_grad(
        &self,
        batch: &Batch<T>,
        labels: &[usize],
        mode: Mode,
        backbone_grads: bool,
    ) -> Result<(T, Array2<T>, Gradients<T>), ModelError> {
        self.check_inputs(batch)?;
        self.check_labels(labels, batch.len())?;
        if batch.is_empty() {
            return Err(ModelError::ShapeMismatch("cannot differentiate an empty batch".into()));
        }
        let n = batch.len();
        let train = mode.is_train();
        let caches_a = self.branch_a.forward_cached(&batch.a, train);
        let feat_a = caches_a.last().expect("backbone has layers").output();
        let caches_b = match (self.branch_b(), &batch.b) {
            (Some(bb), Some(xb)) => Some(bb.forward_cached(xb, train)),
            _ => None,
        };
        let pa = global_average_pool(feat_a);
        let pooled = match &caches_b {
            Some(cb) => {
                let pb = global_average_pool(cb.last().expect("backbone has layers").output());
                concatenate(Axis(1), &[pa.view(), pb.view()]).expect("same batch size")
            }
            None => pa,
        };
        let trace = self.head.forward(pooled, mode);
        let loss = cross_entropy(&trace.logits, labels);

        let mut dlogits = softmax(&trace.logits);
        let inv_n = T::one() / T::from_usize_lossy(n);
        for (i, &y) in labels.iter().enumerate() {
            dlogits[[i, y]] -= T::one();
        }
        dlogits.mapv_inplace(|v| v * inv_n);
        let (dpooled, head_grads) = self.head.backward(&trace, &dlogits);

        let n_a = self.branch_a.tensor_count();
        let n_b = self.branch_b.as_ref().map_or(0, Backbone::tensor_count);
        let mut entries: Vec<Option<Vec<T>>> = vec![None; n_a + n_b];
        if backbone_grads {
            let da_depth = self.spec.backbone_a.feature_depth;
            let dpa = dpooled.slice(s![.., ..da_depth]).to_owned();
            let ga = self.branch_a.backward(&caches_a, global_average_pool_backward(&dpa, dims(feat_a)));
            let mut all: Vec<Vec<T>> = ga;
            if let Some(cb) = &caches_b {
                let feat_b = cb.last().expect("backbone has layers").output();
                let dpb = dpooled.slice(s![.., da_depth..]).to_owned();
                let bb = self.branch_b().expect("multi mode");
                let gb = bb.backward(cb, global_average_pool_backward(&dpb, dims(feat_b)));
                if self.branch_b.is_some() {
                    all.extend(gb);
                } else {
                    // tied weights: both uses accumulate into branch a
                    for (acc, g) in all.iter_mut().zip(gb) {
                        for (x, y) in acc.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            entries = all.into_iter().map(Some).collect();
        }
        entries.extend(head_grads.into_iter().map(Some));
        let mut norm_stats = Vec::new();
        if train {
            norm_stats.push(Backbone::norm_stats(&caches_a));
            norm_stats.extend(caches_b.as_deref().map(Backbone::norm_stats));
        }
        Ok((loss, trace.logits, Gradients { entries, norm_stats }))
    }

    /// Serializes spec, layer layout, optional metadata and every parameter.
    pub fn to_archive(&self, meta: serde_json::Value) -> Archive {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: crate::ARTIFACT_VERSION.into(),
            spec: self.spec.clone(),
            layout_a: self.branch_a.layout(),
            layout_b: self.branch_b.as_ref().map(Backbone::layout),
            meta,
        };
        let mut archive = Archive::new(serde_json::to_value(header).expect("header serializes"));
        for (name, values) in self.named_params().into_iter().chain(self.named_buffers()) {
            archive.push(name, values.iter().map(|v| v.as_f64()).collect());
        }
        archive
    }

    /// Rebuilds a classifier from an archive written for `spec`.
    pub fn from_archive(spec: &ClassifierSpec, archive: &Archive) -> Result<(Self, serde_json::Value), ModelError> {
        let header: CheckpointHeader = serde_json::from_value(archive.header.clone())
            .map_err(|e| ModelError::CorruptCheckpoint(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(ModelError::CorruptCheckpoint(format!("unexpected format {:?}", header.format)));
        }
        if &header.spec != spec {
            return Err(ModelError::SpecMismatch(format!(
                "checkpoint spec {} differs from requested {}",
                serde_json::to_string(&header.spec).unwrap_or_default(),
                serde_json::to_string(spec).unwrap_or_default()
            )));
        }
        spec.validate()?;
        let mut branch_a = Backbone::from_layout(&spec.backbone_a, &header.layout_a)?;
        branch_a.load_arrays(archive, "a.")?;
        let branch_b = match (spec.mode, spec.share_weights, &header.layout_b) {
            (InputMode::Multi, false, Some(layout)) => {
                let mut b = Backbone::from_layout(&spec.backbone_b.expect("validated"), layout)?;
                b.load_arrays(archive, "b.")?;
                Some(b)
            }
            (InputMode::Multi, false, None) => {
                return Err(ModelError::CorruptCheckpoint("missing branch b layout".into()));
            }
            _ => None,
        };
        let [h1, h2] = spec.head.hidden_sizes;
        let mut head = Head {
            fc1: Dense::zeros(spec.fused_depth(), h1),
            fc2: Dense::zeros(h1, h2),
            out: Dense::zeros(h2, spec.head.num_classes),
            dropout_rate: spec.head.dropout_rate,
        };
        for (name, d) in [("fc1", &mut head.fc1), ("fc2", &mut head.fc2), ("out", &mut head.out)] {
            fill(&mut d.weight, archive, &format!("head.{name}.weight"))?;
            fill1(&mut d.bias, archive, &format!("head.{name}.bias"))?;
        }
        Ok((Self { spec: spec.clone(), branch_a, branch_b, head }, header.meta))
    }
}

fn rng_seed(init_seed: u64, branch: &str) -> u64 {
    crate::seed::derive_seed(init_seed, &["branch", branch])
}

/// Mean of `logsumexp(row) - row[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> T {
    if labels.is_empty() {
        return T::zero();
    }
    let lse = log_sum_exp(logits);
    let total: T = labels.iter().enumerate().map(|(i, &y)| lse[i] - logits[[i, y]]).sum();
    total / T::from_usize_lossy(labels.len())
}

/// Index of the largest entry per row (first on ties).
pub fn argmax_rows<T: Scalar>(m: &Array2<T>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn save_weights<T: Scalar>(classifier: &Classifier<T>, path: &Path) -> Result<(), ModelError> {
    classifier.to_archive(serde_json::Value::Null).write(path)
}

pub fn load_weights<T: Scalar>(spec: &ClassifierSpec, path: &Path) -> Result<Classifier<T>, ModelError> {
    Ok(Classifier::from_archive(spec, &Archive::read(path)?)?.0)
}
