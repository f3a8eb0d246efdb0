use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::checkpoint::Archive;
use super::layers::{BatchNorm2d, BnCache, Conv2d, ConvCache};
use super::spec::{BackboneName, BackboneSpec};
use super::ModelError;
use crate::seed::rng_for;
use crate::Scalar;

/// Environment variable naming the directory that holds pretrained assets.
pub const WEIGHTS_DIR_ENV: &str = "NBDEFECT_WEIGHTS_DIR";

const TINY_CHANNELS: [usize; 4] = [16, 32, 64, 64];

/// Scale applied to He-normal tiny conv weights. Batch norm makes each block
/// invariant to weight scale, so a small initial norm raises the effective
/// step size of the backbone at a fixed learning rate.
const TINY_INIT_GAIN: f64 = 0.03;

/// Shape of one convolution, stored in checkpoints and weight assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayout {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu: bool,
    /// Batch normalization between the convolution and the ReLU.
    #[serde(default)]
    pub batch_norm: bool,
}

/// Pixel preprocessing applied to `[0, 1]` RGB input before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNormalization {
    Identity,
    /// `2x - 1` (MobileNet).
    SymmetricUnit,
    /// RGB to BGR, scaled to 0..255, ImageNet channel means removed (ResNet50, VGG19).
    Caffe,
    /// ImageNet mean/std per RGB channel (DenseNet121).
    Torch,
}

impl InputNormalization {
    pub fn for_spec(spec: &BackboneSpec) -> Self {
        match spec.name {
            BackboneName::Tiny => InputNormalization::Identity,
            BackboneName::MobilenetV1 => InputNormalization::SymmetricUnit,
            BackboneName::Resnet50 | BackboneName::Vgg19 => InputNormalization::Caffe,
            BackboneName::Densenet121 => InputNormalization::Torch,
        }
    }

    pub fn apply<T: Scalar>(self, x: &Array4<T>) -> Array4<T> {
        match self {
            InputNormalization::Identity => x.clone(),
            InputNormalization::SymmetricUnit => x.mapv(|v| v * T::lit(2.0) - T::one()),
            InputNormalization::Caffe => {
                const BGR_MEAN: [f64; 3] = [103.939, 116.779, 123.68];
                let mut out = x.clone();
                for ((n, y, xx, c), v) in out.indexed_iter_mut() {
                    let src = x[[n, y, xx, 2 - c]];
                    *v = src * T::lit(255.0) - T::lit(BGR_MEAN[c]);
                }
                out
            }
            InputNormalization::Torch => {
                const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
                const STD: [f64; 3] = [0.229, 0.224, 0.225];
                let mut out = x.clone();
                for ((_, _, _, c), v) in out.indexed_iter_mut() {
                    *v = (*v - T::lit(MEAN[c])) / T::lit(STD[c]);
                }
                out
            }
        }
    }
}

/// Where pretrained assets are looked up.
pub fn resolve_weights_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from))
}

pub fn asset_path(dir: &Path, name: BackboneName) -> PathBuf {
    dir.join(format!("{}.nbw", name.as_str()))
}

/// Sequential stack of convolutions mapping `(N, H, W, 3)` to `(N, H', W', D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    spec: BackboneSpec,
    normalization: InputNormalization,
    layers: Vec<Conv2d<T>>,
    norms: Vec<Option<BatchNorm2d<T>>>,
}

/// Per-channel batch mean and unbiased variance of each normalized layer.
pub type NormStats<T> = Vec<(Array1<T>, Array1<T>)>;

/// Forward values of one block kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    conv: ConvCache<T>,
    bn: Option<BnCache<T>>,
}

impl<T> LayerCache<T> {
    pub fn output(&self) -> &Array4<T> {
        self.bn.as_ref().map_or_else(|| self.conv.output(), BnCache::output)
    }
}

fn block<T: Scalar>(l: &ConvLayout) -> (Conv2d<T>, Option<BatchNorm2d<T>>) {
    let conv = Conv2d::zeros(l.kernel, l.stride, l.pad, l.in_channels, l.out_channels, l.relu && !l.batch_norm);
    let bn = l.batch_norm.then(|| BatchNorm2d::new(l.out_channels, l.relu));
    (conv, bn)
}

impl<T: Scalar> Backbone<T> {
    /// Builds the named architecture. Tiny is randomly initialized from
    /// `init_seed`; named networks load their asset from `weights_dir`
    /// (or [`WEIGHTS_DIR_ENV`]) and ignore the seed.
    pub fn build(spec: &BackboneSpec, init_seed: u64, weights_dir: Option<&Path>) -> Result<Self, ModelError> {
        spec.validate()?;
        if spec.name == BackboneName::Tiny {
            return Ok(Self::tiny(spec, init_seed));
        }
        let dir = resolve_weights_dir(weights_dir);
        let path = dir.as_deref().map(|d| asset_path(d, spec.name));
        match path {
            Some(p) if p.is_file() => Self::load_asset(spec, &p),
            _ => Err(ModelError::PretrainedWeightsUnavailable {
                name: spec.name.to_string(),
                searched: path.map_or_else(|| format!("${WEIGHTS_DIR_ENV} is not set"), |p| p.display().to_string()),
            }),
        }
    }

    fn tiny(spec: &BackboneSpec, init_seed: u64) -> Self {
        let mut rng = rng_for(init_seed, &["backbone", "tiny"]);
        let mut in_ch = 3;
        let (layers, norms) = TINY_CHANNELS
            .iter()
            .map(|&out| {
                let layout = ConvLayout {
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                    in_channels: in_ch,
                    out_channels: out,
                    relu: true,
                    batch_norm: true,
                };
                in_ch = out;
                let (conv, bn) = block(&layout);
                let mut conv = conv.he_init(&mut rng);
                conv.weight.mapv_inplace(|v| v * T::lit(TINY_INIT_GAIN));
                (conv, bn)
            })
            .unzip();
        Self {
            spec: *spec,
            normalization: InputNormalization::Identity,
            layers,
            norms,
        }
    }

    /// Zero-valued layers with the given layout, to be filled from a checkpoint.
    pub fn from_layout(spec: &BackboneSpec, layout: &[ConvLayout]) -> Result<Self, ModelError> {
        check_layout(spec, layout)?;
        let (layers, norms) = layout.iter().map(block).unzip();
        Ok(Self {
            spec: *spec,
            normalization: InputNormalization::for_spec(spec),
            layers,
            norms,
        })
    }

    fn load_asset(spec: &BackboneSpec, path: &Path) -> Result<Self, ModelError> {
        let archive = Archive::read(path)?;
        let asset_name = archive.header.get("architecture").and_then(|v| v.as_str());
        if asset_name != Some(spec.name.as_str()) {
            return Err(ModelError::CorruptCheckpoint(format!(
                "{} holds {:?}, expected {}",
                path.display(),
                asset_name,
                spec.name
            )));
        }
        let layout: Vec<ConvLayout> = archive
            .header
            .get("layers")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| ModelError::CorruptCheckpoint(format!("asset layers: {e}")))?
            .ok_or_else(|| ModelError::CorruptCheckpoint("asset has no layer list".into()))?;
        let mut backbone = Self::from_layout(spec, &layout)?;
        backbone.load_arrays(&archive, "")?;
        Ok(backbone)
    }

    /// Writes this backbone as a pretrained asset readable by [`Backbone::build`].
    pub fn save_asset(&self, path: &Path) -> Result<(), ModelError> {
        let mut archive = Archive::new(serde_json::json!({
            "architecture": self.spec.name.as_str(),
            "layers": self.layout(),
        }));
        for (name, values) in self.named_params("").into_iter().chain(self.named_buffers("")) {
            archive.push(name, values.iter().map(|v| v.as_f64()).collect());
        }
        archive.write(path)
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn normalization(&self) -> InputNormalization {
        self.normalization
    }

    pub fn layout(&self) -> Vec<ConvLayout> {
        self.layers
            .iter()
            .zip(&self.norms)
            .map(|(c, bn)| ConvLayout {
                kernel: c.kernel,
                stride: c.stride,
                pad: c.pad,
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                relu: c.relu || bn.as_ref().is_some_and(|b| b.relu),
                batch_norm: bn.is_some(),
            })
            .collect()
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.named_params("").iter().map(|(_, p)| p.len()).sum()
    }

    /// Number of parameter tensors, i.e. the length of [`Backbone::named_params`].
    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len() + 2 * self.norms.iter().flatten().count()
    }

    /// Spatial size of the feature map for the spec's input size.
    pub fn output_hw(&self) -> (usize, usize) {
        let [mut h, mut w, _] = self.spec.input_size;
        for l in &self.layers {
            h = l.out_dim(h);
            w = l.out_dim(w);
        }
        (h, w)
    }

    /// Feature maps. `train` selects batch statistics in normalized layers.
    pub fn forward(&self, x: &Array4<T>, train: bool) -> Array4<T> {
        let mut cur = self.normalization.apply(x);
        for (l, bn) in self.layers.iter().zip(&self.norms) {
            cur = l.forward(&cur);
            if let Some(bn) = bn {
                cur = bn.forward(&cur, train);
            }
        }
        cur
    }

    /// Forward pass keeping each layer's cache; the last cache holds the features.
    pub fn forward_cached(&self, x: &Array4<T>, train: bool) -> Vec<LayerCache<T>> {
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(self.layers.len());
        let first = self.normalization.apply(x);
        for (l, bn) in self.layers.iter().zip(&self.norms) {
            let input = caches.last().map_or(&first, |c| c.output());
            let conv = l.forward_cached(input);
            let bn = bn.as_ref().map(|b| b.forward_cached(conv.output(), train));
            caches.push(LayerCache { conv, bn });
        }
        caches
    }

    /// Batch statistics recorded in `caches`, one entry per normalized layer.
    pub fn norm_stats(caches: &[LayerCache<T>]) -> NormStats<T> {
        caches.iter().filter_map(|c| c.bn.as_ref()).map(|b| (b.mean.clone(), b.var.clone())).collect()
    }

    /// Folds batch statistics into the running averages of normalized layers.
    pub fn update_running_stats(&mut self, stats: &NormStats<T>) {
        for (bn, (mean, var)) in self.norms.iter_mut().flatten().zip(stats) {
            bn.update_running(mean, var);
        }
    }

    /// Parameter gradients in [`Backbone::named_params`] order.
    pub fn backward(&self, caches: &[LayerCache<T>], grad_features: Array4<T>) -> Vec<Vec<T>> {
        let mut per_layer = vec![Vec::new(); self.layers.len()];
        let mut g = grad_features;
        for (i, ((l, bn), cache)) in self.layers.iter().zip(&self.norms).zip(caches).enumerate().rev() {
            let mut bn_grads = Vec::new();
            if let (Some(bn), Some(bc)) = (bn, &cache.bn) {
                let (dx, dgamma, dbeta) = bn.backward(bc, &g);
                g = dx;
                bn_grads = vec![dgamma.to_vec(), dbeta.to_vec()];
            }
            let (dx, dw, db) = l.backward(&cache.conv, &g, i > 0);
            per_layer[i] = [dw.into_raw_vec_and_offset().0, db.to_vec()].into_iter().chain(bn_grads).collect();
            if let Some(dx) = dx {
                g = dx;
            }
        }
        per_layer.into_iter().flatten().collect()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, (l, bn)) in self.layers.iter().zip(&self.norms).enumerate() {
            out.push((format!("{prefix}conv{i}.weight"), l.weight.as_slice().expect("standard layout")));
            out.push((format!("{prefix}conv{i}.bias"), l.bias.as_slice().expect("standard layout")));
            if let Some(bn) = bn {
                out.push((format!("{prefix}bn{i}.gamma"), bn.gamma.as_slice().expect("standard layout")));
                out.push((format!("{prefix}bn{i}.beta"), bn.beta.as_slice().expect("standard layout")));
            }
        }
        out
    }

    /// Non-trainable state (running statistics), saved alongside parameters.
    pub fn named_buffers(&self, prefix: &str) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, bn) in self.norms.iter().enumerate() {
            if let Some(bn) = bn {
                out.push((format!("{prefix}bn{i}.running_mean"), bn.running_mean.as_slice().expect("standard layout")));
                out.push((format!("{prefix}bn{i}.running_var"), bn.running_var.as_slice().expect("standard layout")));
                out.push((format!("{prefix}bn{i}.num_batches"), bn.num_batches.as_slice().expect("standard layout")));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for (l, bn) in self.layers.iter_mut().zip(&mut self.norms) {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = bn {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub(crate) fn load_arrays(&mut self, archive: &Archive, prefix: &str) -> Result<(), ModelError> {
        for (i, (l, bn)) in self.layers.iter_mut().zip(&mut self.norms).enumerate() {
            fill(&mut l.weight, archive, &format!("{prefix}conv{i}.weight"))?;
            fill1(&mut l.bias, archive, &format!("{prefix}conv{i}.bias"))?;
            if let Some(bn) = bn {
                fill1(&mut bn.gamma, archive, &format!("{prefix}bn{i}.gamma"))?;
                fill1(&mut bn.beta, archive, &format!("{prefix}bn{i}.beta"))?;
                fill1(&mut bn.running_mean, archive, &format!("{prefix}bn{i}.running_mean"))?;
                fill1(&mut bn.running_var, archive, &format!("{prefix}bn{i}.running_var"))?;
                // assets without a counter carry settled statistics
                let counter = format!("{prefix}bn{i}.num_batches");
                if archive.get(&counter).is_some() {
                    fill1(&mut bn.num_batches, archive, &counter)?;
                } else {
                    bn.num_batches[0] = T::lit(1e6);
                }
            }
        }
        Ok(())
    }
}

fn check_layout(spec: &BackboneSpec, layout: &[ConvLayout]) -> Result<(), ModelError> {
    let mut ch = 3;
    for (i, l) in layout.iter().enumerate() {
        if l.in_channels != ch || l.kernel == 0 || l.stride == 0 || l.out_channels == 0 {
            return Err(ModelError::CorruptCheckpoint(format!("layer {i} layout {l:?} does not chain")));
        }
        ch = l.out_channels;
    }
    if layout.is_empty() || ch != spec.feature_depth {
        return Err(ModelError::SpecMismatch(format!(
            "{} layout ends at depth {ch}, spec expects {}",
            spec.name, spec.feature_depth
        )));
    }
    Ok(())
}

pub(crate) fn fill<T: Scalar>(dst: &mut Array2<T>, archive: &Archive, name: &str) -> Result<(), ModelError> {
    copy_into(dst.as_slice_mut().expect("standard layout"), archive, name)
}

pub(crate) fn fill1<T: Scalar>(dst: &mut Array1<T>, archive: &Archive, name: &str) -> Result<(), ModelError> {
    copy_into(dst.as_slice_mut().expect("standard layout"), archive, name)
}

fn copy_into<T: Scalar>(dst: &mut [T], archive: &Archive, name: &str) -> Result<(), ModelError> {
    let src = archive
        .get(name)
        .ok_or_else(|| ModelError::CorruptCheckpoint(format!("missing array {name}")))?;
    if src.len() != dst.len() {
        return Err(ModelError::CorruptCheckpoint(format!(
            "array {name} has {} values, expected {}",
            src.len(),
            dst.len()
        )));
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = T::lit(s);
    }
    Ok(())
}
