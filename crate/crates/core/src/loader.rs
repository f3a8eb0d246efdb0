//! Manifest records to NHWC tensors for the classifier.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, Manifest};
use crate::imaging::Image;
use crate::maskproc::{mask_to_model_input, BinaryMask};
use crate::model::Batch;
use crate::trainer::TensorDataset;
use crate::{Error, Scalar};

/// Which record field feeds a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Narrowband,
    Visible,
    Mask,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Narrowband => "narrowband",
            Modality::Visible => "visible",
            Modality::Mask => "mask",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Modality::Narrowband, Modality::Visible, Modality::Mask]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// Loads one record's modality as a `(height, width, 3)` image in `[0, 1]`.
/// Photographs are resized bilinearly, masks by nearest neighbor.
pub fn load_input<T: Scalar>(
    manifest: &Manifest,
    index: usize,
    modality: Modality,
    width: usize,
    height: usize,
) -> Result<Image<T>, Error> {
    let r = &manifest.records[index];
    Ok(match modality {
        Modality::Visible => {
            let img = Image::<T>::load_png(&manifest.resolve(&r.visible_path))?;
            let img = img.resize_bilinear(width, height);
            if img.channels() == 3 {
                img
            } else {
                img.replicate_channels(3)
            }
        }
        Modality::Narrowband => {
            let img = Image::<T>::load_png(&manifest.resolve(&r.narrowband_path))?;
            let gray = if img.channels() == 1 { img } else { img.to_luma() };
            gray.resize_bilinear(width, height).replicate_channels(3)
        }
        Modality::Mask => {
            let rel = r.mask_path.as_ref().ok_or_else(|| DatasetError::ManifestParseError {
                record: Some(index),
                message: "record has no mask_path".into(),
            })?;
            let mask = BinaryMask::load_png(&manifest.resolve(rel))?;
            mask_to_model_input(&mask, width, height)
        }
    })
}

/// Stacks `modality` for every record into `(N, height, width, 3)`.
pub fn load_tensor<T: Scalar>(
    manifest: &Manifest,
    modality: Modality,
    width: usize,
    height: usize,
) -> Result<Array4<T>, Error> {
    let images: Vec<Image<T>> = (0..manifest.len())
        .into_par_iter()
        .map(|i| load_input(manifest, i, modality, width, height))
        .collect::<Result<_, _>>()?;
    let mut out = Array4::zeros((images.len(), height, width, 3));
    for (mut slot, img) in out.axis_iter_mut(Axis(0)).zip(images) {
        let flat = slot.as_slice_mut().expect("standard layout");
        flat.copy_from_slice(img.data());
    }
    Ok(out)
}

/// Dataset whose input A (and optional B) come from the given modalities.
pub fn load_dataset<T: Scalar>(
    manifest: &Manifest,
    a: Modality,
    b: Option<Modality>,
    width: usize,
    height: usize,
) -> Result<TensorDataset<T>, Error> {
    let xa = load_tensor(manifest, a, width, height)?;
    let xb = b.map(|m| load_tensor(manifest, m, width, height)).transpose()?;
    Ok(TensorDataset::new(Batch { a: xa, b: xb }, manifest.labels())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CaptureRecord, DefectClass};

    fn one_record(dir: &std::path::Path) -> Manifest {
        let vis = Image::<f32>::from_vec(4, 2, 3, (0..24).map(|i| i as f32 / 23.0).collect());
        vis.save_png(&dir.join("v.png")).unwrap();
        Image::<f32>::from_fn(4, 2, |x, _| x as f32 / 3.0).save_png(&dir.join("n.png")).unwrap();
        BinaryMask::from_fn(4, 2, |x, y| x == 1 && y == 0).save_png(&dir.join("m.png")).unwrap();
        Manifest::new(
            vec![CaptureRecord {
                fruit_id: "f0".into(),
                view_index: 0,
                defect_class: DefectClass::Rot,
                visible_path: "v.png".into(),
                narrowband_path: "n.png".into(),
                mask_path: Some("m.png".into()),
            }],
            dir,
        )
    }

    #[test]
    fn every_modality_yields_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let m = one_record(dir.path());
        for modality in [Modality::Visible, Modality::Narrowband, Modality::Mask] {
            let t = load_tensor::<f32>(&m, modality, 4, 2).unwrap();
            assert_eq!(t.dim(), (1, 2, 4, 3));
        }
        let nb = load_tensor::<f32>(&m, Modality::Narrowband, 4, 2).unwrap();
        assert!((nb[[0, 0, 3, 0]] - 1.0).abs() < 1e-6);
        assert_eq!(nb[[0, 1, 2, 0]], nb[[0, 1, 2, 2]]);
        let mask = load_tensor::<f32>(&m, Modality::Mask, 4, 2).unwrap();
        assert_eq!(mask.sum(), 3.0);
        assert_eq!(mask[[0, 0, 1, 1]], 1.0);
    }

    #[test]
    fn dataset_labels_follow_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = one_record(dir.path());
        let ds = load_dataset::<f32>(&m, Modality::Narrowband, Some(Modality::Mask), 8, 8).unwrap();
        assert_eq!(ds.labels, vec![m.label_of(DefectClass::Rot)]);
        assert_eq!(ds.inputs.b.as_ref().unwrap().dim(), (1, 8, 8, 3));
    }

    #[test]
    fn missing_mask_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = one_record(dir.path());
        m.records[0].mask_path = None;
        assert!(load_tensor::<f32>(&m, Modality::Mask, 4, 2).is_err());
    }
}
