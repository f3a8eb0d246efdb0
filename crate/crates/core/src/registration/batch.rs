use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matcher::{load_sidecar, register_pair, register_with_correspondences, MatcherConfig};
use super::warp::warp_and_crop;
use super::Homography;
use crate::dataset::{save_manifest, CaptureRecord, Manifest};
use crate::imaging::Image;
use crate::maskproc::BinaryMask;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    #[default]
    Builtin,
    /// Correspondences from `<narrowband stem>.corr.json` beside each image.
    Sidecar,
}

impl std::str::FromStr for MatcherKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "builtin" => Ok(MatcherKind::Builtin),
            "sidecar" => Ok(MatcherKind::Sidecar),
            other => Err(format!("unknown matcher {other:?} (expected builtin or sidecar)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterOptions {
    pub matcher: MatcherKind,
    pub config: MatcherConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationStatus {
    Ok,
    /// Registration failed; the narrowband image was cropped unwarped.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRegistration {
    pub record: usize,
    pub fruit_id: String,
    pub view_index: u32,
    pub status: RegistrationStatus,
    pub matches: usize,
    pub inliers: usize,
    pub mean_residual_px: f64,
    pub homography: Option<Homography<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub records: Vec<RecordRegistration>,
    pub registered: usize,
    pub failed: usize,
}

/// Sidecar path for a narrowband image: same directory and stem,
/// extension `.corr.json`.
pub fn sidecar_path(narrowband: &Path) -> PathBuf {
    narrowband.with_extension("corr.json")
}

/// Registers every record's narrowband image onto its visible image and
/// writes all three images, cropped to the standard frame, under `out`
/// with the same relative layout. Writes `manifest.json` and
/// `registration_report.json` to `out`.
pub fn register_manifest(m: &Manifest, out: &Path, opts: &RegisterOptions) -> Result<(Manifest, RegistrationReport)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let out_size = (opts.config.out_size[0], opts.config.out_size[1]);
    let identity = Homography::<f32>::identity();

    let results: Vec<(CaptureRecord, RecordRegistration)> = m
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| -> Result<_> {
            let visible = Image::<f32>::load_png_channels(&m.resolve(&r.visible_path), 3)?;
            let narrowband = Image::<f32>::load_png_channels(&m.resolve(&r.narrowband_path), 1)?;
            let attempt = match opts.matcher {
                MatcherKind::Builtin => register_pair(&narrowband, &visible.to_luma(), &opts.config),
                MatcherKind::Sidecar => load_sidecar(&sidecar_path(&m.resolve(&r.narrowband_path)))
                    .and_then(|c| register_with_correspondences(&narrowband, &visible, &c, &opts.config)),
            };
            let (registered_nb, entry) = match attempt {
                Ok(reg) => (
                    reg.registered,
                    RecordRegistration {
                        record: i,
                        fruit_id: r.fruit_id.clone(),
                        view_index: r.view_index,
                        status: RegistrationStatus::Ok,
                        matches: reg.diagnostics.matches,
                        inliers: reg.diagnostics.inliers,
                        mean_residual_px: reg.diagnostics.mean_residual_px,
                        homography: Some(reg.homography.cast()),
                        error: None,
                    },
                ),
                Err(e) => (
                    warp_and_crop(&narrowband, &identity, out_size)?,
                    RecordRegistration {
                        record: i,
                        fruit_id: r.fruit_id.clone(),
                        view_index: r.view_index,
                        status: RegistrationStatus::Failed,
                        matches: 0,
                        inliers: 0,
                        mean_residual_px: 0.0,
                        homography: None,
                        error: Some(e.to_string()),
                    },
                ),
            };
            let save = |img: &Image<f32>, rel: &Path| -> Result<()> {
                let path = out.join(rel);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
                }
                Ok(img.save_png(&path)?)
            };
            let written = r.with_output_paths();
            save(&warp_and_crop(&visible, &identity, out_size)?, &written.visible_path)?;
            save(&registered_nb, &written.narrowband_path)?;
            if let (Some(src), Some(dst)) = (&r.mask_path, &written.mask_path) {
                let mask = BinaryMask::load_png(&m.resolve(src))?;
                let cropped = warp_and_crop(&mask.to_image::<f32>(), &identity, out_size)?;
                BinaryMask::from_image(&cropped).save_png(&out.join(dst))?;
            }
            Ok((written, entry))
        })
        .collect::<Result<_>>()?;

    let (records, entries): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let registered = entries.iter().filter(|e| e.status == RegistrationStatus::Ok).count();
    let report = RegistrationReport {
        failed: entries.len() - registered,
        registered,
        records: entries,
    };
    let manifest = Manifest {
        class_names: m.class_names.clone(),
        records,
        root: out.to_path_buf(),
    };
    save_manifest(&manifest, &out.join("manifest.json"))?;
    let report_path = out.join("registration_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| Error::io(format!("writing {}", report_path.display()), e))?;
    Ok((manifest, report))
}
