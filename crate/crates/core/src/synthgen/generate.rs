use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_view, render_view_in_frame, RenderMode, RenderSettings};
use super::scene::random_scene;
use super::spectral::SpectralBand;
use super::SynthError;
use crate::dataset::{save_manifest, CaptureRecord, DefectClass, Manifest};
use crate::registration::Homography;
use crate::seed::rng_for;

/// Fruit count per class: one number for all classes or one per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FruitsPerClass {
    Uniform(u32),
    PerClass { bruise: u32, stain: u32, rot: u32 },
}

impl FruitsPerClass {
    pub fn get(&self, class: DefectClass) -> u32 {
        match *self {
            FruitsPerClass::Uniform(n) => n,
            FruitsPerClass::PerClass { bruise, stain, rot } => match class {
                DefectClass::Bruise => bruise,
                DefectClass::Stain => stain,
                DefectClass::Rot => rot,
            },
        }
    }
}

/// Random similarity between the two cameras, applied per record to the
/// narrowband view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    pub max_shift_px: f64,
    pub max_rotation_deg: f64,
    pub max_scale_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub fruits_per_class: FruitsPerClass,
    pub views_per_fruit: u32,
    /// `[width, height]` in pixels.
    pub resolution: [usize; 2],
    pub noise_sigma: f64,
    /// Inclusive `[min, max]` defect severity.
    pub severity_range: [f64; 2],
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub band: SpectralBand,
    #[serde(default)]
    pub texture: f64,
    #[serde(default)]
    pub misalignment: Option<Misalignment>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            fruits_per_class: FruitsPerClass::Uniform(10),
            views_per_fruit: 12,
            resolution: [256, 222],
            noise_sigma: 0.02,
            severity_range: [0.7, 1.0],
            master_seed: 42,
            output_dir: PathBuf::from("synth"),
            band: SpectralBand::BP660,
            texture: 0.0,
            misalignment: None,
        }
    }
}

impl GenConfig {
    /// 6 bruised, 20 stained and 20 rotten fruits at 120 views each.
    pub fn published_profile(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            fruits_per_class: FruitsPerClass::PerClass {
                bruise: 6,
                stain: 20,
                rot: 20,
            },
            views_per_fruit: 120,
            output_dir: output_dir.into(),
            ..Self::default()
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            width: self.resolution[0],
            height: self.resolution[1],
            noise_sigma: self.noise_sigma,
            texture: self.texture,
        }
    }

    pub fn expected_records(&self) -> usize {
        DefectClass::ALL
            .iter()
            .map(|&c| self.fruits_per_class.get(c) as usize * self.views_per_fruit as usize)
            .sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        self.band.validate()?;
        if self.views_per_fruit == 0 {
            return bad("views_per_fruit must be >= 1".into());
        }
        if self.resolution[0] < 8 || self.resolution[1] < 8 {
            return bad(format!("resolution {:?} too small", self.resolution));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        let [lo, hi] = self.severity_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("severity_range [{lo}, {hi}] must satisfy 0 < min <= max <= 1"));
        }
        if !(self.texture >= 0.0 && self.texture < 1.0) {
            return bad(format!("texture {} outside [0, 1)", self.texture));
        }
        Ok(())
    }
}

/// Table angle of a view: views are evenly spaced over a full turn.
pub fn view_angle(view_index: u32, views_per_fruit: u32) -> f64 {
    view_index as f64 * 360.0 / views_per_fruit as f64
}

fn misalignment_transform(m: &Misalignment, seed: u64, fruit_id: &str, view: u32, w: usize, h: usize) -> Homography<f64> {
    let mut rng = rng_for(seed, &["misalign", fruit_id, &view.to_string()]);
    let sym = |rng: &mut rand_chacha::ChaCha8Rng, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let tx = sym(&mut rng, m.max_shift_px);
    let ty = sym(&mut rng, m.max_shift_px);
    let rot = sym(&mut rng, m.max_rotation_deg);
    let scale = 1.0 + sym(&mut rng, m.max_scale_delta);
    Homography::similarity_about((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, scale, rot, tx, ty)
}

fn not_writable(path: &Path, e: impl ToString) -> SynthError {
    SynthError::OutputNotWritable {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Renders every (fruit, view) pair and writes
/// `<out>/<class>/<fruit_id>/<view>_{vis,nb,mask}.png` plus `manifest.json`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Manifest, SynthError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| not_writable(out, e))?;

    let mut jobs = Vec::with_capacity(cfg.expected_records());
    for class in DefectClass::ALL {
        for f in 0..cfg.fruits_per_class.get(class) {
            let fruit_id = format!("{class}_{f:03}");
            let scene = random_scene(class, &fruit_id, cfg.master_seed, (cfg.severity_range[0], cfg.severity_range[1]));
            let dir = PathBuf::from(class.as_str()).join(&fruit_id);
            std::fs::create_dir_all(out.join(&dir)).map_err(|e| not_writable(&out.join(&dir), e))?;
            let scene = std::sync::Arc::new(scene);
            for view in 0..cfg.views_per_fruit {
                jobs.push((class, fruit_id.clone(), scene.clone(), dir.clone(), view));
            }
        }
    }

    let settings = cfg.render_settings();
    let nb_mode = RenderMode::Band(cfg.band);
    let records: Vec<CaptureRecord> = jobs
        .into_par_iter()
        .map(|(class, fruit_id, scene, dir, view)| {
            let angle = view_angle(view, cfg.views_per_fruit);
            let vis = render_view::<f32>(&scene, angle, &RenderMode::Visible, &settings);
            let nb = match &cfg.misalignment {
                None => render_view::<f32>(&scene, angle, &nb_mode, &settings),
                Some(m) => {
                    let t = misalignment_transform(m, cfg.master_seed, &fruit_id, view, settings.width, settings.height);
                    render_view_in_frame::<f32>(&scene, angle, &nb_mode, &settings, Some(&t))
                }
            };
            let rel = |kind: &str| dir.join(format!("{view:03}_{kind}.png"));
            let record = CaptureRecord {
                fruit_id,
                view_index: view,
                defect_class: class,
                visible_path: rel("vis"),
                narrowband_path: rel("nb"),
                mask_path: Some(rel("mask")),
            };
            let write = |img: &crate::imaging::Image<f32>, p: &Path| {
                img.save_png(&out.join(p)).map_err(|e| not_writable(&out.join(p), e))
            };
            write(&vis.image, &record.visible_path)?;
            write(&nb.image, &record.narrowband_path)?;
            let mask_path = record.mask_path.as_ref().expect("set above");
            vis.mask.save_png(&out.join(mask_path)).map_err(|e| not_writable(&out.join(mask_path), e))?;
            Ok(record)
        })
        .collect::<Result<_, SynthError>>()?;

    let manifest = Manifest::new(records, out.clone());
    let manifest_path = out.join("manifest.json");
    save_manifest(&manifest, &manifest_path).map_err(|e| not_writable(&manifest_path, e))?;
    Ok(manifest)
}
