//! Fruit scenes: a healthy base material plus parametric defect blobs on a
//! rotating fruit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spectral::ReflectanceCurve;
use super::SynthError;
use crate::dataset::DefectClass;
use crate::seed::rng_for;

/// Irregular elliptical blob placed on the fruit surface.
///
/// Coordinates live on the unit disc of the fruit silhouette: `latitude`
/// is the vertical position in `[-1, 1]`, `azimuth_deg` the angle around
/// the vertical axis at which the blob faces the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub azimuth_deg: f64,
    pub latitude: f64,
    /// Radii in disc units (horizontal before foreshortening, vertical).
    pub radii: (f64, f64),
    /// Boundary wobble amplitude in `[0, 0.5)`.
    pub irregularity: f64,
    /// Phases of the 2nd..4th boundary harmonics.
    pub phases: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub defect_class: DefectClass,
    pub region: Blob,
    /// Blend weight of the defect material over healthy skin, in `(0, 1]`.
    pub severity: f64,
    pub curve: ReflectanceCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruitScene {
    pub fruit_id: String,
    pub base_curve: ReflectanceCurve,
    pub defects: Vec<DefectSpec>,
    pub rng_seed: u64,
}

/// Where a defect projects at one table angle, in disc coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projection {
    pub center: (f64, f64),
    pub radii: (f64, f64),
}

/// Fraction of the limb distance used for blob centers, keeping the center
/// pixel strictly inside the silhouette.
const CENTER_INSET: f64 = 0.95;

impl Blob {
    /// Signed azimuth relative to the camera, in `(-180, 180]`.
    pub fn relative_azimuth(&self, angle_deg: f64) -> f64 {
        let mut a = (self.azimuth_deg - angle_deg) % 360.0;
        if a > 180.0 {
            a -= 360.0;
        } else if a <= -180.0 {
            a += 360.0;
        }
        a
    }

    /// A blob faces the camera within ±90° of its azimuth.
    pub fn visible_at(&self, angle_deg: f64) -> bool {
        self.relative_azimuth(angle_deg).abs() < 90.0
    }

    pub(crate) fn project(&self, angle_deg: f64) -> Option<Projection> {
        if !self.visible_at(angle_deg) {
            return None;
        }
        let alpha = self.relative_azimuth(angle_deg).to_radians();
        let v0 = self.latitude;
        let u0 = alpha.sin() * (1.0 - v0 * v0).max(0.0).sqrt() * CENTER_INSET;
        Some(Projection {
            center: (u0, v0),
            radii: (self.radii.0 * alpha.cos(), self.radii.1),
        })
    }

    /// Membership of disc point `(u, v)` in the projected blob.
    pub(crate) fn contains(&self, proj: &Projection, u: f64, v: f64) -> bool {
        let du = (u - proj.center.0) / proj.radii.0;
        let dv = (v - proj.center.1) / proj.radii.1;
        let r2 = du * du + dv * dv;
        if self.irregularity == 0.0 {
            return r2 <= 1.0;
        }
        let phi = dv.atan2(du);
        let mut wobble = 0.0;
        for (k, phase) in self.phases.iter().enumerate() {
            let harmonic = (k + 2) as f64;
            wobble += (harmonic * phi + phase).sin() / harmonic;
        }
        // sum of 1/2 + 1/3 + 1/4 normalizes the wobble to [-1, 1]
        let boundary = 1.0 + self.irregularity * wobble / (1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 4.0);
        r2 <= boundary * boundary
    }
}

impl FruitScene {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (i, d) in self.defects.iter().enumerate() {
            if !(d.severity > 0.0 && d.severity <= 1.0) {
                return Err(SynthError::InvalidScene(format!(
                    "defect {i}: severity {} outside (0, 1]",
                    d.severity
                )));
            }
            let b = &d.region;
            if !(b.radii.0 > 0.0 && b.radii.1 > 0.0) || !(0.0..0.5).contains(&b.irregularity) || b.latitude.abs() >= 1.0 {
                return Err(SynthError::InvalidScene(format!("defect {i}: malformed region")));
            }
        }
        Ok(())
    }

    pub fn any_defect_visible(&self, angle_deg: f64) -> bool {
        self.defects.iter().any(|d| d.region.visible_at(angle_deg))
    }

    /// Copy with every defect severity multiplied by `factor`, capped at 1.
    pub fn with_severity_scale(&self, factor: f64) -> FruitScene {
        let mut scene = self.clone();
        for d in &mut scene.defects {
            d.severity = (d.severity * factor).min(1.0);
        }
        scene
    }

    /// Copy with every defect set to `severity`.
    pub fn with_severity(&self, severity: f64) -> FruitScene {
        let mut scene = self.clone();
        for d in &mut scene.defects {
            d.severity = severity;
        }
        scene
    }
}

/// Reflectance presets. Shapes are chosen so the 660 nm band separates
/// the classes: healthy skin is bright red, bruises depress the red
/// plateau, rot is dark across the band, stains are near-black speckles.
pub mod presets {
    use super::ReflectanceCurve;
    use crate::dataset::DefectClass;

    pub fn healthy_skin() -> ReflectanceCurve {
        ReflectanceCurve::new(vec![
            (400.0, 0.08),
            (500.0, 0.07),
            (550.0, 0.10),
            (600.0, 0.35),
            (640.0, 0.62),
            (660.0, 0.72),
            (700.0, 0.80),
        ])
        .expect("preset is valid")
    }

    pub fn bruise() -> ReflectanceCurve {
        ReflectanceCurve::new(vec![
            (400.0, 0.07),
            (500.0, 0.07),
            (550.0, 0.09),
            (600.0, 0.24),
            (640.0, 0.36),
            (660.0, 0.40),
            (700.0, 0.44),
        ])
        .expect("preset is valid")
    }

    pub fn rot() -> ReflectanceCurve {
        ReflectanceCurve::new(vec![(400.0, 0.05), (550.0, 0.06), (600.0, 0.08), (660.0, 0.11), (700.0, 0.13)])
            .expect("preset is valid")
    }

    pub fn stain() -> ReflectanceCurve {
        ReflectanceCurve::new(vec![(400.0, 0.03), (700.0, 0.05)]).expect("preset is valid")
    }

    pub fn for_class(class: DefectClass) -> ReflectanceCurve {
        match class {
            DefectClass::Bruise => bruise(),
            DefectClass::Stain => stain(),
            DefectClass::Rot => rot(),
        }
    }
}

/// Number of defect sites around each fruit. Sites are ~120° apart so
/// every table angle sees at least one within ±90°.
const SITES: usize = 3;

/// Random scene for one fruit of `class`; deterministic in
/// `(master_seed, fruit_id)`.
pub fn random_scene(
    class: DefectClass,
    fruit_id: &str,
    master_seed: u64,
    severity_range: (f64, f64),
) -> FruitScene {
    let rng_seed = crate::seed::derive_seed(master_seed, &["scene", fruit_id]);
    let mut rng = rng_for(rng_seed, &["layout"]);
    let (lo, hi) = severity_range;
    let severity = |rng: &mut rand_chacha::ChaCha8Rng| if hi > lo { rng.random_range(lo..=hi) } else { hi };
    let phases = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
        std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU))
    };

    let base_azimuth = rng.random_range(0.0..360.0);
    let curve = presets::for_class(class);
    let mut defects = Vec::new();
    for site in 0..SITES {
        let azimuth = base_azimuth + site as f64 * 360.0 / SITES as f64 + rng.random_range(-20.0..20.0);
        let latitude = rng.random_range(-0.45..0.45);
        match class {
            DefectClass::Bruise | DefectClass::Rot => {
                let (r_lo, r_hi, irr) = if class == DefectClass::Bruise {
                    (0.22, 0.32, rng.random_range(0.05..0.12))
                } else {
                    (0.20, 0.30, rng.random_range(0.25..0.40))
                };
                defects.push(DefectSpec {
                    defect_class: class,
                    region: Blob {
                        azimuth_deg: azimuth,
                        latitude,
                        radii: (rng.random_range(r_lo..r_hi), rng.random_range(r_lo..r_hi)),
                        irregularity: irr,
                        phases: phases(&mut rng),
                    },
                    severity: severity(&mut rng),
                    curve: curve.clone(),
                });
            }
            DefectClass::Stain => {
                let speckles = rng.random_range(5..=8);
                for _ in 0..speckles {
                    let r = rng.random_range(0.035..0.06);
                    defects.push(DefectSpec {
                        defect_class: class,
                        region: Blob {
                            azimuth_deg: azimuth + rng.random_range(-25.0..25.0),
                            latitude: (latitude + rng.random_range(-0.2..0.2)).clamp(-0.6, 0.6),
                            radii: (r, r * rng.random_range(0.8..1.25)),
                            irregularity: rng.random_range(0.0..0.15),
                            phases: phases(&mut rng),
                        },
                        severity: severity(&mut rng),
                        curve: curve.clone(),
                    });
                }
            }
        }
    }
    FruitScene {
        fruit_id: fruit_id.to_string(),
        base_curve: presets::healthy_skin(),
        defects,
        rng_seed,
    }
}
