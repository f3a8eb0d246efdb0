//! Per-view rasterization of a fruit scene.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{FruitScene, Projection};
use super::spectral::{sample_intensity, SpectralBand, SpectralChannel, VisibleChannel};
use crate::imaging::Image;
use crate::maskproc::BinaryMask;
use crate::registration::Homography;
use crate::seed::rng_for;
use crate::Scalar;

/// Backdrop reflectance behind the fruit.
pub const BACKGROUND_LEVEL: f64 = 0.05;

/// Silhouette semi-axes as fractions of image width and height.
const SILHOUETTE_RX: f64 = 0.36;
const SILHOUETTE_RY: f64 = 0.40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// One channel through a bandpass filter.
    Band(SpectralBand),
    /// Three channels through the RGB sensitivities.
    Visible,
}

impl RenderMode {
    pub fn channels(&self) -> Vec<SpectralChannel> {
        match self {
            RenderMode::Band(b) => vec![SpectralChannel::Band(*b)],
            RenderMode::Visible => VisibleChannel::RGB.iter().map(|&c| SpectralChannel::Visible(c)).collect(),
        }
    }

    fn label(&self) -> String {
        match self {
            RenderMode::Band(b) => format!("band:{}:{}", b.center_nm, b.fwhm_nm),
            RenderMode::Visible => "visible".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    /// Amplitude of a fixed surface/backdrop texture; 0 disables it.
    #[serde(default)]
    pub texture: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 256,
            height: 222,
            noise_sigma: 0.0,
            texture: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView<T> {
    pub image: Image<T>,
    /// Union of defect regions visible at this angle, in the image frame.
    pub mask: BinaryMask,
}

/// Silhouette geometry of one view.
struct Frame {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    fn new(width: usize, height: usize, angle_deg: f64) -> Self {
        let theta = angle_deg.to_radians();
        Self {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rx: SILHOUETTE_RX * width as f64,
            ry: SILHOUETTE_RY * height as f64,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Image point to unit-disc coordinates of the rotated ellipse.
    fn to_disc(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let xr = dx * self.cos + dy * self.sin;
        let yr = -dx * self.sin + dy * self.cos;
        (xr / self.rx, yr / self.ry)
    }

    fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let (xr, yr) = (u * self.rx, v * self.ry);
        (self.cx + xr * self.cos - yr * self.sin, self.cy + xr * self.sin + yr * self.cos)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((ix as u64).wrapping_mul(0x1656_67B1) ^ (iy as u64).wrapping_mul(0x27D4_EB2F_1656_67C5)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    // smoothstep weights
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = lattice(seed, ix, iy) * (1.0 - sx) + lattice(seed, ix + 1, iy) * sx;
    let bottom = lattice(seed, ix, iy + 1) * (1.0 - sx) + lattice(seed, ix + 1, iy + 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Fixed texture field in `[-1, 1]` attached to scene coordinates.
fn texture_field(seed: u64, x: f64, y: f64) -> f64 {
    0.6 * value_noise(seed, x, y, 4.0) + 0.4 * value_noise(seed ^ 0xABCD, x, y, 11.0)
}

/// Renders one view. Deterministic in `(scene.rng_seed, angle_deg, mode)`.
pub fn render_view<T: Scalar>(
    scene: &FruitScene,
    angle_deg: f64,
    mode: &RenderMode,
    settings: &RenderSettings,
) -> RenderedView<T> {
    render_view_in_frame(scene, angle_deg, mode, settings, None)
}

/// Like [`render_view`], but output pixel `p` shows scene point
/// `to_scene · p`, emulating a second camera with a slightly different
/// pose. The mask stays in the unwarped scene frame.
pub fn render_view_in_frame<T: Scalar>(
    scene: &FruitScene,
    angle_deg: f64,
    mode: &RenderMode,
    settings: &RenderSettings,
    to_scene: Option<&Homography<f64>>,
) -> RenderedView<T> {
    let (w, h) = (settings.width, settings.height);
    let frame = Frame::new(w, h, angle_deg);
    let channels = mode.channels();
    let base: Vec<f64> = channels.iter().map(|c| sample_intensity(&scene.base_curve, c)).collect();
    let defect_intensity: Vec<Vec<f64>> = scene
        .defects
        .iter()
        .map(|d| channels.iter().map(|c| sample_intensity(&d.curve, c)).collect())
        .collect();
    let projections: Vec<Option<Projection>> = scene.defects.iter().map(|d| d.region.project(angle_deg)).collect();

    // index of the dominant defect at a point, if any
    let defect_at = |u: f64, v: f64| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, (d, proj)) in scene.defects.iter().zip(&projections).enumerate() {
            if let Some(p) = proj {
                if d.region.contains(p, u, v) && best.is_none_or(|b| scene.defects[b].severity < d.severity) {
                    best = Some(i);
                }
            }
        }
        best
    };

    // per-pixel material in the scene frame: None = background
    let mut scene_material: Vec<Option<Option<usize>>> = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = frame.to_disc(x as f64, y as f64);
            scene_material.push((u * u + v * v <= 1.0).then(|| defect_at(u, v)));
        }
    }
    // every visible defect covers at least its center pixel
    for (i, proj) in projections.iter().enumerate() {
        let Some(p) = proj else { continue };
        let (px, py) = frame.to_image(p.center.0, p.center.1);
        let (px, py) = (px.round(), py.round());
        if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
            continue;
        }
        let idx = py as usize * w + px as usize;
        if let Some(slot @ None) = scene_material[idx].as_mut() {
            *slot = Some(i);
        }
    }
    let mask = BinaryMask::from_vec(w, h, scene_material.iter().map(|m| matches!(m, Some(Some(_)))).collect());

    let shade = |material: Option<Option<usize>>, c: usize| -> f64 {
        match material {
            None => BACKGROUND_LEVEL,
            Some(None) => base[c],
            Some(Some(i)) => {
                let s = scene.defects[i].severity;
                (1.0 - s) * base[c] + s * defect_intensity[i][c]
            }
        }
    };
    let texture_seed = crate::seed::derive_seed(scene.rng_seed, &["texture"]);
    let textured = |value: f64, inside: bool, sx: f64, sy: f64| -> f64 {
        if settings.texture == 0.0 {
            return value;
        }
        let n = texture_field(texture_seed, sx, sy);
        if inside {
            value * (1.0 + settings.texture * n)
        } else {
            value + settings.texture * 0.5 * (1.0 + n)
        }
    };

    let nch = channels.len();
    let mut data = vec![0.0f64; w * h * nch];
    for y in 0..h {
        for x in 0..w {
            let (material, sx, sy) = match to_scene {
                None => (scene_material[y * w + x], x as f64, y as f64),
                Some(hm) => {
                    let (sx, sy) = hm.apply(x as f64, y as f64);
                    let (u, v) = frame.to_disc(sx, sy);
                    ((u * u + v * v <= 1.0).then(|| defect_at(u, v)), sx, sy)
                }
            };
            for c in 0..nch {
                data[(y * w + x) * nch + c] = textured(shade(material, c), material.is_some(), sx, sy);
            }
        }
    }

    if settings.noise_sigma > 0.0 {
        let mut rng = rng_for(scene.rng_seed, &["noise".to_string(), format!("{:016x}", angle_deg.to_bits()), mode.label()]);
        let normal = Normal::new(0.0, settings.noise_sigma).expect("noise sigma is finite and positive");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }

    // clamp and quantize last so the PNG round trip is lossless
    let scale = T::lit(1.0 / 255.0);
    let image = Image::from_vec(
        w,
        h,
        nch,
        data.into_iter()
            .map(|v| T::from_u8(crate::imaging::quantize_u8(v)).expect("u8 fits") * scale)
            .collect(),
    );
    RenderedView { image, mask }
}
