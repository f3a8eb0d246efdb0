//! Grid template matcher (normalized cross-correlation) and the pair
//! registration driver built on it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::homography::{Correspondence, GeomScalar, Homography};
use super::ransac::{ransac_homography, RansacParams};
use super::warp::{warp_to_canvas, STANDARD_SIZE};
use super::RegistrationError;
use crate::imaging::Image;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Patches per side of the template grid.
    pub grid: usize,
    pub patch_size: usize,
    pub search_radius: usize,
    pub min_ncc: f64,
    /// Guided re-matching passes around the current estimate.
    pub refine_passes: usize,
    pub refine_radius: usize,
    pub ransac: RansacParams,
    pub out_size: [usize; 2],
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            grid: 12,
            patch_size: 32,
            search_radius: 24,
            min_ncc: 0.6,
            refine_passes: 2,
            refine_radius: 4,
            ransac: RansacParams::default(),
            out_size: [STANDARD_SIZE.0, STANDARD_SIZE.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationDiagnostics {
    pub matches: usize,
    pub inliers: usize,
    /// Mean reprojection error over inliers, in pixels.
    pub mean_residual_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T> {
    pub registered: Image<T>,
    /// Maps moving-image pixels onto fixed-image pixels.
    pub homography: Homography<T>,
    pub diagnostics: RegistrationDiagnostics,
}

/// Gray image in f64 with summed-area tables for window statistics.
struct Integral {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Integral {
    fn new<T: Scalar>(img: &Image<T>) -> Self {
        let gray = img.to_luma();
        let (w, h) = (gray.width(), gray.height());
        let pixels: Vec<f64> = gray.data().iter().map(|v| v.as_f64()).collect();
        let mut sum = vec![0.0; (w + 1) * (h + 1)];
        let mut sum_sq = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..w {
                let v = pixels[y * w + x];
                row += v;
                row_sq += v * v;
                sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row;
                sum_sq[(y + 1) * (w + 1) + x + 1] = sum_sq[y * (w + 1) + x + 1] + row_sq;
            }
        }
        Self {
            width: w,
            height: h,
            pixels,
            sum,
            sum_sq,
        }
    }

    fn window(&self, table: &[f64], x: usize, y: usize, size: usize) -> f64 {
        let s = self.width + 1;
        table[(y + size) * s + x + size] - table[y * s + x + size] - table[(y + size) * s + x] + table[y * s + x]
    }
}

struct Template {
    /// Zero-mean patch values.
    values: Vec<f64>,
    norm: f64,
}

fn template(fixed: &Integral, x: usize, y: usize, size: usize) -> Option<Template> {
    let n = (size * size) as f64;
    let mean = fixed.window(&fixed.sum, x, y, size) / n;
    let mut values = Vec::with_capacity(size * size);
    for dy in 0..size {
        let row = (y + dy) * fixed.width + x;
        values.extend(fixed.pixels[row..row + size].iter().map(|v| v - mean));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    // textureless patches carry no position information
    (norm > 1e-6 * n.sqrt()).then_some(Template { values, norm })
}

fn ncc_at(moving: &Integral, t: &Template, x: usize, y: usize, size: usize) -> f64 {
    let n = (size * size) as f64;
    let s = moving.window(&moving.sum, x, y, size);
    let s2 = moving.window(&moving.sum_sq, x, y, size);
    let var = s2 - s * s / n;
    if var <= 1e-12 {
        return -1.0;
    }
    let mut dot = 0.0;
    for dy in 0..size {
        let row = (y + dy) * moving.width + x;
        let img = &moving.pixels[row..row + size];
        let tpl = &t.values[dy * size..(dy + 1) * size];
        dot += img.iter().zip(tpl).map(|(a, b)| a * b).sum::<f64>();
    }
    dot / (t.norm * var.sqrt())
}

/// Best NCC position of `t` with its top-left within `radius` of `(cx, cy)`.
fn search(moving: &Integral, t: &Template, cx: i64, cy: i64, radius: usize, size: usize) -> Option<(usize, usize, f64)> {
    let r = radius as i64;
    let max_x = moving.width as i64 - size as i64;
    let max_y = moving.height as i64 - size as i64;
    let mut best: Option<(usize, usize, f64)> = None;
    for y in (cy - r).max(0)..=(cy + r).min(max_y) {
        for x in (cx - r).max(0)..=(cx + r).min(max_x) {
            let score = ncc_at(moving, t, x as usize, y as usize, size);
            if best.is_none_or(|b| score > b.2) {
                best = Some((x as usize, y as usize, score));
            }
        }
    }
    best
}

/// Vertex of the parabola through three samples centered on the peak.
fn parabola_vertex(left: f64, peak: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * peak + right;
    if curvature >= -1e-12 {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

/// Sub-pixel peak offset from separable parabolic fits; zero on an image edge.
fn subpixel_offset(moving: &Integral, t: &Template, x: usize, y: usize, peak: f64, size: usize) -> (f64, f64) {
    let score = |x, y| ncc_at(moving, t, x, y, size);
    let dx = if x > 0 && x + size < moving.width {
        parabola_vertex(score(x - 1, y), peak, score(x + 1, y))
    } else {
        0.0
    };
    let dy = if y > 0 && y + size < moving.height {
        parabola_vertex(score(x, y - 1), peak, score(x, y + 1))
    } else {
        0.0
    };
    (dx, dy)
}

/// Tiles `fixed` with a `grid × grid` array of patches and locates each in
/// `moving` within `radius` pixels of the patch's own position.
fn grid_matches(moving: &Integral, fixed: &Integral, cfg: &MatcherConfig, radius: usize) -> Vec<Correspondence<f64>> {
    let size = cfg.patch_size;
    if fixed.width < size || fixed.height < size || moving.width < size || moving.height < size {
        return Vec::new();
    }
    let half = (size as f64 - 1.0) / 2.0;
    let mut out = Vec::new();
    for gy in 0..cfg.grid {
        for gx in 0..cfg.grid {
            let cx = ((gx as f64 + 0.5) * fixed.width as f64 / cfg.grid as f64).floor();
            let cy = ((gy as f64 + 0.5) * fixed.height as f64 / cfg.grid as f64).floor();
            let x0 = (cx - half).floor();
            let y0 = (cy - half).floor();
            if x0 < 0.0 || y0 < 0.0 || x0 as usize + size > fixed.width || y0 as usize + size > fixed.height {
                continue;
            }
            let Some(t) = template(fixed, x0 as usize, y0 as usize, size) else { continue };
            if let Some((mx, my, score)) = search(moving, &t, x0 as i64, y0 as i64, radius, size) {
                if score >= cfg.min_ncc {
                    let (dx, dy) = subpixel_offset(moving, &t, mx, my, score, size);
                    out.push(Correspondence {
                        src: [mx as f64 + dx + half, my as f64 + dy + half],
                        dst: [x0 + half, y0 + half],
                    });
                }
            }
        }
    }
    out
}

/// Matches `fixed` against `moving` resampled into the fixed frame by the
/// current estimate `h`, so the remaining misalignment is a small shift.
/// Matches are mapped back into moving coordinates; those whose patch
/// would sample outside `moving` are dropped.
fn refined_matches<T: Scalar>(
    moving: &Image<T>,
    fixed: &Integral,
    h: &Homography<f64>,
    cfg: &MatcherConfig,
) -> Vec<Correspondence<f64>> {
    let Ok(inv) = h.inverse() else { return Vec::new() };
    let canvas = (fixed.width, fixed.height);
    let Ok(warped) = warp_to_canvas(moving, &h.cast::<T>(), canvas, canvas) else { return Vec::new() };
    let (mw, mh) = ((moving.width() - 1) as f64, (moving.height() - 1) as f64);
    let reach = cfg.patch_size as f64 / 2.0 + cfg.refine_radius as f64;
    let inside = |x: f64, y: f64| {
        [(-reach, -reach), (reach, -reach), (reach, reach), (-reach, reach)].iter().all(|&(dx, dy)| {
            let (u, v) = inv.apply(x + dx, y + dy);
            (0.0..=mw).contains(&u) && (0.0..=mh).contains(&v)
        })
    };
    grid_matches(&Integral::new(&warped), fixed, cfg, cfg.refine_radius)
        .into_iter()
        .filter(|c| inside(c.dst[0], c.dst[1]))
        .map(|c| {
            let (x, y) = inv.apply(c.src[0], c.src[1]);
            Correspondence { src: [x, y], dst: c.dst }
        })
        .collect()
}

/// Correspondences from the built-in NCC grid matcher.
pub fn match_grid<T: Scalar>(moving: &Image<T>, fixed: &Image<T>, cfg: &MatcherConfig) -> Vec<Correspondence<f64>> {
    grid_matches(&Integral::new(moving), &Integral::new(fixed), cfg, cfg.search_radius)
}

fn diagnostics(h: &Homography<f64>, corrs: &[Correspondence<f64>], inliers: &[usize]) -> RegistrationDiagnostics {
    let mean = if inliers.is_empty() {
        0.0
    } else {
        inliers.iter().map(|&i| h.reprojection_error(&corrs[i])).sum::<f64>() / inliers.len() as f64
    };
    RegistrationDiagnostics {
        matches: corrs.len(),
        inliers: inliers.len(),
        mean_residual_px: mean,
    }
}

fn finish<T: GeomScalar>(
    moving: &Image<T>,
    fixed: &Image<T>,
    h: Homography<f64>,
    diagnostics: RegistrationDiagnostics,
    cfg: &MatcherConfig,
) -> Result<Registration<T>, RegistrationError> {
    let homography = h.cast::<T>();
    let registered = warp_to_canvas(
        moving,
        &homography,
        (fixed.width(), fixed.height()),
        (cfg.out_size[0], cfg.out_size[1]),
    )?;
    Ok(Registration {
        registered,
        homography,
        diagnostics,
    })
}

/// Aligns `moving` to `fixed` with the built-in matcher, RANSAC and a
/// warp into the standardized frame. Color inputs are matched on luma.
pub fn register_pair<T: GeomScalar>(
    moving: &Image<T>,
    fixed: &Image<T>,
    cfg: &MatcherConfig,
) -> Result<Registration<T>, RegistrationError> {
    let mi = Integral::new(moving);
    let fi = Integral::new(fixed);
    let mut corrs = grid_matches(&mi, &fi, cfg, cfg.search_radius);
    let required = cfg.ransac.model.min_samples().max(4);
    if corrs.len() < required {
        return Err(RegistrationError::MatchFailure {
            found: corrs.len(),
            required,
        });
    }
    let mut outcome = ransac_homography(&corrs, &cfg.ransac)?;
    for _ in 0..cfg.refine_passes {
        let guided = refined_matches(moving, &fi, &outcome.homography, cfg);
        if guided.len() < required {
            break;
        }
        match ransac_homography(&guided, &cfg.ransac) {
            // the border filter removes some patches, so compare loosely
            Ok(next) if next.inliers.len() >= required && 2 * next.inliers.len() >= outcome.inliers.len() => {
                outcome = next;
                corrs = guided;
            }
            _ => break,
        }
    }
    let diag = diagnostics(&outcome.homography, &corrs, &outcome.inliers);
    finish(moving, fixed, outcome.homography, diag, cfg)
}

/// Aligns using precomputed correspondences (e.g. from an external
/// matcher) instead of the built-in grid matcher.
pub fn register_with_correspondences<T: GeomScalar>(
    moving: &Image<T>,
    fixed: &Image<T>,
    corrs: &[Correspondence<f64>],
    cfg: &MatcherConfig,
) -> Result<Registration<T>, RegistrationError> {
    let outcome = ransac_homography(corrs, &cfg.ransac)?;
    let diag = diagnostics(&outcome.homography, corrs, &outcome.inliers);
    finish(moving, fixed, outcome.homography, diag, cfg)
}

/// Reads a sidecar correspondence file: `[{"src": [x, y], "dst": [x, y]}, ...]`.
pub fn load_sidecar(path: &Path) -> Result<Vec<Correspondence<f64>>, RegistrationError> {
    let err = |message: String| RegistrationError::Sidecar {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let corrs: Vec<Correspondence<f64>> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if corrs.iter().any(|c| c.src.iter().chain(&c.dst).any(|v| !v.is_finite())) {
        return Err(err("non-finite coordinate".into()));
    }
    Ok(corrs)
}

pub fn save_sidecar(path: &Path, corrs: &[Correspondence<f64>]) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(corrs).expect("correspondences serialize"))
}
