//! Binary defect masks: connected-component labeling, small-region
//! filtering and conversion to classifier input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::{Image, ImageError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size mismatch");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Threshold at half intensity: stored masks hold {0, 255}.
    pub fn from_image<T: Scalar>(img: &Image<T>) -> Self {
        let gray = img.to_luma();
        let half = T::lit(0.5);
        Self::from_vec(
            gray.width(),
            gray.height(),
            gray.data().iter().map(|&v| v >= half).collect(),
        )
    }

    pub fn to_image<T: Scalar>(&self) -> Image<T> {
        Image::from_vec(
            self.width,
            self.height,
            1,
            self.data.iter().map(|&v| if v { T::one() } else { T::zero() }).collect(),
        )
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        Ok(Self::from_image(&Image::<f32>::load_png(path)?))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        self.to_image::<f32>().save_png(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Default for Connectivity {
    fn default() -> Self {
        Connectivity::Eight
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// A maximal connected foreground region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    /// 1-based, assigned in raster order of each region's first pixel.
    pub label: u32,
    pub area: usize,
    /// Inclusive bounds `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    /// Pixels `(x, y)` in raster order.
    pub pixels: Vec<(usize, usize)>,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let grand = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = grand;
            a = grand;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller id wins so roots stay the earliest provisional label
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Region> {
    let (w, h) = (mask.width, mask.height);
    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; w * h];
    let mut uf = UnionFind { parent: Vec::new() };

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbors = [NONE; 4];
            if x > 0 {
                neighbors[0] = provisional[y * w + x - 1];
            }
            if y > 0 {
                neighbors[1] = provisional[(y - 1) * w + x];
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbors[2] = provisional[(y - 1) * w + x - 1];
                    }
                    if x + 1 < w {
                        neighbors[3] = provisional[(y - 1) * w + x + 1];
                    }
                }
            }
            let mut label = NONE;
            for &n in neighbors.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    uf.union(label, n);
                }
            }
            if label == NONE {
                label = uf.make();
            }
            provisional[y * w + x] = label;
        }
    }

    let mut final_label = vec![0u32; uf.parent.len()];
    let mut regions: Vec<Region> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == NONE {
                continue;
            }
            let root = uf.find(p) as usize;
            if final_label[root] == 0 {
                regions.push(Region {
                    label: regions.len() as u32 + 1,
                    area: 0,
                    bbox: (x, y, x, y),
                    pixels: Vec::new(),
                });
                final_label[root] = regions.len() as u32;
            }
            let region = &mut regions[final_label[root] as usize - 1];
            region.area += 1;
            region.pixels.push((x, y));
            let b = &mut region.bbox;
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
    }
    regions
}

/// Keeps exactly the regions with `area >= min_area`.
pub fn filter_regions(mask: &BinaryMask, min_area: usize, connectivity: Connectivity) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width, mask.height);
    for region in connected_components(mask, connectivity) {
        if region.area >= min_area {
            for (x, y) in region.pixels {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Nearest-neighbor resize to `(width, height)` with foreground 1.0 and
/// background 0.0, replicated over 3 channels.
pub fn mask_to_model_input<T: Scalar>(mask: &BinaryMask, width: usize, height: usize) -> Image<T> {
    mask.to_image::<T>().resize_nearest(width, height).replicate_channels(3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    /// Recursive flood fill over explicit adjacency; returns a label per
    /// pixel (0 = background) numbered in raster order of first pixel.
    fn flood_labels(mask: &BinaryMask, conn: Connectivity) -> Vec<u32> {
        fn fill(mask: &BinaryMask, labels: &mut [u32], x: i64, y: i64, label: u32, conn: Connectivity) {
            let (w, h) = (mask.width() as i64, mask.height() as i64);
            if x < 0 || y < 0 || x >= w || y >= h {
                return;
            }
            let idx = (y * w + x) as usize;
            if !mask.get(x as usize, y as usize) || labels[idx] != 0 {
                return;
            }
            labels[idx] = label;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let diagonal = dx != 0 && dy != 0;
                    if (dx == 0 && dy == 0) || (diagonal && conn == Connectivity::Four) {
                        continue;
                    }
                    fill(mask, labels, x + dx, y + dy, label, conn);
                }
            }
        }
        let mut labels = vec![0u32; mask.width() * mask.height()];
        let mut next = 0;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) && labels[y * mask.width() + x] == 0 {
                    next += 1;
                    fill(mask, &mut labels, x as i64, y as i64, next, conn);
                }
            }
        }
        labels
    }

    #[test]
    fn empty_and_solid_block() {
        assert!(connected_components(&BinaryMask::new(5, 5), Connectivity::Eight).is_empty());
        let m = mask_from_rows(&[".....", ".###.", ".###.", ".###.", "....."]);
        let regions = connected_components(&m, Connectivity::Four);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area, 9);
        assert_eq!(regions[0].bbox, (1, 1, 3, 3));
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let m = mask_from_rows(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
        assert_eq!(flood_labels(&m, Connectivity::Eight).iter().max(), Some(&1));
        assert_eq!(flood_labels(&m, Connectivity::Four).iter().max(), Some(&2));
    }

    #[test]
    fn u_shape_merges_into_one_label() {
        // three arms meet only on the last row; labels must merge
        let m = mask_from_rows(&["#.#..#", "#.#..#", "######"]);
        let regions = connected_components(&m, Connectivity::Four);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area, 12);
    }

    #[test]
    fn filter_keeps_large_region() {
        // 2x2 block (area 4) and a 12x10 block (area 120)
        let m = BinaryMask::from_fn(30, 20, |x, y| (x < 2 && y < 2) || ((10..22).contains(&x) && (5..15).contains(&y)));
        let oracle_areas: Vec<usize> = {
            let labels = flood_labels(&m, Connectivity::Eight);
            let k = *labels.iter().max().unwrap() as usize;
            (1..=k).map(|l| labels.iter().filter(|&&v| v as usize == l).count()).collect()
        };
        assert_eq!(oracle_areas, vec![4, 120]);
        let out = filter_regions(&m, 10, Connectivity::Eight);
        assert_eq!(out.count(), 120);
        assert!(!out.get(0, 0));
        assert!(out.get(10, 5));
        assert_eq!(filter_regions(&out, 10, Connectivity::Eight), out);
        assert_eq!(filter_regions(&m, 1, Connectivity::Eight), m);
    }

    #[test]
    fn model_input_shape_and_values() {
        let m = BinaryMask::from_fn(960, 830, |x, y| (400..560).contains(&x) && (350..480).contains(&y));
        let t = mask_to_model_input::<f32>(&m, 224, 224);
        assert_eq!((t.width(), t.height(), t.channels()), (224, 224, 3));
        assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(t.data().chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));

        // direct index-mapping oracle
        let mut expected = 0;
        for y in 0..224 {
            for x in 0..224 {
                if m.get(x * 960 / 224, y * 830 / 224) {
                    expected += 1;
                }
            }
        }
        let fg = t.data().iter().step_by(3).filter(|&&v| v == 1.0).count();
        assert_eq!(fg, expected);
        let scaled = 160.0 * 130.0 * (224.0 / 960.0) * (224.0 / 830.0);
        assert!((fg as f64 - scaled).abs() / scaled < 0.1, "{fg} vs {scaled}");

        let empty = mask_to_model_input::<f32>(&BinaryMask::new(960, 830), 224, 224);
        assert!(empty.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = mask_from_rows(&["#..#", ".##.", "...."]);
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        assert_eq!(BinaryMask::load_png(&p).unwrap(), m);
        let raw = image::open(&p).unwrap().to_luma8();
        assert!(raw.as_raw().iter().all(|&v| v == 0 || v == 255));
    }

    #[test]
    fn matches_flood_fill_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
            let density: f64 = rng.random_range(0.2..0.7);
            let m = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density));
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let oracle = flood_labels(&m, conn);
                let mut got = vec![0u32; w * h];
                for r in connected_components(&m, conn) {
                    for (x, y) in r.pixels {
                        got[y * w + x] = r.label;
                    }
                }
                assert_eq!(got, oracle);
            }
        }
    }
}
