use nalgebra::{DMatrix, RealField};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::Scalar;

/// Scalars usable for geometry: linear algebra needs `RealField`.
pub trait GeomScalar: Scalar + RealField {}
impl<T: Scalar + RealField> GeomScalar for T {}

/// A point pair: `src` in the moving image, `dst` in the fixed image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence<T> {
    pub src: [T; 2],
    pub dst: [T; 2],
}

impl<T: Scalar> Correspondence<T> {
    pub fn new(src: (T, T), dst: (T, T)) -> Self {
        Self {
            src: [src.0, src.1],
            dst: [dst.0, dst.1],
        }
    }
}

/// Projective map `dst ~ H · src` in homogeneous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography<T> {
    pub h: [[T; 3]; 3],
}

impl<T: Scalar> Homography<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            h: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Scales so `h[2][2] == 1` when it is nonzero.
    pub fn from_matrix(h: [[T; 3]; 3]) -> Self {
        let mut out = Self { h };
        out.normalize();
        out
    }

    pub fn translation(tx: T, ty: T) -> Self {
        let mut h = Self::identity();
        h.h[0][2] = tx;
        h.h[1][2] = ty;
        h
    }

    /// Rotation by `angle_deg` and uniform `scale` about `(cx, cy)`,
    /// followed by a translation `(tx, ty)`.
    pub fn similarity_about(cx: T, cy: T, scale: T, angle_deg: T, tx: T, ty: T) -> Self {
        let a = angle_deg.to_radians();
        let (c, s) = (scale * a.cos(), scale * a.sin());
        let z = T::zero();
        Self::from_matrix([
            [c, -s, cx - c * cx + s * cy + tx],
            [s, c, cy - s * cx - c * cy + ty],
            [z, z, T::one()],
        ])
    }

    fn normalize(&mut self) {
        let s = self.h[2][2];
        if s != T::zero() {
            for row in &mut self.h {
                for v in row {
                    *v /= s;
                }
            }
        }
    }

    pub fn apply(&self, x: T, y: T) -> (T, T) {
        let h = &self.h;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        (
            (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
            (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
        )
    }

    pub fn determinant(&self) -> T {
        let m = &self.h;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self, RegistrationError> {
        let m = &self.h;
        let det = self.determinant();
        let scale = m.iter().flatten().fold(T::zero(), |a, &v| a.max(v.abs()));
        if !det.is_finite() || scale == T::zero() || det.abs() <= scale.powi(3) * T::lit(1e-12) {
            return Err(RegistrationError::SingularHomography);
        }
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let inv = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut out = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = inv[r][c] / det;
            }
        }
        Ok(Self::from_matrix(out))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.h[r][k] * other.h[k][c]).sum();
            }
        }
        Self::from_matrix(out)
    }

    pub fn reprojection_error(&self, c: &Correspondence<T>) -> T {
        let (x, y) = self.apply(c.src[0], c.src[1]);
        let (dx, dy) = (x - c.dst[0], y - c.dst[1]);
        (dx * dx + dy * dy).sqrt()
    }

    /// Mean displacement between the images of the four corners of a
    /// `width × height` frame under `self` and `other`.
    pub fn mean_corner_error(&self, other: &Self, width: usize, height: usize) -> T {
        let (w, h) = (T::from_usize_lossy(width - 1), T::from_usize_lossy(height - 1));
        let corners = [(T::zero(), T::zero()), (w, T::zero()), (w, h), (T::zero(), h)];
        let total: T = corners
            .iter()
            .map(|&(x, y)| {
                let (ax, ay) = self.apply(x, y);
                let (bx, by) = other.apply(x, y);
                ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
            })
            .sum();
        total / T::lit(4.0)
    }

    pub fn cast<U: Scalar>(&self) -> Homography<U> {
        Homography {
            h: self.h.map(|row| row.map(|v| U::lit(v.as_f64()))),
        }
    }
}

/// Similarity that moves the centroid to the origin and makes the mean
/// distance from it √2.
fn hartley<T: Scalar>(points: impl Iterator<Item = [T; 2]> + Clone) -> Result<Homography<T>, RegistrationError> {
    let n = T::from_usize_lossy(points.clone().count());
    let (sx, sy) = points.clone().fold((T::zero(), T::zero()), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<T>()
        / n;
    if !(mean_dist > T::zero()) || !mean_dist.is_finite() {
        return Err(RegistrationError::DegenerateConfiguration(
            "all points coincide or are not finite".into(),
        ));
    }
    let s = T::lit(std::f64::consts::SQRT_2) / mean_dist;
    let z = T::zero();
    Ok(Homography {
        h: [[s, z, -s * cx], [z, s, -s * cy], [z, z, T::one()]],
    })
}

fn collinear<T: Scalar>(a: [T; 2], b: [T; 2], c: [T; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = Float::max(
        Float::hypot(b[0] - a[0], b[1] - a[1]),
        Float::hypot(c[0] - a[0], c[1] - a[1]),
    );
    Float::abs(cross) <= scale * scale * T::lit(1e-9)
}

/// True when some three points of a minimal set are collinear in either image.
pub fn has_collinear_triple<T: Scalar>(corrs: &[Correspondence<T>]) -> bool {
    let n = corrs.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if collinear(corrs[i].src, corrs[j].src, corrs[k].src)
                    || collinear(corrs[i].dst, corrs[j].dst, corrs[k].dst)
                {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized DLT: Hartley-normalize both point sets, take the right
/// singular vector of the smallest singular value of the `2n × 9` design
/// matrix, then undo the normalization.
pub fn estimate_homography_dlt<T: GeomScalar>(corrs: &[Correspondence<T>]) -> Result<Homography<T>, RegistrationError> {
    let n = corrs.len();
    if n < 4 {
        return Err(RegistrationError::InsufficientCorrespondences { found: n, required: 4 });
    }
    if n == 4 && has_collinear_triple(corrs) {
        return Err(RegistrationError::DegenerateConfiguration(
            "three of four points are collinear".into(),
        ));
    }
    let t_src = hartley(corrs.iter().map(|c| c.src))?;
    let t_dst = hartley(corrs.iter().map(|c| c.dst))?;

    // square up the 8 x 9 minimal system with a zero row so the SVD
    // returns all nine right singular vectors
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<T>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let (x, y) = t_src.apply(c.src[0], c.src[1]);
        let (u, v) = t_dst.apply(c.dst[0], c.dst[1]);
        let o = T::one();
        let r = [
            [-x, -y, -o, T::zero(), T::zero(), T::zero(), u * x, u * y, u],
            [T::zero(), T::zero(), T::zero(), -x, -y, -o, v * x, v * y, v],
        ];
        for (k, row) in r.iter().enumerate() {
            for (j, &val) in row.iter().enumerate() {
                a[(2 * i + k, j)] = val;
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| RegistrationError::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[i]
            .partial_cmp(&svd.singular_values[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let smallest = order[0];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if !(second > largest * T::lit(1e-10)) {
        return Err(RegistrationError::DegenerateConfiguration(
            "design matrix has a multi-dimensional null space".into(),
        ));
    }
    let h = v_t.row(smallest);
    let hn = Homography {
        h: [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]],
    };
    let out = t_dst.inverse()?.compose(&hn).compose(&t_src);
    if out.inverse().is_err() || out.h.iter().flatten().any(|v| !Float::is_finite(*v)) {
        return Err(RegistrationError::DegenerateConfiguration("estimate is singular".into()));
    }
    Ok(out)
}

/// Least-squares affine fit (bottom row fixed to `[0, 0, 1]`), with the
/// same normalization as the DLT.
pub fn estimate_affine<T: GeomScalar>(corrs: &[Correspondence<T>]) -> Result<Homography<T>, RegistrationError> {
    let n = corrs.len();
    if n < 3 {
        return Err(RegistrationError::InsufficientCorrespondences { found: n, required: 3 });
    }
    if n == 3 && has_collinear_triple(corrs) {
        return Err(RegistrationError::DegenerateConfiguration("points are collinear".into()));
    }
    let t_src = hartley(corrs.iter().map(|c| c.src))?;
    let t_dst = hartley(corrs.iter().map(|c| c.dst))?;
    let mut a = DMatrix::<T>::zeros(n, 3);
    let mut b = DMatrix::<T>::zeros(n, 2);
    for (i, c) in corrs.iter().enumerate() {
        let (x, y) = t_src.apply(c.src[0], c.src[1]);
        let (u, v) = t_dst.apply(c.dst[0], c.dst[1]);
        a[(i, 0)] = x;
        a[(i, 1)] = y;
        a[(i, 2)] = T::one();
        b[(i, 0)] = u;
        b[(i, 1)] = v;
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.iter().fold(T::zero(), |m, &s| Float::max(m, s));
    let min = sv.iter().fold(max, |m, &s| Float::min(m, s));
    if !(min > max * T::lit(1e-10)) {
        return Err(RegistrationError::DegenerateConfiguration("points are collinear".into()));
    }
    let x = svd
        .solve(&b, T::lit(1e-12))
        .map_err(|e| RegistrationError::DegenerateConfiguration(e.to_string()))?;
    let z = T::zero();
    let an = Homography {
        h: [[x[(0, 0)], x[(1, 0)], x[(2, 0)]], [x[(0, 1)], x[(1, 1)], x[(2, 1)]], [z, z, T::one()]],
    };
    let out = t_dst.inverse()?.compose(&an).compose(&t_src);
    out.inverse()
        .map_err(|_| RegistrationError::DegenerateConfiguration("estimate is singular".into()))?;
    Ok(out)
}
