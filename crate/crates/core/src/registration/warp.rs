use super::homography::Homography;
use super::RegistrationError;
use crate::imaging::Image;
use crate::Scalar;

/// Standardized output frame `(width, height)` of registered images.
pub const STANDARD_SIZE: (usize, usize) = (960, 830);

/// Inverse-warps `image` through `h` onto a canvas the size of `image`,
/// then takes the centered `out_size` window of that canvas (padding with
/// zeros when the canvas is smaller). Samples are bilinear; samples that
/// fall outside the source are 0.
pub fn warp_and_crop<T: Scalar>(
    image: &Image<T>,
    h: &Homography<T>,
    out_size: (usize, usize),
) -> Result<Image<T>, RegistrationError> {
    warp_to_canvas(image, h, (image.width(), image.height()), out_size)
}

/// As [`warp_and_crop`], with an explicit canvas size (the fixed image's).
pub fn warp_to_canvas<T: Scalar>(
    image: &Image<T>,
    h: &Homography<T>,
    canvas: (usize, usize),
    out_size: (usize, usize),
) -> Result<Image<T>, RegistrationError> {
    let inv = h.inverse()?;
    let (out_w, out_h) = out_size;
    let ox = (canvas.0 as i64 - out_w as i64).div_euclid(2);
    let oy = (canvas.1 as i64 - out_h as i64).div_euclid(2);
    let channels = image.channels();
    let mut out = Image::new(out_w, out_h, channels);
    for y in 0..out_h {
        let cy = T::lit((y as i64 + oy) as f64);
        for x in 0..out_w {
            let cx = T::lit((x as i64 + ox) as f64);
            let (sx, sy) = inv.apply(cx, cy);
            for c in 0..channels {
                if let Some(v) = image.sample_bilinear(sx, sy, c) {
                    out.set(x, y, c, v);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image<f64> {
        Image::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 251) as f64 / 250.0)
    }

    #[test]
    fn identity_takes_center_crop() {
        let src = ramp(1000, 900);
        let out = warp_and_crop(&src, &Homography::identity(), STANDARD_SIZE).unwrap();
        assert_eq!((out.width(), out.height()), STANDARD_SIZE);
        for &(x, y) in &[(0, 0), (959, 829), (480, 400), (17, 803)] {
            assert_eq!(out.get(x, y, 0), src.get(x + 20, y + 35, 0));
        }
    }

    #[test]
    fn identity_is_idempotent_at_standard_size() {
        let src = ramp(960, 830);
        let once = warp_and_crop(&src, &Homography::identity(), STANDARD_SIZE).unwrap();
        assert_eq!(once, src);
        assert_eq!(warp_and_crop(&once, &Homography::identity(), STANDARD_SIZE).unwrap(), once);
    }

    #[test]
    fn translation_shifts_pixels() {
        let src = ramp(960, 830);
        let base = warp_and_crop(&src, &Homography::identity(), STANDARD_SIZE).unwrap();
        let shifted = warp_and_crop(&src, &Homography::translation(8.0, 0.0), STANDARD_SIZE).unwrap();
        for y in 0..830 {
            for x in 0..960 {
                let expected = if x < 8 { 0.0 } else { base.get(x - 8, y, 0) };
                assert!((shifted.get(x, y, 0) - expected).abs() < 1e-12, "({x}, {y})");
            }
        }
    }

    #[test]
    fn small_sources_are_padded_and_singular_rejected() {
        let src = ramp(64, 48);
        let out = warp_and_crop(&src, &Homography::identity(), STANDARD_SIZE).unwrap();
        assert_eq!((out.width(), out.height()), STANDARD_SIZE);
        let ox = (960 - 64) / 2;
        let oy = (830 - 48) / 2;
        assert_eq!(out.get(ox + 3, oy + 2, 0), src.get(3, 2, 0));
        assert_eq!(out.get(0, 0, 0), 0.0);

        let singular = Homography::from_matrix([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            warp_and_crop(&src, &singular, (10, 10)),
            Err(RegistrationError::SingularHomography)
        ));
    }
}
