//! Interleaved floating-point image buffers and 8-bit PNG I/O.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write image {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("image {path} has {found} channels, expected {expected}")]
    Channels {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
}

/// Row-major interleaved image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height * channels,
            "buffer length does not match {width}x{height}x{channels}"
        );
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Builds a single-channel image by evaluating `f(x, y)` per pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_vec(width, height, 1, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: T) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers on
    /// integers). Returns `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: T, y: T, c: usize) -> Option<T> {
        let max_x = T::from_usize_lossy(self.width - 1);
        let max_y = T::from_usize_lossy(self.height - 1);
        if !(x >= T::zero() && y >= T::zero() && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap_or(0);
        let yi = y0.to_usize().unwrap_or(0);
        let xj = (xi + 1).min(self.width - 1);
        let yj = (yi + 1).min(self.height - 1);
        let one = T::one();
        let top = self.get(xi, yi, c) * (one - fx) + self.get(xj, yi, c) * fx;
        let bottom = self.get(xi, yj, c) * (one - fx) + self.get(xj, yj, c) * fx;
        Some(top * (one - fy) + bottom * fy)
    }

    /// Rec. 601 luma of a 3-channel image; 1-channel images are cloned.
    pub fn to_luma(&self) -> Image<T> {
        if self.channels == 1 {
            return self.clone();
        }
        let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| wr * px[0] + wg * px[1] + wb * px[2])
            .collect();
        Image::from_vec(self.width, self.height, 1, data)
    }

    /// Resize with bilinear interpolation (half-pixel centers, edge clamp).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image<T> {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let half = T::lit(0.5);
        let sx = T::from_usize_lossy(self.width) / T::from_usize_lossy(width);
        let sy = T::from_usize_lossy(self.height) / T::from_usize_lossy(height);
        let max_x = T::from_usize_lossy(self.width - 1);
        let max_y = T::from_usize_lossy(self.height - 1);
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            let src_y = ((T::from_usize_lossy(y) + half) * sy - half)
                .max(T::zero())
                .min(max_y);
            for x in 0..width {
                let src_x = ((T::from_usize_lossy(x) + half) * sx - half)
                    .max(T::zero())
                    .min(max_x);
                for c in 0..self.channels {
                    let v = self
                        .sample_bilinear(src_x, src_y, c)
                        .expect("clamped coordinates are in bounds");
                    out.set(x, y, c, v);
                }
            }
        }
        out
    }

    /// Nearest-neighbor resize using floor index mapping.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Image<T> {
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(sx, sy, c));
                }
            }
        }
        out
    }

    /// Repeats a 1-channel image into `channels` identical channels.
    pub fn replicate_channels(&self, channels: usize) -> Image<T> {
        assert_eq!(self.channels, 1, "replicate_channels expects a gray image");
        let mut data = Vec::with_capacity(self.data.len() * channels);
        for &v in &self.data {
            data.extend(std::iter::repeat_n(v, channels));
        }
        Image::from_vec(self.width, self.height, channels, data)
    }

    /// Clamp to `[0, 1]` and round to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        let scale = T::lit(1.0 / 255.0);
        let data = bytes
            .iter()
            .map(|&b| T::from_u8(b).expect("u8 fits") * scale)
            .collect();
        Self::from_vec(width, height, channels, data)
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let dynamic = image::open(path).map_err(|e| ImageError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
        Ok(match dynamic.color().channel_count() {
            1 | 2 => Self::from_u8(w, h, 1, dynamic.to_luma8().as_raw()),
            _ => Self::from_u8(w, h, 3, dynamic.to_rgb8().as_raw()),
        })
    }

    /// Loads a PNG and checks its channel count.
    pub fn load_png_channels(path: &Path, channels: usize) -> Result<Self, ImageError> {
        let img = Self::load_png(path)?;
        if img.channels != channels {
            return Err(ImageError::Channels {
                path: path.to_path_buf(),
                expected: channels,
                found: img.channels,
            });
        }
        Ok(img)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let write_err = |message: String| ImageError::Write {
            path: path.to_path_buf(),
            message,
        };
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_u8();
        let result = match self.channels {
            1 => {
                let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
                    .ok_or_else(|| write_err("buffer size mismatch".into()))?;
                buf.save(path)
            }
            3 => {
                let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
                    .ok_or_else(|| write_err("buffer size mismatch".into()))?;
                buf.save(path)
            }
            n => return Err(write_err(format!("unsupported channel count {n}"))),
        };
        result.map_err(|e| write_err(e.to_string()))
    }
}

#[inline]
pub fn quantize_u8<T: Scalar>(v: T) -> u8 {
    let clamped = v.max(T::zero()).min(T::one());
    (clamped * T::lit(255.0))
        .round()
        .to_u8()
        .expect("clamped value fits u8")
}
