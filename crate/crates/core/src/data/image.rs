use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image, channel-major (`3×H×W`), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "image {width}×{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = Vec::with_capacity(3 * plane);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, plane));
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates, replicating edge pixels
    /// outside the frame.
    pub fn sample(&self, c: usize, y: f32, x: f32) -> f32 {
        let clamp = |v: f32, hi: usize| v.clamp(0.0, (hi - 1) as f32);
        let (y, x) = (clamp(y, self.height), clamp(x, self.width));
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
        let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Builds a same-sized image whose pixel `(y, x)` samples this one at `map(y, x)`.
    pub fn remap(&self, map: impl Fn(f32, f32) -> (f32, f32)) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let (sy, sx) = map(y as f32, x as f32);
                for c in 0..3 {
                    out.set(c, y, x, self.sample(c, sy, sx));
                }
            }
        }
        out
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut out = Image::filled(width, height, [0.0; 3]);
        for y in 0..height {
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..width {
                let src_x = (x as f32 + 0.5) * sx - 0.5;
                for c in 0..3 {
                    out.set(c, y, x, self.sample(c, src_y, src_x));
                }
            }
        }
        out
    }

    /// Maps `[0, 1]` to `[-1, 1]` and returns a `3×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|v| v * 2.0 - 1.0).collect();
        Tensor::new(vec![3, self.height, self.width], data).expect("3×H×W")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(w, h, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, p.0[c] as f32 / 255.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::Io(io),
                other => Error::Ingest {
                    path: path.to_path_buf(),
                    reason: other.to_string(),
                },
            })
    }
}

/// Decodes a PNG or JPEG file (grayscale promoted to RGB) into `[0, 1]` values.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(Image::from_rgb8(&img.to_rgb8()))
}

/// Decode, resize to `size×size`, and normalize to `[-1, 1]`.
pub fn decode_and_normalize(path: &Path, size: usize) -> Result<Tensor<f32>> {
    Ok(load_image(path)?.resize(size, size).to_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_normalize_to_unit_range() {
        let black = Image::filled(5, 3, [0.0; 3]).resize(4, 4).to_tensor();
        assert!(black.data().iter().all(|&v| v == -1.0));
        let white = Image::filled(5, 3, [1.0; 3]).resize(4, 4).to_tensor();
        assert!(white.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkerboard_upscale_matches_bilinear_formula() {
        let mut img = Image::filled(2, 2, [0.0; 3]);
        for c in 0..3 {
            img.set(c, 0, 0, 1.0);
            img.set(c, 1, 1, 1.0);
        }
        let up = img.resize(4, 4);
        // half-pixel centers: source coordinate (i + 0.5)/2 - 0.5, clamped to [0, 1]
        let src = |i: usize| ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        let corner = [[1.0, 0.0], [0.0, 1.0]];
        for y in 0..4 {
            for x in 0..4 {
                let (fy, fx) = (src(y), src(x));
                let expect = corner[0][0] * (1.0 - fy) * (1.0 - fx)
                    + corner[0][1] * (1.0 - fy) * fx
                    + corner[1][0] * fy * (1.0 - fx)
                    + corner[1][1] * fy * fx;
                assert!((up.get(0, y, x) as f64 - expect).abs() < 1e-5, "({y},{x})");
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::filled(3, 2, [0.2, 0.4, 1.0]);
        img.save_png(&p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert!(back.data.iter().zip(&img.data).all(|(a, b)| (a - b).abs() < 1.0 / 255.0));
    }

    #[test]
    fn undecodable_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not an image").unwrap();
        match load_image(&p) {
            Err(Error::Ingest { path, .. }) => assert!(path.ends_with("junk.png")),
            other => panic!("{other:?}"),
        }
    }
}
