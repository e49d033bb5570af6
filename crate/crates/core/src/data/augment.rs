//! The thirteen fixed augmentation recipes. Recipe 0 is the unmodified original.

use rand_distr::{Distribution, Normal};

use super::image::Image;
use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const RECIPE_COUNT: u8 = 13;

/// Short name of each recipe, indexed by id (0 = original).
pub const RECIPE_NAMES: [&str; 14] = [
    "original",
    "rotate_p15",
    "rotate_m15",
    "translate_x10",
    "translate_y10",
    "hflip",
    "crop90",
    "hue_p006",
    "saturation_125",
    "contrast_125",
    "brightness_120",
    "brightness_080",
    "noise_002",
    "scale_115",
];

fn rotate(img: &Image, degrees: f32) -> Image {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (img.height as f32 - 1.0) / 2.0;
    let cx = (img.width as f32 - 1.0) / 2.0;
    // inverse rotation maps each output pixel back into the source
    img.remap(|y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy - s * dx + c * dy, cx + c * dx + s * dy)
    })
}

/// Samples the centered window covering `fraction` of each side and stretches it to full size.
fn center_zoom(img: &Image, fraction: f32) -> Image {
    let cy = (img.height as f32 - 1.0) / 2.0;
    let cx = (img.width as f32 - 1.0) / 2.0;
    img.remap(|y, x| (cy + (y - cy) * fraction, cx + (x - cx) * fraction))
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

fn map_hsv(img: &Image, f: impl Fn(f32, f32, f32) -> (f32, f32, f32)) -> Image {
    let plane = img.width * img.height;
    let mut out = img.clone();
    for i in 0..plane {
        let (h, s, v) = rgb_to_hsv(img.data[i], img.data[plane + i], img.data[2 * plane + i]);
        let (h, s, v) = f(h, s, v);
        let (r, g, b) = hsv_to_rgb(h, s.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        out.data[i] = r;
        out.data[plane + i] = g;
        out.data[2 * plane + i] = b;
    }
    out
}

fn luminance_mean(img: &Image) -> f32 {
    let plane = img.width * img.height;
    let sum: f64 = (0..plane)
        .map(|i| 0.299 * img.data[i] as f64 + 0.587 * img.data[plane + i] as f64 + 0.114 * img.data[2 * plane + i] as f64)
        .sum();
    (sum / plane as f64) as f32
}

fn scale_values(img: &Image, k: f32) -> Image {
    Image {
        data: img.data.iter().map(|v| v * k).collect(),
        ..img.clone()
    }
}

/// Applies recipe `id` (1–13). `seed` only matters for the noise recipe.
pub fn augment(img: &Image, id: u8, seed: u64) -> Result<Image> {
    let out = match id {
        1 => rotate(img, 15.0),
        2 => rotate(img, -15.0),
        3 => {
            let dx = 0.1 * img.width as f32;
            img.remap(|y, x| (y, x - dx))
        }
        4 => {
            let dy = 0.1 * img.height as f32;
            img.remap(|y, x| (y - dy, x))
        }
        5 => {
            let w = img.width as f32 - 1.0;
            img.remap(|y, x| (y, w - x))
        }
        6 => center_zoom(img, 0.9),
        7 => map_hsv(img, |h, s, v| (h + 0.06, s, v)),
        8 => map_hsv(img, |h, s, v| (h, s * 1.25, v)),
        9 => {
            let mean = luminance_mean(img);
            Image {
                data: img.data.iter().map(|v| (v - mean) * 1.25 + mean).collect(),
                ..img.clone()
            }
        }
        10 => scale_values(img, 1.2),
        11 => scale_values(img, 0.8),
        12 => {
            let mut rng = rng_for(&[seed, 12]);
            let normal = Normal::new(0.0f32, 0.02).expect("positive σ");
            Image {
                data: img.data.iter().map(|v| v + normal.sample(&mut rng)).collect(),
                ..img.clone()
            }
        }
        13 => center_zoom(img, 1.0 / 1.15),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "augmentation recipe must be in 1..={RECIPE_COUNT}, got {id}"
            )))
        }
    };
    Ok(out.clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Image {
        let mut img = Image::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, x as f32 / w as f32);
                img.set(1, y, x, y as f32 / h as f32);
                img.set(2, y, x, 0.3 + 0.1 * ((x + y) % 3) as f32);
            }
        }
        img
    }

    #[test]
    fn reflection_is_an_involution() {
        let img = gradient(7, 5);
        let twice = augment(&augment(&img, 5, 0).unwrap(), 5, 0).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn brightness_on_gray() {
        let gray = Image::filled(4, 4, [0.5; 3]);
        let out = augment(&gray, 10, 0).unwrap();
        assert!(out.data.iter().all(|&v| (v - 0.6).abs() < 1e-6));
        let bright = Image::filled(2, 2, [0.9; 3]);
        assert!(augment(&bright, 10, 0).unwrap().data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn noise_is_seeded() {
        let img = gradient(6, 6);
        assert_eq!(augment(&img, 12, 9).unwrap(), augment(&img, 12, 9).unwrap());
        assert_ne!(augment(&img, 12, 9).unwrap(), augment(&img, 12, 10).unwrap());
    }

    #[test]
    fn every_recipe_keeps_extents_and_range() {
        let img = gradient(9, 6);
        for id in 1..=RECIPE_COUNT {
            let out = augment(&img, id, 3).unwrap();
            assert_eq!((out.width, out.height), (9, 6), "recipe {id}");
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)), "recipe {id}");
        }
        assert!(augment(&img, 0, 0).is_err());
        assert!(augment(&img, 14, 0).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (0.9, 0.1, 0.3), (0.4, 0.4, 0.4), (0.0, 1.0, 0.5)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_replicates_edges() {
        let img = gradient(10, 4);
        let out = augment(&img, 3, 0).unwrap();
        // shifted right by one pixel; column 0 repeats the source edge
        assert_eq!(out.get(0, 2, 0), img.get(0, 2, 0));
        assert!((out.get(0, 2, 5) - img.get(0, 2, 4)).abs() < 1e-6);
    }
}
