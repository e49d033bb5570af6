//! Synthetic skin-like fixtures: class 1 images carry round lesions, class 0 images
//! carry a faint diffuse blotch. Stand-ins for real photographs in tests and demos.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::dataset::InMemoryDataset;
use super::image::Image;
use super::manifest::{write_manifest, SampleRecord};
use crate::error::Result;
use crate::rng::rng_for;

pub fn synth_image(label: u8, size: usize, seed: u64) -> Image {
    let mut rng = rng_for(&[seed, label as u64, size as u64]);
    let base = [
        rng.gen_range(0.70..0.90f32),
        rng.gen_range(0.50..0.65f32),
        rng.gen_range(0.40..0.55f32),
    ];
    let mut img = Image::filled(size, size, base);
    let s = size as f32;
    for y in 0..size {
        for x in 0..size {
            let shade = 0.03 * ((x as f32 / s * 6.0).sin() + (y as f32 / s * 4.0).cos());
            for (c, b) in base.iter().enumerate() {
                img.set(c, y, x, b + shade);
            }
        }
    }
    let spots: Vec<(f32, f32, f32, f32)> = if label == 1 {
        (0..rng.gen_range(3..7))
            .map(|_| {
                (
                    rng.gen_range(0.15..0.85) * s,
                    rng.gen_range(0.15..0.85) * s,
                    rng.gen_range(0.05..0.11) * s,
                    0.55,
                )
            })
            .collect()
    } else {
        vec![(rng.gen_range(0.3..0.7) * s, rng.gen_range(0.3..0.7) * s, rng.gen_range(0.25..0.4) * s, 0.15)]
    };
    let lesion = [0.45f32, 0.12, 0.12];
    for (cy, cx, r, strength) in spots {
        for y in 0..size {
            for x in 0..size {
                let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt() / r;
                if d < 1.0 {
                    let w = strength * (1.0 - d * d);
                    for (c, l) in lesion.iter().enumerate() {
                        let v = img.get(c, y, x);
                        img.set(c, y, x, v * (1.0 - w) + l * w);
                    }
                }
            }
        }
    }
    img.clamp01()
}

/// `per_class` images of each class, alternating labels starting with 0.
pub fn synth_images(per_class: usize, size: usize, seed: u64) -> Vec<(Image, u8)> {
    (0..2 * per_class)
        .map(|i| {
            let label = (i % 2) as u8;
            (synth_image(label, size, seed.wrapping_add(i as u64)), label)
        })
        .collect()
}

pub fn synth_dataset(per_class: usize, size: usize, seed: u64) -> InMemoryDataset {
    let (samples, labels) = synth_images(per_class, size, seed)
        .into_iter()
        .map(|(img, l)| (img.to_tensor(), l as usize))
        .unzip();
    InMemoryDataset::new(samples, labels).expect("equal lengths")
}

/// Writes the images as PNG under `dir/images` and a source manifest at `dir/manifest.csv`.
pub fn write_synth_dataset(dir: &Path, per_class: usize, size: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::new();
    for (i, (img, label)) in synth_images(per_class, size, seed).into_iter().enumerate() {
        let origin = format!("synth{i:04}");
        let path = format!("images/{origin}.png");
        img.save_png(&dir.join(&path))?;
        records.push(SampleRecord {
            path,
            label,
            origin,
            recipe: 0,
        });
    }
    write_manifest(&dir.join("manifest.csv"), &records)?;
    Ok(records)
}
