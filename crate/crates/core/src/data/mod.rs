//! Image ingestion, augmentation, manifests, splitting and batching.

mod augment;
mod dataset;
mod image;
mod manifest;
mod prepare;
mod split;
mod synth;

pub use augment::{augment, RECIPE_COUNT, RECIPE_NAMES};
pub use dataset::{batch_order, load_batch, Batch, Dataset, InMemoryDataset, ManifestDataset};
pub use image::{decode_and_normalize, load_image, Image};
pub use manifest::{parse_manifest, read_manifest, resolve, write_manifest, SampleRecord, MANIFEST_HEADER};
pub use prepare::{prepare_dataset, PrepareReport};
pub use split::split;
pub use synth::{synth_dataset, synth_image, synth_images, write_synth_dataset};
