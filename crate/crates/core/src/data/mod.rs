//! Manifests, image files, synthetic data and partitions.

mod image_io;
mod labels;
mod manifest;
mod split;
mod synthetic;

pub use image_io::{decode_ppm, encode_ppm, load_image, quantize, save_image};
pub use labels::{LabelScheme, LabelSet};
pub use manifest::{load_manifest, DatasetManifest, Sample, Split};
pub use split::{
    closest_to, largest_remainder, median, select_median_split, split_in_target, split_zero_shot,
    MedianSelection, SplitProbe,
};
pub use synthetic::{
    generate_samples, generate_synthetic, image_cue, text_cue, CueSite, Generated, SyntheticConfig,
    CUE_WORDS, FILLER_WORDS, GLYPH_COLORS,
};
