use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::vision::ImageTensor;

use super::image_io::save_image;
use super::labels::{LabelScheme, LabelSet};
use super::manifest::{DatasetManifest, Sample};

/// Cue words per cue class. Class `k` of the glyph palette shares index `k`.
pub const CUE_WORDS: [&[&str]; 4] = [
    &["brilliant", "admire", "champion", "bravo"],
    &["disgrace", "reject", "terrible", "shameful"],
    &["reportedly", "meanwhile", "scheduled", "announced"],
    &["sandwich", "weather", "puppy", "guitar"],
];

pub const FILLER_WORDS: &[&str] = &[
    "today", "people", "said", "news", "the", "a", "of", "and", "about", "this", "week", "again",
    "just", "more", "they", "we", "it", "here", "there", "video", "photo", "look", "time", "day",
    "still", "some", "many", "talk", "after", "before", "city", "state", "vote", "plan", "deal",
    "market", "online", "story", "read", "post",
];

/// Glyph colors per cue class.
pub const GLYPH_COLORS: [[f32; 3]; 4] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.9, 0.1],
    [0.1, 0.1, 0.9],
    [0.9, 0.9, 0.1],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub name: String,
    pub targets: Vec<String>,
    pub samples_per_target: usize,
    pub labels: LabelScheme,
    /// Per-target label distribution; targets not listed draw uniformly.
    pub label_distribution: BTreeMap<String, Vec<f64>>,
    /// Probability that the stance cue is carried only by the image (π_v).
    pub visual_cue_fraction: f64,
    /// Shift the cue→label mapping by one class for every second target.
    pub contradiction: bool,
    pub image_size: usize,
    /// Side of the glyph block; glyphs sit on a grid of this size.
    pub glyph_size: usize,
    /// Background noise amplitude around mid-gray.
    pub noise: f64,
    pub text_words: (usize, usize),
    /// Probability that a post carries 2 or 3 images (one sample per image).
    pub multi_image_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            targets: vec!["DT".into(), "JB".into()],
            samples_per_target: 900,
            labels: LabelScheme::FavorAgainstNeutral,
            label_distribution: BTreeMap::new(),
            visual_cue_fraction: 0.5,
            contradiction: true,
            image_size: 32,
            glyph_size: 8,
            noise: 0.15,
            text_words: (6, 12),
            multi_image_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.labels.labels().len();
        if !(0.0..=1.0).contains(&self.visual_cue_fraction) {
            return Err(Error::Config(
                "visual_cue_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.multi_image_fraction) {
            return Err(Error::Config(
                "multi_image_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no targets".into()));
        }
        for (t, d) in &self.label_distribution {
            if d.len() != p
                || d.iter().any(|&x| x < 0.0)
                || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::Config(format!(
                    "label distribution for `{t}` must have {p} non-negative entries summing to 1"
                )));
            }
        }
        if self.glyph_size == 0 || !self.image_size.is_multiple_of(self.glyph_size) {
            return Err(Error::Config("glyph_size must divide image_size".into()));
        }
        if self.text_words.0 > self.text_words.1 {
            return Err(Error::Config("text_words range is reversed".into()));
        }
        if p > CUE_WORDS.len() {
            return Err(Error::Config(format!(
                "at most {} classes supported",
                CUE_WORDS.len()
            )));
        }
        Ok(())
    }

    /// Label shift for the target at `index` in the target list.
    pub fn shift(&self, index: usize) -> usize {
        usize::from(self.contradiction && index % 2 == 1)
    }

    fn distribution(&self, target: &str, p: usize) -> Vec<f64> {
        self.label_distribution
            .get(target)
            .cloned()
            .unwrap_or_else(|| vec![1.0 / p as f64; p])
    }
}

/// Where the cue of a generated sample lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueSite {
    Text,
    Image,
}

/// A generated sample with the ground truth the generator used.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub sample: Sample,
    pub image: ImageTensor,
    pub cue: usize,
    pub site: CueSite,
}

/// Deterministic in `config.seed`. Returns samples and in-memory images
/// without touching the file system.
pub fn generate_samples(config: &SyntheticConfig) -> Result<(DatasetManifest, Vec<Generated>)> {
    config.validate()?;
    let labels: LabelSet = config.labels.labels();
    let p = labels.len();
    let mut manifest = DatasetManifest::new(&config.name, labels.clone(), config.targets.clone());
    manifest.provenance = format!(
        "synthetic: seed {}, pi_v {}, contradiction {}",
        config.seed, config.visual_cue_fraction, config.contradiction
    );
    let mut rng = Rng::new(config.seed);
    let mut out = Vec::new();
    for (ti, target) in config.targets.iter().enumerate() {
        let dist = config.distribution(target, p);
        let shift = config.shift(ti);
        let mut made = 0;
        let mut post = 0;
        while made < config.samples_per_target {
            let label = rng.categorical(&dist);
            let cue = (label + p - shift) % p;
            let site = if rng.bernoulli(config.visual_cue_fraction) {
                CueSite::Image
            } else {
                CueSite::Text
            };
            let text = make_text(config, &mut rng, (site == CueSite::Text).then_some(cue));
            let images = if rng.bernoulli(config.multi_image_fraction) {
                2 + rng.below(2)
            } else {
                1
            };
            let images = images.min(config.samples_per_target - made);
            let post_id = format!("{target}{post:05}");
            for k in 0..images {
                let id = if images > 1 {
                    format!("{post_id}_{k}")
                } else {
                    post_id.clone()
                };
                let image = make_image(config, &mut rng, (site == CueSite::Image).then_some(cue));
                out.push(Generated {
                    sample: Sample {
                        image_path: format!("images/{id}.ppm"),
                        id,
                        target: target.clone(),
                        text: text.clone(),
                        label: labels.name(label).to_string(),
                        cot_text: None,
                        split: None,
                    },
                    image,
                    cue,
                    site,
                });
            }
            made += images;
            post += 1;
        }
    }
    manifest.samples = out.iter().map(|g| g.sample.clone()).collect();
    Ok((manifest, out))
}

/// Writes `manifest.jsonl` and `images/*.ppm` under `dir`.
pub fn generate_synthetic(config: &SyntheticConfig, dir: &Path) -> Result<DatasetManifest> {
    let (mut manifest, generated) = generate_samples(config)?;
    std::fs::create_dir_all(dir.join("images"))?;
    for g in &generated {
        save_image(&g.image, &dir.join(&g.sample.image_path))?;
    }
    manifest.root = dir.to_path_buf();
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn make_text(config: &SyntheticConfig, rng: &mut Rng, cue: Option<usize>) -> String {
    let (lo, hi) = config.text_words;
    let n = lo + rng.below(hi - lo + 1);
    let mut words: Vec<&str> = (0..n)
        .map(|_| FILLER_WORDS[rng.below(FILLER_WORDS.len())])
        .collect();
    if let Some(c) = cue {
        let w = CUE_WORDS[c][rng.below(CUE_WORDS[c].len())];
        words.insert(rng.below(words.len() + 1), w);
    }
    words.join(" ")
}

fn make_image(config: &SyntheticConfig, rng: &mut Rng, cue: Option<usize>) -> ImageTensor {
    let s = config.image_size;
    let data = (0..s * s * 3)
        .map(|_| (0.5 + config.noise * (2.0 * rng.uniform() - 1.0)) as f32)
        .collect();
    let mut img = ImageTensor::new(s, s, data).expect("size");
    if let Some(c) = cue {
        let cells = s / config.glyph_size;
        let (gy, gx) = (
            rng.below(cells) * config.glyph_size,
            rng.below(cells) * config.glyph_size,
        );
        for y in gy..gy + config.glyph_size {
            for x in gx..gx + config.glyph_size {
                img.set_pixel(y, x, GLYPH_COLORS[c]);
            }
        }
    }
    img
}

/// The cue class planted in `text`, if any.
pub fn text_cue(text: &str) -> Option<usize> {
    text.split_whitespace()
        .find_map(|w| CUE_WORDS.iter().position(|ws| ws.contains(&w)))
}

/// The glyph class found by exact color lookup, if any.
pub fn image_cue(image: &ImageTensor, tolerance: f32) -> Option<usize> {
    (0..image.height).find_map(|y| {
        (0..image.width).find_map(|x| {
            let px = image.pixel(y, x);
            GLYPH_COLORS
                .iter()
                .position(|c| c.iter().zip(&px).all(|(a, b)| (a - b).abs() <= tolerance))
        })
    })
}
