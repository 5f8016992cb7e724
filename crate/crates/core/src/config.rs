//! The experiment config file (TOML).
//!
//! ```toml
//! [model]        # ModelConfig
//! [train]        # TrainConfig
//! [synthetic]    # SyntheticConfig, used by generate-data
//! [data]
//! manifest = "data/manifest.jsonl"
//! split = "in-target"          # in-target | zero-shot | median
//! [experiment]
//! seeds = 5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::tensor::Stencil;
use crate::text::TargetRegistry;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    InTarget,
    ZeroShot,
    /// In-target splits scored by a probe; the median-closest is kept.
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Target registry file; the built-in twelve targets when absent.
    pub registry: Option<PathBuf>,
    pub split: SplitMode,
    pub ratios: [f64; 3],
    pub held_out: Vec<String>,
    pub median_candidates: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            registry: None,
            split: SplitMode::InTarget,
            ratios: [0.7, 0.1, 0.2],
            held_out: Vec::new(),
            median_candidates: 20,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: usize,
    pub master_seed: u64,
    pub sweep: Vec<usize>,
    pub gradcheck_threshold: f64,
    /// Coordinates checked per parameter group; 0 checks all.
    pub gradcheck_coords: usize,
    pub gradcheck_step: f64,
    pub gradcheck_stencil: Stencil,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            master_seed: 0,
            sweep: vec![3, 5, 7, 9],
            gradcheck_threshold: 1e-5,
            gradcheck_coords: 24,
            gradcheck_step: 3e-4,
            gradcheck_stencil: Stencil::FivePoint,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.data.manifest, &mut c.data.registry]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn registry(&self) -> Result<TargetRegistry> {
        match &self.data.registry {
            Some(p) => TargetRegistry::load(p),
            None => Ok(TargetRegistry::builtin()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
        assert!(n >= 2);
    }

    #[test]
    fn roundtrip() {
        let mut c = RunConfig {
            model: ModelConfig::tiny(),
            ..Default::default()
        };
        c.data.split = SplitMode::ZeroShot;
        c.data.held_out = vec!["JB".into()];
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn sections_and_errors() {
        let c =
            RunConfig::parse("[model]\nprompt_tokens = 0\n[data]\nsplit = \"median\"\n").unwrap();
        assert_eq!(c.model.prompt_tokens, 0);
        assert_eq!(c.data.split, SplitMode::Median);
        assert!(RunConfig::parse("[model]\ntext_heads = 3\n").is_err());
        assert!(RunConfig::parse("[bogus]\n").is_err());
    }
}
