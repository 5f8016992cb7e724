use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{FusionMode, FusionShape};
use crate::nn::StackShape;
use crate::text::{PromptMode, Template, TextEncoderShape};
use crate::vision::{DepthMode, PromptInit, VisionShape};

/// Which visual prompt serves a target that has none of its own.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroShotPrompt {
    /// Unseen targets are an error.
    #[default]
    Off,
    /// Elementwise mean of the trained targets' prompts.
    Mean,
    /// A shared prompt trained by substituting it for the target's prompt
    /// with probability `generic_prompt_rate`.
    Generic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub text_width: usize,
    pub vision_width: usize,
    pub hidden: usize,
    pub text_layers: usize,
    pub vision_layers: usize,
    pub text_heads: usize,
    pub vision_heads: usize,
    pub text_ffn: usize,
    pub vision_ffn: usize,
    pub max_len: usize,
    pub image_size: usize,
    pub patch: usize,
    pub classes: usize,
    /// Visual prompt length λ; 0 disables visual prompts.
    pub prompt_tokens: usize,
    pub template: Template,
    /// `false` assembles the text without a prompt (`m = 0`).
    pub textual_prompt: bool,
    pub prompt_mode: PromptMode,
    pub depth: DepthMode,
    pub prompt_init: PromptInit,
    pub fusion: FusionMode,
    /// Train only prompts, projections and the head.
    pub freeze_backbone: bool,
    pub zero_shot_prompt: ZeroShotPrompt,
    pub generic_prompt_rate: f64,
    /// Skip the vision branch entirely (its projection sees zeros).
    pub text_only: bool,
    pub vocab_min_freq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_width: 64,
            vision_width: 64,
            hidden: 64,
            text_layers: 4,
            vision_layers: 4,
            text_heads: 4,
            vision_heads: 4,
            text_ffn: 128,
            vision_ffn: 128,
            max_len: 64,
            image_size: 32,
            patch: 8,
            classes: 3,
            prompt_tokens: 7,
            template: Template::Statement,
            textual_prompt: true,
            prompt_mode: PromptMode::Fixed,
            depth: DepthMode::Shallow,
            prompt_init: PromptInit::TruncatedNormal,
            fusion: FusionMode::Concat,
            freeze_backbone: false,
            zero_shot_prompt: ZeroShotPrompt::Off,
            generic_prompt_rate: 0.2,
            text_only: false,
            vocab_min_freq: 1,
        }
    }
}

impl ModelConfig {
    /// Two layers of width 32 per encoder, λ = 3.
    pub fn tiny() -> Self {
        Self {
            text_width: 32,
            vision_width: 32,
            hidden: 32,
            text_layers: 2,
            vision_layers: 2,
            text_heads: 2,
            vision_heads: 2,
            text_ffn: 64,
            vision_ffn: 64,
            max_len: 24,
            prompt_tokens: 3,
            ..Self::default()
        }
    }

    pub fn text_stack(&self) -> StackShape {
        StackShape {
            width: self.text_width,
            layers: self.text_layers,
            heads: self.text_heads,
            ffn: self.text_ffn,
        }
    }

    pub fn vision_stack(&self) -> StackShape {
        StackShape {
            width: self.vision_width,
            layers: self.vision_layers,
            heads: self.vision_heads,
            ffn: self.vision_ffn,
        }
    }

    pub fn text_shape(&self, vocab_size: usize) -> TextEncoderShape {
        TextEncoderShape {
            vocab_size,
            max_len: self.max_len,
            stack: self.text_stack(),
        }
    }

    pub fn vision_shape(&self) -> VisionShape {
        VisionShape {
            height: self.image_size,
            width: self.image_size,
            patch: self.patch,
            stack: self.vision_stack(),
        }
    }

    pub fn fusion_shape(&self) -> FusionShape {
        FusionShape {
            text_width: self.text_width,
            vision_width: self.vision_width,
            hidden: self.hidden,
            classes: self.classes,
            mode: self.fusion,
        }
    }

    pub fn uses_visual_prompts(&self) -> bool {
        self.prompt_tokens > 0 && !self.text_only
    }

    pub fn validate(&self) -> Result<()> {
        self.text_stack().validate("text encoder")?;
        self.vision_stack().validate("vision encoder")?;
        self.vision_shape().patches()?;
        if self.hidden == 0 || self.classes < 2 {
            return Err(Error::Config(
                "hidden must be positive and classes at least 2".into(),
            ));
        }
        if self.max_len < 4 {
            return Err(Error::Config("max_len must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.generic_prompt_rate) {
            return Err(Error::Config(
                "generic_prompt_rate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a dev improvement; 0 never stops early.
    pub patience: usize,
    /// Stop once dev macro-F1 reaches this value.
    pub target_dev_f1: Option<f64>,
    pub seed: u64,
    /// Fixed reduction order for per-sample gradients. Results do not depend on the thread count.
    pub deterministic: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            batch_size: 16,
            patience: 6,
            target_dev_f1: None,
            seed: 0,
            deterministic: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "lr, batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
