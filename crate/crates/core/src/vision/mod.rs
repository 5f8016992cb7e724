//! Patches, per-target visual prompts and the prompted vision encoder.

mod encoder;
mod image;
mod prompt;

pub use encoder::{
    embed_patches, encode_image, init_vision_encoder, vision_param_names, VisionShape,
};
pub use image::{patch_count, patchify, unpatchify, ImageTensor};
pub use prompt::{init_visual_prompts, visual_param_name, DepthMode, PromptInit, VisualPromptBank};
