//! Tokenization, targeted textual prompts, input layout and the text encoder.

mod encoder;
mod input;
mod prompt;
mod vocab;

pub use encoder::{
    encode_text, encode_text_cls, init_text_encoder, text_param_names, TextEncoderShape,
    TextEncoding,
};
pub use input::{assemble_text_input, TextInput};
pub use prompt::{
    build_textual_prompt, soft_param_name, PromptMode, TargetInfo, TargetRegistry,
    TargetedTextualPrompt, Template,
};
pub use vocab::{build_vocab, tokenize, Vocab};
