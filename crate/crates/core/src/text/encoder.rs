use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, StackShape};
use crate::tensor::{Graph, ParamStore, Rng, Scalar, Var};

use super::input::TextInput;
use super::prompt::TargetedTextualPrompt;

pub const PREFIX: &str = "text";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderShape {
    pub vocab_size: usize,
    pub max_len: usize,
    pub stack: StackShape,
}

pub fn init_text_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    shape: &TextEncoderShape,
    rng: &mut Rng,
) {
    let d = shape.stack.width;
    store.insert(
        format!("{PREFIX}.tok_emb"),
        rng.normal_tensor(&[shape.vocab_size, d], 0.02)
            .with_grad(true),
    );
    store.insert(
        format!("{PREFIX}.pos_emb"),
        rng.normal_tensor(&[shape.max_len, d], 0.02).with_grad(true),
    );
    nn::init_stack(store, PREFIX, shape.stack, rng);
}

pub fn text_param_names(shape: &TextEncoderShape) -> Vec<String> {
    let mut names = vec![format!("{PREFIX}.tok_emb"), format!("{PREFIX}.pos_emb")];
    names.extend(nn::stack_param_names(PREFIX, shape.stack));
    names
}

pub struct TextEncoding {
    /// `[CLS]` output, `1 × d`.
    pub cls: Var,
    /// All positions, `max_len × d` (or the unpadded prefix for [`encode_text_cls`]).
    pub states: Var,
}

fn embed<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    ids: &[usize],
    prompt: &TargetedTextualPrompt,
    prompt_len: usize,
) -> Result<Var> {
    let table = g.param(store, &format!("{PREFIX}.tok_emb"))?;
    let tokens = match prompt.soft_param() {
        Some(name) if prompt_len > 0 => {
            let soft = g.param(store, &name)?;
            if g.shape(soft)[0] != prompt_len {
                return Err(Error::Shape {
                    op: "soft prompt",
                    lhs: g.shape(soft).to_vec(),
                    rhs: vec![prompt_len],
                });
            }
            let head = g.gather(table, &ids[..1])?;
            let tail = g.gather(table, &ids[1 + prompt_len..])?;
            g.concat_rows(&[head, soft, tail])?
        }
        _ => g.gather(table, ids)?,
    };
    let pos_table = g.param(store, &format!("{PREFIX}.pos_emb"))?;
    if ids.len() > g.shape(pos_table)[0] {
        return Err(Error::Invalid(format!(
            "sequence of {} exceeds position table of {}",
            ids.len(),
            g.shape(pos_table)[0]
        )));
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = g.gather(pos_table, &positions)?;
    g.add(tokens, pos)
}

fn run_stack<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    mut x: Var,
    stack: StackShape,
    keep: Option<&[bool]>,
) -> Result<TextEncoding> {
    for layer in 0..stack.layers {
        x = nn::block(
            g,
            store,
            &format!("{PREFIX}.layer{layer}"),
            x,
            stack.heads,
            keep,
        )?;
    }
    let states = nn::layer_norm(g, store, &format!("{PREFIX}.ln_f"), x)?;
    let cls = g.slice_rows(states, 0, 1)?;
    Ok(TextEncoding { cls, states })
}

/// Encodes the full padded input; `[PAD]` keys are masked out of attention.
pub fn encode_text<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    input: &TextInput,
    prompt: &TargetedTextualPrompt,
    stack: StackShape,
) -> Result<TextEncoding> {
    let x = embed(g, store, &input.ids, prompt, input.prompt_len)?;
    run_stack(g, store, x, stack, Some(&input.mask))
}

/// Encodes only the unpadded prefix. Because padded keys get exactly zero
/// weight, the `[CLS]` row is bit-identical to [`encode_text`]'s.
pub fn encode_text_cls<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    input: &TextInput,
    prompt: &TargetedTextualPrompt,
    stack: StackShape,
) -> Result<TextEncoding> {
    let ids = &input.ids[..input.unpadded_len()];
    let x = embed(g, store, ids, prompt, input.prompt_len)?;
    run_stack(g, store, x, stack, None)
}
