use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, StackShape};
use crate::tensor::{Graph, ParamStore, Rng, Scalar, Var};

use super::image::patch_count;
use super::prompt::DepthMode;

pub const PREFIX: &str = "vision";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionShape {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stack: StackShape,
}

impl VisionShape {
    pub fn patches(&self) -> Result<usize> {
        patch_count(self.height, self.width, self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Layer-1 sequence length `1 + λ + r`.
    pub fn sequence_len(&self, prompt_len: usize) -> Result<usize> {
        Ok(1 + prompt_len + self.patches()?)
    }
}

/// `E` (`l²·3 × d`), position table (`(r+1) × d`, slot 0 for the cls token) and the cls token.
pub fn init_vision_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    shape: &VisionShape,
    rng: &mut Rng,
) -> Result<()> {
    let r = shape.patches()?;
    let d = shape.stack.width;
    let bound = (6.0 / (shape.patch_len() + d) as f64).sqrt();
    store.insert(
        format!("{PREFIX}.patch_emb"),
        rng.uniform_tensor(&[shape.patch_len(), d], bound)
            .with_grad(true),
    );
    store.insert(
        format!("{PREFIX}.pos_emb"),
        rng.normal_tensor(&[r + 1, d], 0.02).with_grad(true),
    );
    store.insert(
        format!("{PREFIX}.cls"),
        rng.normal_tensor(&[1, d], 0.02).with_grad(true),
    );
    nn::init_stack(store, PREFIX, shape.stack, rng);
    Ok(())
}

pub fn vision_param_names(shape: &VisionShape) -> Vec<String> {
    let mut names = vec![
        format!("{PREFIX}.patch_emb"),
        format!("{PREFIX}.pos_emb"),
        format!("{PREFIX}.cls"),
    ];
    names.extend(nn::stack_param_names(PREFIX, shape.stack));
    names
}

/// `V⁰ = P·E + E_pos[1..]`, shape `r × d`.
pub fn embed_patches<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    patches: Var,
) -> Result<Var> {
    let e = g.param(store, &format!("{PREFIX}.patch_emb"))?;
    let v = g.matmul(patches, e)?;
    let r = g.shape(v)[0];
    let pos = g.param(store, &format!("{PREFIX}.pos_emb"))?;
    if g.shape(pos)[0] != r + 1 {
        return Err(Error::Shape {
            op: "patch positions",
            lhs: g.shape(pos).to_vec(),
            rhs: vec![r + 1],
        });
    }
    let pos = g.slice_rows(pos, 1, r)?;
    g.add(v, pos)
}

/// Runs the vision stack over `[cls; prompts; V⁰]` and returns the final cls row (`1 × d`).
///
/// `prompts` is `λ × d` (shallow) or `N × λ × d` (deep); `None` or `λ = 0` is the
/// unprompted encoder.
pub fn encode_image<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    v0: Var,
    prompts: Option<Var>,
    depth: DepthMode,
    stack: StackShape,
) -> Result<Var> {
    let d = stack.width;
    let (length, per_layer) = match prompts {
        None => (0, None),
        Some(p) => {
            let shape = g.shape(p).to_vec();
            let ok = match depth {
                DepthMode::Shallow => shape.len() == 2 && shape[1] == d,
                DepthMode::Deep => shape.len() == 3 && shape[0] == stack.layers && shape[2] == d,
            };
            if !ok {
                return Err(Error::Shape {
                    op: "visual prompt",
                    lhs: shape,
                    rhs: vec![stack.layers, d],
                });
            }
            let length = shape[shape.len() - 2];
            (length, (length > 0).then_some(p))
        }
    };
    let cls = g.param(store, &format!("{PREFIX}.cls"))?;
    let pos = g.param(store, &format!("{PREFIX}.pos_emb"))?;
    let pos0 = g.slice_rows(pos, 0, 1)?;
    let cls = g.add(cls, pos0)?;
    let r = g.shape(v0)[0];

    let layer_prompt = |g: &mut Graph<'a, T>, p: Var, k: usize| match depth {
        DepthMode::Shallow => Ok(p),
        DepthMode::Deep => g.slice_rows(p, k * length, length),
    };
    let mut x = match per_layer {
        Some(p) => {
            let p0 = layer_prompt(g, p, 0)?;
            g.concat_rows(&[cls, p0, v0])?
        }
        None => g.concat_rows(&[cls, v0])?,
    };
    for k in 0..stack.layers {
        if let (Some(p), DepthMode::Deep, true) = (per_layer, depth, k > 0) {
            let pk = layer_prompt(g, p, k)?;
            let head = g.slice_rows(x, 0, 1)?;
            let tail = g.slice_rows(x, 1 + length, r)?;
            x = g.concat_rows(&[head, pk, tail])?;
        }
        x = nn::block(
            g,
            store,
            &format!("{PREFIX}.layer{k}"),
            x,
            stack.heads,
            None,
        )?;
        debug_assert_eq!(g.shape(x)[0], 1 + length + r);
    }
    let x = nn::layer_norm(g, store, &format!("{PREFIX}.ln_f"), x)?;
    g.slice_rows(x, 0, 1)
}
