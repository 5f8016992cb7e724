//! Layers shared by the text and vision encoders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Rng, Scalar, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Width and depth of a pre-norm transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackShape {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl StackShape {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.width == 0 || self.layers == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::Config(format!("{what}: all sizes must be positive")));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{what}: head count {} does not divide width {}",
                self.heads, self.width
            )));
        }
        Ok(())
    }
}

/// Xavier-uniform weight (`out × in`) plus zero bias.
pub fn init_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    out: usize,
    inp: usize,
    rng: &mut Rng,
) {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    store.insert(
        format!("{prefix}.w"),
        rng.uniform_tensor(&[out, inp], bound).with_grad(true),
    );
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[out]).with_grad(true));
}

/// Xavier-uniform weight only.
pub fn init_weight<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    out: usize,
    inp: usize,
    rng: &mut Rng,
) {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    store.insert(
        format!("{prefix}.w"),
        rng.uniform_tensor(&[out, inp], bound).with_grad(true),
    );
}

pub fn init_layer_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize) {
    store.insert(
        format!("{prefix}.g"),
        Tensor::vector(vec![T::one(); d]).with_grad(true),
    );
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d]).with_grad(true));
}

/// `x · Wᵀ + b`
pub fn linear<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.matmul_nt(x, w)?;
    g.add_row(y, b)
}

/// `x · Wᵀ`
pub fn linear_no_bias<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    g.matmul_nt(x, w)
}

pub fn layer_norm<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.g"))?;
    let beta = g.param(store, &format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta, T::lit(LN_EPS))
}

pub fn init_stack<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    shape: StackShape,
    rng: &mut Rng,
) {
    let d = shape.width;
    for layer in 0..shape.layers {
        let p = format!("{prefix}.layer{layer}");
        init_layer_norm(store, &format!("{p}.ln1"), d);
        for proj in ["q", "k", "v", "o"] {
            if proj == "k" {
                // a key bias only shifts each score row by a constant
                init_weight(store, &format!("{p}.attn.k"), d, d, rng);
            } else {
                init_linear(store, &format!("{p}.attn.{proj}"), d, d, rng);
            }
        }
        init_layer_norm(store, &format!("{p}.ln2"), d);
        init_linear(store, &format!("{p}.ffn.up"), shape.ffn, d, rng);
        init_linear(store, &format!("{p}.ffn.down"), d, shape.ffn, rng);
    }
    init_layer_norm(store, &format!("{prefix}.ln_f"), d);
}

/// Multi-head self-attention over the rows of `x`. Keys with `keep[j] == false`
/// receive exactly zero attention weight.
pub fn self_attention<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    keep: Option<&[bool]>,
) -> Result<Var> {
    let d = *g.shape(x).last().expect("matrix input");
    let dh = d / heads;
    let q = linear(g, store, &format!("{prefix}.q"), x)?;
    let k = linear_no_bias(g, store, &format!("{prefix}.k"), x)?;
    let v = linear(g, store, &format!("{prefix}.v"), x)?;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let probs = g.softmax_masked(scores, keep.map(<[bool]>::to_vec));
        ctx.push(g.matmul(probs, vh)?);
    }
    let merged = if heads == 1 {
        ctx[0]
    } else {
        g.concat_cols(&ctx)?
    };
    linear(g, store, &format!("{prefix}.o"), merged)
}

/// One pre-norm block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
pub fn block<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    keep: Option<&[bool]>,
) -> Result<Var> {
    let h = layer_norm(g, store, &format!("{prefix}.ln1"), x)?;
    let a = self_attention(g, store, &format!("{prefix}.attn"), h, heads, keep)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, store, &format!("{prefix}.ln2"), x)?;
    let h = linear(g, store, &format!("{prefix}.ffn.up"), h)?;
    let h = g.gelu(h);
    let h = linear(g, store, &format!("{prefix}.ffn.down"), h)?;
    g.add(x, h)
}

/// Names of every parameter owned by a stack, for freezing and counting.
pub fn stack_param_names(prefix: &str, shape: StackShape) -> Vec<String> {
    let mut names = Vec::new();
    for layer in 0..shape.layers {
        let p = format!("{prefix}.layer{layer}");
        for part in ["ln1", "ln2"] {
            names.push(format!("{p}.{part}.g"));
            names.push(format!("{p}.{part}.b"));
        }
        for proj in ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down"] {
            names.push(format!("{p}.{proj}.w"));
            if proj != "attn.k" {
                names.push(format!("{p}.{proj}.b"));
            }
        }
    }
    names.push(format!("{prefix}.ln_f.g"));
    names.push(format!("{prefix}.ln_f.b"));
    names
}
