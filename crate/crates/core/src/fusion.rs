//! Modality projection, fusion and the stance classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_linear, linear};
use crate::tensor::{Graph, ParamStore, Rng, Scalar, Tensor, Var};

pub const LEAKY_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    Concat,
    /// Single-head attention, each modality (a length-1 sequence) attending to the other.
    CrossAttention,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "cross-attention" => Ok(Self::CrossAttention),
            other => Err(Error::Config(format!(
                "unknown fusion mode `{other}` (concat | cross-attention)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionShape {
    pub text_width: usize,
    pub vision_width: usize,
    pub hidden: usize,
    pub classes: usize,
    pub mode: FusionMode,
}

impl FusionShape {
    /// Classifier input width; `2·d^h` in both modes.
    pub fn head_width(&self) -> usize {
        2 * self.hidden
    }
}

pub fn init_fusion<T: Scalar>(store: &mut ParamStore<T>, shape: &FusionShape, rng: &mut Rng) {
    let h = shape.hidden;
    init_linear(store, "fusion.text", h, shape.text_width, rng);
    init_linear(store, "fusion.vision", h, shape.vision_width, rng);
    if shape.mode == FusionMode::CrossAttention {
        for p in ["q", "k", "v"] {
            init_linear(store, &format!("fusion.xattn.{p}"), h, h, rng);
        }
    }
    store.insert(
        "head.w",
        rng.normal_tensor(&[shape.classes, shape.head_width()], 0.02)
            .with_grad(true),
    );
    store.insert("head.b", Tensor::zeros(&[shape.classes]).with_grad(true));
}

pub fn fusion_param_names(shape: &FusionShape) -> Vec<String> {
    let mut layers = vec!["fusion.text", "fusion.vision"];
    if shape.mode == FusionMode::CrossAttention {
        layers.extend(["fusion.xattn.q", "fusion.xattn.k", "fusion.xattn.v"]);
    }
    layers.push("head");
    layers
        .iter()
        .flat_map(|l| [format!("{l}.w"), format!("{l}.b")])
        .collect()
}

/// `h^X = LeakyReLU(W^X · cls^X + b^X)` for both modalities, each `1 × d^h`.
pub fn project_modalities<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    cls_text: Var,
    cls_vision: Var,
) -> Result<(Var, Var)> {
    let t = linear(g, store, "fusion.text", cls_text)?;
    let t = g.leaky_relu(t, T::lit(LEAKY_ALPHA));
    let v = linear(g, store, "fusion.vision", cls_vision)?;
    let v = g.leaky_relu(v, T::lit(LEAKY_ALPHA));
    Ok((t, v))
}

pub fn fuse<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    h_text: Var,
    h_vision: Var,
    mode: FusionMode,
) -> Result<Var> {
    if g.shape(h_text) != g.shape(h_vision) {
        return Err(Error::Shape {
            op: "fuse",
            lhs: g.shape(h_text).to_vec(),
            rhs: g.shape(h_vision).to_vec(),
        });
    }
    match mode {
        FusionMode::Concat => g.concat_cols(&[h_text, h_vision]),
        FusionMode::CrossAttention => {
            let a_text = attend(g, store, h_text, h_vision)?;
            let a_vision = attend(g, store, h_vision, h_text)?;
            g.concat_cols(&[a_text, a_vision])
        }
    }
}

/// One query row over one key/value row.
fn attend<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    query: Var,
    other: Var,
) -> Result<Var> {
    let h = *g.shape(query).last().expect("row vector");
    let q = linear(g, store, "fusion.xattn.q", query)?;
    let k = linear(g, store, "fusion.xattn.k", other)?;
    let v = linear(g, store, "fusion.xattn.v", other)?;
    let s = g.matmul_nt(q, k)?;
    let s = g.scale(s, T::lit(1.0 / (h as f64).sqrt()));
    let w = g.softmax(s);
    g.matmul(w, v)
}

/// Logits `W^o · h + b^o` (`1 × d^p`); apply softmax for probabilities.
pub fn classify<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    store: &'a ParamStore<T>,
    h: Var,
) -> Result<Var> {
    linear(g, store, "head", h)
}
