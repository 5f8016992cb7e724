use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMode {
    /// Prompts enter at the first layer and propagate.
    #[default]
    Shallow,
    /// Every layer gets its own prompts, replacing the prompt rows.
    Deep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptInit {
    /// Normal(0, 0.02) resampled beyond two standard deviations.
    #[default]
    TruncatedNormal,
    /// Uniform in `±sqrt(6 / (λ + d))`.
    UniformFan,
}

pub fn visual_param_name(target: &str) -> String {
    format!("vprompt.{target}")
}

/// Per-target visual prompts: `λ × d` (shallow) or `N × λ × d` (deep).
#[derive(Clone, Debug, PartialEq)]
pub struct VisualPromptBank<T> {
    pub length: usize,
    pub width: usize,
    pub layers: usize,
    pub depth: DepthMode,
    pub init: PromptInit,
    pub prompts: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> VisualPromptBank<T> {
    pub fn shape(&self) -> Vec<usize> {
        match self.depth {
            DepthMode::Shallow => vec![self.length, self.width],
            DepthMode::Deep => vec![self.layers, self.length, self.width],
        }
    }

    /// Trainable entries per target.
    pub fn per_target_numel(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn get(&self, target: &str) -> Result<&Tensor<T>> {
        self.prompts
            .get(target)
            .ok_or_else(|| Error::UnknownTarget {
                target: target.to_string(),
                registered: self.prompts.keys().cloned().collect(),
            })
    }

    /// Moves the prompts into `store` as `vprompt.<target>`. An empty bank (λ = 0)
    /// installs nothing.
    pub fn install(self, store: &mut ParamStore<T>) {
        if self.length == 0 {
            return;
        }
        for (target, t) in self.prompts {
            store.insert(visual_param_name(&target), t.with_grad(true));
        }
    }

    /// Elementwise mean over the given targets' prompts.
    pub fn mean_of(store: &ParamStore<T>, targets: &[String]) -> Result<Tensor<T>> {
        let first = store.get(&visual_param_name(
            targets
                .first()
                .ok_or_else(|| Error::Invalid("no targets to average".into()))?,
        ))?;
        let mut acc = vec![0.0f64; first.numel()];
        for t in targets {
            let p = store.get(&visual_param_name(t))?;
            for (a, v) in acc.iter_mut().zip(p.data()) {
                *a += v.as_f64();
            }
        }
        let n = targets.len() as f64;
        Tensor::new(
            first.shape().to_vec(),
            acc.into_iter().map(|a| T::lit(a / n)).collect(),
        )
    }
}

pub fn init_visual_prompts<T: Scalar>(
    targets: &[String],
    length: usize,
    width: usize,
    layers: usize,
    depth: DepthMode,
    init: PromptInit,
    rng: &mut Rng,
) -> VisualPromptBank<T> {
    let mut bank = VisualPromptBank {
        length,
        width,
        layers,
        depth,
        init,
        prompts: BTreeMap::new(),
    };
    let shape = bank.shape();
    for target in targets {
        let t = match init {
            PromptInit::TruncatedNormal => rng.truncated_normal_tensor(&shape, 0.02),
            PromptInit::UniformFan => {
                let bound = (6.0 / (length + width).max(1) as f64).sqrt();
                rng.uniform_tensor(&shape, bound)
            }
        };
        bank.prompts.insert(target.clone(), t);
    }
    bank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets() -> Vec<String> {
        vec!["DT".into(), "JB".into()]
    }

    #[test]
    fn zero_length_is_empty() {
        let bank = init_visual_prompts::<f32>(
            &targets(),
            0,
            16,
            2,
            DepthMode::Shallow,
            PromptInit::default(),
            &mut Rng::new(0),
        );
        assert!(bank.prompts.values().all(|t| t.numel() == 0));
        let mut store = ParamStore::new();
        bank.install(&mut store);
        assert_eq!(store.len(), 0);
    }

    #[test]
    fn shallow_and_deep_counts() {
        let shallow = init_visual_prompts::<f32>(
            &targets(),
            7,
            64,
            12,
            DepthMode::Shallow,
            PromptInit::default(),
            &mut Rng::new(0),
        );
        assert_eq!(shallow.get("DT").unwrap().shape(), &[7, 64]);
        assert_eq!(shallow.per_target_numel(), 7 * 64);
        let deep = init_visual_prompts::<f32>(
            &targets(),
            7,
            64,
            12,
            DepthMode::Deep,
            PromptInit::default(),
            &mut Rng::new(0),
        );
        assert_eq!(deep.per_target_numel(), 12 * 7 * 64);
    }

    #[test]
    fn draws_are_independent_and_bounded() {
        let bank = init_visual_prompts::<f64>(
            &targets(),
            5,
            8,
            1,
            DepthMode::Shallow,
            PromptInit::TruncatedNormal,
            &mut Rng::new(1),
        );
        let (a, b) = (bank.get("DT").unwrap(), bank.get("JB").unwrap());
        assert_ne!(a.data(), b.data());
        assert!(a.data().iter().all(|v| v.abs() <= 0.04));
        let fan = init_visual_prompts::<f64>(
            &targets(),
            5,
            8,
            1,
            DepthMode::Shallow,
            PromptInit::UniformFan,
            &mut Rng::new(1),
        );
        let bound = (6.0f64 / 13.0).sqrt();
        assert!(fan
            .get("DT")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
        assert!(bank.get("XX").is_err());
    }

    #[test]
    fn mean_of_prompts() {
        let bank = init_visual_prompts::<f64>(
            &targets(),
            2,
            3,
            1,
            DepthMode::Shallow,
            PromptInit::TruncatedNormal,
            &mut Rng::new(2),
        );
        let expect: Vec<f64> = bank
            .get("DT")
            .unwrap()
            .data()
            .iter()
            .zip(bank.get("JB").unwrap().data())
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        let mut store = ParamStore::new();
        bank.install(&mut store);
        let m = VisualPromptBank::mean_of(&store, &targets()).unwrap();
        for (x, y) in m.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
