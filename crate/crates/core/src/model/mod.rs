//! The assembled stance model: text and vision encoders, prompts, fusion and head.

mod config;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{config_hash, ModelConfig, TrainConfig, ZeroShotPrompt};

use crate::data::{load_image, DatasetManifest, LabelSet, Sample};
use crate::error::{Error, Result};
use crate::fusion::{classify, fuse, fusion_param_names, init_fusion, project_modalities};
use crate::tensor::{derive_seed, Checkpoint, Graph, ParamStore, Rng, Scalar, Tensor, Var};
use crate::text::{
    assemble_text_input, build_textual_prompt, build_vocab, encode_text_cls, init_text_encoder,
    soft_param_name, text_param_names, tokenize, PromptMode, TargetRegistry, TargetedTextualPrompt,
    TextInput, Vocab,
};
use crate::vision::{
    embed_patches, encode_image, init_vision_encoder, init_visual_prompts, patchify,
    vision_param_names, visual_param_name, ImageTensor, VisualPromptBank,
};

/// Target key of the shared prompt used for unseen targets.
pub const GENERIC_TARGET: &str = "__generic__";

/// Everything about a model except its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub registry: TargetRegistry,
    pub labels: LabelSet,
    /// Targets that own trained prompts.
    pub targets: Vec<String>,
}

/// A sample ready for the forward pass.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub id: String,
    pub target: String,
    pub input: TextInput,
    pub prompt: TargetedTextualPrompt,
    pub patches: Arc<Tensor<T>>,
    pub label: usize,
}

/// Visual prompt used for one forward pass.
#[derive(Clone, Debug)]
pub enum VisualSource<'p, T> {
    /// The target's own parameter (or the generic one).
    Param(String),
    /// A fixed matrix, e.g. the mean of trained prompts.
    Fixed(&'p Tensor<T>),
    None,
}

impl ModelSpec {
    /// Vocabulary from the training texts plus every registered prompt.
    pub fn build(
        config: ModelConfig,
        registry: TargetRegistry,
        labels: LabelSet,
        targets: Vec<String>,
        train_texts: &[String],
    ) -> Result<Self> {
        config.validate()?;
        if config.classes != labels.len() {
            return Err(Error::Config(format!(
                "config has {} classes but the label set {labels} has {}",
                config.classes,
                labels.len()
            )));
        }
        for t in &targets {
            registry.get(t)?;
        }
        let mut corpus: Vec<String> = train_texts.to_vec();
        corpus.extend(registry.prompt_corpus());
        let vocab = build_vocab(&corpus, config.vocab_min_freq)?;
        Ok(Self {
            config,
            vocab,
            registry,
            labels,
            targets,
        })
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let c = &self.config;
        let mut rng = Rng::new(derive_seed(seed, 1));
        let mut store = ParamStore::new();
        init_text_encoder(&mut store, &c.text_shape(self.vocab.len()), &mut rng);
        if !c.text_only {
            init_vision_encoder(&mut store, &c.vision_shape(), &mut rng)?;
        }
        init_fusion(&mut store, &c.fusion_shape(), &mut rng);
        if c.uses_visual_prompts() {
            let mut keys = self.targets.clone();
            if c.zero_shot_prompt == ZeroShotPrompt::Generic {
                keys.push(GENERIC_TARGET.to_string());
            }
            init_visual_prompts::<T>(
                &keys,
                c.prompt_tokens,
                c.vision_width,
                c.vision_layers,
                c.depth,
                c.prompt_init,
                &mut rng,
            )
            .install(&mut store);
        }
        if c.textual_prompt && c.prompt_mode == PromptMode::TunedSoft {
            for t in &self.targets {
                let p = self.textual_prompt(t)?;
                let table = store.get("text.tok_emb")?;
                let rows: Vec<T> = p
                    .tokens
                    .iter()
                    .flat_map(|&i| table.row(i).to_vec())
                    .collect();
                let soft = Tensor::new(vec![p.len(), c.text_width], rows)?.with_grad(true);
                store.insert(soft_param_name(t), soft);
            }
        }
        if c.freeze_backbone {
            let mut names = text_param_names(&c.text_shape(self.vocab.len()));
            if !c.text_only {
                names.extend(vision_param_names(&c.vision_shape()));
            }
            for n in names {
                store.set_trainable(&n, false)?;
            }
        }
        Ok(store)
    }

    /// Fixed or tuned prompt for `target`; targets without trained soft
    /// embeddings fall back to their fixed tokens. Empty when textual
    /// prompting is off.
    pub fn textual_prompt(&self, target: &str) -> Result<TargetedTextualPrompt> {
        if !self.config.textual_prompt {
            self.registry.get(target)?;
            return Ok(TargetedTextualPrompt::empty(target));
        }
        let mut p =
            build_textual_prompt(&self.registry, &self.vocab, target, self.config.template)?;
        if self.config.prompt_mode == PromptMode::TunedSoft
            && self.targets.iter().any(|t| t == target)
        {
            p.mode = PromptMode::TunedSoft;
        }
        Ok(p)
    }

    pub fn prepare_sample<T: Scalar>(
        &self,
        manifest: &DatasetManifest,
        sample: &Sample,
    ) -> Result<Prepared<T>> {
        let image = if self.config.text_only {
            None
        } else {
            Some(load_image(&manifest.image_path(sample))?)
        };
        self.prepare_with_image(
            sample,
            image.as_ref(),
            manifest.labels.index(&sample.label)?,
        )
    }

    /// Like [`ModelSpec::prepare_sample`] with the image already in memory.
    pub fn prepare_with_image<T: Scalar>(
        &self,
        sample: &Sample,
        image: Option<&ImageTensor>,
        label: usize,
    ) -> Result<Prepared<T>> {
        let mut words = tokenize(&sample.text);
        if let Some(cot) = &sample.cot_text {
            words.extend(tokenize(cot));
        }
        let ids: Vec<usize> = words.iter().map(|w| self.vocab.id(w)).collect();
        let prompt = self.textual_prompt(&sample.target)?;
        let input = assemble_text_input(&prompt.tokens, &ids, self.config.max_len)?;
        let patches = match (self.config.text_only, image) {
            (true, _) => Tensor::zeros(&[0, 0]),
            (false, None) => {
                return Err(Error::Invalid(format!("sample {} has no image", sample.id)))
            }
            (false, Some(image)) => {
                if image.height != self.config.image_size || image.width != self.config.image_size {
                    return Err(Error::Config(format!(
                        "image {} is {}x{}, config expects {}",
                        sample.image_path, image.height, image.width, self.config.image_size
                    )));
                }
                patchify(image, self.config.patch)?
            }
        };
        if label >= self.labels.len() {
            return Err(Error::Invalid(format!("label index {label} out of range")));
        }
        Ok(Prepared {
            id: sample.id.clone(),
            target: sample.target.clone(),
            input,
            prompt,
            patches: Arc::new(patches),
            label,
        })
    }

    pub fn prepare<'s, T: Scalar>(
        &self,
        manifest: &DatasetManifest,
        samples: impl Iterator<Item = &'s Sample>,
    ) -> Result<Vec<Prepared<T>>> {
        if manifest.labels != self.labels {
            return Err(Error::Config(format!(
                "manifest labels {} do not match model labels {}",
                manifest.labels, self.labels
            )));
        }
        samples.map(|s| self.prepare_sample(manifest, s)).collect()
    }

    /// Default visual prompt source for `target`.
    pub fn visual_source<'p, T: Scalar>(
        &self,
        store: &ParamStore<T>,
        target: &str,
        fallback: Option<&'p Tensor<T>>,
    ) -> Result<VisualSource<'p, T>> {
        if !self.config.uses_visual_prompts() {
            return Ok(VisualSource::None);
        }
        let own = visual_param_name(target);
        if store.contains(&own) {
            return Ok(VisualSource::Param(own));
        }
        match (self.config.zero_shot_prompt, fallback) {
            (ZeroShotPrompt::Off, _) => Err(Error::UnknownTarget {
                target: target.to_string(),
                registered: self.targets.clone(),
            }),
            (ZeroShotPrompt::Generic, _) => {
                Ok(VisualSource::Param(visual_param_name(GENERIC_TARGET)))
            }
            (ZeroShotPrompt::Mean, Some(t)) => Ok(VisualSource::Fixed(t)),
            (ZeroShotPrompt::Mean, None) => Err(Error::UnknownTarget {
                target: target.to_string(),
                registered: self.targets.clone(),
            }),
        }
    }

    /// Mean of the trained targets' visual prompts, for unseen targets.
    pub fn mean_visual_prompt<T: Scalar>(
        &self,
        store: &ParamStore<T>,
    ) -> Result<Option<Tensor<T>>> {
        if !self.config.uses_visual_prompts() || self.targets.is_empty() {
            return Ok(None);
        }
        VisualPromptBank::mean_of(store, &self.targets).map(Some)
    }

    /// Class logits (`1 × d^p`).
    pub fn logits<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        store: &'a ParamStore<T>,
        item: &Prepared<T>,
        visual: &VisualSource<'_, T>,
    ) -> Result<Var> {
        let c = &self.config;
        let text = encode_text_cls(g, store, &item.input, &item.prompt, c.text_stack())?;
        let cls_v = if c.text_only {
            g.constant(Tensor::zeros(&[1, c.vision_width]))
        } else {
            let patches = g.constant((*item.patches).clone());
            let v0 = embed_patches(g, store, patches)?;
            let prompt = match visual {
                VisualSource::Param(name) => Some(g.param(store, name)?),
                VisualSource::Fixed(t) => Some(g.constant((*t).clone())),
                VisualSource::None => None,
            };
            encode_image(g, store, v0, prompt, c.depth, c.vision_stack())?
        };
        let (ht, hv) = project_modalities(g, store, text.cls, cls_v)?;
        let h = fuse(g, store, ht, hv, c.fusion)?;
        classify(g, store, h)
    }

    /// Names of all prompt parameters (visual and tuned textual) in `store`.
    pub fn prompt_param_names<T: Scalar>(store: &ParamStore<T>) -> Vec<String> {
        store
            .names()
            .filter(|n| n.starts_with("vprompt.") || n.starts_with("tprompt."))
            .map(str::to_string)
            .collect()
    }

    pub fn fusion_param_names(&self) -> Vec<String> {
        fusion_param_names(&self.config.fusion_shape())
    }
}

/// Parameters plus the spec that interprets them.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: ModelSpec,
    #[serde(default)]
    extra: serde_json::Value,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = spec.init_params(seed)?;
        Ok(Self { spec, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn prompt_param_count(&self) -> usize {
        ModelSpec::prompt_param_names(&self.params)
            .iter()
            .map(|n| self.params.get(n).map(Tensor::numel).unwrap_or(0))
            .sum()
    }

    /// Predicted class index per item.
    pub fn predict(&self, items: &[Prepared<T>]) -> Result<Vec<usize>> {
        let mean = self.spec.mean_visual_prompt(&self.params)?;
        items
            .iter()
            .map(|item| {
                let src = self
                    .spec
                    .visual_source(&self.params, &item.target, mean.as_ref())?;
                let mut g = Graph::new();
                let logits = self.spec.logits(&mut g, &self.params, item, &src)?;
                Ok(argmax(g.value(logits)))
            })
            .collect()
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = Meta {
            spec: self.spec.clone(),
            extra,
        };
        Checkpoint::new(serde_json::to_value(meta)?, self.params.clone()).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let ck = Checkpoint::<T>::load(path)?;
        let meta: Meta = serde_json::from_value(ck.meta)?;
        let mut spec = meta.spec;
        spec.vocab = spec.vocab.reindex()?;
        Ok((
            Self {
                spec,
                params: ck.params,
            },
            meta.extra,
        ))
    }
}

pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-target groups of item indices, in target order.
pub fn by_target<T>(items: &[Prepared<T>]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        out.entry(it.target.clone()).or_default().push(i);
    }
    out
}
