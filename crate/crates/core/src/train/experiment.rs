use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Split, SplitProbe};
use crate::error::{Error, Result};
use crate::model::{config_hash, Model, ModelConfig, ModelSpec, Prepared, TrainConfig};
use crate::tensor::derive_seed;
use crate::text::TargetRegistry;

use super::fit::{evaluate, train, EvalResult, TrainLog};

/// A split manifest plus the registry that names its targets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub registry: TargetRegistry,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, registry: TargetRegistry) -> Result<Self> {
        for t in &manifest.targets {
            registry.get(t)?;
        }
        for s in Split::ALL {
            if manifest.split_len(s) == 0 {
                return Err(Error::Invalid(format!(
                    "split `{s}` is empty; run a split first"
                )));
            }
        }
        Ok(Self { manifest, registry })
    }

    pub fn train_targets(&self) -> Vec<String> {
        self.manifest
            .split(Split::Train)
            .map(|s| s.target.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn spec(&self, config: &ModelConfig) -> Result<ModelSpec> {
        let texts: Vec<String> = self
            .manifest
            .split(Split::Train)
            .map(|s| s.text.clone())
            .collect();
        ModelSpec::build(
            config.clone(),
            self.registry.clone(),
            self.manifest.labels.clone(),
            self.train_targets(),
            &texts,
        )
    }

    pub fn prepare(&self, spec: &ModelSpec, split: Split) -> Result<Vec<Prepared<f32>>> {
        spec.prepare(&self.manifest, self.manifest.split(split))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub test: EvalResult,
    pub log: TrainLog,
    pub param_count: usize,
    pub prompt_param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedRun>,
    pub failures: Vec<SeedFailure>,
    /// Mean over successful seeds of the cross-target aggregate.
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
    pub per_target_mean: BTreeMap<String, f64>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn scores(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test.aggregate).collect()
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `n` seeds derived from `master`; identical across invocations.
pub fn derive_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(master, i)).collect()
}

pub struct PreparedSplits {
    pub spec: ModelSpec,
    pub train: Vec<Prepared<f32>>,
    pub dev: Vec<Prepared<f32>>,
    pub test: Vec<Prepared<f32>>,
}

pub fn prepare_all(data: &Dataset, config: &ModelConfig) -> Result<PreparedSplits> {
    let spec = data.spec(config)?;
    Ok(PreparedSplits {
        train: data.prepare(&spec, Split::Train)?,
        dev: data.prepare(&spec, Split::Dev)?,
        test: data.prepare(&spec, Split::Test)?,
        spec,
    })
}

/// One training run; returns the trained model as well.
pub fn run_seed(
    prep: &PreparedSplits,
    tc: &TrainConfig,
    seed: u64,
) -> Result<(Model<f32>, SeedRun)> {
    let model = Model::<f32>::new(prep.spec.clone(), seed)?;
    let tc = TrainConfig { seed, ..tc.clone() };
    let (model, log) = train(model, &tc, &prep.train, &prep.dev)?;
    let test = evaluate(&model, &prep.test)?;
    let run = SeedRun {
        seed,
        test,
        log,
        param_count: model.param_count(),
        prompt_param_count: model.prompt_param_count(),
    };
    Ok((model, run))
}

/// Trains and tests once per derived seed. Failed seeds are recorded and
/// excluded from the statistics.
pub fn run_averaged(
    name: &str,
    data: &Dataset,
    config: &ModelConfig,
    tc: &TrainConfig,
    n_seeds: usize,
    master_seed: u64,
) -> Result<RunReport> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let start = Instant::now();
    let prep = prepare_all(data, config)?;
    let seeds = derive_seeds(master_seed, n_seeds);
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &seeds {
        match run_seed(&prep, tc, seed) {
            Ok((_, run)) => runs.push(run),
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let (mean, std) = mean_std(&runs.iter().map(|r| r.test.aggregate).collect::<Vec<_>>());
    let mut per_target_mean = BTreeMap::new();
    if let Some(first) = runs.first() {
        for t in first.test.per_target.keys() {
            let xs: Vec<f64> = runs.iter().map(|r| r.test.per_target[t]).collect();
            per_target_mean.insert(t.clone(), mean_std(&xs).0);
        }
    }
    Ok(RunReport {
        name: name.to_string(),
        config_hash: config_hash(&(config, tc)),
        config: config.clone(),
        train: tc.clone(),
        seeds,
        runs,
        failures,
        mean,
        std,
        per_target_mean,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoTextualPrompt,
    NoVisualPrompt,
    /// Both switches: no target conditioning anywhere.
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [
        Ablation::NoTextualPrompt,
        Ablation::NoVisualPrompt,
        Ablation::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoTextualPrompt => "no-textual-prompt",
            Ablation::NoVisualPrompt => "no-visual-prompt",
            Ablation::Baseline => "baseline",
        }
    }

    /// The base config with only this ablation's switches changed.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        if matches!(self, Ablation::NoTextualPrompt | Ablation::Baseline) {
            c.textual_prompt = false;
        }
        if matches!(self, Ablation::NoVisualPrompt | Ablation::Baseline) {
            c.prompt_tokens = 0;
        }
        c
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

pub fn ablate(
    data: &Dataset,
    base: &ModelConfig,
    which: Ablation,
    tc: &TrainConfig,
    n_seeds: usize,
    master_seed: u64,
) -> Result<RunReport> {
    run_averaged(
        which.name(),
        data,
        &which.apply(base),
        tc,
        n_seeds,
        master_seed,
    )
}

pub fn baseline_no_prompt(
    data: &Dataset,
    base: &ModelConfig,
    tc: &TrainConfig,
    n_seeds: usize,
    master_seed: u64,
) -> Result<RunReport> {
    ablate(data, base, Ablation::Baseline, tc, n_seeds, master_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub prompt_tokens: usize,
    pub param_count: usize,
    pub prompt_param_count: usize,
    pub report: RunReport,
}

/// One averaged run per λ, all with the same seeds.
pub fn sweep_prompt_tokens(
    data: &Dataset,
    base: &ModelConfig,
    values: &[usize],
    tc: &TrainConfig,
    n_seeds: usize,
    master_seed: u64,
) -> Result<Vec<SweepEntry>> {
    if values.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    values
        .iter()
        .map(|&lambda| {
            let config = ModelConfig {
                prompt_tokens: lambda,
                ..base.clone()
            };
            let report = run_averaged(
                &format!("lambda-{lambda}"),
                data,
                &config,
                tc,
                n_seeds,
                master_seed,
            )?;
            let (param_count, prompt_param_count) = match report.runs.first() {
                Some(r) => (r.param_count, r.prompt_param_count),
                None => {
                    let spec = data.spec(&config)?;
                    let m = Model::<f32>::new(spec, 0)?;
                    (m.param_count(), m.prompt_param_count())
                }
            };
            Ok(SweepEntry {
                prompt_tokens: lambda,
                param_count,
                prompt_param_count,
                report,
            })
        })
        .collect()
}

/// Scores a candidate split by briefly training a text-only model and
/// reporting its test aggregate.
pub struct TextOnlyProbe {
    pub registry: TargetRegistry,
    pub config: ModelConfig,
    pub train: TrainConfig,
}

impl TextOnlyProbe {
    pub fn new(registry: TargetRegistry, base: &ModelConfig, train: &TrainConfig) -> Self {
        Self {
            registry,
            config: ModelConfig {
                text_only: true,
                prompt_tokens: 0,
                ..base.clone()
            },
            train: TrainConfig {
                epochs: train.epochs.min(3),
                patience: 0,
                ..train.clone()
            },
        }
    }
}

impl SplitProbe for TextOnlyProbe {
    fn score(&mut self, index: usize, split: &DatasetManifest) -> Result<f64> {
        let data = Dataset::new(split.clone(), self.registry.clone())?;
        let prep = prepare_all(&data, &self.config)?;
        let (_, run) = run_seed(
            &prep,
            &self.train,
            derive_seed(self.train.seed, index as u64),
        )?;
        Ok(run.test.aggregate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn seed_derivation_is_stable() {
        assert_eq!(derive_seeds(7, 5), derive_seeds(7, 5));
        assert_eq!(derive_seeds(7, 3)[..], derive_seeds(7, 5)[..3]);
    }

    #[test]
    fn ablations_are_config_deltas() {
        let base = ModelConfig::tiny();
        let a = Ablation::NoTextualPrompt.apply(&base);
        assert!(!a.textual_prompt);
        assert_eq!(
            ModelConfig {
                textual_prompt: true,
                ..a
            },
            base
        );
        let b = Ablation::NoVisualPrompt.apply(&base);
        assert_eq!(b.prompt_tokens, 0);
        assert_eq!(
            ModelConfig {
                prompt_tokens: base.prompt_tokens,
                ..b
            },
            base
        );
        let both = Ablation::Baseline.apply(&base);
        assert_eq!(
            both,
            Ablation::NoVisualPrompt.apply(&Ablation::NoTextualPrompt.apply(&base))
        );
        assert_ne!(config_hash(&a), config_hash(&base));
    }
}
