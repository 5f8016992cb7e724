use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::model::{
    by_target, Model, ModelSpec, Prepared, TrainConfig, VisualSource, ZeroShotPrompt,
    GENERIC_TARGET,
};
use crate::tensor::{derive_seed, Graph, ParamStore, Rng, Scalar};
use crate::vision::visual_param_name;

use super::optim::Adam;

/// Per-target macro-F1 and their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_target: BTreeMap<String, f64>,
    pub aggregate: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub loss_curve: Vec<f64>,
    pub dev_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_dev: f64,
    pub epochs_run: usize,
    pub seconds: f64,
}

pub fn evaluate<T: Scalar + Send + Sync>(
    model: &Model<T>,
    items: &[Prepared<T>],
) -> Result<EvalResult> {
    if items.is_empty() {
        return Err(Error::Invalid("empty evaluation split".into()));
    }
    let preds = model.predict(items)?;
    let label_set: Vec<usize> = (0..model.spec.labels.len()).collect();
    let mut per_target = BTreeMap::new();
    for (target, idx) in by_target(items) {
        let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let g: Vec<usize> = idx.iter().map(|&i| items[i].label).collect();
        per_target.insert(target, macro_f1(&p, &g, &label_set)?);
    }
    let aggregate = per_target.values().sum::<f64>() / per_target.len() as f64;
    Ok(EvalResult {
        per_target,
        aggregate,
        samples: items.len(),
    })
}

/// Mean cross-entropy of the current parameters over `items`.
pub fn mean_loss<T: Scalar>(model: &Model<T>, items: &[Prepared<T>]) -> Result<f64> {
    let mean = model.spec.mean_visual_prompt(&model.params)?;
    let mut total = 0.0;
    for item in items {
        let src = model
            .spec
            .visual_source(&model.params, &item.target, mean.as_ref())?;
        let mut g = Graph::new();
        let logits = model.spec.logits(&mut g, &model.params, item, &src)?;
        let l = g.cross_entropy(logits, &[item.label])?;
        total += g.value(l)[0].as_f64();
    }
    Ok(total / items.len() as f64)
}

type Grads<T> = Vec<(String, Vec<T>)>;

fn sample_grads<T: Scalar>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    item: &Prepared<T>,
    src: &VisualSource<'_, T>,
) -> Result<(f64, Grads<T>)> {
    let mut g = Graph::new();
    let logits = spec.logits(&mut g, store, item, src)?;
    let loss = g.cross_entropy(logits, &[item.label])?;
    let lv = g.value(loss)[0].as_f64();
    if !lv.is_finite() {
        return Err(Error::NonFinite {
            value: lv,
            context: format!("sample {} (target {})", item.id, item.target),
        });
    }
    g.backward(loss)?;
    let grads = g
        .param_vars()
        .filter_map(|(name, v)| g.grad(v).map(|gr| (name.to_string(), gr.to_vec())))
        .collect();
    Ok((lv, grads))
}

fn training_source<T: Scalar>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    target: &str,
    rng: &mut Rng,
) -> Result<VisualSource<'static, T>> {
    let c = &spec.config;
    if !c.uses_visual_prompts() {
        return Ok(VisualSource::None);
    }
    if c.zero_shot_prompt == ZeroShotPrompt::Generic && rng.bernoulli(c.generic_prompt_rate) {
        return Ok(VisualSource::Param(visual_param_name(GENERIC_TARGET)));
    }
    let own = visual_param_name(target);
    if !store.contains(&own) {
        return Err(Error::UnknownTarget {
            target: target.to_string(),
            registered: spec.targets.clone(),
        });
    }
    Ok(VisualSource::Param(own))
}

/// Mini-batch Adam on cross-entropy with best-dev-epoch selection.
///
/// Per-sample gradients may be computed in parallel; they are summed in
/// sample order, so results do not depend on the thread count.
pub fn train<T: Scalar + Send + Sync>(
    mut model: Model<T>,
    tc: &TrainConfig,
    train: &[Prepared<T>],
    dev: &[Prepared<T>],
) -> Result<(Model<T>, TrainLog)> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("empty training split".into()));
    }
    if dev.is_empty() {
        return Err(Error::Invalid("empty dev split".into()));
    }
    let start = Instant::now();
    let mut log = TrainLog {
        initial_loss: mean_loss(&model, train)?,
        best_dev: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut adam = Adam::new(tc.lr, tc.beta1, tc.beta2, tc.eps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.params.clone();
    let mut stale = 0;

    for epoch in 0..tc.epochs {
        let mut rng = Rng::new(derive_seed(tc.seed, 100 + epoch as u64));
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let sources: Vec<VisualSource<'static, T>> = batch
                .iter()
                .map(|&i| training_source(&model.spec, &model.params, &train[i].target, &mut rng))
                .collect::<Result<_>>()?;
            let spec = &model.spec;
            let store = &model.params;
            let work = |(&i, src): (&usize, &VisualSource<'static, T>)| {
                sample_grads(spec, store, &train[i], src)
            };
            let results: Vec<(f64, Grads<T>)> = if tc.threads > 1 {
                batch
                    .par_iter()
                    .zip(sources.par_iter())
                    .map(work)
                    .collect::<Result<_>>()
            } else {
                batch
                    .iter()
                    .zip(sources.iter())
                    .map(work)
                    .collect::<Result<_>>()
            }
            .map_err(|e| match e {
                Error::NonFinite { value, context } => Error::NonFinite {
                    value,
                    context: format!("epoch {epoch}: {context}"),
                },
                other => other,
            })?;
            let scale = T::lit(1.0 / batch.len() as f64);
            let mut sum: BTreeMap<String, Vec<T>> = BTreeMap::new();
            for (l, grads) in results {
                epoch_loss += l;
                for (name, g) in grads {
                    let acc = sum.entry(name).or_insert_with(|| vec![T::zero(); g.len()]);
                    for (a, x) in acc.iter_mut().zip(g) {
                        *a += x * scale;
                    }
                }
            }
            adam.step(&mut model.params, &sum);
        }
        log.loss_curve.push(epoch_loss / train.len() as f64);
        let dev_f1 = evaluate(&model, dev)?.aggregate;
        log.dev_curve.push(dev_f1);
        log.epochs_run = epoch + 1;
        if dev_f1 > log.best_dev {
            log.best_dev = dev_f1;
            log.best_epoch = epoch;
            best = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if tc.target_dev_f1.is_some_and(|t| log.best_dev >= t)
            || (tc.patience > 0 && stale >= tc.patience)
        {
            break;
        }
    }
    model.params = best;
    log.seconds = start.elapsed().as_secs_f64();
    Ok((model, log))
}
