use tmpt::data::{generate_samples, Generated, SyntheticConfig};
use tmpt::model::{Model, ModelConfig, ModelSpec, Prepared, TrainConfig, ZeroShotPrompt};
use tmpt::text::TargetRegistry;
use tmpt::train::{evaluate, mean_loss, train, Ablation};

fn synthetic(n: usize, seed: u64) -> (tmpt::data::DatasetManifest, Vec<Generated>) {
    generate_samples(&SyntheticConfig {
        samples_per_target: n,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn setup(config: ModelConfig, n: usize, seed: u64) -> (ModelSpec, Vec<Prepared<f32>>) {
    let (m, gen) = synthetic(n, seed);
    let texts: Vec<String> = m.samples.iter().map(|s| s.text.clone()).collect();
    let spec = ModelSpec::build(
        config,
        TargetRegistry::builtin(),
        m.labels.clone(),
        m.targets.clone(),
        &texts,
    )
    .unwrap();
    let items = gen
        .iter()
        .map(|g| {
            spec.prepare_with_image(
                &g.sample,
                Some(&g.image),
                m.labels.index(&g.sample.label).unwrap(),
            )
            .unwrap()
        })
        .collect();
    (spec, items)
}

#[test]
fn initial_loss_is_near_uniform() {
    let (spec, items) = setup(ModelConfig::tiny(), 40, 3);
    let model = Model::<f32>::new(spec, 0).unwrap();
    let l = mean_loss(&model, &items).unwrap();
    assert!((l - 3f64.ln()).abs() < 0.1, "initial loss {l}");
}

#[test]
fn overfits_a_small_batch() {
    let (spec, items) = setup(ModelConfig::tiny(), 16, 5);
    assert_eq!(items.len(), 32);
    let model = Model::<f32>::new(spec, 1).unwrap();
    let tc = TrainConfig {
        lr: 3e-3,
        epochs: 200,
        batch_size: 32,
        patience: 0,
        ..Default::default()
    };
    let (model, log) = train(model, &tc, &items, &items).unwrap();
    let reached = log.loss_curve.iter().any(|&l| l < 0.1);
    assert!(reached, "loss curve {:?}", log.loss_curve);
    assert_eq!(evaluate(&model, &items).unwrap().aggregate, 1.0);
}

#[test]
fn training_is_deterministic() {
    let (spec, items) = setup(ModelConfig::tiny(), 24, 7);
    let (tr, dev) = items.split_at(32);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 11,
        ..Default::default()
    };
    let a = train(Model::<f32>::new(spec.clone(), 2).unwrap(), &tc, tr, dev).unwrap();
    let b = train(Model::<f32>::new(spec.clone(), 2).unwrap(), &tc, tr, dev).unwrap();
    assert_eq!(a.0.params, b.0.params);
    assert_eq!(a.1.loss_curve, b.1.loss_curve);
    let threaded = TrainConfig {
        threads: 2,
        ..tc.clone()
    };
    let c = train(Model::<f32>::new(spec, 2).unwrap(), &threaded, tr, dev).unwrap();
    assert_eq!(a.0.params, c.0.params);
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let (spec, items) = setup(ModelConfig::tiny(), 10, 9);
    let model = Model::<f32>::new(spec, 4).unwrap();
    let before = model.params.clone();
    let r1 = evaluate(&model, &items).unwrap();
    let r2 = evaluate(&model, &items).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(model.params, before);
    assert_eq!(r1.per_target.len(), 2);
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let (spec, items) = setup(ModelConfig::tiny(), 10, 12);
    let model = Model::<f32>::new(spec, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path, serde_json::json!({"note": "x"})).unwrap();
    let (back, extra) = Model::<f32>::load(&path).unwrap();
    assert_eq!(extra["note"], "x");
    assert_eq!(back.params, model.params);
    assert_eq!(back.spec, model.spec);
    assert_eq!(
        back.predict(&items).unwrap(),
        model.predict(&items).unwrap()
    );
}

#[test]
fn baseline_drops_exactly_the_prompt_parameters() {
    let full = ModelConfig::tiny();
    let (spec_full, _) = setup(full.clone(), 10, 1);
    let (spec_base, _) = setup(Ablation::Baseline.apply(&full), 10, 1);
    assert_eq!(spec_full.vocab, spec_base.vocab);
    let m_full = Model::<f32>::new(spec_full, 0).unwrap();
    let m_base = Model::<f32>::new(spec_base, 0).unwrap();
    assert_eq!(
        m_full.prompt_param_count(),
        2 * full.prompt_tokens * full.vision_width
    );
    assert_eq!(m_base.prompt_param_count(), 0);
    assert_eq!(
        m_base.param_count(),
        m_full.param_count() - m_full.prompt_param_count()
    );
}

#[test]
fn no_textual_prompt_gives_bare_input() {
    let cfg = Ablation::NoTextualPrompt.apply(&ModelConfig::tiny());
    let (_, items) = setup(cfg, 10, 2);
    for it in &items {
        assert_eq!(it.prompt.len(), 0);
        let n = it.input.text_len;
        assert_eq!(it.input.unpadded_len(), n + 3);
    }
}

#[test]
fn unseen_target_needs_a_zero_shot_fallback() {
    let (mut spec, items) = setup(ModelConfig::tiny(), 6, 4);
    spec.targets = vec!["DT".into()];
    let strict = Model::<f32>::new(spec.clone(), 3).unwrap();
    assert!(!strict.params.contains("vprompt.JB"));
    let err = strict.predict(&items).unwrap_err();
    assert!(err.to_string().contains("JB"), "{err}");

    spec.config.zero_shot_prompt = ZeroShotPrompt::Mean;
    let mean = Model::<f32>::new(spec.clone(), 3).unwrap();
    assert_eq!(mean.predict(&items).unwrap().len(), items.len());

    spec.config.zero_shot_prompt = ZeroShotPrompt::Generic;
    let generic = Model::<f32>::new(spec, 3).unwrap();
    assert!(generic.params.contains("vprompt.__generic__"));
    assert_eq!(generic.predict(&items).unwrap().len(), items.len());
}
