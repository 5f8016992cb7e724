//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use tmpt::config::RunConfig;
use tmpt::data::{
    generate_samples, generate_synthetic, select_median_split, split_in_target, split_zero_shot,
    DatasetManifest, LabelScheme, Sample, Split, SyntheticConfig,
};
use tmpt::eval::{cohen_kappa, macro_f1, majority_vote, Vote};
use tmpt::model::{Model, ModelConfig, ModelSpec};
use tmpt::nn::StackShape;
use tmpt::tensor::{Graph, ParamStore, Rng, Tensor};
use tmpt::text::{assemble_text_input, TargetRegistry};
use tmpt::train::{
    ablate, gradcheck_model, run_averaged, sweep_chart, sweep_prompt_tokens, Ablation, Dataset,
    GradCheckSettings,
};
use tmpt::vision::{
    embed_patches, encode_image, init_vision_encoder, init_visual_prompts, DepthMode, PromptInit,
    VisionShape,
};

const F1_EXAMPLE_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-9;
const GRADCHECK_MAX_REL: f64 = 1e-5;
const GRADCHECK_MAX_S: f64 = 60.0;
const FULL_MIN_F1: f64 = 0.90;
const BASELINE_MAX_F1: f64 = 0.60;
const ABLATION_MARGIN: f64 = 0.05;
const END_TO_END_MAX_S: f64 = 15.0 * 60.0;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'a str, Box<dyn FnOnce() -> Outcome>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn tiny_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
    RunConfig::load(&path).expect("configs/tiny.toml loads")
}

fn gradient_fidelity() -> Outcome {
    let cfg = ModelConfig::tiny();
    ensure(
        cfg.text_width == 32
            && cfg.vision_width == 32
            && cfg.text_layers == 2
            && cfg.vision_layers == 2,
        "tiny preset changed",
    )?;
    ensure(
        cfg.prompt_tokens == 3 && cfg.classes == 3,
        "tiny preset changed",
    )?;
    let settings = GradCheckSettings {
        threshold: GRADCHECK_MAX_REL,
        ..Default::default()
    };
    let run = gradcheck_model(&cfg, &settings).map_err(|e| e.to_string())?;
    let spec = ModelSpec::build(
        cfg.clone(),
        TargetRegistry::builtin(),
        LabelScheme::FavorAgainstNeutral.labels(),
        vec!["DT".into(), "JB".into()],
        &[],
    )
    .map_err(|e| e.to_string())?;
    let trainable = spec.init_params::<f64>(0).map_err(|e| e.to_string())?.len();
    ensure(
        run.groups.len() == trainable,
        format!("{} of {trainable} groups checked", run.groups.len()),
    )?;
    ensure(
        run.groups.iter().any(|g| g.starts_with("vprompt.")),
        "visual prompts not checked",
    )?;
    let worst = run.report.worst().expect("groups");
    let msg = format!(
        "max rel error {:.2e} ({}) over {} groups in {:.1}s",
        run.report.max_rel_error,
        worst.name,
        run.groups.len(),
        run.seconds
    );
    ensure(run.report.max_rel_error < GRADCHECK_MAX_REL, msg.clone())?;
    ensure(run.seconds < GRADCHECK_MAX_S, msg.clone())?;
    Ok(msg)
}

fn geometry() -> Outcome {
    let d = 768;
    let layers = 12;
    let stack = StackShape {
        width: d,
        layers,
        heads: 12,
        ffn: 3072,
    };
    let shape = VisionShape {
        height: 224,
        width: 224,
        patch: 16,
        stack,
    };
    let r = shape.patches().map_err(|e| e.to_string())?;
    let seq = shape.sequence_len(7).map_err(|e| e.to_string())?;
    ensure(r == 196, format!("r = {r}"))?;
    ensure(seq == 204, format!("sequence length {seq}"))?;
    let targets = vec!["DT".to_string()];
    let mut rng = Rng::new(0);
    let shallow = init_visual_prompts::<f32>(
        &targets,
        7,
        d,
        layers,
        DepthMode::Shallow,
        PromptInit::TruncatedNormal,
        &mut rng,
    );
    let deep = init_visual_prompts::<f32>(
        &targets,
        7,
        d,
        layers,
        DepthMode::Deep,
        PromptInit::TruncatedNormal,
        &mut rng,
    );
    ensure(shallow.per_target_numel() == 7 * d, "shallow count")?;
    ensure(deep.per_target_numel() == layers * 7 * d, "deep count")?;
    ensure(
        shallow.get("DT").unwrap().numel() == 7 * d,
        "shallow tensor",
    )?;
    ensure(
        deep.get("DT").unwrap().numel() == layers * 7 * d,
        "deep tensor",
    )?;

    // the embedded patch sequence of a real 224x224 image, on a narrow encoder
    let narrow = VisionShape {
        stack: StackShape {
            width: 8,
            layers: 1,
            heads: 1,
            ffn: 8,
        },
        ..shape
    };
    let mut store = ParamStore::<f32>::new();
    init_vision_encoder(&mut store, &narrow, &mut rng).map_err(|e| e.to_string())?;
    let image = tmpt::vision::ImageTensor::filled(224, 224, [0.5, 0.5, 0.5]);
    let patches = tmpt::vision::patchify::<f32>(&image, 16).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let p = g.constant(patches);
    let v0 = embed_patches(&mut g, &store, p).map_err(|e| e.to_string())?;
    ensure(
        g.shape(v0) == [196, 8],
        format!("V0 shape {:?}", g.shape(v0)),
    )?;
    Ok(format!(
        "r=196, layer-1 length 204, per-target prompts {} (shallow) / {} (deep)",
        7 * d,
        layers * 7 * d
    ))
}

fn brute_f1(preds: &[u8], golds: &[u8], labels: u8) -> f64 {
    let mut sum = 0.0;
    for c in 0..labels {
        let mut confusion = [[0u32; 2]; 2];
        for i in 0..preds.len() {
            confusion[usize::from(preds[i] == c)][usize::from(golds[i] == c)] += 1;
        }
        let tp = f64::from(confusion[1][1]);
        let predicted = tp + f64::from(confusion[1][0]);
        let actual = tp + f64::from(confusion[0][1]);
        // F1 = 2tp / (predicted + actual), zero when undefined
        if predicted + actual > 0.0 && tp > 0.0 {
            sum += 2.0 * tp / (predicted + actual);
        }
    }
    sum / f64::from(labels)
}

fn brute_kappa(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    // chance agreement: probability that an independent draw from each rater matches
    let mut chance = 0.0;
    for x in a {
        for y in b {
            if x == y {
                chance += 1.0;
            }
        }
    }
    chance /= n * n;
    if chance == 1.0 {
        return 1.0;
    }
    (agree - chance) / (1.0 - chance)
}

fn metric_oracles() -> Outcome {
    let f1 = macro_f1(
        &["F", "A", "A", "A"],
        &["F", "F", "A", "N"],
        &["F", "A", "N"],
    )
    .unwrap();
    ensure(
        (f1 - 0.3889).abs() < F1_EXAMPLE_TOL,
        format!("macro-F1 example {f1}"),
    )?;
    let k = cohen_kappa(
        &["F", "F", "A", "N"],
        &["F", "A", "A", "N"],
        &["F", "A", "N"],
    )
    .unwrap();
    ensure(
        (k - 0.6364).abs() < F1_EXAMPLE_TOL,
        format!("kappa example {k}"),
    )?;

    let mut rng = Rng::new(2024);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let labels = 2 + rng.below(3) as u8;
        let n = 1 + rng.below(12);
        let a: Vec<u8> = (0..n).map(|_| rng.below(labels as usize) as u8).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.below(labels as usize) as u8).collect();
        let set: Vec<u8> = (0..labels).collect();
        let f = macro_f1(&a, &b, &set).unwrap();
        let k = cohen_kappa(&a, &b, &set).unwrap();
        let (bf, bk) = (brute_f1(&a, &b, labels), brute_kappa(&a, &b));
        let err = (f - bf).abs().max((k - bk).abs());
        ensure(
            err <= ORACLE_TOL,
            format!("case {case}: f1 {f} vs {bf}, kappa {k} vs {bk}"),
        )?;
        worst = worst.max(err);
    }
    Ok(format!(
        "examples 0.3889 / 0.6364 reproduced; 1000 random cases, max deviation {worst:.1e}"
    ))
}

fn vote_oracle(primary: &[u8; 3], extra: Option<&[u8; 3]>) -> Vote<u8> {
    let counts = |vs: &[u8]| -> [usize; 3] {
        let mut c = [0; 3];
        for &v in vs {
            c[v as usize] += 1;
        }
        c
    };
    let c3 = counts(primary);
    if let Some(l) = (0..3u8).find(|&l| c3[l as usize] >= 2) {
        return Vote::Label(l);
    }
    let Some(extra) = extra else {
        return Vote::NeedsEscalation;
    };
    let all: Vec<u8> = primary.iter().chain(extra).copied().collect();
    let c6 = counts(&all);
    let max = *c6.iter().max().unwrap();
    let tops: Vec<u8> = (0..3u8).filter(|&l| c6[l as usize] == max).collect();
    if tops.len() == 1 {
        Vote::Label(tops[0])
    } else {
        Vote::Discard
    }
}

fn annotation() -> Outcome {
    let mut all3 = Vec::new();
    for a in 0..3u8 {
        for b in 0..3u8 {
            for c in 0..3u8 {
                all3.push([a, b, c]);
            }
        }
    }
    let (mut escalated, mut discarded, mut six) = (0, 0, 0);
    for p in &all3 {
        let got = majority_vote(p, None);
        ensure(got == vote_oracle(p, None), format!("{p:?}: {got:?}"))?;
        if got == Vote::NeedsEscalation {
            escalated += 1;
        }
        for e in &all3 {
            six += 1;
            let got = majority_vote(p, Some(e));
            ensure(
                got == vote_oracle(p, Some(e)),
                format!("{p:?}+{e:?}: {got:?}"),
            )?;
            if got == Vote::Discard {
                discarded += 1;
            }
        }
    }
    ensure(escalated == 6, format!("{escalated} escalations"))?;
    ensure(
        majority_vote(&[0u8, 1, 2], Some(&[0, 0, 1])) == Vote::Label(0),
        "worked example",
    )?;
    Ok(format!(
        "27 three-vote and {six} six-vote patterns match; {escalated} escalate, {discarded} discard"
    ))
}

fn singleton_manifest(n: usize) -> DatasetManifest {
    let mut m = DatasetManifest::new(
        "t",
        LabelScheme::FavorAgainstNeutral.labels(),
        vec!["DT".into()],
    );
    for i in 0..n {
        m.samples.push(Sample {
            id: format!("{i}"),
            target: "DT".into(),
            text: "x".into(),
            image_path: format!("{i}.ppm"),
            label: "favor".into(),
            cot_text: None,
            split: None,
        });
    }
    m
}

fn counts(m: &DatasetManifest) -> [usize; 3] {
    Split::ALL.map(|s| m.split_len(s))
}

fn partitions() -> Outcome {
    let ratios = [0.7, 0.1, 0.2];
    let m = singleton_manifest(100);
    let a = split_in_target(&m, ratios, 5).map_err(|e| e.to_string())?;
    ensure(counts(&a) == [70, 10, 20], format!("{:?}", counts(&a)))?;
    let b = split_in_target(&m, ratios, 5).map_err(|e| e.to_string())?;
    ensure(a == b, "same seed gave different splits")?;
    let c = split_in_target(&m, ratios, 6).map_err(|e| e.to_string())?;
    ensure(a != c, "seed has no effect")?;
    let ten = split_in_target(&singleton_manifest(10), ratios, 1).map_err(|e| e.to_string())?;
    ensure(counts(&ten) == [7, 1, 2], format!("{:?}", counts(&ten)))?;

    let (multi, _) = generate_samples(&SyntheticConfig {
        samples_per_target: 120,
        multi_image_fraction: 0.5,
        seed: 3,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let groups: BTreeSet<&str> = multi.samples.iter().map(Sample::group).collect();
    ensure(
        groups.len() < multi.samples.len(),
        "no multi-image posts generated",
    )?;
    let split = split_in_target(&multi, ratios, 9).map_err(|e| e.to_string())?;
    for g in &groups {
        let seen: BTreeSet<Option<Split>> = split
            .samples
            .iter()
            .filter(|s| s.group() == *g)
            .map(|s| s.split)
            .collect();
        ensure(seen.len() == 1, format!("group {g} spans {seen:?}"))?;
    }

    // scripted probes: the returned split is the one scored closest to the median
    let cases: [(&[f64], usize); 4] = [
        (&[0.0, 1.0, 2.0, 3.0, 4.0], 2),
        (&[1.0, 2.0, 8.0, 9.0], 1),
        (&[0.9, 0.1, 0.5, 0.3, 0.7], 2),
        (&[0.42], 0),
    ];
    for (scores, expected) in cases {
        let mut seen = Vec::new();
        let mut probe = |i: usize, s: &DatasetManifest| {
            seen.push(s.clone());
            Ok(scores[i])
        };
        let sel = select_median_split(&m, scores.len(), ratios, &mut probe, 4)
            .map_err(|e| e.to_string())?;
        let med = {
            let mut v = scores.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        };
        let oracle = (0..scores.len())
            .min_by(|&i, &j| {
                (scores[i] - med)
                    .abs()
                    .total_cmp(&(scores[j] - med).abs())
                    .then(i.cmp(&j))
            })
            .unwrap();
        ensure(oracle == expected, "oracle disagrees with hand value")?;
        ensure(
            sel.index == expected,
            format!("{scores:?}: chose {}", sel.index),
        )?;
        ensure(
            sel.manifest == seen[expected],
            "returned manifest is not the scored one",
        )?;
    }

    let (two, _) = generate_samples(&SyntheticConfig {
        samples_per_target: 50,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let zs = split_zero_shot(&two, &["JB".into()], 2).map_err(|e| e.to_string())?;
    for s in &zs.samples {
        let expected_test = s.target == "JB";
        ensure(
            (s.split == Some(Split::Test)) == expected_test,
            format!("{} in {:?}", s.id, s.split),
        )?;
    }
    ensure(
        zs.split_len(Split::Train) + zs.split_len(Split::Dev) == 50,
        "train+dev != DT count",
    )?;
    ensure(zs.split_len(Split::Test) == 50, "test != JB count")?;
    ensure(
        split_zero_shot(&two, &["DT".into(), "JB".into()], 2).is_err(),
        "holding out all targets",
    )?;
    Ok(
        "70/10/20 and 7/1/2 exact, id groups atomic, seeded; median picks 2/1/2/0; zero-shot exact"
            .into(),
    )
}

fn end_to_end(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = tiny_config();
    let synth = SyntheticConfig {
        targets: vec!["DT".into(), "JB".into()],
        samples_per_target: 900,
        visual_cue_fraction: 0.5,
        contradiction: true,
        ..cfg.synthetic.clone()
    };
    let m = generate_synthetic(&synth, dir).map_err(|e| e.to_string())?;
    let ratios = [600.0 / 900.0, 100.0 / 900.0, 200.0 / 900.0];
    let m = split_in_target(&m, ratios, cfg.data.split_seed).map_err(|e| e.to_string())?;
    for t in ["DT", "JB"] {
        let c = Split::ALL.map(|s| m.split(s).filter(|x| x.target == t).count());
        ensure(c == [600, 100, 200], format!("{t}: {c:?}"))?;
    }
    let data = Dataset::new(m, TargetRegistry::builtin()).map_err(|e| e.to_string())?;
    ensure(
        cfg.model == ModelConfig::tiny(),
        "configs/tiny.toml model differs from the tiny preset",
    )?;
    let tc = &cfg.train;
    let full = run_averaged("full", &data, &cfg.model, tc, 5, 0).map_err(|e| e.to_string())?;
    let no_t = ablate(&data, &cfg.model, Ablation::NoTextualPrompt, tc, 5, 0)
        .map_err(|e| e.to_string())?;
    let no_v =
        ablate(&data, &cfg.model, Ablation::NoVisualPrompt, tc, 5, 0).map_err(|e| e.to_string())?;
    let base =
        ablate(&data, &cfg.model, Ablation::Baseline, tc, 5, 0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    for r in [&full, &no_t, &no_v, &base] {
        ensure(
            r.runs.len() == 5,
            format!("{}: {} failures", r.name, r.failures.len()),
        )?;
    }
    let msg = format!(
        "full {:.3}±{:.3}, w/o textual {:.3}, w/o visual {:.3}, baseline {:.3}; {:.0}s",
        full.mean, full.std, no_t.mean, no_v.mean, base.mean, secs
    );
    ensure(full.mean >= FULL_MIN_F1, msg.clone())?;
    ensure(base.mean <= BASELINE_MAX_F1, msg.clone())?;
    ensure(full.mean - no_t.mean >= ABLATION_MARGIN, msg.clone())?;
    ensure(full.mean - no_v.mean >= ABLATION_MARGIN, msg.clone())?;
    ensure(secs < END_TO_END_MAX_S, msg.clone())?;
    Ok(msg)
}

fn ablation_construction() -> Outcome {
    let stack = StackShape {
        width: 16,
        layers: 2,
        heads: 2,
        ffn: 32,
    };
    let shape = VisionShape {
        height: 32,
        width: 32,
        patch: 8,
        stack,
    };
    let mut rng = Rng::new(8);
    let mut store = ParamStore::<f64>::new();
    init_vision_encoder(&mut store, &shape, &mut rng).map_err(|e| e.to_string())?;
    let patches = rng.normal_tensor::<f64>(&[16, 192], 1.0);
    for depth in [DepthMode::Shallow, DepthMode::Deep] {
        let run = |prompt: Option<Tensor<f64>>| {
            let mut g = Graph::new();
            let p = g.constant(patches.clone());
            let v0 = embed_patches(&mut g, &store, p).unwrap();
            let pv = prompt.map(|t| g.constant(t));
            let cls = encode_image(&mut g, &store, v0, pv, depth, stack).unwrap();
            g.value(cls).to_vec()
        };
        let empty = match depth {
            DepthMode::Shallow => Tensor::zeros(&[0, 16]),
            DepthMode::Deep => Tensor::zeros(&[2, 0, 16]),
        };
        let bank = init_visual_prompts::<f64>(
            &["DT".into()],
            0,
            16,
            2,
            depth,
            PromptInit::TruncatedNormal,
            &mut rng,
        );
        let mut installed = store.clone();
        bank.install(&mut installed);
        ensure(installed == store, "λ=0 installed parameters")?;
        let plain = run(None);
        ensure(
            run(Some(empty)) == plain,
            format!("{depth:?}: λ=0 output differs"),
        )?;
    }

    let text: Vec<usize> = (10..22).collect();
    let input = assemble_text_input(&[], &text, 24).map_err(|e| e.to_string())?;
    ensure(
        input.unpadded_len() == text.len() + 3,
        format!("m=0 length {}", input.unpadded_len()),
    )?;

    let base = ModelConfig::tiny();
    let t = Ablation::NoTextualPrompt.apply(&base);
    let v = Ablation::NoVisualPrompt.apply(&base);
    ensure(
        ModelConfig {
            textual_prompt: true,
            ..t
        } == base,
        "w/o textual changes more than one switch",
    )?;
    ensure(
        ModelConfig {
            prompt_tokens: base.prompt_tokens,
            ..v
        } == base,
        "w/o visual changes more than one switch",
    )?;

    let spec = |c: ModelConfig| {
        ModelSpec::build(
            c,
            TargetRegistry::builtin(),
            LabelScheme::FavorAgainstNeutral.labels(),
            vec!["DT".into(), "JB".into()],
            &["some words".to_string()],
        )
        .unwrap()
    };
    let full = Model::<f32>::new(spec(base.clone()), 0).map_err(|e| e.to_string())?;
    let nov = Model::<f32>::new(spec(v), 0).map_err(|e| e.to_string())?;
    ensure(
        nov.param_count() == full.param_count() - 2 * 3 * 32,
        "w/o visual differs by more than the prompts",
    )?;
    let s = spec(t);
    let p = s.textual_prompt("DT").map_err(|e| e.to_string())?;
    ensure(p.is_empty(), "w/o textual still has prompt tokens")?;
    Ok(
        "λ=0 bit-identical (shallow and deep), m=0 length n+3, ablations are single-switch deltas"
            .into(),
    )
}

fn lambda_sweep(dir: &Path) -> Outcome {
    let cfg = tiny_config();
    let m = generate_synthetic(
        &SyntheticConfig {
            samples_per_target: 60,
            seed: 17,
            ..Default::default()
        },
        dir,
    )
    .map_err(|e| e.to_string())?;
    let m = split_in_target(&m, [0.7, 0.1, 0.2], 0).map_err(|e| e.to_string())?;
    let data = Dataset::new(m, TargetRegistry::builtin()).map_err(|e| e.to_string())?;
    let tc = tmpt::model::TrainConfig {
        epochs: 1,
        ..cfg.train.clone()
    };
    let entries = sweep_prompt_tokens(&data, &cfg.model, &[3, 5, 7, 9], &tc, 2, 0)
        .map_err(|e| e.to_string())?;
    ensure(entries.len() == 4, format!("{} entries", entries.len()))?;
    for e in &entries {
        ensure(
            e.report.runs.len() == 2 && e.report.mean.is_finite() && e.report.std.is_finite(),
            format!("λ={} incomplete", e.prompt_tokens),
        )?;
    }
    let counts: Vec<usize> = entries.iter().map(|e| e.param_count).collect();
    ensure(
        counts.windows(2).all(|w| w[0] < w[1]),
        format!("param counts {counts:?}"),
    )?;
    let chart = dir.join("sweep.svg");
    tmpt::train::write_text(&chart, &sweep_chart(&entries)).map_err(|e| e.to_string())?;
    let svg = std::fs::read_to_string(&chart).map_err(|e| e.to_string())?;
    ensure(
        svg.starts_with("<svg") && svg.matches("<circle").count() == 4,
        "chart",
    )?;
    Ok(format!("4 entries, param counts {counts:?}, chart written"))
}

fn cli(out: &Path, config: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_tmpt"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("TMPT_OUT_DIR")
        .env_remove("TMPT_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "tmpt {args:?}: {}",
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    Ok(())
}

fn determinism(dir: &Path) -> Outcome {
    let config = dir.join("det.toml");
    let text = "[model]\ntext_width = 32\nvision_width = 32\nhidden = 32\ntext_layers = 2\nvision_layers = 2\n\
                text_heads = 2\nvision_heads = 2\ntext_ffn = 64\nvision_ffn = 64\nmax_len = 24\nprompt_tokens = 3\n\
                [train]\nepochs = 2\nbatch_size = 8\n[synthetic]\nsamples_per_target = 40\n\
                [data]\nmanifest = \"data/manifest.jsonl\"\n[experiment]\nseeds = 2\nsweep = [1, 2]\n";
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let data = dir.join("data");
    cli(&data, &config, &["generate-data"])?;
    cli(&data, &config, &["split"])?;
    let mut tables: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for rep in 0..2 {
        let out = dir.join(format!("run{rep}"));
        cli(&out, &config, &["ablate", "--only", "baseline"])?;
        cli(&out, &config, &["sweep"])?;
        cli(&out, &config, &["train"])?;
        let ckpt = out.join("model.ckpt");
        cli(
            &out,
            &config,
            &["evaluate", "--checkpoint", ckpt.to_str().unwrap()],
        )?;
        let mut files = Vec::new();
        for name in [
            "metrics.csv",
            "summary.csv",
            "sweep.csv",
            "sweep_metrics.csv",
            "eval_test.csv",
        ] {
            files.push((
                name.to_string(),
                std::fs::read(out.join(name)).map_err(|e| format!("{name}: {e}"))?,
            ));
        }
        tables.push(files);
    }
    for ((name, a), (_, b)) in tables[0].iter().zip(&tables[1]) {
        ensure(a == b, format!("{name} differs between repeats"))?;
        ensure(!a.is_empty(), format!("{name} is empty"))?;
    }
    let regen = dir.join("data2");
    cli(&regen, &config, &["generate-data"])?;
    let m1 = std::fs::read(data.join("images/DT00003.ppm")).map_err(|e| e.to_string())?;
    let m2 = std::fs::read(regen.join("images/DT00003.ppm")).map_err(|e| e.to_string())?;
    ensure(m1 == m2, "regenerated image bytes differ")?;
    Ok(format!(
        "{} metric tables byte-identical across repeated CLI runs",
        tables[0].len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let sub = |name: &str| -> PathBuf {
        let p = tmp.path().join(name);
        std::fs::create_dir_all(&p).expect("mkdir");
        p
    };
    let (e2e, sweep, det) = (sub("e2e"), sub("sweep"), sub("det"));
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("shape and geometry", Box::new(geometry)),
        ("metric oracles", Box::new(metric_oracles)),
        ("annotation votes", Box::new(annotation)),
        ("partition contracts", Box::new(partitions)),
        ("synthetic end-to-end", Box::new(move || end_to_end(&e2e))),
        ("ablation construction", Box::new(ablation_construction)),
        (
            "prompt length sweep",
            Box::new(move || lambda_sweep(&sweep)),
        ),
        ("determinism", Box::new(move || determinism(&det))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
