use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tmpt::config::{RunConfig, SplitMode};
use tmpt::data::{
    generate_synthetic, load_manifest, select_median_split, split_in_target, split_zero_shot, Split,
};
use tmpt::model::Model;
use tmpt::tensor::GradCheckOptions;
use tmpt::train::{
    ablate, evaluate, gradcheck_model, metrics_table, prepare_all, run_averaged, run_seed,
    summary_table, sweep_chart, sweep_prompt_tokens, sweep_table, write_json, write_text, Ablation,
    Dataset, EvalResult, GradCheckSettings, RunReport, SeedRun, SweepEntry, TextOnlyProbe,
};
use tmpt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tmpt",
    version,
    about = "Target-conditioned multimodal stance detection at desk scale"
)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "TMPT_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for per-sample gradients.
    #[arg(long, global = true, env = "TMPT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest.jsonl + images/).
    GenerateData {
        /// Overrides `synthetic.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Assign train/dev/test and write the split manifest.
    Split {
        /// Manifest to read; defaults to `data.manifest` from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// in-target, zero-shot or median; overrides `data.split`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SplitMode>,
    },
    /// Train one model and save its checkpoint.
    Train {
        /// Manifest to read; defaults to `data.manifest` from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to read; defaults to `data.manifest` from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// train, dev or test.
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Full model plus prompt ablations, averaged over seeds.
    Ablate {
        /// Manifest to read; defaults to `data.manifest` from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict to these ablations (no-textual-prompt, no-visual-prompt, baseline).
        #[arg(long = "only", value_delimiter = ',')]
        only: Vec<Ablation>,
        /// Overrides `experiment.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Averaged runs over a list of visual prompt lengths.
    Sweep {
        /// Manifest to read; defaults to `data.manifest` from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated prompt lengths; overrides `experiment.sweep`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Overrides `experiment.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Compare analytic and numeric gradients of the whole model in f64.
    Gradcheck {
        /// Overrides `experiment.gradcheck_threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Collect the JSON results in the output directory into report.md.
    Report,
}

fn parse_mode(s: &str) -> std::result::Result<SplitMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize)]
struct EvalOutput {
    checkpoint: String,
    split: Split,
    result: EvalResult,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.train.threads = t.max(1);
    }
    if cfg.train.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.train.threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;

    match cli.command {
        Command::GenerateData { seed } => {
            if let Some(s) = seed {
                cfg.synthetic.seed = s;
            }
            let m = generate_synthetic(&cfg.synthetic, out)?;
            println!(
                "wrote {} samples to {}",
                m.samples.len(),
                out.join("manifest.jsonl").display()
            );
        }
        Command::Split { manifest, mode } => {
            let src = manifest_path(manifest, &cfg)?;
            let m = load_manifest(&src)?;
            let d = &cfg.data;
            let split = match mode.unwrap_or(d.split) {
                SplitMode::InTarget => split_in_target(&m, d.ratios, d.split_seed)?,
                SplitMode::ZeroShot => split_zero_shot(&m, &d.held_out, d.split_seed)?,
                SplitMode::Median => {
                    let mut probe = TextOnlyProbe::new(cfg.registry()?, &cfg.model, &cfg.train);
                    let sel = select_median_split(
                        &m,
                        d.median_candidates,
                        d.ratios,
                        &mut probe,
                        d.split_seed,
                    )?;
                    let mut csv = String::from("candidate,score\n");
                    for (i, s) in sel.scores.iter().enumerate() {
                        csv.push_str(&format!("{i},{s:.6}\n"));
                    }
                    write_text(&out.join("median_scores.csv"), &csv)?;
                    println!("median {:.6}, kept candidate {}", sel.median, sel.index);
                    sel.manifest
                }
            };
            let split = split.rebase(out)?;
            split.write(&out.join("manifest.jsonl"))?;
            for s in Split::ALL {
                println!("{s}: {}", split.split_len(s));
            }
        }
        Command::Train { manifest, seed } => {
            let data = dataset(manifest, &cfg)?;
            let prep = prepare_all(&data, &cfg.model)?;
            let seed = seed.unwrap_or(cfg.train.seed);
            let (model, run) = run_seed(&prep, &cfg.train, seed)?;
            model.save(&out.join("model.ckpt"), serde_json::to_value(&cfg.train)?)?;
            write_json(&out.join("train.json"), &run)?;
            print_run(&run);
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
        } => {
            let (model, _) = Model::<f32>::load(&checkpoint)?;
            let m = load_manifest(&manifest_path(manifest, &cfg)?)?;
            let items = model.spec.prepare(&m, m.split(split))?;
            let result = evaluate(&model, &items)?;
            let mut csv = String::from("target,macro_f1\n");
            for (t, v) in &result.per_target {
                csv.push_str(&format!("{t},{v:.6}\n"));
            }
            csv.push_str(&format!("ALL,{:.6}\n", result.aggregate));
            write_text(&out.join(format!("eval_{split}.csv")), &csv)?;
            write_json(
                &out.join(format!("eval_{split}.json")),
                &EvalOutput {
                    checkpoint: checkpoint.display().to_string(),
                    split,
                    result,
                },
            )?;
            print!("{csv}");
        }
        Command::Ablate {
            manifest,
            only,
            seeds,
        } => {
            let data = dataset(manifest, &cfg)?;
            let n = seeds.unwrap_or(cfg.experiment.seeds);
            let master = cfg.experiment.master_seed;
            let which = if only.is_empty() {
                Ablation::ALL.to_vec()
            } else {
                only
            };
            let mut reports = vec![run_averaged(
                "full", &data, &cfg.model, &cfg.train, n, master,
            )?];
            println!("{}", summary_line(&reports[0]));
            for a in which {
                reports.push(ablate(&data, &cfg.model, a, &cfg.train, n, master)?);
                println!("{}", summary_line(reports.last().expect("just pushed")));
            }
            write_text(&out.join("metrics.csv"), &metrics_table(&reports)?)?;
            write_text(&out.join("summary.csv"), &summary_table(&reports)?)?;
            write_json(&out.join("runs.json"), &reports)?;
        }
        Command::Sweep {
            manifest,
            values,
            seeds,
        } => {
            let data = dataset(manifest, &cfg)?;
            let values = if values.is_empty() {
                cfg.experiment.sweep.clone()
            } else {
                values
            };
            let n = seeds.unwrap_or(cfg.experiment.seeds);
            let entries = sweep_prompt_tokens(
                &data,
                &cfg.model,
                &values,
                &cfg.train,
                n,
                cfg.experiment.master_seed,
            )?;
            for e in &entries {
                println!(
                    "λ={} params={} {}",
                    e.prompt_tokens,
                    e.param_count,
                    summary_line(&e.report)
                );
            }
            let reports: Vec<RunReport> = entries.iter().map(|e| e.report.clone()).collect();
            write_text(&out.join("sweep.csv"), &sweep_table(&entries)?)?;
            write_text(&out.join("sweep_metrics.csv"), &metrics_table(&reports)?)?;
            write_text(&out.join("sweep.svg"), &sweep_chart(&entries))?;
            write_json(&out.join("sweep.json"), &entries)?;
        }
        Command::Gradcheck { threshold } => {
            let e = &cfg.experiment;
            let settings = GradCheckSettings {
                seed: cfg.train.seed,
                threshold: threshold.unwrap_or(e.gradcheck_threshold),
                options: GradCheckOptions {
                    step: e.gradcheck_step,
                    stencil: e.gradcheck_stencil,
                    max_coords: (e.gradcheck_coords > 0).then_some(e.gradcheck_coords),
                    seed: cfg.train.seed,
                },
                ..Default::default()
            };
            let run = gradcheck_model(&cfg.model, &settings)?;
            write_json(&out.join("gradcheck.json"), &run)?;
            let w = run.report.worst().expect("model has parameters");
            println!(
                "max relative error {:.3e} in {} ({} groups, {:.1}s), threshold {:e}",
                run.report.max_rel_error,
                w.name,
                run.groups.len(),
                run.seconds,
                run.threshold
            );
            if !run.passed() {
                eprintln!("error: {}", run.into_result().unwrap_err());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report => {
            let md = report(out)?;
            write_text(&out.join("report.md"), &md)?;
            print!("{md}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn manifest_path(arg: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    arg.or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| Error::Config("no manifest: pass --manifest or set data.manifest".into()))
}

fn dataset(arg: Option<PathBuf>, cfg: &RunConfig) -> Result<Dataset> {
    Dataset::new(load_manifest(&manifest_path(arg, cfg)?)?, cfg.registry()?)
}

/// Image paths relative to `dir` when the images live below it, absolute otherwise.
fn summary_line(r: &RunReport) -> String {
    format!(
        "{}: {:.4} ± {:.4} over {} seeds ({} failed, {:.0}s)",
        r.name,
        r.mean,
        r.std,
        r.runs.len(),
        r.failures.len(),
        r.wall_clock_s
    )
}

fn print_run(run: &SeedRun) {
    println!(
        "seed {}: test macro-F1 {:.4}, best dev {:.4} at epoch {} of {}, {:.1}s",
        run.seed,
        run.test.aggregate,
        run.log.best_dev,
        run.log.best_epoch + 1,
        run.log.epochs_run,
        run.log.seconds
    );
    for (t, v) in &run.test.per_target {
        println!("  {t}: {v:.4}");
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

fn report(out: &Path) -> Result<String> {
    let mut md = String::from("# Results\n");
    let mut found = false;
    if let Some(g) = read_json::<serde_json::Value>(&out.join("gradcheck.json"))? {
        found = true;
        md.push_str(&format!(
            "\n## Gradient check\n\nmax relative error {:.3e} (threshold {:e})\n",
            g["report"]["max_rel_error"].as_f64().unwrap_or(f64::NAN),
            g["threshold"].as_f64().unwrap_or(f64::NAN),
        ));
    }
    if let Some(run) = read_json::<SeedRun>(&out.join("train.json"))? {
        found = true;
        md.push_str(&format!(
            "\n## Single run\n\nseed {}: test macro-F1 {:.4}, {} parameters ({} in prompts)\n",
            run.seed, run.test.aggregate, run.param_count, run.prompt_param_count
        ));
    }
    if let Some(reports) = read_json::<Vec<RunReport>>(&out.join("runs.json"))? {
        found = true;
        md.push_str("\n## Ablations\n\n| run | mean | std | seeds |\n|---|---|---|---|\n");
        for r in &reports {
            md.push_str(&format!(
                "| {} | {:.4} | {:.4} | {} |\n",
                r.name,
                r.mean,
                r.std,
                r.runs.len()
            ));
        }
    }
    if let Some(entries) = read_json::<Vec<SweepEntry>>(&out.join("sweep.json"))? {
        found = true;
        md.push_str("\n## Prompt length\n\n| λ | params | mean | std |\n|---|---|---|---|\n");
        for e in &entries {
            md.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} |\n",
                e.prompt_tokens, e.param_count, e.report.mean, e.report.std
            ));
        }
    }
    if !found {
        return Err(Error::Invalid(format!(
            "no results found in {}",
            out.display()
        )));
    }
    Ok(md)
}
