use std::time::Instant;

use serde::Serialize;

use crate::data::{generate_samples, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelSpec, Prepared, VisualSource};
use crate::tensor::{
    grad_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Stencil, Var,
};
use crate::text::TargetRegistry;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckRun {
    pub report: GradCheckReport,
    pub threshold: f64,
    pub seconds: f64,
    pub groups: Vec<String>,
}

impl GradCheckRun {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.threshold
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let w = self.report.worst().expect("at least one group");
        Err(Error::GradCheck {
            param: w.name.clone(),
            worst: format!(
                "index {} (analytic {:e}, numeric {:e})",
                w.worst_index, w.analytic, w.numeric
            ),
            error: w.max_rel_error,
            threshold: self.threshold,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckSettings {
    pub samples_per_target: usize,
    pub seed: u64,
    pub threshold: f64,
    pub options: GradCheckOptions,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            samples_per_target: 2,
            seed: 0,
            threshold: 1e-5,
            options: GradCheckOptions {
                step: 3e-4,
                stencil: Stencil::FivePoint,
                max_coords: Some(24),
                seed: 0,
            },
        }
    }
}

/// Checks every trainable group of the assembled model in f64 on a few
/// synthetic samples (two targets), loss = mean cross-entropy.
pub fn gradcheck_model(config: &ModelConfig, settings: &GradCheckSettings) -> Result<GradCheckRun> {
    let start = Instant::now();
    let synth = SyntheticConfig {
        targets: vec!["DT".into(), "JB".into()],
        samples_per_target: settings.samples_per_target,
        image_size: config.image_size,
        glyph_size: config.patch,
        seed: settings.seed,
        ..Default::default()
    };
    let (manifest, generated) = generate_samples(&synth)?;
    let texts: Vec<String> = manifest.samples.iter().map(|s| s.text.clone()).collect();
    let spec = ModelSpec::build(
        config.clone(),
        TargetRegistry::builtin(),
        manifest.labels.clone(),
        manifest.targets.clone(),
        &texts,
    )?;
    let params: ParamStore<f64> = spec.init_params(settings.seed)?;
    let items: Vec<Prepared<f64>> = generated
        .iter()
        .map(|g| {
            spec.prepare_with_image(
                &g.sample,
                Some(&g.image),
                manifest.labels.index(&g.sample.label)?,
            )
        })
        .collect::<Result<_>>()?;
    let sources: Vec<VisualSource<'static, f64>> = items
        .iter()
        .map(|it| spec.visual_source(&params, &it.target, None))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = items.iter().map(|it| it.label).collect();

    let build = hr(|store| {
        let mut g = Graph::new();
        let mut rows = Vec::with_capacity(items.len());
        for (it, src) in items.iter().zip(&sources) {
            rows.push(spec.logits(&mut g, store, it, src)?);
        }
        let logits = g.concat_rows(&rows)?;
        let loss = g.cross_entropy(logits, &labels)?;
        Ok((g, loss))
    });
    let report = grad_check(build, &params, &settings.options)?;
    let groups = report.groups.iter().map(|g| g.name.clone()).collect();
    Ok(GradCheckRun {
        report,
        threshold: settings.threshold,
        seconds: start.elapsed().as_secs_f64(),
        groups,
    })
}

fn hr<F>(f: F) -> F
where
    F: for<'a> Fn(&'a ParamStore<f64>) -> Result<(Graph<'a, f64>, Var)>,
{
    f
}
