use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::rng::Rng;
use super::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
    FivePoint,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub stencil: Stencil,
    /// Check at most this many coordinates per parameter: the largest
    /// analytic gradients first, then a seeded random sample. `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            stencil: Stencil::ThreePoint,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupError {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Step halvings forced by LeakyReLU kinks, summed over coordinates.
    pub kink_retries: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

fn eval<T, F>(f: &F, params: &ParamStore<T>) -> Result<(f64, u64)>
where
    T: Scalar,
    F: for<'a> Fn(&'a ParamStore<T>) -> Result<(Graph<'a, T>, Var)>,
{
    let (g, loss) = f(params)?;
    let v = g.value(loss)[0].as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            value: v,
            context: "grad_check perturbed loss".into(),
        });
    }
    Ok((v, g.kink_signature()))
}

/// Most step halvings tried when a stencil straddles a LeakyReLU kink.
const MAX_HALVINGS: usize = 8;

/// Compares tape gradients of the scalar built by `f` against central
/// differences, for every trainable entry in `params`.
///
/// Relative error per coordinate is `|a - n| / (|a| + |n| + 1e-12)`. When a
/// stencil point changes the sign of some LeakyReLU input, the difference
/// would mix two linear pieces, so the step is halved for that coordinate.
pub fn grad_check<T, F>(
    f: F,
    params: &ParamStore<T>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'a> Fn(&'a ParamStore<T>) -> Result<(Graph<'a, T>, Var)>,
{
    if opts.step <= 0.0 {
        return Err(Error::Invalid("grad_check step must be positive".into()));
    }
    let (analytic, loss, base_sig) = {
        let (mut g, loss) = f(params)?;
        let lv = g.value(loss)[0].as_f64();
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                value: lv,
                context: "grad_check base loss".into(),
            });
        }
        let sig = g.kink_signature();
        g.backward(loss)?;
        let grads: BTreeMap<String, Vec<f64>> = g
            .param_vars()
            .filter_map(|(name, v)| {
                g.grad(v)
                    .map(|gr| (name.to_string(), gr.iter().map(|x| x.as_f64()).collect()))
            })
            .collect();
        (grads, lv, sig)
    };

    let mut work = params.clone();
    let mut rng = Rng::new(opts.seed);
    let mut groups = Vec::new();
    let names: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(n, _)| n.to_string())
        .collect();

    for name in names {
        let numel = params.get(&name)?.numel();
        let zeros = vec![0.0; numel];
        let grad = analytic.get(&name).unwrap_or(&zeros);
        let coords = pick_coords(grad, opts.max_coords, &mut rng);

        let mut worst = GroupError {
            name: name.clone(),
            numel,
            checked: coords.len(),
            max_rel_error: f64::NEG_INFINITY,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            kink_retries: 0,
        };
        for &i in &coords {
            let orig = work.get(&name)?.data()[i];
            let at = |offset: f64, work: &mut ParamStore<T>| -> Result<(f64, u64)> {
                work.get_mut(&name)?.data_mut()[i] = T::lit(orig.as_f64() + offset);
                let v = eval(&f, work);
                work.get_mut(&name)?.data_mut()[i] = orig;
                v
            };
            let mut h = opts.step;
            let mut halvings = 0;
            let numeric = loop {
                let offsets: &[f64] = match opts.stencil {
                    Stencil::ThreePoint => &[1.0, -1.0],
                    Stencil::FivePoint => &[2.0, 1.0, -1.0, -2.0],
                };
                let mut vals = Vec::with_capacity(offsets.len());
                let mut smooth = true;
                for &k in offsets {
                    let (v, sig) = at(k * h, &mut work)?;
                    smooth &= sig == base_sig;
                    vals.push(v);
                }
                if smooth || halvings >= MAX_HALVINGS {
                    break match opts.stencil {
                        Stencil::ThreePoint => (vals[0] - vals[1]) / (2.0 * h),
                        Stencil::FivePoint => {
                            (8.0 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12.0 * h)
                        }
                    };
                }
                h /= 2.0;
                halvings += 1;
                worst.kink_retries += 1;
            };
            let err = relative_error(grad[i], numeric);
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = grad[i];
                worst.numeric = numeric;
            }
        }
        worst.max_rel_error = worst.max_rel_error.max(0.0);
        groups.push(worst);
    }

    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_error,
        loss,
    })
}

fn pick_coords(grad: &[f64], max: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    let n = grad.len();
    match max {
        Some(k) if k < n => {
            let mut by_mag: Vec<usize> = (0..n).collect();
            by_mag.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
            let top = k.div_ceil(2);
            let mut chosen: Vec<usize> = by_mag[..top].to_vec();
            let mut rest = by_mag[top..].to_vec();
            rng.shuffle(&mut rest);
            chosen.extend(rest.into_iter().take(k - top));
            chosen.sort_unstable();
            chosen
        }
        _ => (0..n).collect(),
    }
}
