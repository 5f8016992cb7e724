use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{derive_seed, Rng};

use super::manifest::{DatasetManifest, Split};

/// Floors of `ratio · total`, with the leftover units going to the largest
/// fractional parts (earlier entries win ties).
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let sum: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| r / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Groups of sample indices sharing an id prefix, in first-seen order.
fn groups<'a>(m: &DatasetManifest, members: impl Iterator<Item = usize> + 'a) -> Vec<Vec<usize>> {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in members {
        let g = m.samples[i].group().to_string();
        by.entry(g.clone())
            .or_insert_with(|| {
                order.push(g.clone());
                Vec::new()
            })
            .push(i);
    }
    order.into_iter().map(|g| by.remove(&g).unwrap()).collect()
}

/// Assigns shuffled groups to the split with the largest remaining sample
/// quota. With singleton groups the quotas are met exactly.
fn assign(
    m: &mut DatasetManifest,
    members: Vec<usize>,
    splits: &[Split],
    ratios: &[f64],
    rng: &mut Rng,
    what: &str,
) -> Result<()> {
    let mut gs = groups(m, members.into_iter());
    let live = ratios.iter().filter(|&&r| r > 0.0).count();
    if gs.len() < live {
        return Err(Error::Invalid(format!(
            "{what}: {} id groups cannot fill {live} splits",
            gs.len()
        )));
    }
    let total: usize = gs.iter().map(Vec::len).sum();
    let quota = largest_remainder(total, ratios);
    rng.shuffle(&mut gs);
    let mut filled = vec![0usize; splits.len()];
    for g in gs {
        let k = (0..splits.len())
            .max_by(|&a, &b| {
                let da = quota[a] as i64 - filled[a] as i64;
                let db = quota[b] as i64 - filled[b] as i64;
                da.cmp(&db).then(b.cmp(&a))
            })
            .expect("at least one split");
        filled[k] += g.len();
        for i in g {
            m.samples[i].split = Some(splits[k]);
        }
    }
    Ok(())
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

/// Per-target train/dev/test split; samples sharing an id prefix stay together.
pub fn split_in_target(
    manifest: &DatasetManifest,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    check_ratios(&ratios)?;
    let mut m = manifest.clone();
    for (ti, target) in manifest.targets.iter().enumerate() {
        let members: Vec<usize> = (0..m.samples.len())
            .filter(|&i| m.samples[i].target == *target)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = Rng::new(derive_seed(seed, ti as u64));
        assign(&mut m, members, &Split::ALL, &ratios, &mut rng, target)?;
    }
    Ok(m)
}

/// Held-out targets form the test split; the rest is split 7:1 into train/dev.
pub fn split_zero_shot(
    manifest: &DatasetManifest,
    held_out: &[String],
    seed: u64,
) -> Result<DatasetManifest> {
    if held_out.is_empty() {
        return Err(Error::Config("no held-out targets".into()));
    }
    for t in held_out {
        if !manifest.targets.contains(t) {
            return Err(Error::UnknownTarget {
                target: t.clone(),
                registered: manifest.targets.clone(),
            });
        }
    }
    if manifest.targets.iter().all(|t| held_out.contains(t)) {
        return Err(Error::Config(
            "holding out every target leaves nothing to train on".into(),
        ));
    }
    let mut m = manifest.clone();
    for s in &mut m.samples {
        if held_out.contains(&s.target) {
            s.split = Some(Split::Test);
        }
    }
    for (ti, target) in manifest.targets.iter().enumerate() {
        if held_out.contains(target) {
            continue;
        }
        let members: Vec<usize> = (0..m.samples.len())
            .filter(|&i| m.samples[i].target == *target)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = Rng::new(derive_seed(seed, ti as u64));
        assign(
            &mut m,
            members,
            &[Split::Train, Split::Dev],
            &[0.875, 0.125],
            &mut rng,
            target,
        )?;
    }
    Ok(m)
}

/// Scores a candidate split; lower or higher is irrelevant, only the median matters.
pub trait SplitProbe {
    fn score(&mut self, index: usize, split: &DatasetManifest) -> Result<f64>;
}

impl<F> SplitProbe for F
where
    F: FnMut(usize, &DatasetManifest) -> Result<f64>,
{
    fn score(&mut self, index: usize, split: &DatasetManifest) -> Result<f64> {
        self(index, split)
    }
}

#[derive(Clone, Debug)]
pub struct MedianSelection {
    pub index: usize,
    pub median: f64,
    pub scores: Vec<f64>,
    pub manifest: DatasetManifest,
}

/// Median of `xs`; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Draws `k` seeded in-target splits, scores each, and keeps the one whose
/// score is closest to the median (lowest index on ties).
pub fn select_median_split<P: SplitProbe + ?Sized>(
    manifest: &DatasetManifest,
    k: usize,
    ratios: [f64; 3],
    probe: &mut P,
    seed: u64,
) -> Result<MedianSelection> {
    if k == 0 {
        return Err(Error::Config("need at least one candidate split".into()));
    }
    let mut candidates = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    for i in 0..k {
        let m = split_in_target(manifest, ratios, derive_seed(seed, 1000 + i as u64))?;
        let s = probe.score(i, &m).map_err(|e| Error::Probe {
            index: i,
            msg: e.to_string(),
        })?;
        if !s.is_finite() {
            return Err(Error::Probe {
                index: i,
                msg: format!("non-finite score {s}"),
            });
        }
        scores.push(s);
        candidates.push(m);
    }
    let med = median(&scores);
    let index = closest_to(&scores, med);
    Ok(MedianSelection {
        index,
        median: med,
        manifest: candidates.swap_remove(index),
        scores,
    })
}

/// Index minimizing `|score - target|`, lowest index on ties.
pub fn closest_to(scores: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if (s - target).abs() < (scores[best] - target).abs() {
            best = i;
        }
    }
    best
}
