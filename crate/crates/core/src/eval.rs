//! Macro-F1, Cohen's kappa and annotation majority voting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Invalid("empty label lists".into()));
    }
    Ok(())
}

/// Unweighted mean of per-class F1 over `label_set`. A zero denominator in
/// precision, recall or F1 yields 0, so classes absent from both lists score 0.
pub fn macro_f1<L: PartialEq>(preds: &[L], golds: &[L], label_set: &[L]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let mut total = 0.0;
    for c in label_set {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (p, g) in preds.iter().zip(golds) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / label_set.len() as f64)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `(p_o - p_e) / (1 - p_e)` with marginal-product chance agreement; 1 when `p_e = 1`.
pub fn cohen_kappa<L: PartialEq>(a: &[L], b: &[L], label_set: &[L]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let p_e: f64 = label_set
        .iter()
        .map(|c| {
            let ca = a.iter().filter(|x| *x == c).count() as f64;
            let cb = b.iter().filter(|x| *x == c).count() as f64;
            ca * cb / (n * n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vote<L> {
    Label(L),
    NeedsEscalation,
    Discard,
}

/// At least two of three primary votes decide. Otherwise the three extra
/// votes are pooled with the primary ones and a strict plurality of the six
/// decides; ties are discarded.
pub fn majority_vote<L: Clone + PartialEq>(primary: &[L; 3], extra: Option<&[L; 3]>) -> Vote<L> {
    if let Some(l) = plurality(primary, 2) {
        return Vote::Label(l);
    }
    let Some(extra) = extra else {
        return Vote::NeedsEscalation;
    };
    let pool: Vec<L> = primary.iter().chain(extra).cloned().collect();
    match plurality(&pool, 1) {
        Some(l) => Vote::Label(l),
        None => Vote::Discard,
    }
}

/// The unique most frequent vote if it occurs at least `min` times.
fn plurality<L: Clone + PartialEq>(votes: &[L], min: usize) -> Option<L> {
    let count = |l: &L| votes.iter().filter(|v| *v == l).count();
    let best = votes.iter().map(count).max()?;
    let mut winners = votes.iter().filter(|v| count(v) == best);
    let first = winners.next()?;
    if best < min || winners.any(|w| w != first) {
        return None;
    }
    Some(first.clone())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub id: String,
    pub primary_votes: [String; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_votes: Option<[String; 3]>,
}

impl AnnotationRecord {
    pub fn vote(&self) -> Vote<String> {
        majority_vote(&self.primary_votes, self.extra_votes.as_ref())
    }

    fn validate(&self, labels: &LabelSet) -> Result<()> {
        for v in self
            .primary_votes
            .iter()
            .chain(self.extra_votes.iter().flatten())
        {
            labels.index(v)?;
        }
        Ok(())
    }
}

/// One JSON record per line; blank lines are skipped.
pub fn parse_annotations(
    text: &str,
    origin: &str,
    labels: &LabelSet,
) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        r.validate(labels)?;
        out.push(r);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path, labels: &LabelSet) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(
        &std::fs::read_to_string(path)?,
        &path.display().to_string(),
        labels,
    )
}
