use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image_io::load_image;
use super::labels::LabelSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    /// Stands in for the tweet id. Multi-image posts use `<tweet>_<k>`.
    pub id: String,
    pub target: String,
    pub text: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Sample {
    /// The grouping key: the id up to the first `_`.
    pub fn group(&self) -> &str {
        self.id.split('_').next().unwrap_or(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    labels: LabelSet,
    targets: Vec<String>,
    #[serde(default)]
    provenance: String,
}

/// A dataset: one JSON header line, then one JSON object per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub labels: LabelSet,
    pub targets: Vec<String>,
    pub provenance: String,
    pub samples: Vec<Sample>,
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(name: &str, labels: LabelSet, targets: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            labels,
            targets,
            provenance: String::new(),
            samples: Vec::new(),
            root: PathBuf::from("."),
        }
    }

    /// Parses and validates records without touching image files.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: 1,
            msg: "missing header line".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
        let mut m = Self {
            name: header.name,
            labels: header.labels,
            targets: header.targets,
            provenance: header.provenance,
            samples: Vec::new(),
            root: PathBuf::from("."),
        };
        for (n, line) in lines {
            let s: Sample = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg: e.to_string(),
            })?;
            m.samples.push(s);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let targets: HashSet<&str> = self.targets.iter().map(String::as_str).collect();
        let mut ids = HashSet::new();
        for s in &self.samples {
            self.labels.index(&s.label)?;
            if !targets.contains(s.target.as_str()) {
                return Err(Error::UnknownTarget {
                    target: s.target.clone(),
                    registered: self.targets.clone(),
                });
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            name: self.name.clone(),
            labels: self.labels.clone(),
            targets: self.targets.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Re-expresses image paths relative to `dir` (absolute when outside it),
    /// for writing the manifest into another directory.
    pub fn rebase(mut self, dir: &Path) -> Result<Self> {
        let dir = dir.canonicalize()?;
        let root = if self.root.as_os_str().is_empty() {
            Path::new(".")
        } else {
            self.root.as_path()
        };
        let root = root.canonicalize()?;
        if root == dir {
            return Ok(self);
        }
        for s in &mut self.samples {
            let abs = root.join(&s.image_path);
            s.image_path = match abs.strip_prefix(&dir) {
                Ok(rel) => rel.display().to_string(),
                Err(_) => abs.display().to_string(),
            };
        }
        self.root = dir;
        Ok(self)
    }

    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.image_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Copy with only the samples of `split` (split fields kept).
    pub fn subset(&self, split: Split) -> Self {
        Self {
            samples: self.split(split).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn by_target(&self, target: &str) -> impl Iterator<Item = &Sample> {
        let target = target.to_string();
        self.samples.iter().filter(move |s| s.target == target)
    }

    pub fn present_targets(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.target.as_str()).collect()
    }
}

/// Loads a manifest and checks that every image exists and parses.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let mut m = DatasetManifest::parse(&text, &path.display().to_string())?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for s in &m.samples {
        load_image(&m.image_path(s))?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelScheme;

    fn manifest() -> DatasetManifest {
        let mut m = DatasetManifest::new(
            "toy",
            LabelScheme::FavorAgainstNeutral.labels(),
            vec!["DT".into()],
        );
        m.samples.push(Sample {
            id: "1".into(),
            target: "DT".into(),
            text: "quote \" and \\ and ünïcode\nnewline".into(),
            image_path: "images/1.ppm".into(),
            label: "favor".into(),
            cot_text: Some("because".into()),
            split: Some(Split::Dev),
        });
        m
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = DatasetManifest::new("e", LabelScheme::FavorAgainstNeutral.labels(), vec![]);
        let back = DatasetManifest::parse(&m.to_jsonl().unwrap(), "mem").unwrap();
        assert!(back.samples.is_empty());
    }

    #[test]
    fn text_roundtrip() {
        let m = manifest();
        let back = DatasetManifest::parse(&m.to_jsonl().unwrap(), "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rebase_keeps_images_reachable() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = dir.path().join("out");
        std::fs::create_dir_all(data.join("images")).unwrap();
        std::fs::create_dir_all(&out).unwrap();
        let mut m = manifest();
        m.root = data.clone();
        let moved = m.clone().rebase(&out).unwrap();
        let expected = data.canonicalize().unwrap().join("images/1.ppm");
        assert_eq!(moved.image_path(&moved.samples[0]), expected);
        let inside = m.clone().rebase(dir.path()).unwrap();
        assert!(inside.samples[0].image_path.starts_with("data"));
        assert_eq!(m.clone().rebase(&data).unwrap().samples, m.samples);
    }

    #[test]
    fn unknown_label_rejected() {
        let mut m = manifest();
        m.samples[0].label = "refute".into();
        let err = DatasetManifest::parse(&m.to_jsonl().unwrap(), "mem").unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { ref label_set, .. } if label_set.len() == 3));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}{{\"id\": 3\n", manifest().to_jsonl().unwrap());
        match DatasetManifest::parse(&text, "m.jsonl").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = manifest();
        m.samples.push(m.samples[0].clone());
        assert!(m.validate().is_err());
    }

    #[test]
    fn groups() {
        let mut s = manifest().samples[0].clone();
        s.id = "12345_2".into();
        assert_eq!(s.group(), "12345");
    }
}
