use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::Vocab;

/// Hand-written prompt layouts, numbered ① to ⑤.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Template {
    /// ① short name: `Trump`
    #[serde(rename = "1")]
    ShortName,
    /// ② display phrase: `Donald Trump`
    #[serde(rename = "2")]
    Phrase,
    /// ③ `stance on Donald Trump`
    #[serde(rename = "3")]
    StanceOn,
    /// ④ `What is the stance on Donald Trump?`
    #[serde(rename = "4")]
    Question,
    /// ⑤ `The stance on Donald Trump is:`
    #[default]
    #[serde(rename = "5")]
    Statement,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::ShortName,
        Template::Phrase,
        Template::StanceOn,
        Template::Question,
        Template::Statement,
    ];

    pub fn number(self) -> u8 {
        match self {
            Template::ShortName => 1,
            Template::Phrase => 2,
            Template::StanceOn => 3,
            Template::Question => 4,
            Template::Statement => 5,
        }
    }

    pub fn render(self, target: &TargetInfo) -> String {
        let phrase = &target.phrase;
        match self {
            Template::ShortName => target.short.clone(),
            Template::Phrase => phrase.clone(),
            Template::StanceOn => format!("stance on {phrase}"),
            Template::Question => format!("What is the stance on {phrase}?"),
            Template::Statement => format!("The stance on {phrase} is:"),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "1" | "①" => Template::ShortName,
            "2" | "②" => Template::Phrase,
            "3" | "③" => Template::StanceOn,
            "4" | "④" => Template::Question,
            "5" | "⑤" => Template::Statement,
            other => {
                return Err(Error::Config(format!(
                    "unknown template `{other}` (use 1-5)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub id: String,
    pub short: String,
    pub phrase: String,
}

/// Target id → display phrase. Text form, one target per line:
///
/// ```text
/// # id | short name | display phrase
/// DT | Trump | Donald Trump
/// ```
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRegistry {
    targets: BTreeMap<String, TargetInfo>,
}

const BUILTIN: &str = "\
DT | Trump | Donald Trump
JB | Biden | Joe Biden
CQ | Chloroquine | the use of Chloroquine and Hydroxychloroquine for the treatment or prevention from the coronavirus or COVID 19
CVS_AET | CVS Aetna | merger and acquisition between CVS Health and Aetna
CI_ESRX | Cigna Express Scripts | merger and acquisition between Cigna and Express Scripts
ANTM_CI | Anthem Cigna | merger and acquisition between Anthem and Cigna
AET_HUM | Aetna Humana | merger and acquisition between Aetna and Humana
DIS_FOXA | Disney Fox | merger and acquisition between Disney and 21st Century Fox
RUS | Russia | Russia
UKR | Ukraine | Ukraine
MOC | Mainland | Mainland of China
TOC | Taiwan | Taiwan of China
";

impl TargetRegistry {
    /// The twelve targets of the five benchmark datasets.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN, "<builtin>").expect("builtin registry parses")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut reg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            let [id, short, phrase] = parts[..] else {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: n + 1,
                    msg: "expected `id | short | phrase`".into(),
                });
            };
            if id.is_empty() || phrase.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: n + 1,
                    msg: "empty id or phrase".into(),
                });
            }
            reg.register(id, if short.is_empty() { phrase } else { short }, phrase);
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id | short name | display phrase\n");
        for t in self.targets.values() {
            s.push_str(&format!("{} | {} | {}\n", t.id, t.short, t.phrase));
        }
        s
    }

    pub fn register(&mut self, id: &str, short: &str, phrase: &str) {
        self.targets.insert(
            id.to_string(),
            TargetInfo {
                id: id.to_string(),
                short: short.to_string(),
                phrase: phrase.to_string(),
            },
        );
    }

    pub fn get(&self, id: &str) -> Result<&TargetInfo> {
        self.targets.get(id).ok_or_else(|| Error::UnknownTarget {
            target: id.to_string(),
            registered: self.targets.keys().cloned().collect(),
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Prompt strings for every registered target and template, for vocabulary building.
    pub fn prompt_corpus(&self) -> Vec<String> {
        self.targets
            .values()
            .flat_map(|t| Template::ALL.iter().map(move |tpl| tpl.render(t)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// Hand-written prompt tokens looked up in the shared embedding table.
    #[default]
    Fixed,
    /// Per-target trainable embeddings replace the prompt token embeddings.
    TunedSoft,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetedTextualPrompt {
    pub target: String,
    pub template: Template,
    pub text: String,
    pub tokens: Vec<usize>,
    pub mode: PromptMode,
}

impl TargetedTextualPrompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Name of the soft-embedding parameter in tuned-soft mode.
    pub fn soft_param(&self) -> Option<String> {
        (self.mode == PromptMode::TunedSoft).then(|| soft_param_name(&self.target))
    }

    /// The prompt-free variant used when textual prompting is ablated.
    pub fn empty(target: &str) -> Self {
        Self {
            target: target.to_string(),
            template: Template::default(),
            text: String::new(),
            tokens: Vec::new(),
            mode: PromptMode::Fixed,
        }
    }
}

pub fn soft_param_name(target: &str) -> String {
    format!("tprompt.{target}")
}

pub fn build_textual_prompt(
    registry: &TargetRegistry,
    vocab: &Vocab,
    target: &str,
    template: Template,
) -> Result<TargetedTextualPrompt> {
    let info = registry.get(target)?;
    let text = template.render(info);
    let tokens = vocab.encode(&text);
    if tokens.is_empty() {
        return Err(Error::Invalid(format!(
            "template {template} for `{target}` is empty"
        )));
    }
    Ok(TargetedTextualPrompt {
        target: target.to_string(),
        template,
        text,
        tokens,
        mode: PromptMode::Fixed,
    })
}
