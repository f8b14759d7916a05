//! VWSD recast as multiple-choice question answering over image captions.
//!
//! * [`templates`] renders the nine QA prompt templates and the few-shot layout.
//! * [`parser`] extracts an option letter (or an abstention) from free-text responses.
//! * [`selection`] picks in-context examples (random, top, inverse-top).
//! * [`pipeline`] wires prompts, the gateway and the parser into zero-shot, CoT and few-shot runs.

pub mod parser;
pub mod pipeline;
pub mod selection;
pub mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captions::CaptionStrategy;
use crate::gateway::GatewayError;
use crate::vector_store::VectorError;

pub use parser::{parse_answer, AnswerOutcome, MatchedBy, ParsedAnswer};
pub use pipeline::{QaRunner, QaTranscript};
pub use selection::{select_in_context, InContextConfig, SelectionStrategy};
pub use templates::{render_few_shot_prompt, render_qa_prompt, FewShotExample, QaPrompt};

pub const NUM_OPTIONS: usize = 10;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("no {captioner} {strategy} captions for image {image_id:?}")]
    MissingCaption {
        image_id: String,
        captioner: String,
        strategy: CaptionStrategy,
    },
    #[error("template {0} cannot be used here: {1}")]
    InvalidTemplate(QaTemplate, &'static str),
    #[error("instance {instance_id}: no {model:?} text embedding for phrase {phrase:?}")]
    MissingPhraseEmbedding {
        instance_id: String,
        model: String,
        phrase: String,
    },
    #[error("cannot select {k} in-context examples from a pool of {pool}")]
    TooManyShots { k: usize, pool: usize },
    #[error("instance {instance_id}: {source}")]
    Similarity {
        instance_id: String,
        #[source]
        source: VectorError,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One of the ten option letters `A`..=`J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OptionLetter(u8);

impl OptionLetter {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_OPTIONS).then_some(Self(index as u8))
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A'..='J' => Some(Self(c as u8 - b'A')),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }

    pub fn all() -> impl Iterator<Item = OptionLetter> {
        (0..NUM_OPTIONS as u8).map(OptionLetter)
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for OptionLetter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                Self::from_char(c).ok_or_else(|| format!("{s:?} is not an option letter A-J"))
            }
            _ => Err(format!("{s:?} is not an option letter A-J")),
        }
    }
}

impl Serialize for OptionLetter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OptionLetter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaTemplate {
    ThinkGreedy,
    ThinkBeam,
    Cot,
    NoCotGreedy,
    NoCotBeam,
    ChooseNoCotGreedy,
    ChooseNoCotBeam,
    ChooseCotGreedy,
    ChooseCotBeam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateFamily {
    Think,
    Cot,
    NoCot,
    ChooseNoCot,
    ChooseCot,
}

impl QaTemplate {
    pub const ALL: [QaTemplate; 9] = [
        QaTemplate::ThinkGreedy,
        QaTemplate::ThinkBeam,
        QaTemplate::Cot,
        QaTemplate::NoCotGreedy,
        QaTemplate::NoCotBeam,
        QaTemplate::ChooseNoCotGreedy,
        QaTemplate::ChooseNoCotBeam,
        QaTemplate::ChooseCotGreedy,
        QaTemplate::ChooseCotBeam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QaTemplate::ThinkGreedy => "think_greedy",
            QaTemplate::ThinkBeam => "think_beam",
            QaTemplate::Cot => "cot",
            QaTemplate::NoCotGreedy => "no_cot_greedy",
            QaTemplate::NoCotBeam => "no_cot_beam",
            QaTemplate::ChooseNoCotGreedy => "choose_no_cot_greedy",
            QaTemplate::ChooseNoCotBeam => "choose_no_cot_beam",
            QaTemplate::ChooseCotGreedy => "choose_cot_greedy",
            QaTemplate::ChooseCotBeam => "choose_cot_beam",
        }
    }

    pub fn family(self) -> TemplateFamily {
        match self {
            QaTemplate::ThinkGreedy | QaTemplate::ThinkBeam => TemplateFamily::Think,
            QaTemplate::Cot => TemplateFamily::Cot,
            QaTemplate::NoCotGreedy | QaTemplate::NoCotBeam => TemplateFamily::NoCot,
            QaTemplate::ChooseNoCotGreedy | QaTemplate::ChooseNoCotBeam => TemplateFamily::ChooseNoCot,
            QaTemplate::ChooseCotGreedy | QaTemplate::ChooseCotBeam => TemplateFamily::ChooseCot,
        }
    }

    /// Caption strategy the template expects; `None` for `cot`, which wraps a think prompt.
    pub fn strategy(self) -> Option<CaptionStrategy> {
        match self {
            QaTemplate::ThinkGreedy
            | QaTemplate::NoCotGreedy
            | QaTemplate::ChooseNoCotGreedy
            | QaTemplate::ChooseCotGreedy => Some(CaptionStrategy::Greedy),
            QaTemplate::ThinkBeam
            | QaTemplate::NoCotBeam
            | QaTemplate::ChooseNoCotBeam
            | QaTemplate::ChooseCotBeam => Some(CaptionStrategy::Beam),
            QaTemplate::Cot => None,
        }
    }

    /// Think prompt wrapped by the two-stage CoT pipeline for a caption strategy.
    pub fn think_for(strategy: CaptionStrategy) -> Self {
        match strategy {
            CaptionStrategy::Greedy => QaTemplate::ThinkGreedy,
            CaptionStrategy::Beam => QaTemplate::ThinkBeam,
        }
    }

    /// Resolves a template name, also accepting a family name (`think`, `no_cot`,
    /// `choose_no_cot`, `choose_cot`) combined with a caption strategy.
    pub fn resolve(name: &str, strategy: CaptionStrategy) -> Result<Self, String> {
        let name = name.replace('-', "_");
        if let Some(t) = Self::ALL.into_iter().find(|t| t.name() == name) {
            return Ok(t);
        }
        let full = format!("{name}_{strategy}");
        Self::ALL
            .into_iter()
            .find(|t| t.name() == full)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|t| t.name()).collect();
                format!("unknown QA template {name:?}; valid names: {}", names.join(", "))
            })
    }
}

impl fmt::Display for QaTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QaTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown QA template {s:?}"))
    }
}
