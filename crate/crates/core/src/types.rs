//! Enumerations shared across pipeline stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "SQUAD11")]
    Squad11,
    #[serde(rename = "SQUAD20")]
    Squad20,
    #[serde(rename = "ADVQA_DROBERTA")]
    AdvQaDRoberta,
    #[serde(rename = "BOOLQ")]
    BoolQ,
    #[serde(rename = "WIKIWHY")]
    WikiWhy,
    #[serde(rename = "HOTPOTQA")]
    HotpotQa,
}

impl DatasetId {
    pub const ALL: [DatasetId; 6] = [
        DatasetId::Squad11,
        DatasetId::Squad20,
        DatasetId::AdvQaDRoberta,
        DatasetId::BoolQ,
        DatasetId::WikiWhy,
        DatasetId::HotpotQa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Squad11 => "SQUAD11",
            DatasetId::Squad20 => "SQUAD20",
            DatasetId::AdvQaDRoberta => "ADVQA_DROBERTA",
            DatasetId::BoolQ => "BOOLQ",
            DatasetId::WikiWhy => "WIKIWHY",
            DatasetId::HotpotQa => "HOTPOTQA",
        }
    }

    pub fn task_kind(self) -> TaskKind {
        match self {
            DatasetId::Squad11 | DatasetId::Squad20 | DatasetId::AdvQaDRoberta => {
                TaskKind::Extractive
            }
            DatasetId::BoolQ => TaskKind::YesNo,
            DatasetId::WikiWhy => TaskKind::FreeForm,
            DatasetId::HotpotQa => TaskKind::MultiHop,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        DatasetId::ALL
            .into_iter()
            .find(|d| d.as_str() == wanted)
            .ok_or_else(|| Error::UnknownDataset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Extractive,
    #[serde(rename = "YESNO")]
    YesNo,
    #[serde(rename = "FREEFORM")]
    FreeForm,
    #[serde(rename = "MULTIHOP")]
    MultiHop,
}

/// Outcome of answer-preservation checking for an edited passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApcStatus {
    Kept,
    DroppedAnswerLost,
    DroppedTooShort,
}

/// Whether a gold answer must survive for at least one or for all answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApcMode {
    #[default]
    Any,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptMode {
    WithContext,
    QuestionOnly,
    WithContextCot,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::WithContext => "WITH_CONTEXT",
            PromptMode::QuestionOnly => "QUESTION_ONLY",
            PromptMode::WithContextCot => "WITH_CONTEXT_COT",
        }
    }

    pub fn has_passage(self) -> bool {
        !matches!(self, PromptMode::QuestionOnly)
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
