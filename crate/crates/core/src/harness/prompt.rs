//! Zero-shot prompt templates and multi-hop context assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::QaInstance;
use crate::types::{PromptMode, TaskKind};

/// Appended to with-context prompts in chain-of-thought mode.
pub const COT_SUFFIX: &str =
    "Think step by step, then state your final answer on the last line after 'Answer:'.";

const EXTRACTIVE_CONTEXT: &str = "Use the provided article delimited by triple quotes to answer question. Provide only the shortest continuous span from the context without any additional explanation. If the question is unanswerable, return \"unanswerable\".";
const EXTRACTIVE_PARAMETRIC: &str = "Provide an answer to the given question. If the question is unanswerable, return \"unanswerable\". Do not provide any explanation.";
const YESNO_CONTEXT: &str = "Use the provided article delimited by triple quotes to answer question. Return only TRUE or FALSE. If the question is unanswerable, return \"unanswerable\". Do not provide any explanation.";
const YESNO_PARAMETRIC: &str = "Provide an answer to the given question. Return only TRUE or FALSE. If the question is unanswerable, return \"unanswerable\". Do not provide any explanation.";
const OPEN_CONTEXT: &str = "Use the provided article delimited by triple quotes to answer question. If the question is unanswerable, return \"unanswerable\". Do not provide any explanation.";
const OPEN_PARAMETRIC: &str = "Provide an answer to the given question. If the question is unanswerable, return \"unanswerable\". Do not provide any explanation.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub instruction: &'static str,
}

/// The six template families: one with-context and one parametric
/// instruction for each of extractive, yes/no and open-ended questions.
pub const TEMPLATES: [Template; 6] = [
    Template { id: "extractive/context", instruction: EXTRACTIVE_CONTEXT },
    Template { id: "extractive/parametric", instruction: EXTRACTIVE_PARAMETRIC },
    Template { id: "yesno/context", instruction: YESNO_CONTEXT },
    Template { id: "yesno/parametric", instruction: YESNO_PARAMETRIC },
    Template { id: "open/context", instruction: OPEN_CONTEXT },
    Template { id: "open/parametric", instruction: OPEN_PARAMETRIC },
];

pub fn template_id(task: TaskKind, mode: PromptMode) -> String {
    let family = match task {
        TaskKind::Extractive => "extractive",
        TaskKind::YesNo => "yesno",
        TaskKind::FreeForm | TaskKind::MultiHop => "open",
    };
    let kind = if mode.has_passage() { "context" } else { "parametric" };
    format!("{family}/{kind}")
}

pub fn template(id: &str) -> Result<&'static Template> {
    TEMPLATES
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::TemplateMissing(id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task_kind: TaskKind,
    pub mode: PromptMode,
    pub template_id: String,
    pub rendered: String,
}

/// Renders the prompt for `instance`. `passage` must be given and nonempty
/// exactly when the mode includes one.
pub fn build_prompt(instance: &QaInstance, passage: Option<&str>, mode: PromptMode) -> Result<PromptSpec> {
    let task_kind = instance.task_kind();
    let template_id = template_id(task_kind, mode);
    let template = template(&template_id)?;
    let rendered = match (mode.has_passage(), passage) {
        (true, Some(p)) if !p.is_empty() => {
            let mut text = format!(
                "{}\n\"\"\"{p}\"\"\"\nQuestion: {}",
                template.instruction, instance.question
            );
            if mode == PromptMode::WithContextCot {
                text.push('\n');
                text.push_str(COT_SUFFIX);
            }
            text
        }
        (true, _) => {
            return Err(Error::PromptInput(format!("{mode} requires a nonempty passage")));
        }
        (false, None) => format!("{}\nQuestion: {}", template.instruction, instance.question),
        (false, Some(_)) => {
            return Err(Error::PromptInput(format!("{mode} takes no passage")));
        }
    };
    Ok(PromptSpec {
        task_kind,
        mode,
        template_id,
        rendered,
    })
}

/// Replacement of one paragraph under a title.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphEdit {
    pub original: String,
    pub edited: String,
}

/// The multi-hop reading context: every article in original order as a
/// title line followed by its paragraphs, articles separated by blank
/// lines. Edits apply only to gold titles.
pub fn assemble_context(instance: &QaInstance, edits: &BTreeMap<String, ParagraphEdit>) -> Result<String> {
    if let Some(title) = edits.keys().find(|t| !instance.gold_titles.contains(t)) {
        return Err(Error::UnknownTitle(title.clone()));
    }
    let blocks: Vec<String> = instance
        .titles
        .iter()
        .map(|title| {
            let edit = edits.get(title);
            let paragraphs: Vec<&str> = instance
                .paragraphs
                .get(title)
                .into_iter()
                .flatten()
                .map(|p| match edit {
                    Some(e) if e.original == *p => e.edited.as_str(),
                    _ => p.as_str(),
                })
                .collect();
            format!("{title}\n{}", paragraphs.join("\n"))
        })
        .collect();
    Ok(blocks.join("\n\n"))
}
