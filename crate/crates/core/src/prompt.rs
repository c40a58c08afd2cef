//! Versioned prompt templates with `{{name}}` placeholders.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/feedback_prompt_v1.toml");

const CONTEXT_VARS: &[&str] = &[
    "task_description",
    "programming_language",
    "student_code",
    "compiler_output",
    "unit_test_result",
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read prompt template: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid prompt template: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("section {section} uses unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { section: &'static str, name: String },
    #[error("section {section} has an unterminated placeholder")]
    Unterminated { section: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub version: u32,
    pub student_context: String,
    pub run1: Run1Sections,
    pub run2: Run2Sections,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Run1Sections {
    pub system: String,
    pub user: String,
    pub tool_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Run2Sections {
    pub role: String,
    pub rules: String,
    pub chunk_format: String,
    pub citation_examples: String,
    pub lecture_chunks: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled prompt template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(src: &str) -> Result<Self, TemplateError> {
        let t: PromptTemplate = toml::from_str(src)?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), TemplateError> {
        let lang = &["programming_language"][..];
        let run1_user: Vec<&str> = CONTEXT_VARS.iter().copied().chain(["student_context"]).collect();
        let sections: [(&'static str, &str, &[&str]); 8] = [
            ("student_context", &self.student_context, CONTEXT_VARS),
            ("run1.system", &self.run1.system, lang),
            ("run1.user", &self.run1.user, &run1_user),
            ("run2.role", &self.run2.role, lang),
            ("run2.rules", &self.run2.rules, lang),
            ("run2.chunk_format", &self.run2.chunk_format, lang),
            ("run2.citation_examples", &self.run2.citation_examples, lang),
            ("run2.lecture_chunks", &self.run2.lecture_chunks, &["lecture_chunks"]),
        ];
        for (section, text, allowed) in sections {
            for name in placeholders(text).map_err(|_| TemplateError::Unterminated { section })? {
                if !allowed.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder {
                        section,
                        name: name.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn placeholders(text: &str) -> Result<Vec<&str>, ()> {
    let mut names = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or(())?;
        names.push(after[..close].trim());
        rest = &after[close + 2..];
    }
    Ok(names)
}

/// Substitutes `{{name}}` placeholders in one pass; inserted values are not rescanned.
/// Placeholders without a value are kept verbatim.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let name = after[..close].trim();
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + 2 + close + 2]),
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
