//! Markdown footnote citations pointing at lecture video timestamps.
//!
//! Each retrieved chunk gets a footnote definition of the form
//!
//! ```text
//! [^1]: [lecture_03.mp4 @ 00:14:32](video://lecture_03.mp4#t=872)
//! ```
//!
//! The model is asked to cite chunks with `[^id]`. After generation, references
//! to ids that were never retrieved are removed, any definition lines the model
//! wrote itself are dropped, and definitions for the ids actually referenced
//! are appended. [`FootnoteFilter`] applies the same rewriting to a token
//! stream so text can be forwarded to a client before the completion ends.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::srt::Timestamp;

pub const VIDEO_SCHEME: &str = "video://";

/// `[^digits]`, optionally followed by `:` and the rest of the line (a definition).
static FOOTNOTE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\^([0-9]+)\](:[^\n]*\n?)?").expect("static regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootnoteDefinition {
    pub footnote_id: u32,
    pub video_file: String,
    pub start: Timestamp,
    pub rendered: String,
}

pub fn video_link(video_file: &str, start: Timestamp) -> String {
    format!("{VIDEO_SCHEME}{video_file}#t={}", start.as_secs())
}

pub fn footnote_definition(footnote_id: u32, video_file: &str, start: Timestamp) -> FootnoteDefinition {
    let rendered = format!(
        "[^{footnote_id}]: [{video_file} @ {}]({})",
        start.to_hms(),
        video_link(video_file, start)
    );
    FootnoteDefinition {
        footnote_id,
        video_file: video_file.to_string(),
        start,
        rendered,
    }
}

/// A resolved citation as reported alongside finalized feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub footnote_id: u32,
    pub video_file: String,
    #[serde(rename = "start_ms")]
    pub start: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationSet {
    definitions: BTreeMap<u32, FootnoteDefinition>,
}

impl CitationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a definition, replacing any previous one with the same id.
    pub fn insert(&mut self, def: FootnoteDefinition) {
        self.definitions.insert(def.footnote_id, def);
    }

    pub fn get(&self, id: u32) -> Option<&FootnoteDefinition> {
        self.definitions.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.definitions.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.definitions.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.definitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.definitions.is_empty()
    }

    /// The markdown appended after a body referencing `referenced`, plus the matching citations.
    /// Empty when nothing is referenced.
    pub fn definitions_suffix(&self, referenced: &BTreeSet<u32>) -> (String, Vec<Citation>) {
        let defs: Vec<&FootnoteDefinition> = referenced.iter().filter_map(|id| self.get(*id)).collect();
        if defs.is_empty() {
            return (String::new(), Vec::new());
        }
        let mut suffix = String::from("\n\n");
        for d in &defs {
            suffix.push_str(&d.rendered);
            suffix.push('\n');
        }
        let citations = defs
            .into_iter()
            .map(|d| Citation {
                footnote_id: d.footnote_id,
                video_file: d.video_file.clone(),
                start: d.start,
            })
            .collect();
        (suffix, citations)
    }
}

fn parse_id(digits: &str) -> Option<u32> {
    digits.parse().ok()
}

/// Inline footnote references in first-occurrence order, deduplicated.
/// Definitions (`[^n]: ...`) are not references.
pub fn extract_footnote_refs(markdown: &str) -> Vec<u32> {
    let mut seen = HashSet::new();
    FOOTNOTE_RE
        .captures_iter(markdown)
        .filter(|c| c.get(2).is_none())
        .filter_map(|c| parse_id(&c[1]))
        .filter(|id| seen.insert(*id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalizedFeedback {
    pub markdown: String,
    pub citations: Vec<Citation>,
}

/// Removes unknown references and model-written definition lines from `body`.
pub fn strip_unresolved(body: &str, cs: &CitationSet) -> String {
    FOOTNOTE_RE
        .replace_all(body, |c: &Captures<'_>| {
            let known = parse_id(&c[1]).is_some_and(|id| cs.contains(id));
            if c.get(2).is_none() && known {
                c[0].to_string()
            } else {
                if c.get(2).is_none() {
                    tracing::warn!(reference = &c[0], "dropping footnote reference without a retrieved chunk");
                }
                String::new()
            }
        })
        .into_owned()
}

pub fn finalize_feedback(body: &str, cs: &CitationSet) -> FinalizedFeedback {
    let mut markdown = strip_unresolved(body, cs);
    let referenced: BTreeSet<u32> = extract_footnote_refs(&markdown).into_iter().collect();
    let (suffix, citations) = cs.definitions_suffix(&referenced);
    markdown.push_str(&suffix);
    FinalizedFeedback { markdown, citations }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FilterState {
    Text,
    /// saw `[`
    Open,
    /// saw `[^`
    Caret,
    /// saw `[^` and at least one digit
    Digits,
    /// saw a complete `[^n]`; the next character decides reference vs definition
    Closed,
    /// inside a definition line, dropping until newline
    Definition,
}

/// Incremental version of [`strip_unresolved`].
///
/// Feeding any split of a body through [`push`](Self::push) and then
/// [`finish`](Self::finish) yields exactly `strip_unresolved(body)`.
/// Characters that may start a footnote marker are held back until resolved.
#[derive(Debug, Clone)]
pub struct FootnoteFilter {
    known: HashSet<u32>,
    state: FilterState,
    pending: String,
}

impl FootnoteFilter {
    pub fn new(cs: &CitationSet) -> Self {
        Self {
            known: cs.ids().collect(),
            state: FilterState::Text,
            pending: String::new(),
        }
    }

    pub fn push(&mut self, delta: &str) -> String {
        let mut out = String::new();
        for c in delta.chars() {
            self.step(c, &mut out);
        }
        out
    }

    pub fn finish(&mut self) -> String {
        let mut out = String::new();
        match self.state {
            FilterState::Closed => self.resolve_reference(&mut out),
            FilterState::Definition => {}
            _ => out.push_str(&self.pending),
        }
        self.pending.clear();
        self.state = FilterState::Text;
        out
    }

    fn resolve_reference(&mut self, out: &mut String) {
        let id = parse_id(&self.pending[2..self.pending.len() - 1]);
        match id {
            Some(id) if self.known.contains(&id) => out.push_str(&self.pending),
            _ => tracing::warn!(
                reference = self.pending.as_str(),
                "dropping footnote reference without a retrieved chunk"
            ),
        }
        self.pending.clear();
    }

    fn step(&mut self, c: char, out: &mut String) {
        use FilterState::*;
        match (self.state, c) {
            (Text, '[') => {
                self.pending.push(c);
                self.state = Open;
            }
            (Text, _) => out.push(c),
            (Open, '^') => {
                self.pending.push(c);
                self.state = Caret;
            }
            (Caret | Digits, '0'..='9') => {
                self.pending.push(c);
                self.state = Digits;
            }
            (Digits, ']') => {
                self.pending.push(c);
                self.state = Closed;
            }
            (Open | Caret | Digits, _) => {
                out.push_str(&self.pending);
                self.pending.clear();
                self.state = Text;
                self.step(c, out);
            }
            (Closed, ':') => {
                self.pending.clear();
                self.state = Definition;
            }
            (Closed, _) => {
                self.resolve_reference(out);
                self.state = Text;
                self.step(c, out);
            }
            (Definition, '\n') => self.state = Text,
            (Definition, _) => {}
        }
    }
}
