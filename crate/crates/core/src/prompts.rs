//! Prompt templates with `{PLACEHOLDER}` slots and the text layouts used to
//! fill them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{TaskInstance, NO_INPUT_SENTINEL};

pub const REFLECTION_TEMPLATE: &str = include_str!("../templates/reflection.txt");
pub const SUMMARIZATION_TEMPLATE: &str = include_str!("../templates/summarization.txt");
pub const GENERATION_TEMPLATE: &str = include_str!("../templates/generation.txt");
pub const EXPANSION_TEMPLATE: &str = include_str!("../templates/expansion.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{kind:?} template: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { kind: TemplateKind, name: String },
    #[error("{kind:?} template: placeholder {{{name}}} is not bound")]
    Unbound { kind: TemplateKind, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Expansion,
    Reflection,
    Summarization,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    Instructions,
    LowLevelPrinciples,
    Principles,
    Knowledge,
    NTasks,
}

impl Placeholder {
    pub const ALL: [Placeholder; 5] = [
        Placeholder::Instructions,
        Placeholder::LowLevelPrinciples,
        Placeholder::Principles,
        Placeholder::Knowledge,
        Placeholder::NTasks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Instructions => "INSTRUCTIONS",
            Placeholder::LowLevelPrinciples => "low_level_principles",
            Placeholder::Principles => "PRINCIPLES",
            Placeholder::Knowledge => "KNOWLEDGE",
            Placeholder::NTasks => "N_TASKS",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: String,
    segments: Vec<Segment>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl PromptTemplate {
    /// Parses `body`. A `{NAME}` with an identifier inside must be a known placeholder;
    /// other braces are literal text.
    pub fn parse(kind: TemplateKind, body: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let slot = after
                .find('}')
                .map(|close| &after[..close])
                .filter(|name| is_ident(name));
            match slot {
                Some(name) => {
                    let placeholder = Placeholder::from_name(name).ok_or_else(|| {
                        TemplateError::UnknownPlaceholder {
                            kind,
                            name: name.to_string(),
                        }
                    })?;
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(placeholder));
                    rest = &after[name.len() + 1..];
                }
                None => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            kind,
            body: body.to_string(),
            segments,
        })
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        let body = match kind {
            TemplateKind::Expansion => EXPANSION_TEMPLATE,
            TemplateKind::Reflection => REFLECTION_TEMPLATE,
            TemplateKind::Summarization => SUMMARIZATION_TEMPLATE,
            TemplateKind::Generation => GENERATION_TEMPLATE,
        };
        Self::parse(kind, body).expect("shipped templates are valid")
    }

    pub fn placeholders(&self) -> Vec<Placeholder> {
        let mut out = Vec::new();
        for s in &self.segments {
            if let Segment::Slot(p) = s {
                if !out.contains(p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    /// Substitutes every slot in a single pass; bound values are not re-scanned.
    pub fn render(&self, bindings: &[(Placeholder, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for s in &self.segments {
            match s {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(p) => {
                    let value = bindings
                        .iter()
                        .find(|(bp, _)| bp == p)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::Unbound {
                            kind: self.kind,
                            name: p.name().to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

fn display_input(input: &str) -> &str {
    if input.is_empty() {
        NO_INPUT_SENTINEL
    } else {
        input
    }
}

/// Layout of a reflection subset: `### Task k` blocks, starting on a new line.
pub fn format_subset(instances: &[&TaskInstance]) -> String {
    let blocks: Vec<String> = instances
        .iter()
        .enumerate()
        .map(|(i, t)| {
            format!(
                "### Task {}\nInstruction: {}\nInput: {}\nOutput: {}",
                i + 1,
                t.instruction,
                display_input(&t.input),
                t.output
            )
        })
        .collect();
    format!("\n{}\n", blocks.join("\n\n"))
}

/// `1. a\n2. b` with no surrounding newlines.
pub fn numbered_list<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref().trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A completed task in the layout the generator is asked to produce.
pub fn format_task_block(number: usize, task: &TaskInstance) -> String {
    format!(
        "{number}. Instruction: {}\n{number}. Input:\n{}\n{number}. Output:\n{}",
        task.instruction,
        display_input(&task.input),
        task.output
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_templates_use_expected_slots() {
        use Placeholder::*;
        let r = PromptTemplate::default_for(TemplateKind::Reflection);
        assert_eq!(r.placeholders(), vec![Instructions]);
        let s = PromptTemplate::default_for(TemplateKind::Summarization);
        assert_eq!(s.placeholders(), vec![LowLevelPrinciples]);
        let g = PromptTemplate::default_for(TemplateKind::Generation);
        assert_eq!(g.placeholders(), vec![NTasks, Principles]);
        let e = PromptTemplate::default_for(TemplateKind::Expansion);
        assert_eq!(e.placeholders(), vec![NTasks]);
    }

    #[test]
    fn rendering_leaves_no_placeholders() {
        let g = PromptTemplate::default_for(TemplateKind::Generation);
        let out = g
            .render(&[(Placeholder::NTasks, "20"), (Placeholder::Principles, "1. P")])
            .unwrap();
        assert!(out.starts_with("You are asked to come up with a set of 20 diverse task instructions."));
        assert!(out.ends_with("1. P\n\nList of 20 tasks:\n"));
        assert!(!out.contains("{PRINCIPLES}") && !out.contains("{N_TASKS}"));
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let t = PromptTemplate::parse(TemplateKind::Reflection, "A {INSTRUCTIONS} B").unwrap();
        let out = t
            .render(&[(Placeholder::Instructions, "{PRINCIPLES} {x}")])
            .unwrap();
        assert_eq!(out, "A {PRINCIPLES} {x} B");
    }

    #[test]
    fn unknown_and_unbound_placeholders() {
        assert!(matches!(
            PromptTemplate::parse(TemplateKind::Reflection, "x {FOO} y"),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
        let t = PromptTemplate::parse(TemplateKind::Generation, "{PRINCIPLES}").unwrap();
        assert!(matches!(t.render(&[]), Err(TemplateError::Unbound { .. })));
    }

    #[test]
    fn non_identifier_braces_are_literal() {
        let t = PromptTemplate::parse(TemplateKind::Generation, "json {\"a\": 1} { } {PRINCIPLES}")
            .unwrap();
        assert_eq!(
            t.render(&[(Placeholder::Principles, "p")]).unwrap(),
            "json {\"a\": 1} { } p"
        );
    }

    #[test]
    fn subset_layout() {
        let a = TaskInstance::seed("Add 2+2.", "", "4").unwrap();
        let b = TaskInstance::seed("Echo.", "hi", "hi").unwrap();
        assert_eq!(
            format_subset(&[&a, &b]),
            "\n### Task 1\nInstruction: Add 2+2.\nInput: <noinput>\nOutput: 4\n\n### Task 2\nInstruction: Echo.\nInput: hi\nOutput: hi\n"
        );
    }
}
