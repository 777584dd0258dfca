//! Hard-prompt templates with a question slot and a graph slot.

use crate::kg::KnowledgeGraph;
use crate::lm::{Tokenizer, BOS, GRAPH_SLOT};
use crate::kg::ReasoningPath;
use crate::retrieval::Question;

use super::HarnessError;

const GRAPH_PLACEHOLDER: &str = "{graph}";
const QUESTION_PLACEHOLDER: &str = "{question}";

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Text(String),
    Question,
    Graph,
}

/// A prompt template containing `{question}` and `{graph}` exactly once
/// each. Assembly substitutes the question text, tokenizes the surrounding
/// text and replaces the graph placeholder with the reserved slot token.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(text: &str) -> Result<Self, HarnessError> {
        for (name, count) in [
            (QUESTION_PLACEHOLDER, text.matches(QUESTION_PLACEHOLDER).count()),
            (GRAPH_PLACEHOLDER, text.matches(GRAPH_PLACEHOLDER).count()),
        ] {
            if count == 0 {
                return Err(HarnessError::MissingPlaceholder { which: name.to_string() });
            }
            if count > 1 {
                return Err(HarnessError::DuplicatePlaceholder { which: name.to_string() });
            }
        }
        let mut segments = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let q = rest.find(QUESTION_PLACEHOLDER);
            let g = rest.find(GRAPH_PLACEHOLDER);
            let (next, which) = match (q, g) {
                (Some(qi), Some(gi)) if qi < gi => (qi, Segment::Question),
                (Some(_), Some(gi)) => (gi, Segment::Graph),
                (Some(qi), None) => (qi, Segment::Question),
                (None, Some(gi)) => (gi, Segment::Graph),
                (None, None) => {
                    segments.push(Segment::Text(rest.to_string()));
                    break;
                }
            };
            if next > 0 {
                segments.push(Segment::Text(rest[..next].to_string()));
            }
            let placeholder_len = match which {
                Segment::Question => QUESTION_PLACEHOLDER.len(),
                _ => GRAPH_PLACEHOLDER.len(),
            };
            rest = &rest[next + placeholder_len..];
            segments.push(which);
        }
        Ok(PromptTemplate { text: text.to_string(), segments })
    }

    /// The default instruction wording, with the graph content ahead of the
    /// question and a trailing answer cue.
    pub fn default_template() -> Self {
        PromptTemplate::new(
            "Based on the knowledge graphs, please answer the given question. \
             Please keep the answer as simple as possible and return all the \
             possible answers as a list. knowledge graphs: {graph} \
             question: {question} answer:",
        )
        .expect("default template is well-formed")
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Plain-text substitution of both placeholders.
    pub fn render_text(&self, question_text: &str, graph_text: &str) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Question => out.push_str(question_text),
                Segment::Graph => out.push_str(graph_text),
            }
        }
        out
    }

    /// Tokenize into hard-prompt ids: `<bos>` first, question text spliced
    /// in, and the graph placeholder as the reserved slot token.
    pub fn assemble(&self, tokenizer: &Tokenizer, question: &Question) -> Result<Vec<u32>, HarnessError> {
        let mut ids = vec![BOS];
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => ids.extend(tokenizer.encode(t)),
                Segment::Question => ids.extend(tokenizer.encode(&question.text)),
                Segment::Graph => ids.push(GRAPH_SLOT),
            }
        }
        Ok(ids)
    }
}

/// Render reasoning paths as plain text, one parenthesized triple at a time.
/// This is the textualized baseline a soft prompt replaces.
pub fn render_paths_text(kg: &KnowledgeGraph, paths: &[ReasoningPath]) -> Result<String, HarnessError> {
    let mut rendered = Vec::with_capacity(paths.len());
    for p in paths {
        let mut parts = Vec::new();
        for t in p.triples() {
            parts.push(format!(
                "( {} , {} , {} )",
                kg.entity_label(t.head)?,
                kg.relation_label(t.relation)?,
                kg.entity_label(t.tail)?
            ));
        }
        rendered.push(parts.join(" ; "));
    }
    Ok(rendered.join(" . "))
}
