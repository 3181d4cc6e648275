//! Rule-based tokenizer with character offsets.
//!
//! Runs of alphanumeric characters form one token; every other non-space
//! character is a token of its own, so `"f(x)=y"` becomes
//! `["f", "(", "x", ")", "=", "y"]`. Offsets index code points of the text
//! handed to the tokenizer and tile all non-whitespace content.

use serde::{Deserialize, Serialize};

use super::latex::{latex_to_text, CharMap, LatexWarning};
use super::{CharSpan, Preprocess};

/// A document after preprocessing and tokenization. `text` is the
/// preprocessed text; `offsets` index into it; `char_map` maps its code
/// points back to the original document (identity when preprocessing was
/// disabled).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub text: String,
    pub tokens: Vec<String>,
    pub offsets: Vec<CharSpan>,
    pub char_map: CharMap,
}

impl TokenizedDocument {
    /// Maps a token span to a code-point span in the original document.
    ///
    /// Panics if the span is empty or out of bounds; callers only hold
    /// spans produced from this document's own token list.
    #[must_use]
    pub fn token_span_to_original(&self, span: &super::TokenSpan) -> CharSpan {
        assert!(span.start < span.end && span.end <= self.offsets.len());
        let clean = CharSpan::new(self.offsets[span.start].start, self.offsets[span.end - 1].end);
        self.char_map.span_to_original(&clean)
    }
}

/// Splits text into tokens with code-point offsets.
#[must_use]
pub fn tokenize_with_offsets(text: &str) -> (Vec<String>, Vec<CharSpan>) {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut run = String::new();
    let mut run_start = 0usize;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphanumeric() {
            if run.is_empty() {
                run_start = i;
            }
            run.push(c);
            continue;
        }
        if !run.is_empty() {
            offsets.push(CharSpan::new(run_start, i));
            tokens.push(std::mem::take(&mut run));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
            offsets.push(CharSpan::new(i, i + 1));
        }
    }
    if !run.is_empty() {
        let end = run_start + run.chars().count();
        offsets.push(CharSpan::new(run_start, end));
        tokens.push(run);
    }
    (tokens, offsets)
}

/// Applies the configured preprocessing, then tokenizes.
#[must_use]
pub fn tokenize_document(original: &str, preprocess: Preprocess) -> (TokenizedDocument, Vec<LatexWarning>) {
    let (text, char_map, warnings) = match preprocess {
        Preprocess::None => (
            original.to_string(),
            CharMap::identity(original.chars().count()),
            Vec::new(),
        ),
        Preprocess::LatexToText => latex_to_text(original),
    };
    let (tokens, offsets) = tokenize_with_offsets(&text);
    (
        TokenizedDocument {
            text,
            tokens,
            offsets,
            char_map,
        },
        warnings,
    )
}
