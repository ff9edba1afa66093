//! Caption tokenization and trigger phrases.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptionError {
    #[error("caption {index} has no tokens after normalization")]
    BlankCaption { index: usize },
    #[error("tag {tag:?} in caption {index} contains the token delimiter")]
    InvalidTag { index: usize, tag: String },
    #[error("trigger set is empty")]
    EmptyTriggerSet,
    #[error("trigger phrase {phrase:?} is blank")]
    BlankTrigger { phrase: String },
    #[error("trigger phrase {phrase:?} is not a single tag")]
    MultiTagTrigger { phrase: String },
    #[error("trigger phrase {phrase:?} listed twice")]
    DuplicateTrigger { phrase: String },
}

/// How a caption is cut into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    /// Comma-separated tags; a multi-word tag such as `red jacket` is one token.
    #[default]
    Tag,
    /// Whitespace-separated words.
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizationMode {
    pub kind: TokenizerKind,
    pub lowercase: bool,
    pub trim: bool,
}

impl Default for TokenizationMode {
    fn default() -> Self {
        Self::tag()
    }
}

impl TokenizationMode {
    pub const fn tag() -> Self {
        Self { kind: TokenizerKind::Tag, lowercase: true, trim: true }
    }

    pub const fn word() -> Self {
        Self { kind: TokenizerKind::Word, lowercase: true, trim: true }
    }

    /// Canonical separator used when kept tokens are joined back into a caption.
    pub const fn joiner(&self) -> &'static str {
        match self.kind {
            TokenizerKind::Tag => ", ",
            TokenizerKind::Word => " ",
        }
    }

    /// True if `c` separates tokens in this mode.
    pub fn is_delimiter(&self, c: char) -> bool {
        match self.kind {
            TokenizerKind::Tag => c == ',',
            TokenizerKind::Word => c.is_whitespace(),
        }
    }

    /// Splits `raw` into normalized tokens, dropping empty fragments.
    pub fn tokenize(&self, raw: &str) -> Vec<String> {
        match self.kind {
            TokenizerKind::Tag => raw
                .split(',')
                .filter(|frag| !frag.trim().is_empty())
                .map(|frag| self.normalize(frag))
                .collect(),
            TokenizerKind::Word => raw.split_whitespace().map(|w| self.normalize(w)).collect(),
        }
    }

    fn normalize(&self, fragment: &str) -> String {
        let fragment = if self.trim { fragment.trim() } else { fragment };
        if self.lowercase {
            fragment.to_lowercase()
        } else {
            fragment.to_string()
        }
    }

    /// Joins tokens with the canonical separator.
    pub fn join<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        let mut out = String::new();
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 {
                out.push_str(self.joiner());
            }
            out.push_str(tok.as_ref());
        }
        out
    }
}

/// One tokenized caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    /// 0-based line number in the source file.
    pub index: usize,
    pub tokens: Vec<String>,
    pub raw: String,
}

impl CaptionRecord {
    /// Builds a record from pre-split tags, normalizing each one without
    /// re-tokenizing it.
    pub fn from_tags<S: AsRef<str>>(
        index: usize,
        tags: &[S],
        mode: TokenizationMode,
    ) -> Result<Self, CaptionError> {
        let mut tokens = Vec::with_capacity(tags.len());
        for tag in tags {
            let tag = tag.as_ref();
            if tag.trim().is_empty() {
                continue;
            }
            let tok = mode.normalize(tag);
            if tok.chars().any(|c| mode.is_delimiter(c)) {
                return Err(CaptionError::InvalidTag { index, tag: tag.to_string() });
            }
            tokens.push(tok);
        }
        if tokens.is_empty() {
            return Err(CaptionError::BlankCaption { index });
        }
        let raw = mode.join(&tokens);
        Ok(Self { index, tokens, raw })
    }
}

/// Tokenizes one raw caption.
pub fn parse_caption(
    raw: &str,
    mode: TokenizationMode,
    index: usize,
) -> Result<CaptionRecord, CaptionError> {
    let tokens = mode.tokenize(raw);
    if tokens.is_empty() {
        return Err(CaptionError::BlankCaption { index });
    }
    Ok(CaptionRecord { index, tokens, raw: raw.to_string() })
}

/// The set of trigger phrases whose tokens are never dropped.
///
/// In tag mode every phrase is a single tag (`japanese man` stays whole); in
/// word mode a phrase is a run of words matched contiguously.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct TriggerSet {
    phrases: Vec<Vec<String>>,
    tokens: BTreeSet<String>,
}

impl TriggerSet {
    /// Normalizes each phrase with `mode` and checks the set invariants.
    pub fn new<I, S>(phrases: I, mode: TokenizationMode) -> Result<Self, CaptionError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut parsed = Vec::new();
        for phrase in phrases {
            let phrase = phrase.as_ref();
            let tokens = mode.tokenize(phrase);
            if tokens.is_empty() {
                return Err(CaptionError::BlankTrigger { phrase: phrase.to_string() });
            }
            if mode.kind == TokenizerKind::Tag && tokens.len() > 1 {
                return Err(CaptionError::MultiTagTrigger { phrase: phrase.to_string() });
            }
            parsed.push(tokens);
        }
        Self::from_phrases(parsed)
    }

    /// Builds a set from already-normalized token sequences.
    pub fn from_phrases(phrases: Vec<Vec<String>>) -> Result<Self, CaptionError> {
        if phrases.is_empty() {
            return Err(CaptionError::EmptyTriggerSet);
        }
        let mut seen = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for phrase in &phrases {
            if phrase.is_empty() || phrase.iter().any(|t| t.trim().is_empty()) {
                return Err(CaptionError::BlankTrigger { phrase: phrase.join(" ") });
            }
            if !seen.insert(phrase.clone()) {
                return Err(CaptionError::DuplicateTrigger { phrase: phrase.join(" ") });
            }
            tokens.extend(phrase.iter().cloned());
        }
        Ok(Self { phrases, tokens })
    }

    pub fn phrases(&self) -> &[Vec<String>] {
        &self.phrases
    }

    /// Every token that belongs to some trigger phrase.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn is_trigger_token(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    /// True if `phrase` occurs in `tokens` as a contiguous run.
    pub fn phrase_occurs(phrase: &[String], tokens: &[String]) -> bool {
        match phrase.len() {
            0 => false,
            1 => tokens.iter().any(|t| *t == phrase[0]),
            n => tokens.windows(n).any(|w| w == phrase),
        }
    }

    /// True if any trigger phrase occurs in `tokens`.
    pub fn matches(&self, tokens: &[String]) -> bool {
        self.phrases.iter().any(|p| Self::phrase_occurs(p, tokens))
    }

    /// Human-readable phrases, words joined by a space.
    pub fn display_phrases(&self) -> Vec<String> {
        self.phrases.iter().map(|p| p.join(" ")).collect()
    }
}

impl TryFrom<Vec<Vec<String>>> for TriggerSet {
    type Error = CaptionError;

    fn try_from(phrases: Vec<Vec<String>>) -> Result<Self, Self::Error> {
        Self::from_phrases(phrases)
    }
}

impl From<TriggerSet> for Vec<Vec<String>> {
    fn from(set: TriggerSet) -> Self {
        set.phrases
    }
}
