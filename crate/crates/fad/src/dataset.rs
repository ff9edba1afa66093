//! Caption dataset loading.
//!
//! Two line-oriented inputs are accepted:
//!
//! * plain text, one caption per line;
//! * JSON lines, one object per line with a required `"caption"` string and
//!   an optional `"tags"` array. When `"tags"` is present it is used as the
//!   token list as-is (normalized, not re-split).
//!
//! Lines that are blank, or that yield no tokens, are skipped and counted.

use std::io::BufRead;
use std::path::Path;

use fad_core::caption::{parse_caption, CaptionError, CaptionRecord, TokenizationMode};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("dataset contains no captions")]
    EmptyDataset,
    #[error("reading captions: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    Text,
    Jsonl,
}

impl InputFormat {
    /// JSON lines for `.jsonl`/`.ndjson`/`.json` files, plain text otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => InputFormat::Jsonl,
            _ => InputFormat::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<CaptionRecord>,
    pub blank_lines: usize,
}

#[derive(Deserialize)]
struct StructuredLine {
    caption: Option<String>,
    tags: Option<Vec<String>>,
}

/// Reads one record per non-blank line; `index` is the 0-based line number.
pub fn load_dataset<R: BufRead>(
    source: R,
    format: InputFormat,
    mode: TokenizationMode,
) -> Result<Dataset, LoadError> {
    let mut records = Vec::new();
    let mut blank_lines = 0;
    for (index, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            blank_lines += 1;
            continue;
        }
        let parsed = match format {
            InputFormat::Text => parse_caption(line, mode, index),
            InputFormat::Jsonl => parse_structured(line, mode, index)?,
        };
        match parsed {
            Ok(rec) => records.push(rec),
            Err(CaptionError::BlankCaption { .. }) => blank_lines += 1,
            Err(e) => return Err(LoadError::MalformedRecord { line: index + 1, reason: e.to_string() }),
        }
    }
    if records.is_empty() {
        return Err(LoadError::EmptyDataset);
    }
    Ok(Dataset { records, blank_lines })
}

fn parse_structured(
    line: &str,
    mode: TokenizationMode,
    index: usize,
) -> Result<Result<CaptionRecord, CaptionError>, LoadError> {
    let malformed = |reason: String| LoadError::MalformedRecord { line: index + 1, reason };
    let rec: StructuredLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let caption = rec.caption.ok_or_else(|| malformed("missing \"caption\" field".into()))?;
    Ok(match rec.tags {
        Some(tags) => CaptionRecord::from_tags(index, &tags, mode).map(|mut r| {
            r.raw = caption;
            r
        }),
        None => parse_caption(&caption, mode, index),
    })
}
