//! On-disk documents and the augmented-caption line formats.
//!
//! * table: `{tokenization, trigger, n_t, entries: [{token, count, ratio}]}`
//! * policy: `{tokenization, params, trigger, entries: [{token, ratio, p_drop}]}`
//! * augmented stream, full: one `{step, caption_index, kept, dropped, seed_used}`
//!   object per line (`"empty": true` is added when nothing was kept)
//! * augmented stream, compact: one `{step, caption}` object per line, where
//!   `caption` is the kept tokens joined by `", "` (tag mode) or `" "` (word mode)

use std::io::{self, BufRead, Write};

use fad_core::augment::AugmentedCaption;
use fad_core::caption::TokenizationMode;
use fad_core::cooccurrence::CooccurrenceTable;
use fad_core::policy::{DropoutPolicy, ScheduleConfig};
use fad_core::stats::FrequencyReport;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableFile {
    pub tokenization: TokenizationMode,
    #[serde(flatten)]
    pub table: CooccurrenceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub tokenization: TokenizationMode,
    #[serde(flatten)]
    pub policy: DropoutPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    #[default]
    Jsonl,
    Compact,
}

/// One line of the compact stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactRecord {
    pub step: u64,
    pub caption: String,
}

impl CompactRecord {
    pub fn from_augmented(rec: &AugmentedCaption, mode: TokenizationMode) -> Self {
        Self { step: rec.step, caption: mode.join(&rec.kept) }
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("line {line}: step {step} does not follow step {previous}")]
    OutOfOrder { line: usize, step: u64, previous: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")
}

pub fn write_record<W: Write + ?Sized>(
    out: &mut W,
    rec: &AugmentedCaption,
    format: StreamFormat,
    mode: TokenizationMode,
) -> io::Result<()> {
    match format {
        StreamFormat::Jsonl => serde_json::to_writer(&mut *out, rec)?,
        StreamFormat::Compact => serde_json::to_writer(&mut *out, &CompactRecord::from_augmented(rec, mode))?,
    }
    out.write_all(b"\n")
}

pub fn write_stream<'a, W, I>(mut out: W, records: I, format: StreamFormat, mode: TokenizationMode) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a AugmentedCaption>,
{
    for rec in records {
        write_record(&mut out, rec, format, mode)?;
    }
    out.flush()
}

fn read_lines<R, T, F>(source: R, mut parse: F) -> Result<Vec<T>, StreamError>
where
    R: BufRead,
    F: FnMut(&str) -> Result<(u64, T), String>,
{
    let mut out = Vec::new();
    let mut previous = None;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (step, value) = parse(&line).map_err(|reason| StreamError::Format { line: i + 1, reason })?;
        if let Some(previous) = previous {
            if step <= previous {
                return Err(StreamError::OutOfOrder { line: i + 1, step, previous });
            }
        }
        previous = Some(step);
        out.push(value);
    }
    Ok(out)
}

/// Reads a full stream; steps must be strictly ascending.
pub fn read_jsonl_stream<R: BufRead>(source: R) -> Result<Vec<AugmentedCaption>, StreamError> {
    read_lines(source, |line| {
        let rec: AugmentedCaption = serde_json::from_str(line).map_err(|e| e.to_string())?;
        Ok((rec.step, rec))
    })
}

/// Reads a compact stream; steps must be strictly ascending.
pub fn read_compact_stream<R: BufRead>(source: R) -> Result<Vec<CompactRecord>, StreamError> {
    read_lines(source, |line| {
        let rec: CompactRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        Ok((rec.step, rec))
    })
}

/// `step factor` per line, for plotting.
pub fn write_schedule_text<W: Write>(mut out: W, points: &[(u64, f64)]) -> io::Result<()> {
    writeln!(out, "# step factor")?;
    for (step, factor) in points {
        writeln!(out, "{step} {factor}")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub schedule: ScheduleConfig,
    pub points: Vec<(u64, f64)>,
}

/// `token count` per line; trigger tokens are marked with a trailing `*`.
pub fn write_frequency_text<W: Write>(mut out: W, report: &FrequencyReport) -> io::Result<()> {
    writeln!(out, "# token\tcount\tratio ({} captions, * = trigger)", report.captions)?;
    for e in &report.entries {
        let mark = if e.trigger { "*" } else { "" };
        writeln!(out, "{}{mark}\t{}\t{:.6}", e.token, e.count, e.ratio)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use fad_core::caption::{CaptionRecord, TriggerSet};
    use fad_core::cooccurrence::analyze;
    use fad_core::policy::{build_policy, PolicyParams};

    fn table() -> CooccurrenceTable {
        let rec = |i: usize, t: &[&str]| CaptionRecord {
            index: i,
            tokens: t.iter().map(|s| s.to_string()).collect(),
            raw: String::new(),
        };
        let trigger = TriggerSet::new(["t"], TokenizationMode::tag()).unwrap();
        analyze(&[rec(0, &["t", "a", "b"]), rec(1, &["t", "a"]), rec(2, &["c"])], &trigger).unwrap()
    }

    #[test]
    fn table_document_shape() {
        let file = TableFile { tokenization: TokenizationMode::tag(), table: table() };
        let json: serde_json::Value = serde_json::to_value(&file).unwrap();
        assert_eq!(json["n_t"], 2);
        assert_eq!(json["trigger"], serde_json::json!([["t"]]));
        let tokens: Vec<&str> = json["entries"].as_array().unwrap().iter().map(|e| e["token"].as_str().unwrap()).collect();
        assert_eq!(tokens, ["a", "t", "b"]);
        assert_eq!(json["entries"][2]["ratio"], 0.5);
        let back: TableFile = serde_json::from_value(json).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn table_with_impossible_count_is_rejected() {
        let text = r#"{"tokenization":{"kind":"tag","lowercase":true,"trim":true},
            "trigger":[["t"]],"n_t":1,"entries":[{"token":"a","count":2,"ratio":2.0}]}"#;
        assert!(serde_json::from_str::<TableFile>(text).is_err());
    }

    #[test]
    fn policy_document_roundtrip() {
        let t = table();
        let policy = build_policy(&t, &PolicyParams::default(), t.trigger()).unwrap();
        let file = PolicyFile { tokenization: TokenizationMode::tag(), policy };
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"p_drop\""));
        assert_eq!(serde_json::from_str::<PolicyFile>(&text).unwrap(), file);
    }

    fn aug(step: u64, kept: &[&str]) -> AugmentedCaption {
        AugmentedCaption {
            step,
            caption_index: 0,
            kept: kept.iter().map(|s| s.to_string()).collect(),
            dropped: vec!["x".into()],
            seed_used: 7,
            empty: kept.is_empty(),
        }
    }

    #[test]
    fn full_line_layout() {
        let mut buf = Vec::new();
        write_stream(&mut buf, &[aug(1, &["t", "a"]), aug(2, &[])], StreamFormat::Jsonl, TokenizationMode::tag())
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"step":1,"caption_index":0,"kept":["t","a"],"dropped":["x"],"seed_used":7}"#);
        assert!(lines[1].ends_with(r#""seed_used":7,"empty":true}"#));
        assert_eq!(read_jsonl_stream(text.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn compact_joins_with_canonical_delimiter() {
        let mut buf = Vec::new();
        write_stream(&mut buf, &[aug(1, &["t", "red hat"])], StreamFormat::Compact, TokenizationMode::tag()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"step\":1,\"caption\":\"t, red hat\"}\n");
        let mut buf = Vec::new();
        write_stream(&mut buf, &[aug(3, &["a", "b"])], StreamFormat::Compact, TokenizationMode::word()).unwrap();
        assert_eq!(read_compact_stream(buf.as_slice()).unwrap()[0], CompactRecord { step: 3, caption: "a b".into() });
    }

    #[test]
    fn stream_readers_enforce_order_and_shape() {
        let text = "{\"step\":2,\"caption\":\"a\"}\n{\"step\":2,\"caption\":\"b\"}\n";
        assert!(matches!(read_compact_stream(text.as_bytes()), Err(StreamError::OutOfOrder { line: 2, .. })));
        assert!(matches!(read_compact_stream("{\"step\":1}\n".as_bytes()), Err(StreamError::Format { line: 1, .. })));
    }
}
