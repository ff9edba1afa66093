//! Trigger-conditioned co-occurrence counts.
//!
//! Let `C` be the captions that contain at least one trigger phrase and
//! `n_t = |C|`. For every token `w`, `count[w]` is the number of captions in
//! `C` in which `w` appears at least once, and `r(w) = count[w] / n_t`.
//! Repeated tokens inside one caption count once.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{CaptionRecord, TriggerSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CooccurrenceError {
    #[error("trigger {} does not occur in any caption", .trigger.join(" | "))]
    TriggerAbsent { trigger: Vec<String> },
    #[error("table entry {token:?} has count {count} above n_t {n_t}")]
    CountAboveTotal { token: String, count: u64, n_t: u64 },
    #[error("table lists {token:?} twice")]
    DuplicateEntry { token: String },
}

/// Partial counts; shards of a corpus can be counted separately and merged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    pub n_t: u64,
    pub counts: BTreeMap<String, u64>,
}

impl CooccurrenceCounts {
    pub fn add_caption(&mut self, tokens: &[String], trigger: &TriggerSet) {
        if !trigger.matches(tokens) {
            return;
        }
        self.n_t += 1;
        let distinct: BTreeSet<&String> = tokens.iter().collect();
        for tok in distinct {
            *self.counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.n_t += other.n_t;
        for (tok, n) in other.counts {
            *self.counts.entry(tok).or_insert(0) += n;
        }
        self
    }

    pub fn finish(self, trigger: TriggerSet) -> Result<CooccurrenceTable, CooccurrenceError> {
        if self.n_t == 0 {
            return Err(CooccurrenceError::TriggerAbsent { trigger: trigger.display_phrases() });
        }
        Ok(CooccurrenceTable { trigger, n_t: self.n_t, counts: self.counts })
    }
}

/// Co-occurrence statistics of a corpus with respect to a trigger set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableDocument", into = "TableDocument")]
pub struct CooccurrenceTable {
    trigger: TriggerSet,
    n_t: u64,
    counts: BTreeMap<String, u64>,
}

/// One row of a table, as serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub token: String,
    pub count: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableDocument {
    trigger: TriggerSet,
    n_t: u64,
    entries: Vec<TableEntry>,
}

/// Counts trigger co-occurrence over `dataset`.
///
/// A caption is counted when it contains any of the trigger phrases.
pub fn analyze(
    dataset: &[CaptionRecord],
    trigger: &TriggerSet,
) -> Result<CooccurrenceTable, CooccurrenceError> {
    let mut acc = CooccurrenceCounts::default();
    for rec in dataset {
        acc.add_caption(&rec.tokens, trigger);
    }
    acc.finish(trigger.clone())
}

impl CooccurrenceTable {
    pub fn trigger(&self) -> &TriggerSet {
        &self.trigger
    }

    /// Number of captions containing the trigger.
    pub fn n_t(&self) -> u64 {
        self.n_t
    }

    pub fn is_degenerate(&self) -> bool {
        self.n_t == 0
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    /// `count[token] / n_t`, or 0 for tokens that never co-occur.
    pub fn ratio(&self, token: &str) -> f64 {
        if self.n_t == 0 {
            return 0.0;
        }
        self.count(token) as f64 / self.n_t as f64
    }

    /// Tokens with their counts, in token order.
    pub fn counts(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(t, &n)| (t.as_str(), n))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Rows sorted by descending ratio, ties broken by token.
    pub fn entries(&self) -> Vec<TableEntry> {
        let mut rows: Vec<TableEntry> = self
            .counts
            .iter()
            .map(|(token, &count)| TableEntry { token: token.clone(), count, ratio: self.ratio(token) })
            .collect();
        // Ratios share one denominator, so ordering by count is ordering by ratio.
        rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        rows
    }
}

impl From<CooccurrenceTable> for TableDocument {
    fn from(table: CooccurrenceTable) -> Self {
        let entries = table.entries();
        TableDocument { trigger: table.trigger, n_t: table.n_t, entries }
    }
}

impl TryFrom<TableDocument> for CooccurrenceTable {
    type Error = CooccurrenceError;

    fn try_from(doc: TableDocument) -> Result<Self, Self::Error> {
        let mut counts = BTreeMap::new();
        for e in doc.entries {
            if e.count > doc.n_t {
                return Err(CooccurrenceError::CountAboveTotal { token: e.token, count: e.count, n_t: doc.n_t });
            }
            if counts.insert(e.token.clone(), e.count).is_some() {
                return Err(CooccurrenceError::DuplicateEntry { token: e.token });
            }
        }
        Ok(CooccurrenceTable { trigger: doc.trigger, n_t: doc.n_t, counts })
    }
}
