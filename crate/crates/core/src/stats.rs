//! Tag-frequency reports and observed drop rates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{effective_probability, AugmentedCaption, VariantMode};
use crate::caption::{CaptionRecord, TriggerSet};
use crate::policy::{DropoutPolicy, ScheduleConfig, ScheduleError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub token: String,
    /// Number of captions containing the token.
    pub count: u64,
    /// `count / number of captions`.
    pub ratio: f64,
    pub trigger: bool,
}

/// Caption-presence counts over a whole dataset, most frequent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub captions: u64,
    pub entries: Vec<FrequencyEntry>,
}

impl FrequencyReport {
    /// Keeps only the first `k` entries.
    pub fn top(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }
}

pub fn tag_frequency(dataset: &[CaptionRecord], trigger: &TriggerSet) -> FrequencyReport {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for rec in dataset {
        let distinct: BTreeSet<&str> = rec.tokens.iter().map(String::as_str).collect();
        for tok in distinct {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let n = dataset.len() as u64;
    let mut entries: Vec<FrequencyEntry> = counts
        .into_iter()
        .map(|(token, count)| FrequencyEntry {
            token: String::from(token),
            count,
            ratio: if n == 0 { 0.0 } else { count as f64 / n as f64 },
            trigger: trigger.is_trigger_token(token),
        })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    FrequencyReport { captions: n, entries }
}

/// Dropped and total occurrences of one token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropTally {
    pub dropped: u64,
    pub total: u64,
}

impl DropTally {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dropped as f64 / self.total as f64
        }
    }
}

/// Running per-token tallies; merge is commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropCounter {
    tallies: BTreeMap<String, DropTally>,
}

impl DropCounter {
    pub fn add(&mut self, caption: &AugmentedCaption) {
        for tok in &caption.kept {
            self.tallies.entry(tok.clone()).or_default().total += 1;
        }
        for tok in &caption.dropped {
            let t = self.tallies.entry(tok.clone()).or_default();
            t.total += 1;
            t.dropped += 1;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (tok, t) in other.tallies {
            let mine = self.tallies.entry(tok).or_default();
            mine.dropped += t.dropped;
            mine.total += t.total;
        }
        self
    }

    pub fn tallies(&self) -> &BTreeMap<String, DropTally> {
        &self.tallies
    }

    pub fn rates(&self) -> BTreeMap<String, f64> {
        self.tallies.iter().map(|(t, c)| (t.clone(), c.rate())).collect()
    }
}

/// Observed fraction of dropped occurrences per token.
pub fn empirical_drop_rates<'a, I>(stream: I) -> BTreeMap<String, f64>
where
    I: IntoIterator<Item = &'a AugmentedCaption>,
{
    let mut counter = DropCounter::default();
    for cap in stream {
        counter.add(cap);
    }
    counter.rates()
}

/// Observed against planned drops for one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub token: String,
    pub occurrences: u64,
    pub observed_rate: f64,
    /// Mean planned probability over the token's occurrences.
    pub expected_rate: f64,
    /// Allowed deviation of the observed rate: three binomial standard deviations.
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares a stream's drops with the probabilities `policy`, `cfg` and `mode`
/// assign to each occurrence.
///
/// Occurrences are independent Bernoulli draws with per-step probabilities,
/// so the dropped count has variance `sum p(1-p)`. A token passes when its
/// dropped count lies within three standard deviations of `sum p`; tokens
/// whose every probability is 0 or 1 must match exactly.
pub fn check_against_plan<'a, I>(
    stream: I,
    policy: &DropoutPolicy,
    cfg: &ScheduleConfig,
    mode: VariantMode,
) -> Result<Vec<RateCheck>, ScheduleError>
where
    I: IntoIterator<Item = &'a AugmentedCaption>,
{
    #[derive(Default)]
    struct Acc {
        n: u64,
        dropped: u64,
        mean: f64,
        var: f64,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for cap in stream {
        let occurrences = cap.kept.iter().map(|t| (t, false)).chain(cap.dropped.iter().map(|t| (t, true)));
        for (tok, dropped) in occurrences {
            let p = effective_probability(policy, cfg, tok, cap.step, mode)?;
            let a = acc.entry(tok.as_str()).or_default();
            a.n += 1;
            a.dropped += dropped as u64;
            a.mean += p;
            a.var += p * (1.0 - p);
        }
    }
    Ok(acc
        .into_iter()
        .map(|(token, a)| {
            let n = a.n as f64;
            let slack = 3.0 * libm::sqrt(a.var) + 1e-9;
            let pass = libm::fabs(a.dropped as f64 - a.mean) <= slack;
            RateCheck {
                token: String::from(token),
                occurrences: a.n,
                observed_rate: a.dropped as f64 / n,
                expected_rate: a.mean / n,
                tolerance: slack / n,
                pass,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::TokenizationMode;
    use alloc::string::ToString;
    use alloc::vec;

    fn rec(index: usize, tokens: &[&str]) -> CaptionRecord {
        CaptionRecord { index, tokens: tokens.iter().map(|s| s.to_string()).collect(), raw: String::new() }
    }

    fn trig() -> TriggerSet {
        TriggerSet::new(["t"], TokenizationMode::tag()).unwrap()
    }

    #[test]
    fn hand_enumerated_frequencies() {
        let report = tag_frequency(&[rec(0, &["t", "a"]), rec(1, &["a"])], &trig());
        let rows: Vec<(&str, u64, bool)> =
            report.entries.iter().map(|e| (e.token.as_str(), e.count, e.trigger)).collect();
        assert_eq!(rows, [("a", 2, false), ("t", 1, true)]);
        assert_eq!(report.entries[0].ratio, 1.0);
    }

    #[test]
    fn single_caption_counts_once_each() {
        let report = tag_frequency(&[rec(0, &["x", "y", "x"])], &trig());
        assert!(report.entries.iter().all(|e| e.count == 1));
    }

    #[test]
    fn identical_captions_multiply() {
        let data: Vec<CaptionRecord> = (0..4).map(|i| rec(i, &["t", "q"])).collect();
        let report = tag_frequency(&data, &trig());
        assert!(report.entries.iter().all(|e| e.count == 4 && e.ratio == 1.0));
        assert_eq!(report.clone().top(1).entries.len(), 1);
    }

    fn aug(kept: &[&str], dropped: &[&str]) -> AugmentedCaption {
        AugmentedCaption {
            step: 1,
            caption_index: 0,
            kept: kept.iter().map(|s| s.to_string()).collect(),
            dropped: dropped.iter().map(|s| s.to_string()).collect(),
            seed_used: 0,
            empty: kept.is_empty(),
        }
    }

    #[test]
    fn drop_rates_count_occurrences() {
        let stream = vec![aug(&["t", "a"], &["b"]), aug(&["t"], &["a", "b"]), aug(&["t", "a", "b"], &[])];
        let rates = empirical_drop_rates(&stream);
        assert_eq!(rates["t"], 0.0);
        assert!((rates["a"] - 1.0 / 3.0).abs() < 1e-15);
        assert!((rates["b"] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn plan_check_flags_impossible_drops() {
        use crate::caption::TokenizationMode;
        use crate::cooccurrence::analyze;
        use crate::policy::{build_policy, PolicyParams};
        let data = vec![rec(0, &["t", "a"])];
        let trigger = TriggerSet::new(["t"], TokenizationMode::tag()).unwrap();
        let policy =
            build_policy(&analyze(&data, &trigger).unwrap(), &PolicyParams::default(), &trigger).unwrap();
        let cfg = ScheduleConfig::sd_paper();
        let ok = check_against_plan(&[aug(&["t", "a"], &[])], &policy, &cfg, VariantMode::Normal).unwrap();
        assert!(ok.iter().all(|c| c.pass));
        let bad = check_against_plan(&[aug(&["a"], &["t"])], &policy, &cfg, VariantMode::Fad).unwrap();
        assert!(!bad.iter().find(|c| c.token == "t").unwrap().pass);
    }

    #[test]
    fn counter_merge_matches_single_pass() {
        let stream = vec![aug(&["t", "a"], &["b"]), aug(&["t"], &["a", "b"]), aug(&["a"], &["c"])];
        let mut left = DropCounter::default();
        let mut right = DropCounter::default();
        left.add(&stream[0]);
        right.add(&stream[1]);
        right.add(&stream[2]);
        assert_eq!(right.merge(left).rates(), empirical_drop_rates(&stream));
    }
}
