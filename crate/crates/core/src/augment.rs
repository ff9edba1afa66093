//! Per-step token dropout with seed-derived randomness.
//!
//! For training step `i` and caption `c`, a [`SplitMix64`] generator seeded
//! with `derive_seed(global_seed, i, c.index)` yields one uniform variate per
//! non-trigger token occurrence, consumed in token order. An occurrence is
//! dropped iff its variate is below the effective probability. Trigger tokens
//! consume no variate.
//!
//! Steps are numbered from 1. With `n` captions, step `i` uses dataset
//! position `(i - 1) mod n` under cyclic sampling, or that slot of the
//! epoch's permutation under per-epoch shuffling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::CaptionRecord;
use crate::policy::{DropoutPolicy, ScheduleConfig, ScheduleError};
use crate::rng::{derive_seed, epoch_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("uniform dropout probability must lie in [0, 1], got {0}")]
    UniformProbability(f64),
    #[error("cannot sample from an empty dataset")]
    EmptyDataset,
}

/// Which dropout variant is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantMode {
    /// No dropout.
    Normal,
    /// `p_drop(w)`.
    Fad,
    /// `p_drop(w) * schedule_factor(step)`.
    Sfad,
    /// One flat probability for every non-trigger token.
    Uniform(f64),
}

impl VariantMode {
    pub fn name(&self) -> &'static str {
        match self {
            VariantMode::Normal => "normal",
            VariantMode::Fad => "fad",
            VariantMode::Sfad => "sfad",
            VariantMode::Uniform(_) => "uniform",
        }
    }
}

/// How training steps pick captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    Cycle,
    ShufflePerEpoch,
}

/// One caption after dropout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedCaption {
    pub step: u64,
    pub caption_index: usize,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub seed_used: u64,
    /// Set when every token was dropped (only possible without a trigger).
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub empty: bool,
}

/// Dropout probability of `token` at `step` under `mode`.
pub fn effective_probability(
    policy: &DropoutPolicy,
    cfg: &ScheduleConfig,
    token: &str,
    step: u64,
    mode: VariantMode,
) -> Result<f64, ScheduleError> {
    if policy.is_trigger_token(token) {
        return Ok(0.0);
    }
    Ok(match mode {
        VariantMode::Normal => 0.0,
        VariantMode::Fad => policy.probability(token),
        VariantMode::Sfad => policy.probability(token) * cfg.factor(step)?,
        VariantMode::Uniform(p) => p,
    })
}

/// Drop decisions for one cell. `None` marks an exempt token, which is kept
/// without consuming a variate.
pub fn draw_drops<I>(seed: u64, probabilities: I) -> impl Iterator<Item = bool>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut rng = SplitMix64::new(seed);
    probabilities.into_iter().map(move |p| match p {
        Some(p) => rng.bernoulli(p),
        None => false,
    })
}

/// Dataset position used at 1-based `step`.
pub fn position_for_step(len: usize, step: u64, sampling: Sampling, global_seed: u64) -> usize {
    let zero_based = step - 1;
    let slot = (zero_based % len as u64) as usize;
    match sampling {
        Sampling::Cycle => slot,
        Sampling::ShufflePerEpoch => epoch_permutation(len, zero_based / len as u64, global_seed)[slot],
    }
}

/// Dataset positions for steps `1..=steps`.
pub fn plan_positions(len: usize, steps: u64, sampling: Sampling, global_seed: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(steps as usize);
    let mut perm: Vec<usize> = Vec::new();
    for zero_based in 0..steps {
        let slot = (zero_based % len as u64) as usize;
        match sampling {
            Sampling::Cycle => out.push(slot),
            Sampling::ShufflePerEpoch => {
                if slot == 0 {
                    perm = epoch_permutation(len, zero_based / len as u64, global_seed);
                }
                out.push(perm[slot]);
            }
        }
    }
    out
}

fn epoch_permutation(len: usize, epoch: u64, global_seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    SplitMix64::new(epoch_seed(global_seed, epoch)).shuffle(&mut perm);
    perm
}

/// Applies one dropout variant to captions.
#[derive(Debug, Clone)]
pub struct Augmenter<'p> {
    policy: &'p DropoutPolicy,
    schedule: ScheduleConfig,
    mode: VariantMode,
    global_seed: u64,
    per_type: bool,
}

impl<'p> Augmenter<'p> {
    pub fn new(
        policy: &'p DropoutPolicy,
        schedule: ScheduleConfig,
        mode: VariantMode,
        global_seed: u64,
    ) -> Result<Self, AugmentError> {
        if let VariantMode::Uniform(p) = mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugmentError::UniformProbability(p));
            }
        }
        if mode == VariantMode::Sfad {
            schedule.validate()?;
        }
        Ok(Self { policy, schedule, mode, global_seed, per_type: false })
    }

    /// Repeated tokens in one caption share the decision of their first
    /// occurrence instead of drawing independently.
    pub fn per_type(mut self, on: bool) -> Self {
        self.per_type = on;
        self
    }

    pub fn mode(&self) -> VariantMode {
        self.mode
    }

    pub fn policy(&self) -> &DropoutPolicy {
        self.policy
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        &self.schedule
    }

    pub fn global_seed(&self) -> u64 {
        self.global_seed
    }

    /// Schedule multiplier at `step`; 1 unless the mode is scheduled.
    pub fn step_factor(&self, step: u64) -> Result<f64, ScheduleError> {
        match self.mode {
            VariantMode::Sfad => self.schedule.factor(step),
            _ => Ok(1.0),
        }
    }

    /// Effective probability of `token` given the step factor, or `None`
    /// for trigger tokens.
    pub fn token_probability(&self, token: &str, factor: f64) -> Option<f64> {
        if self.policy.is_trigger_token(token) {
            return None;
        }
        Some(match self.mode {
            VariantMode::Normal => 0.0,
            VariantMode::Fad => self.policy.probability(token),
            VariantMode::Sfad => self.policy.probability(token) * factor,
            VariantMode::Uniform(p) => p,
        })
    }

    pub fn augment(&self, caption: &CaptionRecord, step: u64) -> Result<AugmentedCaption, AugmentError> {
        let factor = self.step_factor(step)?;
        let seed = derive_seed(self.global_seed, step, caption.index as u64);
        let decisions: Vec<bool> = if self.per_type {
            let mut first: BTreeMap<&str, bool> = BTreeMap::new();
            let mut rng = SplitMix64::new(seed);
            caption
                .tokens
                .iter()
                .map(|tok| {
                    *first.entry(tok.as_str()).or_insert_with(|| match self.token_probability(tok, factor) {
                        Some(p) => rng.bernoulli(p),
                        None => false,
                    })
                })
                .collect()
        } else {
            draw_drops(seed, caption.tokens.iter().map(|t| self.token_probability(t, factor))).collect()
        };
        let mut kept = Vec::with_capacity(caption.tokens.len());
        let mut dropped = Vec::new();
        for (tok, drop) in caption.tokens.iter().zip(decisions) {
            if drop {
                dropped.push(tok.clone());
            } else {
                kept.push(tok.clone());
            }
        }
        let empty = kept.is_empty();
        Ok(AugmentedCaption { step, caption_index: caption.index, kept, dropped, seed_used: seed, empty })
    }

    fn check_stream(&self, len: usize, steps: u64) -> Result<(), AugmentError> {
        if len == 0 {
            return Err(AugmentError::EmptyDataset);
        }
        if self.mode == VariantMode::Sfad && steps > self.schedule.total_steps {
            return Err(ScheduleError::StepOutOfRange { step: steps, total: self.schedule.total_steps }.into());
        }
        Ok(())
    }

    /// Lazily augments steps `1..=steps`.
    pub fn stream<'d>(
        &'d self,
        dataset: &'d [CaptionRecord],
        steps: u64,
        sampling: Sampling,
    ) -> Result<impl Iterator<Item = AugmentedCaption> + 'd, AugmentError> {
        self.check_stream(dataset.len(), steps)?;
        let positions = plan_positions(dataset.len(), steps, sampling, self.global_seed);
        Ok(positions.into_iter().enumerate().map(move |(i, pos)| {
            self.augment(&dataset[pos], i as u64 + 1).expect("steps checked against the schedule")
        }))
    }

    /// Validates a stream request and returns the dataset position of every step.
    pub fn plan(&self, len: usize, steps: u64, sampling: Sampling) -> Result<Vec<usize>, AugmentError> {
        self.check_stream(len, steps)?;
        Ok(plan_positions(len, steps, sampling, self.global_seed))
    }
}

/// Augments one caption at `step`.
pub fn augment_caption(
    caption: &CaptionRecord,
    policy: &DropoutPolicy,
    cfg: &ScheduleConfig,
    step: u64,
    mode: VariantMode,
    global_seed: u64,
) -> Result<AugmentedCaption, AugmentError> {
    Augmenter::new(policy, *cfg, mode, global_seed)?.augment(caption, step)
}

/// Augments steps `1..=steps` in order.
pub fn augment_stream(
    dataset: &[CaptionRecord],
    policy: &DropoutPolicy,
    cfg: &ScheduleConfig,
    steps: u64,
    mode: VariantMode,
    global_seed: u64,
    sampling: Sampling,
) -> Result<Vec<AugmentedCaption>, AugmentError> {
    let augmenter = Augmenter::new(policy, *cfg, mode, global_seed)?;
    let out = augmenter.stream(dataset, steps, sampling)?.collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{TokenizationMode, TriggerSet};
    use crate::cooccurrence::analyze;
    use crate::policy::{build_policy, PolicyParams};
    use alloc::string::ToString;
    use alloc::vec;

    fn rec(index: usize, tokens: &[&str]) -> CaptionRecord {
        CaptionRecord { index, tokens: tokens.iter().map(|s| s.to_string()).collect(), raw: String::new() }
    }

    fn policy_with(data: &[CaptionRecord], p_min: f64, p_max: f64) -> DropoutPolicy {
        let trigger = TriggerSet::new(["t"], TokenizationMode::tag()).unwrap();
        let table = analyze(data, &trigger).unwrap();
        build_policy(&table, &PolicyParams { p_min, p_max, ..PolicyParams::default() }, &trigger).unwrap()
    }

    fn corpus() -> Vec<CaptionRecord> {
        vec![rec(0, &["t", "a", "b"]), rec(1, &["t", "a"]), rec(2, &["c", "d"])]
    }

    #[test]
    fn normal_mode_keeps_everything() {
        let data = corpus();
        let policy = policy_with(&data, 0.35, 1.0);
        let out = augment_caption(&data[0], &policy, &ScheduleConfig::sd_paper(), 3, VariantMode::Normal, 1).unwrap();
        assert_eq!(out.kept, data[0].tokens);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn certain_drop_leaves_only_trigger() {
        let data = corpus();
        let policy = policy_with(&data, 1.0, 1.0);
        let out = augment_caption(&data[0], &policy, &ScheduleConfig::sd_paper(), 3, VariantMode::Fad, 1).unwrap();
        assert_eq!(out.kept, ["t"]);
        assert_eq!(out.dropped, ["a", "b"]);
        assert!(!out.empty);
    }

    #[test]
    fn captions_without_trigger_can_empty_out() {
        let data = corpus();
        let policy = policy_with(&data, 1.0, 1.0);
        let out = augment_caption(&data[2], &policy, &ScheduleConfig::sd_paper(), 1, VariantMode::Fad, 1).unwrap();
        assert!(out.kept.is_empty() && out.empty);
    }

    #[test]
    fn effective_probability_per_mode() {
        let data = corpus();
        let policy = policy_with(&data, 0.35, 1.0);
        let cfg = ScheduleConfig::literal(100, 20, 80, 3.0);
        for mode in [VariantMode::Normal, VariantMode::Fad, VariantMode::Sfad, VariantMode::Uniform(0.7)] {
            assert_eq!(effective_probability(&policy, &cfg, "t", 50, mode).unwrap(), 0.0);
        }
        assert_eq!(effective_probability(&policy, &cfg, "a", 50, VariantMode::Normal).unwrap(), 0.0);
        assert_eq!(effective_probability(&policy, &cfg, "a", 50, VariantMode::Fad).unwrap(), policy.probability("a"));
        assert_eq!(effective_probability(&policy, &cfg, "zz", 50, VariantMode::Uniform(0.7)).unwrap(), 0.7);
        // "b" has ratio 0.5 = center, so p_drop = 0.675; s = 0.5 gives 1 - e^{-1.5}.
        let p = effective_probability(&policy, &cfg, "b", 50, VariantMode::Sfad).unwrap();
        assert!((p - 0.524_387_141_899_81).abs() < 1e-6);
        assert!(effective_probability(&policy, &cfg, "b", 101, VariantMode::Sfad).is_err());
    }

    #[test]
    fn seed_is_recorded_and_reproducible() {
        let data = corpus();
        let policy = policy_with(&data, 0.5, 0.5);
        let aug = Augmenter::new(&policy, ScheduleConfig::sd_paper(), VariantMode::Fad, 99).unwrap();
        let a = aug.augment(&data[1], 17).unwrap();
        assert_eq!(a.seed_used, derive_seed(99, 17, 1));
        assert_eq!(a, aug.augment(&data[1], 17).unwrap());
    }

    #[test]
    fn per_type_shares_decisions() {
        let data = vec![rec(0, &["t", "w", "w", "w", "x"])];
        let policy = policy_with(&data, 0.5, 0.5);
        let aug = Augmenter::new(&policy, ScheduleConfig::sd_paper(), VariantMode::Fad, 5).unwrap().per_type(true);
        for step in 1..200 {
            let out = aug.augment(&data[0], step).unwrap();
            let kept_w = out.kept.iter().filter(|t| *t == "w").count();
            assert!(kept_w == 0 || kept_w == 3);
        }
    }

    #[test]
    fn cycle_visits_each_caption_once_per_epoch() {
        let data = corpus();
        let policy = policy_with(&data, 0.35, 1.0);
        let out = augment_stream(&data, &policy, &ScheduleConfig::sd_paper(), 3, VariantMode::Fad, 0, Sampling::Cycle)
            .unwrap();
        let idx: Vec<usize> = out.iter().map(|a| a.caption_index).collect();
        assert_eq!(idx, [0, 1, 2]);
        assert_eq!(out.iter().map(|a| a.step).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn shuffled_epochs_are_permutations() {
        let positions = plan_positions(7, 70, Sampling::ShufflePerEpoch, 11);
        for epoch in positions.chunks(7) {
            let mut e = epoch.to_vec();
            e.sort();
            assert_eq!(e, (0..7).collect::<Vec<_>>());
        }
        assert_ne!(&positions[..7], &positions[7..14]);
        for (i, &p) in positions.iter().enumerate() {
            assert_eq!(position_for_step(7, i as u64 + 1, Sampling::ShufflePerEpoch, 11), p);
        }
    }

    #[test]
    fn stream_rejects_bad_requests() {
        let data = corpus();
        let policy = policy_with(&data, 0.35, 1.0);
        let aug = Augmenter::new(&policy, ScheduleConfig::literal(10, 1, 5, 1.0), VariantMode::Sfad, 0).unwrap();
        assert!(aug.stream(&data, 11, Sampling::Cycle).is_err());
        assert!(matches!(aug.stream(&[], 1, Sampling::Cycle), Err(AugmentError::EmptyDataset)));
        assert!(Augmenter::new(&policy, ScheduleConfig::sd_paper(), VariantMode::Uniform(1.5), 0).is_err());
    }

    #[test]
    fn half_probability_converges() {
        let data = vec![rec(0, &["t", "a", "b"])];
        let policy = policy_with(&data, 0.5, 0.5);
        let aug = Augmenter::new(&policy, ScheduleConfig::sd_paper(), VariantMode::Fad, 2024).unwrap();
        let n = 100_000u64;
        let dropped_a = (1..=n)
            .filter(|&step| aug.augment(&data[0], step).unwrap().dropped.iter().any(|t| t == "a"))
            .count();
        // 3 sigma of Binomial(100000, 0.5) is about 474.
        assert!((dropped_a as i64 - 50_000).abs() <= 500, "{dropped_a}");
    }
}
