//! Dropout probabilities and the training-step schedule.
//!
//! A token with co-occurrence ratio `r` is dropped with probability
//!
//! ```text
//! p_drop(r) = p_min + (p_max - p_min) * sigmoid(slope * (r - center))
//! ```
//!
//! and the scheduled variant multiplies that by a per-step factor. Trigger
//! tokens are pinned to probability zero.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::TriggerSet;
use crate::cooccurrence::CooccurrenceTable;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("need 0 <= p_min <= p_max <= 1, got p_min={p_min}, p_max={p_max}")]
    ProbabilityRange { p_min: f64, p_max: f64 },
    #[error("center must lie in [0, 1], got {0}")]
    Center(f64),
    #[error("slope must be positive and finite, got {0}")]
    Slope(f64),
    #[error("token {token:?} has p_drop {p_drop} outside the policy bounds")]
    EntryOutOfBounds { token: String, p_drop: f64 },
    #[error("trigger token {0:?} has a nonzero dropout probability")]
    TriggerNotPinned(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("step {step} is beyond the schedule's {total} total steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("schedule needs warmup_end < full_step <= total_steps, got {warmup_end}, {full_step}, {total}")]
    Steps { warmup_end: u64, full_step: u64, total: u64 },
    #[error("schedule factors must lie in [0, 1], got start={start}, end={end}")]
    Factor { start: f64, end: f64 },
    #[error("exponential rate must be positive and finite, got {0}")]
    Beta(f64),
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Parameters of the ratio-to-probability mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub p_min: f64,
    pub p_max: f64,
    /// Ratio at which the sigmoid is steepest.
    pub center: f64,
    pub slope: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self { p_min: 0.35, p_max: 1.0, center: 0.5, slope: 10.0 }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(in_unit(self.p_min) && in_unit(self.p_max) && self.p_min <= self.p_max) {
            return Err(PolicyError::ProbabilityRange { p_min: self.p_min, p_max: self.p_max });
        }
        if !in_unit(self.center) {
            return Err(PolicyError::Center(self.center));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(PolicyError::Slope(self.slope));
        }
        Ok(())
    }
}

/// Maps a co-occurrence ratio to a dropout probability in `[p_min, p_max]`.
pub fn dropout_probability(ratio: f64, params: &PolicyParams) -> f64 {
    let span = params.p_max - params.p_min;
    let p = params.p_min + span * sigmoid(params.slope * (ratio - params.center));
    p.clamp(params.p_min, params.p_max)
}

/// Per-token dropout probabilities derived from a co-occurrence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub struct DropoutPolicy {
    params: PolicyParams,
    trigger: TriggerSet,
    entries: BTreeMap<String, PolicyEntry>,
    unseen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PolicyEntry {
    ratio: f64,
    p_drop: f64,
}

/// One serialized policy row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub token: String,
    pub ratio: f64,
    pub p_drop: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyDocument {
    params: PolicyParams,
    trigger: TriggerSet,
    entries: Vec<PolicyRow>,
}

/// Assigns every table token its dropout probability and pins the trigger
/// tokens to zero. Tokens missing from the table get `dropout_probability(0)`.
pub fn build_policy(
    table: &CooccurrenceTable,
    params: &PolicyParams,
    trigger: &TriggerSet,
) -> Result<DropoutPolicy, PolicyError> {
    params.validate()?;
    let mut entries = BTreeMap::new();
    for (token, _) in table.counts() {
        let ratio = table.ratio(token);
        let p_drop = if trigger.is_trigger_token(token) { 0.0 } else { dropout_probability(ratio, params) };
        entries.insert(String::from(token), PolicyEntry { ratio, p_drop });
    }
    for token in trigger.tokens() {
        entries
            .entry(String::from(token))
            .and_modify(|e| e.p_drop = 0.0)
            .or_insert(PolicyEntry { ratio: table.ratio(token), p_drop: 0.0 });
    }
    Ok(DropoutPolicy {
        params: *params,
        trigger: trigger.clone(),
        entries,
        unseen: dropout_probability(0.0, params),
    })
}

impl DropoutPolicy {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn trigger(&self) -> &TriggerSet {
        &self.trigger
    }

    pub fn is_trigger_token(&self, token: &str) -> bool {
        self.trigger.is_trigger_token(token)
    }

    /// `p_drop(token)`; zero for trigger tokens.
    pub fn probability(&self, token: &str) -> f64 {
        if self.trigger.is_trigger_token(token) {
            return 0.0;
        }
        self.entries.get(token).map_or(self.unseen, |e| e.p_drop)
    }

    pub fn ratio(&self, token: &str) -> f64 {
        self.entries.get(token).map_or(0.0, |e| e.ratio)
    }

    /// Probability used for tokens that never co-occur with the trigger.
    pub fn unseen_probability(&self) -> f64 {
        self.unseen
    }

    /// Rows sorted by descending ratio, ties broken by token.
    pub fn rows(&self) -> Vec<PolicyRow> {
        let mut rows: Vec<PolicyRow> = self
            .entries
            .iter()
            .map(|(token, e)| PolicyRow { token: token.clone(), ratio: e.ratio, p_drop: e.p_drop })
            .collect();
        rows.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.token.cmp(&b.token)));
        rows
    }
}

impl From<DropoutPolicy> for PolicyDocument {
    fn from(policy: DropoutPolicy) -> Self {
        let entries = policy.rows();
        PolicyDocument { params: policy.params, trigger: policy.trigger, entries }
    }
}

impl TryFrom<PolicyDocument> for DropoutPolicy {
    type Error = PolicyError;

    fn try_from(doc: PolicyDocument) -> Result<Self, Self::Error> {
        doc.params.validate()?;
        let mut entries = BTreeMap::new();
        for row in doc.entries {
            if doc.trigger.is_trigger_token(&row.token) {
                if row.p_drop != 0.0 {
                    return Err(PolicyError::TriggerNotPinned(row.token));
                }
            } else if !(doc.params.p_min..=doc.params.p_max).contains(&row.p_drop) {
                return Err(PolicyError::EntryOutOfBounds { token: row.token, p_drop: row.p_drop });
            }
            entries.insert(row.token, PolicyEntry { ratio: row.ratio, p_drop: row.p_drop });
        }
        Ok(DropoutPolicy {
            params: doc.params,
            unseen: dropout_probability(0.0, &doc.params),
            trigger: doc.trigger,
            entries,
        })
    }
}

/// Curve traced by the schedule between warmup and full scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleShape {
    Exponential,
    Linear,
    Constant,
}

/// Step-dependent multiplier applied to every dropout probability.
///
/// Before `warmup_end` the factor is `start`; from `full_step` on it is
/// `end`; in between it moves from `start` towards `end` along `shape`.
/// `start > end` gives a descending schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub shape: ScheduleShape,
    /// Rate of the exponential shape.
    pub beta: f64,
    pub warmup_end: u64,
    pub full_step: u64,
    pub total_steps: u64,
    pub start: f64,
    pub end: f64,
    /// Exponential only: use `1 - exp(-beta*s)` unnormalized, jumping to
    /// the full factor at `full_step`. When false the curve is rescaled to
    /// reach it continuously.
    pub unnormalized: bool,
}

impl ScheduleConfig {
    /// The unscaled 0 → 1 exponential schedule with a jump at `full_step`.
    pub fn literal(total_steps: u64, warmup_end: u64, full_step: u64, beta: f64) -> Self {
        Self {
            shape: ScheduleShape::Exponential,
            beta,
            warmup_end,
            full_step,
            total_steps,
            start: 0.0,
            end: 1.0,
            unnormalized: true,
        }
    }

    /// 1500 steps, 10% warmup, factor rising exponentially from 0.1 to 0.8.
    pub fn sd_paper() -> Self {
        Self::from_ratios(ScheduleShape::Exponential, 1500, 0.1, 1.0, 0.1, 0.8)
    }

    /// Places `warmup_end` and `full_step` at fractions of `total_steps`.
    pub fn from_ratios(
        shape: ScheduleShape,
        total_steps: u64,
        warmup_ratio: f64,
        full_ratio: f64,
        start: f64,
        end: f64,
    ) -> Self {
        let mut cfg = Self {
            shape,
            beta: 5.0,
            warmup_end: 0,
            full_step: 1,
            total_steps,
            start,
            end,
            unnormalized: true,
        };
        cfg.place(warmup_ratio, full_ratio);
        cfg
    }

    /// Same schedule stretched or squeezed onto `total_steps` steps.
    pub fn rescaled(&self, total_steps: u64) -> Self {
        let total = self.total_steps.max(1) as f64;
        let mut cfg = *self;
        cfg.total_steps = total_steps;
        cfg.place(self.warmup_end as f64 / total, self.full_step as f64 / total);
        cfg
    }

    fn place(&mut self, warmup_ratio: f64, full_ratio: f64) {
        let total = self.total_steps.max(1);
        let at = |ratio: f64| libm::round(ratio.clamp(0.0, 1.0) * total as f64) as u64;
        self.warmup_end = at(warmup_ratio).min(total - 1);
        self.full_step = at(full_ratio).clamp(self.warmup_end + 1, total);
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.warmup_end < self.full_step && self.full_step <= self.total_steps) {
            return Err(ScheduleError::Steps {
                warmup_end: self.warmup_end,
                full_step: self.full_step,
                total: self.total_steps,
            });
        }
        let in_unit = |f: f64| (0.0..=1.0).contains(&f);
        if !(in_unit(self.start) && in_unit(self.end)) {
            return Err(ScheduleError::Factor { start: self.start, end: self.end });
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ScheduleError::Beta(self.beta));
        }
        Ok(())
    }

    /// Progress through the ramp, clamped to `[0, 1]`.
    fn progress(&self, step: u64) -> f64 {
        if step <= self.warmup_end {
            return 0.0;
        }
        if step >= self.full_step {
            return 1.0;
        }
        (step - self.warmup_end) as f64 / (self.full_step - self.warmup_end) as f64
    }

    fn shape_value(&self, step: u64) -> f64 {
        let s = self.progress(step);
        match self.shape {
            ScheduleShape::Constant => 1.0,
            ScheduleShape::Linear => s,
            ScheduleShape::Exponential if self.unnormalized => {
                if step >= self.full_step {
                    1.0
                } else {
                    -libm::expm1(-self.beta * s)
                }
            }
            ScheduleShape::Exponential => {
                if s >= 1.0 {
                    1.0
                } else {
                    libm::expm1(-self.beta * s) / libm::expm1(-self.beta)
                }
            }
        }
    }

    /// Schedule factor at `step`, see [`schedule_factor`].
    pub fn factor(&self, step: u64) -> Result<f64, ScheduleError> {
        if step > self.total_steps {
            return Err(ScheduleError::StepOutOfRange { step, total: self.total_steps });
        }
        if self.shape == ScheduleShape::Constant {
            return Ok(self.end);
        }
        if step < self.warmup_end {
            return Ok(self.start);
        }
        let g = self.shape_value(step);
        if g >= 1.0 {
            return Ok(self.end);
        }
        let (lo, hi) = if self.start <= self.end { (self.start, self.end) } else { (self.end, self.start) };
        Ok((self.start + (self.end - self.start) * g).clamp(lo, hi))
    }
}

/// Step factor in `[min(start, end), max(start, end)]`.
pub fn schedule_factor(step: u64, cfg: &ScheduleConfig) -> Result<f64, ScheduleError> {
    cfg.factor(step)
}
