//! Desk-scale disentanglement experiment.
//!
//! A synthetic corpus is built in which a trigger token is always
//! accompanied by a handful of "style" tokens, and the label is trigger
//! presence. A logistic regression over token indicators is trained on
//! captions that pass through the augmenter first. Without dropout the
//! predictive weight spreads over the trigger and its style companions;
//! frequency-aware dropout hides the companions and concentrates the weight
//! on the trigger.
//!
//! Two metrics summarize a trained model:
//!
//! * trigger weight share, `w_t / (w_t + sum of style weights)` with negative
//!   weights clipped to zero first (undefined when the denominator is zero);
//! * omission drop, accuracy on the clean corpus minus accuracy once the
//!   trigger token is removed from every caption.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{draw_drops, AugmentError, Augmenter, VariantMode};
use crate::caption::{CaptionError, CaptionRecord, TokenizationMode, TriggerSet};
use crate::cooccurrence::{analyze, CooccurrenceError};
use crate::policy::{build_policy, DropoutPolicy, PolicyError, PolicyParams, ScheduleConfig, ScheduleError};
use crate::rng::{derive_seed, epoch_seed, mix64, SplitMix64};

const CORPUS_SALT: u64 = 0xC0B9_05EE_D000_0001;

pub const TRIGGER_TOKEN: &str = "trigger";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("invalid corpus configuration: {0}")]
    Config(String),
    #[error("corpus must contain both labels")]
    SingleClass,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("schedule covers {schedule} steps but training runs {training}")]
    ScheduleMismatch { schedule: u64, training: u64 },
    #[error("need at least {min} seeds, got {got}")]
    TooFewSeeds { min: usize, got: usize },
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Cooccurrence(#[from] CooccurrenceError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    /// Trigger, style and filler tokens together.
    pub vocab_size: usize,
    pub num_captions: usize,
    pub style_tokens: usize,
    /// Chance that a style token appears in a trigger caption.
    pub style_cooccurrence: f64,
    /// Fraction of captions that contain the trigger.
    pub trigger_prevalence: f64,
    /// Chance that each filler token appears in any caption.
    pub filler_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            num_captions: 2000,
            style_tokens: 5,
            style_cooccurrence: 0.95,
            trigger_prevalence: 0.5,
            filler_rate: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |msg: String| Err(SurrogateError::Config(msg));
        if self.num_captions == 0 {
            return bad("num_captions must be positive".into());
        }
        if self.style_tokens == 0 || self.style_tokens >= self.vocab_size {
            return bad(format!("need 0 < style_tokens < vocab_size, got {} and {}", self.style_tokens, self.vocab_size));
        }
        for (name, p) in [
            ("style_cooccurrence", self.style_cooccurrence),
            ("trigger_prevalence", self.trigger_prevalence),
            ("filler_rate", self.filler_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Synthetic captions with trigger-presence labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub captions: Vec<CaptionRecord>,
    pub labels: Vec<bool>,
    pub style: Vec<String>,
    pub filler: Vec<String>,
}

impl LabeledCorpus {
    pub fn trigger_set(&self) -> TriggerSet {
        TriggerSet::new([TRIGGER_TOKEN], TokenizationMode::tag()).expect("static trigger is valid")
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

pub fn generate_corpus(cfg: &SyntheticCorpusConfig) -> Result<LabeledCorpus, SurrogateError> {
    cfg.validate()?;
    let style: Vec<String> = (0..cfg.style_tokens).map(|i| format!("style_{i}")).collect();
    let filler: Vec<String> = (0..cfg.vocab_size - cfg.style_tokens - 1).map(|i| format!("filler_{i}")).collect();
    let mut rng = SplitMix64::new(mix64(cfg.seed ^ CORPUS_SALT));
    let mode = TokenizationMode::tag();
    let mut captions = Vec::with_capacity(cfg.num_captions);
    let mut labels = Vec::with_capacity(cfg.num_captions);
    for index in 0..cfg.num_captions {
        let positive = rng.bernoulli(cfg.trigger_prevalence);
        let mut tokens = Vec::new();
        if positive {
            tokens.push(String::from(TRIGGER_TOKEN));
        }
        for s in &style {
            // Draw for every caption so that the stream layout does not depend on the label.
            if rng.bernoulli(cfg.style_cooccurrence) && positive {
                tokens.push(s.clone());
            }
        }
        for f in &filler {
            if rng.bernoulli(cfg.filler_rate) {
                tokens.push(f.clone());
            }
        }
        let raw = mode.join(&tokens);
        captions.push(CaptionRecord { index, tokens, raw });
        labels.push(positive);
    }
    Ok(LabeledCorpus { captions, labels, style, filler })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Captions per gradient step; `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 200, batch_size: None }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, num_captions: usize) -> u64 {
        match self.batch_size {
            Some(b) if b > 0 && b < num_captions => num_captions.div_ceil(b) as u64,
            _ => 1,
        }
    }

    /// Total number of gradient steps over `num_captions` captions.
    pub fn total_steps(&self, num_captions: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(num_captions)
    }
}

/// A sample as the indices of its active features.
pub type Sample = (Vec<usize>, bool);

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Mean logistic loss of `samples` and its gradient in the weights and bias.
pub fn loss_and_gradient(weights: &[f64], bias: f64, samples: &[Sample]) -> (f64, Vec<f64>, f64) {
    let mut grad = alloc::vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    let mut loss = 0.0;
    for (features, label) in samples {
        let z = bias + features.iter().map(|&f| weights[f]).sum::<f64>();
        let y = if *label { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let residual = crate::policy::sigmoid(z) - y;
        for &f in features {
            grad[f] += residual;
        }
        grad_bias += residual;
    }
    let n = samples.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad, grad_bias / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
    /// `(epoch, loss)` where loss is measured on the inputs seen that epoch.
    pub log: Vec<(usize, f64)>,
}

impl SurrogateModel {
    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(0.0)
    }

    /// Probability that `tokens` carry the trigger label.
    pub fn predict(&self, tokens: &[String]) -> f64 {
        let mut seen: Vec<&str> = Vec::with_capacity(tokens.len());
        let mut z = self.bias;
        for t in tokens {
            if !seen.contains(&t.as_str()) {
                seen.push(t);
                z += self.weight(t);
            }
        }
        crate::policy::sigmoid(z)
    }

    /// `w_t / (w_t + sum of style weights)` over clipped weights.
    pub fn trigger_share(&self, trigger: &str, style: &[String]) -> Option<f64> {
        let t = self.weight(trigger).max(0.0);
        let s: f64 = style.iter().map(|w| self.weight(w).max(0.0)).sum();
        let denom = t + s;
        (denom > 0.0).then(|| t / denom)
    }

    /// Classification accuracy, optionally with one token removed from every caption.
    pub fn accuracy(&self, corpus: &LabeledCorpus, without: Option<&str>) -> f64 {
        let mut correct = 0usize;
        for (cap, &label) in corpus.captions.iter().zip(&corpus.labels) {
            let tokens: Vec<String> = match without {
                Some(skip) => cap.tokens.iter().filter(|t| t.as_str() != skip).cloned().collect(),
                None => cap.tokens.clone(),
            };
            if (self.predict(&tokens) >= 0.5) == label {
                correct += 1;
            }
        }
        correct as f64 / corpus.captions.len().max(1) as f64
    }
}

/// Trains a logistic regression on captions augmented under `mode`.
///
/// Gradient step `i` (counted from 1) augments each caption of its batch
/// exactly as [`Augmenter::augment`] would at step `i` with `seed` as the
/// global seed. For the scheduled mode `cfg.total_steps` must equal the
/// number of gradient steps.
pub fn train_surrogate(
    corpus: &LabeledCorpus,
    policy: &DropoutPolicy,
    cfg: &ScheduleConfig,
    mode: VariantMode,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<SurrogateModel, SurrogateError> {
    let n = corpus.captions.len();
    let positives = corpus.positives();
    if positives == 0 || positives == n {
        return Err(SurrogateError::SingleClass);
    }
    let total_steps = hyper.total_steps(n);
    if mode == VariantMode::Sfad && cfg.total_steps != total_steps && hyper.epochs > 0 {
        return Err(SurrogateError::ScheduleMismatch { schedule: cfg.total_steps, training: total_steps });
    }
    let augmenter = Augmenter::new(policy, *cfg, mode, seed)?;

    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    for cap in &corpus.captions {
        for t in &cap.tokens {
            let next = vocab.len();
            vocab.entry(t.as_str()).or_insert(next);
        }
    }
    // Per caption: feature ids with their unscaled drop probability.
    let encoded: Vec<Vec<(usize, Option<f64>)>> = corpus
        .captions
        .iter()
        .map(|cap| cap.tokens.iter().map(|t| (vocab[t.as_str()], augmenter.token_probability(t, 1.0))).collect())
        .collect();

    let mut weights = alloc::vec![0.0; vocab.len()];
    let mut bias = 0.0;
    let mut log = Vec::with_capacity(hyper.epochs);
    let per_epoch = hyper.steps_per_epoch(n) as usize;
    let batch = n.div_ceil(per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    // Reused across steps; only the first `chunk.len()` entries are live.
    let mut batch_samples: Vec<Sample> = (0..batch).map(|_| (Vec::new(), false)).collect();

    for epoch in 0..hyper.epochs {
        if per_epoch > 1 {
            order = (0..n).collect();
            SplitMix64::new(epoch_seed(seed, epoch as u64)).shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            step += 1;
            let factor = augmenter.step_factor(step)?;
            for (&pos, (active, label)) in chunk.iter().zip(batch_samples.iter_mut()) {
                let cap = &corpus.captions[pos];
                let cell_seed = derive_seed(seed, step, cap.index as u64);
                let probs = encoded[pos].iter().map(|&(_, p)| p.map(|p| scale(mode, p, factor)));
                active.clear();
                active.extend(
                    encoded[pos].iter().zip(draw_drops(cell_seed, probs)).filter(|(_, dropped)| !dropped).map(|(&(f, _), _)| f),
                );
                active.sort_unstable();
                active.dedup();
                *label = corpus.labels[pos];
            }
            let (loss, grad, grad_bias) = loss_and_gradient(&weights, bias, &batch_samples[..chunk.len()]);
            if !loss.is_finite() {
                return Err(SurrogateError::DivergedTraining { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= hyper.learning_rate * g;
            }
            bias -= hyper.learning_rate * grad_bias;
        }
        log.push((epoch, epoch_loss / n as f64));
    }

    let names: Vec<&str> = {
        let mut v = alloc::vec![""; vocab.len()];
        for (&name, &id) in &vocab {
            v[id] = name;
        }
        v
    };
    let weights = names.into_iter().zip(weights).map(|(n, w)| (String::from(n), w)).collect();
    Ok(SurrogateModel { weights, bias, log })
}

// Mirrors Augmenter::token_probability for an unscaled probability `p`.
fn scale(mode: VariantMode, p: f64, factor: f64) -> f64 {
    match mode {
        VariantMode::Sfad => p * factor,
        _ => p,
    }
}

/// Metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: VariantMode,
    /// `None` when every relevant weight is non-positive.
    pub trigger_share: Option<f64>,
    pub accuracy: f64,
    pub accuracy_without_trigger: f64,
    pub omission_drop: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub modes: Vec<ModeOutcome>,
}

impl SeedOutcome {
    pub fn mode(&self, mode: VariantMode) -> Option<&ModeOutcome> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: VariantMode,
    /// Mean over seeds with a defined share.
    pub mean_trigger_share: Option<f64>,
    pub mean_omission_drop: f64,
    pub mean_final_loss: f64,
    /// Seeds whose share was undefined.
    pub degenerate_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedOutcome>,
    pub summary: Vec<ModeSummary>,
}

impl SurrogateReport {
    pub fn summary_for(&self, mode: VariantMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    /// Fraction of seeds in which `a` puts a strictly larger share on the
    /// trigger than `b`. Seeds where either share is undefined count as losses.
    pub fn share_win_rate(&self, a: VariantMode, b: VariantMode) -> f64 {
        let wins = self
            .per_seed
            .iter()
            .filter(|s| match (s.mode(a).and_then(|m| m.trigger_share), s.mode(b).and_then(|m| m.trigger_share)) {
                (Some(x), Some(y)) => x > y,
                _ => false,
            })
            .count();
        wins as f64 / self.per_seed.len().max(1) as f64
    }
}

/// Everything an experiment needs besides the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: SyntheticCorpusConfig,
    pub policy: PolicyParams,
    /// Rescaled onto the number of training steps before use.
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub modes: Vec<VariantMode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticCorpusConfig::default(),
            policy: PolicyParams::default(),
            schedule: ScheduleConfig::sd_paper(),
            train: TrainConfig::default(),
            modes: alloc::vec![VariantMode::Normal, VariantMode::Fad, VariantMode::Sfad],
        }
    }
}

pub const MIN_SEEDS: usize = 5;

/// Trains every configured mode on the corpus generated from `seed`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome, SurrogateError> {
    let corpus = generate_corpus(&SyntheticCorpusConfig { seed, ..cfg.corpus })?;
    let trigger = corpus.trigger_set();
    let table = analyze(&corpus.captions, &trigger)?;
    let policy = build_policy(&table, &cfg.policy, &trigger)?;
    let total = cfg.train.total_steps(corpus.captions.len()).max(1);
    let schedule = cfg.schedule.rescaled(total);
    let mut modes = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let model = train_surrogate(&corpus, &policy, &schedule, mode, &cfg.train, seed)?;
        let accuracy = model.accuracy(&corpus, None);
        let accuracy_without_trigger = model.accuracy(&corpus, Some(TRIGGER_TOKEN));
        let first = model.log.first().map_or(f64::NAN, |&(_, l)| l);
        let last = model.log.last().map_or(f64::NAN, |&(_, l)| l);
        modes.push(ModeOutcome {
            mode,
            trigger_share: model.trigger_share(TRIGGER_TOKEN, &corpus.style),
            accuracy,
            accuracy_without_trigger,
            omission_drop: accuracy - accuracy_without_trigger,
            initial_loss: first,
            final_loss: last,
        });
    }
    Ok(SeedOutcome { seed, modes })
}

/// Aggregates per-seed outcomes into per-mode means.
pub fn summarize(cfg: &ExperimentConfig, per_seed: Vec<SeedOutcome>) -> SurrogateReport {
    let summary = cfg
        .modes
        .iter()
        .map(|&mode| {
            let outcomes: Vec<&ModeOutcome> = per_seed.iter().filter_map(|s| s.mode(mode)).collect();
            let shares: Vec<f64> = outcomes.iter().filter_map(|o| o.trigger_share).collect();
            let n = outcomes.len().max(1) as f64;
            ModeSummary {
                mode,
                mean_trigger_share: (!shares.is_empty()).then(|| shares.iter().sum::<f64>() / shares.len() as f64),
                mean_omission_drop: outcomes.iter().map(|o| o.omission_drop).sum::<f64>() / n,
                mean_final_loss: outcomes.iter().map(|o| o.final_loss).sum::<f64>() / n,
                degenerate_seeds: outcomes.len() - shares.len(),
            }
        })
        .collect();
    SurrogateReport { seeds: per_seed.iter().map(|s| s.seed).collect(), per_seed, summary }
}

/// Runs every mode for every seed, one seed after another.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<SurrogateReport, SurrogateError> {
    if seeds.len() < MIN_SEEDS {
        return Err(SurrogateError::TooFewSeeds { min: MIN_SEEDS, got: seeds.len() });
    }
    let per_seed = seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(cfg, per_seed))
}

/// One schedule variant in a schedule comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleVariant {
    pub label: String,
    pub schedule: ScheduleConfig,
}

/// Linear and exponential shapes crossed with the ascending 0.1 → 0.8 and
/// descending 0.8 → 0.1 factor ranges, 10% warmup.
pub fn standard_schedule_variants(total_steps: u64) -> Vec<ScheduleVariant> {
    use crate::policy::ScheduleShape::{Exponential, Linear};
    let mut out = Vec::new();
    for (range, start, end) in [("0.1~0.8", 0.1, 0.8), ("0.8~0.1", 0.8, 0.1)] {
        for (shape_name, shape) in [("linear", Linear), ("exp", Exponential)] {
            out.push(ScheduleVariant {
                label: format!("{range} {shape_name}"),
                schedule: ScheduleConfig::from_ratios(shape, total_steps, 0.1, 1.0, start, end),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub label: String,
    pub schedule: ScheduleConfig,
    pub mean_trigger_share: Option<f64>,
    pub mean_omission_drop: f64,
    pub mean_final_loss: f64,
}

/// Seed-level outcomes of one scheduled run per variant.
pub fn study_seed(
    cfg: &ExperimentConfig,
    variants: &[ScheduleVariant],
    seed: u64,
) -> Result<Vec<ModeOutcome>, SurrogateError> {
    variants
        .iter()
        .map(|v| {
            let run = ExperimentConfig { schedule: v.schedule, modes: alloc::vec![VariantMode::Sfad], ..cfg.clone() };
            Ok(run_seed(&run, seed)?.modes.remove(0))
        })
        .collect()
}

/// Averages [`study_seed`] results, `per_seed[s][v]` for seed `s` and variant `v`.
pub fn summarize_study(variants: &[ScheduleVariant], per_seed: &[Vec<ModeOutcome>]) -> Vec<StudyRow> {
    variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let outcomes: Vec<&ModeOutcome> = per_seed.iter().map(|s| &s[v]).collect();
            let shares: Vec<f64> = outcomes.iter().filter_map(|o| o.trigger_share).collect();
            let n = outcomes.len().max(1) as f64;
            StudyRow {
                label: variant.label.clone(),
                schedule: variant.schedule,
                mean_trigger_share: (!shares.is_empty()).then(|| shares.iter().sum::<f64>() / shares.len() as f64),
                mean_omission_drop: outcomes.iter().map(|o| o.omission_drop).sum::<f64>() / n,
                mean_final_loss: outcomes.iter().map(|o| o.final_loss).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Runs the scheduled variant once per schedule and seed.
pub fn schedule_study(
    cfg: &ExperimentConfig,
    variants: &[ScheduleVariant],
    seeds: &[u64],
) -> Result<Vec<StudyRow>, SurrogateError> {
    let per_seed = seeds.iter().map(|&s| study_seed(cfg, variants, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize_study(variants, &per_seed))
}
