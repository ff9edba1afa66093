//! Rayon-backed versions of the core drivers.
//!
//! Each function returns exactly what its serial counterpart in `fad-core`
//! returns; the work is only spread across threads.

use std::collections::BTreeMap;

use fad_core::augment::{AugmentError, AugmentedCaption, Augmenter, Sampling};
use fad_core::caption::{CaptionRecord, TriggerSet};
use fad_core::cooccurrence::{CooccurrenceCounts, CooccurrenceError, CooccurrenceTable};
use fad_core::stats::DropCounter;
use fad_core::surrogate::{
    run_seed, study_seed, summarize, summarize_study, ExperimentConfig, ScheduleVariant, StudyRow, SurrogateError,
    SurrogateReport, MIN_SEEDS,
};
use rayon::prelude::*;

pub fn analyze(dataset: &[CaptionRecord], trigger: &TriggerSet) -> Result<CooccurrenceTable, CooccurrenceError> {
    dataset
        .par_iter()
        .fold(CooccurrenceCounts::default, |mut acc, rec| {
            acc.add_caption(&rec.tokens, trigger);
            acc
        })
        .reduce(CooccurrenceCounts::default, CooccurrenceCounts::merge)
        .finish(trigger.clone())
}

/// Augments steps `first..first + positions.len()`, `positions[k]` being the
/// dataset position used at step `first + k`.
pub fn augment_steps(
    augmenter: &Augmenter<'_>,
    dataset: &[CaptionRecord],
    positions: &[usize],
    first: u64,
) -> Result<Vec<AugmentedCaption>, AugmentError> {
    positions
        .par_iter()
        .enumerate()
        .map(|(k, &pos)| augmenter.augment(&dataset[pos], first + k as u64))
        .collect()
}

/// Parallel equivalent of `Augmenter::stream(..).collect()`.
pub fn augment_stream(
    augmenter: &Augmenter<'_>,
    dataset: &[CaptionRecord],
    steps: u64,
    sampling: Sampling,
) -> Result<Vec<AugmentedCaption>, AugmentError> {
    let positions = augmenter.plan(dataset.len(), steps, sampling)?;
    augment_steps(augmenter, dataset, &positions, 1)
}

pub fn empirical_drop_rates(stream: &[AugmentedCaption]) -> BTreeMap<String, f64> {
    let counter = stream
        .par_iter()
        .fold(DropCounter::default, |mut acc, cap| {
            acc.add(cap);
            acc
        })
        .reduce(DropCounter::default, DropCounter::merge);
    counter.rates()
}

/// Runs seeds concurrently; each seed's run stays single-threaded.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<SurrogateReport, SurrogateError> {
    if seeds.len() < MIN_SEEDS {
        return Err(SurrogateError::TooFewSeeds { min: MIN_SEEDS, got: seeds.len() });
    }
    let per_seed = seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(cfg, per_seed))
}

pub fn schedule_study(
    cfg: &ExperimentConfig,
    variants: &[ScheduleVariant],
    seeds: &[u64],
) -> Result<Vec<StudyRow>, SurrogateError> {
    let per_seed = seeds.par_iter().map(|&s| study_seed(cfg, variants, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize_study(variants, &per_seed))
}
