//! Frequency-aware token dropout for caption corpora.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the whole
//! algorithmic pipeline:
//!
//! 1. [`caption`]: tokenize captions and describe trigger phrases.
//! 2. [`cooccurrence`]: count how often each token shares a caption with the
//!    trigger.
//! 3. [`policy`]: map co-occurrence ratios to dropout probabilities and
//!    evaluate the training-step schedule factor.
//! 4. [`augment`]: drop tokens per training step with seed-derived,
//!    reproducible randomness.
//! 5. [`stats`]: tag-frequency reports and empirical drop rates.
//! 6. [`surrogate`]: a small logistic-regression experiment that measures how
//!    much predictive weight lands on the trigger token.
//!
//! File formats, parallel drivers and the command line live in the `fad`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod caption;
pub mod cooccurrence;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod surrogate;

pub use augment::{AugmentedCaption, Augmenter, Sampling, VariantMode};
pub use caption::{parse_caption, CaptionError, CaptionRecord, TokenizationMode, TokenizerKind, TriggerSet};
pub use cooccurrence::{analyze, CooccurrenceError, CooccurrenceTable};
pub use policy::{
    dropout_probability, schedule_factor, DropoutPolicy, PolicyError, PolicyParams, ScheduleConfig,
    ScheduleError, ScheduleShape,
};
