//! Std companion of `fad-core`: caption file loading, JSON/JSONL/text
//! formats, atomic output, rayon-parallel drivers and the `fad` CLI.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod formats;
pub mod output;
pub mod parallel;

pub use dataset::{load_dataset, Dataset, InputFormat, LoadError};
