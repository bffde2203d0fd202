//! Measures how the spread of hidden-state representations across sentences
//! changes with the numeric magnitude a sentence mentions, and fits power-law
//! exponents `V(n) ~ n^alpha` per layer.
//!
//! Typical use:
//!
//! ```no_run
//! use std::path::Path;
//! use repvar::{config::AnalysisConfig, dataset::load_store, output::emit_outputs, pipeline::run_analysis};
//!
//! let store = load_store(Path::new("model.json"))?;
//! let report = run_analysis(&[store], &AnalysisConfig::default(), None)?;
//! emit_outputs(&report, Path::new("out"))?;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod config;
pub mod dataset;
pub mod geometry;
pub mod measures;
pub mod output;
pub mod pipeline;
pub mod rng;
pub mod scaling;
pub mod stats;
pub mod svg;
pub mod synth;

pub use config::AnalysisConfig;
pub use dataset::{load_store, DatasetManifest, HiddenStateStore};
pub use measures::Measure;
pub use pipeline::{run_analysis, run_comparison, AnalysisReport};
pub use scaling::Estimator;
