//! Analysis settings, read from JSON with every field optional.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::sha256_hex;
use crate::measures::{Measure, ProjReading, SdConvention};
use crate::scaling::Estimator;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Inclusive `[first, last]` layer indices; layer 0 is the embedding output.
    pub primary_layers: (usize, usize),
    pub outlier_multiplier: f64,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub measures: Vec<Measure>,
    pub sd_convention: SdConvention,
    pub vproj_reading: ProjReading,
    /// Cell used for the confirmatory verdicts.
    pub primary_measure: Measure,
    pub primary_estimator: Estimator,
    pub e5_measure: Measure,
    pub e6_measure: Measure,
    /// Inclusive exponent window counted as "approximately scalar".
    pub scalar_window: (f64, f64),
    pub significance_level: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            primary_layers: (16, 31),
            outlier_multiplier: 3.0,
            bootstrap_resamples: 10_000,
            seed: 42,
            estimators: Estimator::ALL.to_vec(),
            measures: Measure::ALL.to_vec(),
            sd_convention: SdConvention::Population,
            vproj_reading: ProjReading::Sd,
            primary_measure: Measure::Veucl,
            primary_estimator: Estimator::Ols,
            e5_measure: Measure::Veucl,
            e6_measure: Measure::Veucl,
            scalar_window: (0.8, 1.2),
            significance_level: 0.05,
        }
    }
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn primary_layer_indices(&self) -> Vec<usize> {
        (self.primary_layers.0..=self.primary_layers.1).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let (first, last) = self.primary_layers;
        if first > last {
            return bad(format!("primary_layers [{first}, {last}] is empty"));
        }
        if !(self.outlier_multiplier > 1.0 && self.outlier_multiplier.is_finite()) {
            return bad(format!(
                "outlier_multiplier must exceed 1, got {}",
                self.outlier_multiplier
            ));
        }
        if self.bootstrap_resamples < 1000 {
            return bad(format!(
                "bootstrap_resamples must be at least 1000, got {}",
                self.bootstrap_resamples
            ));
        }
        if self.estimators.is_empty() || self.measures.is_empty() {
            return bad("estimators and measures must be non-empty".into());
        }
        if !self.measures.contains(&self.primary_measure)
            || !self.estimators.contains(&self.primary_estimator)
        {
            return bad(format!(
                "primary cell ({}, {}) is not among the configured measures/estimators",
                self.primary_measure, self.primary_estimator
            ));
        }
        let (lo, hi) = self.scalar_window;
        if !(lo < hi) {
            return bad(format!("scalar_window [{lo}, {hi}] is empty"));
        }
        if !(self.significance_level > 0.0 && self.significance_level < 1.0) {
            return bad(format!(
                "significance_level must lie in (0, 1), got {}",
                self.significance_level
            ));
        }
        Ok(())
    }

    /// Checks the primary-layer window against a store's depth.
    pub fn validate_for_layers(&self, n_layers: usize) -> Result<(), ConfigError> {
        if self.primary_layers.1 >= n_layers {
            return Err(ConfigError::Invalid(format!(
                "primary layer {} out of range for a {n_layers}-layer store",
                self.primary_layers.1
            )));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Measures in canonical order without duplicates.
    pub fn measures_sorted(&self) -> Vec<Measure> {
        let mut m = self.measures.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn estimators_sorted(&self) -> Vec<Estimator> {
        let mut e = self.estimators.clone();
        e.sort();
        e.dedup();
        e
    }
}
