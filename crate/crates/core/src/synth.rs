//! Synthetic hidden-state stores with a known noise exponent.
//!
//! For layer `l`, sentence `i` and magnitude `n`:
//!
//! ```text
//! h_i(n, l) = c(l) + gain * ln(n) * u(l) + s_i(l) + sigma(n) * eps
//! ```
//!
//! where `c(l)` is a random base point, `u(l)` a random unit axis, `s_i(l)`
//! sentence offsets drawn once per (sentence, layer), and `eps` isotropic
//! standard Gaussian noise. `sigma(n) = sigma0 * n^alpha_true`, or
//! `sigma0 * f(n)^gamma` when a frequency link is set. With `axis_alpha` set,
//! the noise component along `u(l)` uses that exponent instead.
//!
//! Draw order from the single Gaussian stream, per layer: `c` (dim), `u`
//! (dim), offsets (sentences x dim), then noise for each magnitude and
//! sentence (dim each).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    DatasetError, DatasetManifest, FrequencyTable, HiddenStateStore, DEFAULT_MAGNITUDES,
};
use crate::geometry;
use crate::rng::{self, Gaussian};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed spec JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqLink {
    pub gamma: f64,
    pub table: FrequencyTable,
}

fn default_magnitudes() -> Vec<u64> {
    DEFAULT_MAGNITUDES.to_vec()
}

fn default_model_name() -> String {
    "synthetic".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_model_name")]
    pub model_name: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_magnitudes")]
    pub magnitudes: Vec<u64>,
    pub n_sentences: usize,
    pub alpha_true: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub geometry_gain: f64,
    #[serde(default)]
    pub sentence_offset_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_link: Option<FreqLink>,
    /// Noise exponent along the magnitude axis; `alpha_true` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_alpha: Option<f64>,
    /// Drops the noise term entirely (the `sigma0 -> 0` limit).
    #[serde(default)]
    pub noiseless: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// Default-magnitude spec with no offsets and unit geometry gain.
    pub fn new(
        n_layers: usize,
        hidden_dim: usize,
        n_sentences: usize,
        alpha_true: f64,
        seed: u64,
    ) -> Self {
        Self {
            model_name: default_model_name(),
            n_layers,
            hidden_dim,
            magnitudes: default_magnitudes(),
            n_sentences,
            alpha_true,
            sigma0: 0.1,
            geometry_gain: 1.0,
            sentence_offset_scale: 0.0,
            freq_link: None,
            axis_alpha: None,
            noiseless: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let manifest = DatasetManifest::new(
            &self.model_name,
            self.n_layers,
            self.hidden_dim,
            self.magnitudes.clone(),
            self.n_sentences,
            "synthetic.bin",
        );
        manifest
            .validate()
            .map_err(|e| SynthError::Invalid(e.to_string()))?;
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0 must be positive and finite");
        }
        if !(self.geometry_gain >= 0.0 && self.geometry_gain.is_finite()) {
            return bad("geometry_gain must be non-negative");
        }
        if !(self.sentence_offset_scale >= 0.0 && self.sentence_offset_scale.is_finite()) {
            return bad("sentence_offset_scale must be non-negative");
        }
        if !self.alpha_true.is_finite() || self.axis_alpha.is_some_and(|a| !a.is_finite()) {
            return bad("noise exponents must be finite");
        }
        if let Some(link) = &self.freq_link {
            if !link.gamma.is_finite() {
                return bad("freq_link.gamma must be finite");
            }
            link.table
                .covers(&self.magnitudes)
                .map_err(|e| SynthError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// `(sigma_off_axis, sigma_on_axis)` for magnitude `n`.
    pub fn noise_scales(&self, n: u64) -> (f64, f64) {
        if self.noiseless {
            return (0.0, 0.0);
        }
        if let Some(link) = &self.freq_link {
            let f = link.table.get(n).expect("validated coverage");
            let s = self.sigma0 * f.powf(link.gamma);
            return (s, s);
        }
        let n = n as f64;
        let off = self.sigma0 * n.powf(self.alpha_true);
        let on = self.sigma0 * n.powf(self.axis_alpha.unwrap_or(self.alpha_true));
        (off, on)
    }
}

/// What the generator put in, for checking what the pipeline gets out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub alpha_true: f64,
    pub axis_alpha: Option<f64>,
    pub magnitudes: Vec<u64>,
    /// `(off_axis, on_axis)` noise scale per magnitude.
    pub sigma: Vec<(f64, f64)>,
    /// Unit magnitude axis per layer.
    pub axes: Vec<Vec<f64>>,
    /// `[layer][sentence][dim]`.
    pub offsets: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub generator: String,
    pub gaussian: String,
}

pub fn generate(spec: &SynthSpec) -> Result<(HiddenStateStore, GroundTruth), SynthError> {
    spec.validate()?;
    let (n_layers, dim, n_sent) = (spec.n_layers, spec.hidden_dim, spec.n_sentences);
    let n_mag = spec.magnitudes.len();
    let scales: Vec<(f64, f64)> = spec
        .magnitudes
        .iter()
        .map(|&n| spec.noise_scales(n))
        .collect();
    let split_axis = spec.axis_alpha.is_some() && spec.freq_link.is_none();

    let mut gauss = Gaussian::new(spec.seed);
    let mut values = Vec::with_capacity(n_layers * n_mag * n_sent * dim);
    let mut axes = Vec::with_capacity(n_layers);
    let mut all_offsets = Vec::with_capacity(n_layers);
    let mut eps = vec![0.0; dim];

    for _ in 0..n_layers {
        let mut base = vec![0.0; dim];
        gauss.fill(&mut base);
        let mut axis = vec![0.0; dim];
        gauss.fill(&mut axis);
        let len = geometry::norm(&axis);
        axis.iter_mut().for_each(|x| *x /= len);
        let offsets: Vec<Vec<f64>> = (0..n_sent)
            .map(|_| {
                let mut o = vec![0.0; dim];
                gauss.fill(&mut o);
                o.iter_mut().for_each(|x| *x *= spec.sentence_offset_scale);
                o
            })
            .collect();

        for (&n, &(sigma_off, sigma_on)) in spec.magnitudes.iter().zip(&scales) {
            let shift = spec.geometry_gain * (n as f64).ln();
            for offset in &offsets {
                gauss.fill(&mut eps);
                let along = if split_axis {
                    geometry::dot(&eps, &axis)
                } else {
                    0.0
                };
                for d in 0..dim {
                    let noise = if split_axis {
                        sigma_off * (eps[d] - along * axis[d]) + sigma_on * along * axis[d]
                    } else {
                        sigma_off * eps[d]
                    };
                    let h = base[d] + shift * axis[d] + offset[d] + noise;
                    values.push(h as f32);
                }
            }
        }
        axes.push(axis);
        all_offsets.push(offsets);
    }

    let manifest = DatasetManifest::new(
        &spec.model_name,
        n_layers,
        dim,
        spec.magnitudes.clone(),
        n_sent,
        format!("{}.bin", spec.model_name),
    );
    let store = HiddenStateStore::from_parts(manifest, values)?;
    let truth = GroundTruth {
        alpha_true: spec.alpha_true,
        axis_alpha: spec.axis_alpha,
        magnitudes: spec.magnitudes.clone(),
        sigma: scales,
        axes,
        offsets: all_offsets,
        seed: spec.seed,
        generator: rng::GENERATOR_NAME.to_string(),
        gaussian: rng::GAUSSIAN_METHOD.to_string(),
    };
    Ok((store, truth))
}

/// Paths written by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
}

/// Generates and writes `<model>.json`, `<model>.bin` and
/// `ground_truth.json` into `out_dir`.
pub fn write_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput, SynthError> {
    let (store, truth) = generate(spec)?;
    let manifest = store.write(out_dir, &spec.model_name)?;
    let ground_truth = out_dir.join("ground_truth.json");
    let json = serde_json::to_string_pretty(&truth)?;
    fs::write(&ground_truth, json + "\n").map_err(|source| SynthError::Io {
        path: ground_truth.clone(),
        source,
    })?;
    Ok(SynthOutput {
        manifest,
        ground_truth,
    })
}

pub fn load_spec(path: &Path) -> Result<SynthSpec, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec: SynthSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}
