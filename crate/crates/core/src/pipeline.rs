//! End-to-end analysis: measures and fits for every configured cell,
//! confirmatory verdicts, and the exploratory axis, frequency and
//! paired-model comparisons.
//!
//! Work is split per (store, layer) and run on the rayon pool. Results are
//! merged in layer order and bootstrap seeds depend only on the cell key, so
//! the report is identical for any thread count.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError};
use crate::dataset::{sha256_hex, DatasetError, FrequencyTable, HiddenStateStore};
use crate::measures::{
    compute_measure, layer_axis, v_offaxis, v_proj, AxisError, Measure, ProjReading, SdConvention,
    VariabilityTable,
};
use crate::rng;
use crate::scaling::{self, Estimator, FitSettings, ScalingFit};
use crate::stats::{self, SignConsistency, StatsError, WilcoxonResult};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no stores given")]
    NoStores,
    #[error("store {model} has magnitudes {found:?}, expected {expected:?}")]
    MagnitudeMismatch {
        model: String,
        expected: Vec<u64>,
        found: Vec<u64>,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("incomplete report: {0}")]
    Incomplete(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl PipelineError {
    /// Errors caused by the data carrying no usable signal, as opposed to
    /// malformed inputs.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            PipelineError::Degenerate(_) | PipelineError::Stats(_) | PipelineError::Incomplete(_)
        )
    }
}

impl From<AxisError> for PipelineError {
    fn from(e: AxisError) -> Self {
        match e {
            AxisError::Dataset(d) => PipelineError::Dataset(d),
            AxisError::Geometry(g) => PipelineError::Degenerate(g.to_string()),
        }
    }
}

/// A computed value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome<T> {
    Ok(T),
    Error(String),
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Error(_) => None,
        }
    }
}

impl<T, E: fmt::Display> From<Result<T, E>> for Outcome<T> {
    fn from(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Error(e.to_string()),
        }
    }
}

/// A configured cell that produced no fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub measure: Measure,
    pub layer: usize,
    /// `None` when the measure itself could not be computed.
    pub estimator: Option<Estimator>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub layer: usize,
    pub explained_variance_ratio: f64,
    pub orientation_corr: f64,
}

/// On-axis vs off-axis exponents across the primary layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E4Record {
    pub layers: Vec<usize>,
    pub alpha_on: Vec<f64>,
    pub alpha_off: Vec<f64>,
    pub mean_alpha_on: f64,
    pub mean_alpha_off: f64,
    /// Paired test on `alpha_on - alpha_off`.
    pub wilcoxon: Outcome<WilcoxonResult>,
}

/// Per-layer Spearman correlation of log frequency with variability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E5Record {
    pub measure: Measure,
    pub layers: Vec<usize>,
    /// `ln f(n)` in magnitude order.
    pub log_frequency: Vec<f64>,
    /// `values[i][m]` for `layers[i]`.
    pub values: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub p_values: Vec<f64>,
    pub min_rho: f64,
    pub median_rho: f64,
    pub max_rho: f64,
}

/// Layerwise exponent differences between two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E6Record {
    pub model_a: String,
    pub model_b: String,
    pub measure: Measure,
    pub estimator: Estimator,
    pub layers: Vec<usize>,
    pub alpha_a: Vec<f64>,
    pub alpha_b: Vec<f64>,
    /// `alpha_a - alpha_b`.
    pub delta: Vec<f64>,
    pub mean_delta: f64,
    pub negative_layers: usize,
    pub wilcoxon: Outcome<WilcoxonResult>,
}

/// Everything computed for one store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub model: String,
    pub tables: Vec<VariabilityTable>,
    /// Ordered by (measure, layer, estimator).
    pub fits: Vec<ScalingFit>,
    pub cell_errors: Vec<CellError>,
    pub axes: Vec<AxisSummary>,
    pub e4: Outcome<E4Record>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e5: Option<Outcome<E5Record>>,
}

impl ModelAnalysis {
    pub fn fit(&self, measure: Measure, layer: usize, estimator: Estimator) -> Option<&ScalingFit> {
        self.fits
            .iter()
            .find(|f| f.measure == measure && f.layer == layer && f.estimator == estimator)
    }

    pub fn table(&self, measure: Measure) -> Option<&VariabilityTable> {
        self.tables.iter().find(|t| t.measure == measure)
    }

    /// Fits of one (measure, estimator) in layer order.
    pub fn fits_for(&self, measure: Measure, estimator: Estimator) -> Vec<&ScalingFit> {
        self.fits
            .iter()
            .filter(|f| f.measure == measure && f.estimator == estimator)
            .collect()
    }

    fn has_error(&self, measure: Measure, layer: usize, estimator: Estimator) -> bool {
        self.cell_errors.iter().any(|e| {
            e.measure == measure && e.layer == layer && e.estimator.is_none_or(|x| x == estimator)
        })
    }
}

/// Mean exponent across layers for one model and cell type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub measure: Measure,
    pub estimator: Estimator,
    pub mean_alpha: f64,
    pub n_layers: usize,
    pub n_negative: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisId {
    H1,
    H2,
    H3,
    H4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDepthCorrelation {
    pub model: String,
    pub result: Outcome<stats::TestResult>,
    pub significant: bool,
}

/// Counts behind each verdict. Cell counts always add up to `cells`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    PositiveExponent {
        cells: usize,
        positive_ci_excludes_zero: usize,
        positive_ci_includes_zero: usize,
        non_positive: usize,
        failed_cells: usize,
    },
    ScalarWindow {
        cells: usize,
        window: (f64, f64),
        in_window: usize,
        outside_window: usize,
    },
    SubScalar {
        cells: usize,
        below_one: usize,
        at_or_above_one: usize,
    },
    LayerDepth {
        models: Vec<LayerDepthCorrelation>,
        significant: usize,
        not_significant: usize,
        significance_level: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisVerdict {
    pub id: HypothesisId,
    pub supported: bool,
    pub measure: Measure,
    pub estimator: Estimator,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub model: String,
    pub data_sha256: String,
    /// `[layers, magnitudes, sentences, dim]`.
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub report_format_version: u32,
    pub dataset_format_version: u32,
    pub config: AnalysisConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub rng: String,
    pub seed_derivation: String,
    pub bootstrap: String,
    pub wilcoxon: String,
    pub models: Vec<ModelProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub magnitudes: Vec<u64>,
    pub models: Vec<ModelAnalysis>,
    pub summary: Vec<SummaryRow>,
    pub hypotheses: Vec<HypothesisVerdict>,
    pub sign_consistency: Outcome<SignConsistency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e6: Option<E6Record>,
    pub provenance: Provenance,
}

impl AnalysisReport {
    pub fn model(&self, name: &str) -> Option<&ModelAnalysis> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn summary_row(
        &self,
        model: &str,
        measure: Measure,
        estimator: Estimator,
    ) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.model == model && r.measure == measure && r.estimator == estimator)
    }

    pub fn verdict(&self, id: HypothesisId) -> Option<&HypothesisVerdict> {
        self.hypotheses.iter().find(|h| h.id == id)
    }
}

fn settings(config: &AnalysisConfig) -> FitSettings {
    FitSettings {
        outlier_multiplier: config.outlier_multiplier,
        resamples: config.bootstrap_resamples,
        base_seed: config.seed,
    }
}

/// Exponent without a bootstrap, after the outlier rule.
fn point_alpha(
    magnitudes: &[u64],
    values: &[f64],
    estimator: Estimator,
    config: &AnalysisConfig,
) -> Result<f64, scaling::ScalingError> {
    let mask = scaling::exclude_outliers(values, config.outlier_multiplier)?;
    Ok(scaling::fit_loglog(estimator, magnitudes, values, &mask.combined())?.alpha)
}

struct LayerOutput {
    layer: usize,
    axis: Option<AxisSummary>,
    values: Vec<(Measure, Vec<f64>)>,
    fits: Vec<ScalingFit>,
    errors: Vec<CellError>,
}

fn analyze_layer(store: &HiddenStateStore, layer: usize, config: &AnalysisConfig) -> LayerOutput {
    let measures = config.measures_sorted();
    let estimators = config.estimators_sorted();
    let mut out = LayerOutput {
        layer,
        axis: None,
        values: Vec::new(),
        fits: Vec::new(),
        errors: Vec::new(),
    };

    let axis = if measures.iter().any(|m| m.uses_axis()) {
        let axis = layer_axis(store, layer);
        if let Ok(a) = &axis {
            out.axis = Some(AxisSummary {
                layer,
                explained_variance_ratio: a.explained_variance_ratio,
                orientation_corr: a.orientation_corr,
            });
        }
        Some(axis)
    } else {
        None
    };

    for &measure in &measures {
        let values = match (measure.uses_axis(), &axis) {
            (true, Some(Err(e))) => Err(e.to_string()),
            (true, Some(Ok(a))) => compute_measure(
                store,
                layer,
                measure,
                Some(a),
                config.sd_convention,
                config.vproj_reading,
            )
            .map_err(|e| e.to_string()),
            _ => compute_measure(
                store,
                layer,
                measure,
                None,
                config.sd_convention,
                config.vproj_reading,
            )
            .map_err(|e| e.to_string()),
        };
        let values = match values {
            Ok(v) => v,
            Err(message) => {
                out.errors.push(CellError {
                    measure,
                    layer,
                    estimator: None,
                    message,
                });
                continue;
            }
        };
        for &estimator in &estimators {
            match scaling::fit_cell(
                measure,
                layer,
                estimator,
                store.magnitudes(),
                &values,
                settings(config),
            ) {
                Ok(fit) => out.fits.push(fit),
                Err(e) => out.errors.push(CellError {
                    measure,
                    layer,
                    estimator: Some(estimator),
                    message: e.to_string(),
                }),
            }
        }
        out.values.push((measure, values));
    }
    out
}

fn analyze_store(
    store: &HiddenStateStore,
    config: &AnalysisConfig,
    freq: Option<&FrequencyTable>,
) -> ModelAnalysis {
    let layers = config.primary_layer_indices();
    let outputs: Vec<LayerOutput> = layers
        .par_iter()
        .map(|&layer| analyze_layer(store, layer, config))
        .collect();

    let mut tables: Vec<VariabilityTable> = config
        .measures_sorted()
        .into_iter()
        .map(|measure| VariabilityTable {
            measure,
            layers: Vec::new(),
            magnitudes: store.magnitudes().to_vec(),
            values: Vec::new(),
        })
        .collect();
    let mut fits = Vec::new();
    let mut cell_errors = Vec::new();
    let mut axes = Vec::new();
    for out in outputs {
        for (measure, values) in out.values {
            let table = tables
                .iter_mut()
                .find(|t| t.measure == measure)
                .expect("table per configured measure");
            table.layers.push(out.layer);
            table.values.push(values);
        }
        fits.extend(out.fits);
        cell_errors.extend(out.errors);
        axes.extend(out.axis);
    }
    // (measure, layer, estimator) order, independent of how layers were scheduled.
    fits.sort_by_key(|f| (f.measure, f.layer, f.estimator));
    cell_errors.sort_by_key(|e| (e.measure, e.layer, e.estimator));

    ModelAnalysis {
        model: store.model_name().to_string(),
        tables,
        fits,
        cell_errors,
        axes,
        e4: run_e4(store, config).into(),
        e5: freq.map(|f| run_e5(store, f, config).into()),
    }
}

fn summarize(models: &[ModelAnalysis], config: &AnalysisConfig) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for model in models {
        for measure in config.measures_sorted() {
            for estimator in config.estimators_sorted() {
                let alphas: Vec<f64> = model
                    .fits_for(measure, estimator)
                    .iter()
                    .map(|f| f.alpha)
                    .collect();
                if alphas.is_empty() {
                    continue;
                }
                rows.push(SummaryRow {
                    model: model.model.clone(),
                    measure,
                    estimator,
                    mean_alpha: alphas.iter().sum::<f64>() / alphas.len() as f64,
                    n_layers: alphas.len(),
                    n_negative: alphas.iter().filter(|a| **a < 0.0).count(),
                    n_positive: alphas.iter().filter(|a| **a > 0.0).count(),
                });
            }
        }
    }
    rows
}

fn provenance(stores: &[HiddenStateStore], config: &AnalysisConfig) -> Provenance {
    Provenance {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        report_format_version: REPORT_FORMAT_VERSION,
        dataset_format_version: DATASET_FORMAT_VERSION,
        config: config.clone(),
        config_sha256: config.hash(),
        seed: config.seed,
        rng: rng::GENERATOR_NAME.to_string(),
        seed_derivation: format!(
            "{}; key = (measure, layer, estimator)",
            rng::SEED_DERIVATION
        ),
        bootstrap: "percentile 2.5/97.5 (linear interpolation), resampling unmasked magnitude cells"
            .to_string(),
        wilcoxon: format!(
            "zeros dropped; exact for n <= {}, tie-corrected normal approximation above; verdicts use two-sided p",
            stats::WILCOXON_EXACT_MAX_N
        ),
        models: stores
            .iter()
            .map(|s| {
                let (l, m, n, d) = s.shape();
                ModelProvenance {
                    model: s.model_name().to_string(),
                    data_sha256: sha256_hex(&s.to_bytes()),
                    shape: [l, m, n, d],
                }
            })
            .collect(),
    }
}

fn check_same_magnitudes(stores: &[HiddenStateStore]) -> Result<&[u64], PipelineError> {
    let first = stores.first().ok_or(PipelineError::NoStores)?;
    for s in &stores[1..] {
        if s.magnitudes() != first.magnitudes() {
            return Err(PipelineError::MagnitudeMismatch {
                model: s.model_name().to_string(),
                expected: first.magnitudes().to_vec(),
                found: s.magnitudes().to_vec(),
            });
        }
    }
    Ok(first.magnitudes())
}

/// Full confirmatory and exploratory analysis of one or more stores.
pub fn run_analysis(
    stores: &[HiddenStateStore],
    config: &AnalysisConfig,
    freq: Option<&FrequencyTable>,
) -> Result<AnalysisReport, PipelineError> {
    config.validate()?;
    let magnitudes = check_same_magnitudes(stores)?.to_vec();
    for s in stores {
        config.validate_for_layers(s.n_layers())?;
    }
    if let Some(f) = freq {
        f.covers(&magnitudes)?;
    }

    let models: Vec<ModelAnalysis> = stores
        .iter()
        .map(|s| analyze_store(s, config, freq))
        .collect();
    let mut report = AnalysisReport {
        magnitudes,
        summary: summarize(&models, config),
        models,
        hypotheses: Vec::new(),
        sign_consistency: Outcome::Error("not evaluated".into()),
        e6: None,
        provenance: provenance(stores, config),
    };
    report.hypotheses = evaluate_hypotheses(&report)?;
    report.sign_consistency = stats::binomial_sign_consistency(&primary_alphas(&report)).into();
    Ok(report)
}

/// Analysis of both stores plus the paired comparison.
pub fn run_comparison(
    store_a: &HiddenStateStore,
    store_b: &HiddenStateStore,
    config: &AnalysisConfig,
    freq: Option<&FrequencyTable>,
) -> Result<AnalysisReport, PipelineError> {
    let stores = [store_a.clone(), store_b.clone()];
    let mut report = run_analysis(&stores, config, freq)?;
    report.e6 = Some(run_e6(store_a, store_b, config)?);
    Ok(report)
}

/// Primary-cell exponents of every model, model-major then layer order.
fn primary_alphas(report: &AnalysisReport) -> Vec<f64> {
    let c = &report.provenance.config;
    report
        .models
        .iter()
        .flat_map(|m| m.fits_for(c.primary_measure, c.primary_estimator))
        .map(|f| f.alpha)
        .collect()
}

/// Verdicts for H1-H4 on the primary (measure, estimator) cell.
///
/// * H1: a strict majority of cells has `alpha > 0` with a CI excluding 0.
/// * H2: a strict majority has `alpha` inside the scalar window.
/// * H3: a strict majority has `alpha < 1`.
/// * H4: a strict majority of models shows a significant two-sided Spearman
///   correlation between layer index and `alpha`.
pub fn evaluate_hypotheses(
    report: &AnalysisReport,
) -> Result<Vec<HypothesisVerdict>, PipelineError> {
    let config = &report.provenance.config;
    let (measure, estimator) = (config.primary_measure, config.primary_estimator);
    let layers = config.primary_layer_indices();

    let mut cells: Vec<&ScalingFit> = Vec::new();
    let mut failed = 0;
    for model in &report.models {
        for &layer in &layers {
            match model.fit(measure, layer, estimator) {
                Some(f) => cells.push(f),
                None if model.has_error(measure, layer, estimator) => failed += 1,
                None => {
                    return Err(PipelineError::Incomplete(format!(
                        "{} has no {measure}/{estimator} result at layer {layer}",
                        model.model
                    )))
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(PipelineError::Degenerate(format!(
            "every primary {measure}/{estimator} cell failed"
        )));
    }
    let n = cells.len();
    let majority = |count: usize, of: usize| 2 * count > of;

    let pos_excl = cells
        .iter()
        .filter(|f| f.alpha > 0.0 && f.ci_excludes_zero())
        .count();
    let pos_incl = cells
        .iter()
        .filter(|f| f.alpha > 0.0 && !f.ci_excludes_zero())
        .count();
    let h1 = HypothesisVerdict {
        id: HypothesisId::H1,
        supported: majority(pos_excl, n),
        measure,
        estimator,
        evidence: Evidence::PositiveExponent {
            cells: n,
            positive_ci_excludes_zero: pos_excl,
            positive_ci_includes_zero: pos_incl,
            non_positive: n - pos_excl - pos_incl,
            failed_cells: failed,
        },
    };

    let (lo, hi) = config.scalar_window;
    let in_window = cells
        .iter()
        .filter(|f| f.alpha >= lo && f.alpha <= hi)
        .count();
    let h2 = HypothesisVerdict {
        id: HypothesisId::H2,
        supported: majority(in_window, n),
        measure,
        estimator,
        evidence: Evidence::ScalarWindow {
            cells: n,
            window: config.scalar_window,
            in_window,
            outside_window: n - in_window,
        },
    };

    let below = cells.iter().filter(|f| f.alpha < 1.0).count();
    let h3 = HypothesisVerdict {
        id: HypothesisId::H3,
        supported: majority(below, n),
        measure,
        estimator,
        evidence: Evidence::SubScalar {
            cells: n,
            below_one: below,
            at_or_above_one: n - below,
        },
    };

    let depth: Vec<LayerDepthCorrelation> = report
        .models
        .iter()
        .map(|model| {
            let fits = model.fits_for(measure, estimator);
            let x: Vec<f64> = fits.iter().map(|f| f.layer as f64).collect();
            let y: Vec<f64> = fits.iter().map(|f| f.alpha).collect();
            let result: Outcome<stats::TestResult> = stats::spearman(&x, &y).into();
            let significant = result
                .ok()
                .is_some_and(|r| r.p_value < config.significance_level);
            LayerDepthCorrelation {
                model: model.model.clone(),
                result,
                significant,
            }
        })
        .collect();
    let significant = depth.iter().filter(|d| d.significant).count();
    let h4 = HypothesisVerdict {
        id: HypothesisId::H4,
        supported: majority(significant, depth.len()),
        measure,
        estimator,
        evidence: Evidence::LayerDepth {
            not_significant: depth.len() - significant,
            significant,
            models: depth,
            significance_level: config.significance_level,
        },
    };

    Ok(vec![h1, h2, h3, h4])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// On-axis (`Vproj`, population SD) vs off-axis (`Voffaxis`) exponents per
/// primary layer with a paired Wilcoxon test on their difference.
pub fn run_e4(
    store: &HiddenStateStore,
    config: &AnalysisConfig,
) -> Result<E4Record, PipelineError> {
    config.validate_for_layers(store.n_layers())?;
    let layers = config.primary_layer_indices();
    let per_layer: Vec<Result<(f64, f64), PipelineError>> = layers
        .par_iter()
        .map(|&layer| {
            let axis = layer_axis(store, layer)?;
            let on = v_proj(store, layer, &axis, SdConvention::Population)?;
            let off = v_offaxis(store, layer, &axis)?;
            let fit = |v: &[f64]| {
                point_alpha(store.magnitudes(), v, config.primary_estimator, config)
                    .map_err(|e| PipelineError::Degenerate(format!("layer {layer}: {e}")))
            };
            Ok((fit(&on)?, fit(&off)?))
        })
        .collect();
    let (alpha_on, alpha_off): (Vec<f64>, Vec<f64>) = per_layer
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    let diffs: Vec<f64> = alpha_on
        .iter()
        .zip(&alpha_off)
        .map(|(a, b)| a - b)
        .collect();
    Ok(E4Record {
        mean_alpha_on: mean(&alpha_on),
        mean_alpha_off: mean(&alpha_off),
        wilcoxon: stats::wilcoxon_signed_rank(&diffs).into(),
        layers,
        alpha_on,
        alpha_off,
    })
}

/// Spearman correlation of `ln f(n)` with the configured variability
/// measure at each primary layer.
pub fn run_e5(
    store: &HiddenStateStore,
    freq: &FrequencyTable,
    config: &AnalysisConfig,
) -> Result<E5Record, PipelineError> {
    config.validate_for_layers(store.n_layers())?;
    let log_f = freq.log_counts(store.magnitudes())?;
    freq.covers(store.magnitudes())?;
    let layers = config.primary_layer_indices();
    let results: Vec<Result<(stats::TestResult, Vec<f64>), PipelineError>> = layers
        .par_iter()
        .map(|&layer| {
            let v = compute_measure(
                store,
                layer,
                config.e5_measure,
                None,
                config.sd_convention,
                ProjReading::Sd,
            )?;
            Ok((stats::spearman(&log_f, &v)?, v))
        })
        .collect();
    let (results, values): (Vec<stats::TestResult>, Vec<Vec<f64>>) = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    let rho: Vec<f64> = results.iter().map(|r| r.statistic).collect();
    let mut sorted = rho.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median_rho = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(E5Record {
        measure: config.e5_measure,
        layers,
        log_frequency: log_f,
        values,
        p_values: results.iter().map(|r| r.p_value).collect(),
        min_rho: sorted[0],
        median_rho,
        max_rho: sorted[sorted.len() - 1],
        rho,
    })
}

/// Layerwise `alpha_a - alpha_b` on the configured E6 measure with the
/// primary estimator, and a Wilcoxon test over layers.
pub fn run_e6(
    store_a: &HiddenStateStore,
    store_b: &HiddenStateStore,
    config: &AnalysisConfig,
) -> Result<E6Record, PipelineError> {
    config.validate()?;
    if store_a.magnitudes() != store_b.magnitudes() {
        return Err(PipelineError::ShapeMismatch(format!(
            "magnitude sets differ between {} and {}",
            store_a.model_name(),
            store_b.model_name()
        )));
    }
    if store_a.n_layers() != store_b.n_layers() {
        return Err(PipelineError::ShapeMismatch(format!(
            "{} has {} layers, {} has {}",
            store_a.model_name(),
            store_a.n_layers(),
            store_b.model_name(),
            store_b.n_layers()
        )));
    }
    config.validate_for_layers(store_a.n_layers())?;
    let layers = config.primary_layer_indices();
    let alpha_of = |store: &HiddenStateStore, layer: usize| -> Result<f64, PipelineError> {
        let v = compute_measure(
            store,
            layer,
            config.e6_measure,
            None,
            config.sd_convention,
            config.vproj_reading,
        )?;
        point_alpha(store.magnitudes(), &v, config.primary_estimator, config).map_err(|e| {
            PipelineError::Degenerate(format!("{} layer {layer}: {e}", store.model_name()))
        })
    };
    let pairs: Vec<Result<(f64, f64), PipelineError>> = layers
        .par_iter()
        .map(|&l| Ok((alpha_of(store_a, l)?, alpha_of(store_b, l)?)))
        .collect();
    let (alpha_a, alpha_b): (Vec<f64>, Vec<f64>) = pairs
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    let delta: Vec<f64> = alpha_a.iter().zip(&alpha_b).map(|(a, b)| a - b).collect();
    Ok(E6Record {
        model_a: store_a.model_name().to_string(),
        model_b: store_b.model_name().to_string(),
        measure: config.e6_measure,
        estimator: config.primary_estimator,
        mean_delta: mean(&delta),
        negative_layers: delta.iter().filter(|d| **d < 0.0).count(),
        wilcoxon: stats::wilcoxon_signed_rank(&delta).into(),
        layers,
        alpha_a,
        alpha_b,
        delta,
    })
}
