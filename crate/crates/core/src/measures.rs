//! Per-(layer, magnitude) dispersion of the sentence vectors.
//!
//! * `Veucl`: mean Euclidean distance from the cell centroid.
//! * `Vresidual`: `Veucl` after subtracting each sentence's mean over all
//!   magnitudes of the layer.
//! * `Vproj`: spread of the on-axis deviation scores along the layer's PC1.
//! * `Voffaxis`: RMS norm of the deviation component orthogonal to PC1.
//!
//! Under the population convention `Vproj^2 + Voffaxis^2` equals the mean
//! squared centroid distance exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, HiddenStateStore};
use crate::geometry::{self, GeometryError, MagnitudeAxis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    Veucl,
    Vresidual,
    Vproj,
    Voffaxis,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::Veucl,
        Measure::Vresidual,
        Measure::Vproj,
        Measure::Voffaxis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Veucl => "Veucl",
            Measure::Vresidual => "Vresidual",
            Measure::Vproj => "Vproj",
            Measure::Voffaxis => "Voffaxis",
        }
    }

    /// Whether the measure needs the layer's magnitude axis.
    pub fn uses_axis(self) -> bool {
        matches!(self, Measure::Vproj | Measure::Voffaxis)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Divisor for the on-axis spread: `S` (population) or `S - 1` (sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SdConvention {
    #[default]
    Population,
    Sample,
}

/// Whether `Vproj` is reported as a standard deviation or its square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProjReading {
    #[default]
    Sd,
    Variance,
}

fn block_rows(
    store: &HiddenStateStore,
    layer: usize,
    m: usize,
) -> Result<Vec<Vec<f64>>, DatasetError> {
    Ok(store.slice_layer_magnitude(layer, m)?.to_f64_rows())
}

fn mean_centroid_distance(rows: &[Vec<f64>]) -> f64 {
    let Ok(center) = geometry::centroid(rows) else {
        return 0.0;
    };
    let total: f64 = geometry::deviations(rows, &center)
        .iter()
        .map(|d| geometry::norm(d))
        .sum();
    total / rows.len() as f64
}

/// Mean Euclidean distance of the sentence vectors from their centroid, per
/// magnitude.
pub fn v_eucl(store: &HiddenStateStore, layer: usize) -> Result<Vec<f64>, DatasetError> {
    (0..store.n_magnitudes())
        .map(|m| Ok(mean_centroid_distance(&block_rows(store, layer, m)?)))
        .collect()
}

/// `v_eucl` after removing each sentence's mean over all magnitudes.
pub fn v_residual(store: &HiddenStateStore, layer: usize) -> Result<Vec<f64>, DatasetError> {
    let (_, n_mag, n_sent, dim) = store.shape();
    let blocks: Vec<Vec<Vec<f64>>> = (0..n_mag)
        .map(|m| block_rows(store, layer, m))
        .collect::<Result<_, _>>()?;

    let mut sentence_means = vec![vec![0.0; dim]; n_sent];
    for block in &blocks {
        for (mean, row) in sentence_means.iter_mut().zip(block) {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    for mean in &mut sentence_means {
        mean.iter_mut().for_each(|v| *v /= n_mag as f64);
    }

    Ok(blocks
        .iter()
        .map(|block| {
            let residual: Vec<Vec<f64>> = block
                .iter()
                .zip(&sentence_means)
                .map(|(row, mean)| row.iter().zip(mean).map(|(a, b)| a - b).collect())
                .collect();
            mean_centroid_distance(&residual)
        })
        .collect())
}

/// Per-magnitude centroids of one layer.
pub fn layer_centroids(
    store: &HiddenStateStore,
    layer: usize,
) -> Result<Vec<Vec<f64>>, DatasetError> {
    (0..store.n_magnitudes())
        .map(|m| {
            let rows = block_rows(store, layer, m)?;
            Ok(geometry::centroid(&rows).expect("blocks hold at least two sentences"))
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum AxisError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// PC1 of the layer's magnitude centroids, oriented along increasing `ln n`.
pub fn layer_axis(store: &HiddenStateStore, layer: usize) -> Result<MagnitudeAxis, AxisError> {
    let centroids = layer_centroids(store, layer)?;
    let logs: Vec<f64> = store
        .magnitudes()
        .iter()
        .map(|&n| (n as f64).ln())
        .collect();
    Ok(geometry::pc1(&centroids, &logs)?)
}

/// `(on_axis_scores, off_axis_norms)` for one magnitude.
type AxisParts = (Vec<f64>, Vec<f64>);

fn axis_split(
    store: &HiddenStateStore,
    layer: usize,
    axis: &MagnitudeAxis,
) -> Result<Vec<AxisParts>, AxisError> {
    (0..store.n_magnitudes())
        .map(|m| {
            let rows = block_rows(store, layer, m)?;
            Ok(geometry::project_deviations(&rows, axis)?)
        })
        .collect()
}

/// Standard deviation of the on-axis deviation scores, per magnitude.
pub fn v_proj(
    store: &HiddenStateStore,
    layer: usize,
    axis: &MagnitudeAxis,
    sd_convention: SdConvention,
) -> Result<Vec<f64>, AxisError> {
    let s = store.n_sentences() as f64;
    let divisor = match sd_convention {
        SdConvention::Population => s,
        SdConvention::Sample => s - 1.0,
    };
    Ok(axis_split(store, layer, axis)?
        .into_iter()
        .map(|(on, _)| on_axis_sd(&on, divisor))
        .collect())
}

/// Deviation scores already sum to zero, so no further centering.
fn on_axis_sd(scores: &[f64], divisor: f64) -> f64 {
    (scores.iter().map(|x| x * x).sum::<f64>() / divisor).sqrt()
}

/// RMS of the off-axis deviation norms, per magnitude.
pub fn v_offaxis(
    store: &HiddenStateStore,
    layer: usize,
    axis: &MagnitudeAxis,
) -> Result<Vec<f64>, AxisError> {
    let s = store.n_sentences() as f64;
    Ok(axis_split(store, layer, axis)?
        .into_iter()
        .map(|(_, off)| (off.iter().map(|x| x * x).sum::<f64>() / s).sqrt())
        .collect())
}

/// `(1/S) sum_i ||h_i - mu||^2` per magnitude.
pub fn mean_squared_deviation(
    store: &HiddenStateStore,
    layer: usize,
) -> Result<Vec<f64>, DatasetError> {
    (0..store.n_magnitudes())
        .map(|m| {
            let rows = block_rows(store, layer, m)?;
            let center = geometry::centroid(&rows).expect("non-empty block");
            let sum: f64 = geometry::deviations(&rows, &center)
                .iter()
                .map(|d| geometry::dot(d, d))
                .sum();
            Ok(sum / rows.len() as f64)
        })
        .collect()
}

/// Dispersion values for one measure, `values[i][m]` belonging to
/// `layers[i]` and `magnitudes[m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityTable {
    pub measure: Measure,
    pub layers: Vec<usize>,
    pub magnitudes: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl VariabilityTable {
    pub fn row(&self, layer: usize) -> Option<&[f64]> {
        self.layers
            .iter()
            .position(|&l| l == layer)
            .map(|i| self.values[i].as_slice())
    }
}

/// Computes one measure at one layer, building the axis when needed.
pub fn compute_measure(
    store: &HiddenStateStore,
    layer: usize,
    measure: Measure,
    axis: Option<&MagnitudeAxis>,
    sd_convention: SdConvention,
    reading: ProjReading,
) -> Result<Vec<f64>, AxisError> {
    let owned;
    let axis = match (measure.uses_axis(), axis) {
        (false, _) => None,
        (true, Some(a)) => Some(a),
        (true, None) => {
            owned = layer_axis(store, layer)?;
            Some(&owned)
        }
    };
    Ok(match measure {
        Measure::Veucl => v_eucl(store, layer)?,
        Measure::Vresidual => v_residual(store, layer)?,
        Measure::Vproj => {
            let sd = v_proj(store, layer, axis.expect("axis built"), sd_convention)?;
            match reading {
                ProjReading::Sd => sd,
                ProjReading::Variance => sd.into_iter().map(|v| v * v).collect(),
            }
        }
        Measure::Voffaxis => v_offaxis(store, layer, axis.expect("axis built"))?,
    })
}
