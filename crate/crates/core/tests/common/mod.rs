//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngExt, SeedableRng};
use rand_pcg::Pcg64;

use repvar::dataset::{DatasetManifest, HiddenStateStore, DEFAULT_MAGNITUDES};
use repvar::synth::SynthSpec;

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Store filled with uniform values in `[-scale, scale)`.
pub fn random_store(
    rng: &mut impl Rng,
    n_layers: usize,
    magnitudes: &[u64],
    n_sentences: usize,
    dim: usize,
    scale: f32,
) -> HiddenStateStore {
    let manifest = DatasetManifest::new(
        "random",
        n_layers,
        dim,
        magnitudes.to_vec(),
        n_sentences,
        "random.bin",
    );
    let values = (0..manifest.element_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    HiddenStateStore::from_parts(manifest, values).unwrap()
}

pub fn default_magnitudes() -> Vec<u64> {
    DEFAULT_MAGNITUDES.to_vec()
}

/// Synthetic spec in the shape used by the recovery checks.
pub fn recovery_spec(n_layers: usize, alpha_true: f64, seed: u64) -> SynthSpec {
    SynthSpec::new(n_layers, 256, 64, alpha_true, seed)
}

/// Median of all pairwise slopes with distinct x, by full enumeration.
pub fn brute_theil_sen_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mut slopes = Vec::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if xs[i] != xs[j] {
                slopes.push((ys[j] - ys[i]) / (xs[j] - xs[i]));
            }
        }
    }
    median(&mut slopes)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Leading eigenvector of the `dim x dim` covariance of the rows.
pub fn covariance_pc1(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows.len();
    let d = rows[0].len();
    let x = DMatrix::from_fn(m, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(m, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / m as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    eig.eigenvectors.column(top).iter().copied().collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Exact `(P(W+ >= w), P(W+ <= w))` by enumerating all `2^n` sign patterns
/// over the midranks of `|d|`.
pub fn enumerate_wilcoxon(diffs: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = 1u64 << n;
    let (mut ge, mut le) = (0u64, 0u64);
    for pattern in 0..total {
        let w: f64 = (0..n)
            .filter(|i| pattern >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if w >= observed - 1e-9 {
            ge += 1;
        }
        if w <= observed + 1e-9 {
            le += 1;
        }
    }
    (ge as f64 / total as f64, le as f64 / total as f64)
}

/// Mean over sentences of the squared distance to the cell centroid,
/// computed straight from the raw buffer.
pub fn direct_mean_squared_deviation(
    store: &HiddenStateStore,
    layer: usize,
    magnitude: usize,
) -> f64 {
    let (_, _, s, d) = store.shape();
    let at = |i: usize, k: usize| store.get(layer, magnitude, i, k).unwrap() as f64;
    let center: Vec<f64> = (0..d)
        .map(|k| (0..s).map(|i| at(i, k)).sum::<f64>() / s as f64)
        .collect();
    (0..s)
        .map(|i| (0..d).map(|k| (at(i, k) - center[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / s as f64
}
