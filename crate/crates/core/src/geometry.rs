//! Centroids, the principal magnitude axis, and axis projections.
//!
//! Point sets are `&[Vec<f64>]` with one row per point. PC1 is computed from
//! the small `M x M` Gram matrix of the centered centroids and mapped back to
//! the hidden dimension, so no `dim x dim` covariance is ever formed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("empty point set")]
    Empty,
    #[error("row {row} has length {found}, expected {expected}")]
    ShapeMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("need at least 2 centroids for a principal axis, got {0}")]
    TooFewCentroids(usize),
    #[error("{centroids} centroids but {log_magnitudes} log-magnitudes")]
    LengthMismatch {
        centroids: usize,
        log_magnitudes: usize,
    },
    #[error("centroids have zero total variance")]
    Degenerate,
    #[error("symmetric eigen-solver did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// First principal axis of a layer's magnitude centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeAxis {
    /// Unit vector in hidden space.
    pub direction: Vec<f64>,
    pub explained_variance_ratio: f64,
    /// Pearson correlation of centroid projections with log magnitude,
    /// non-negative after orientation.
    pub orientation_corr: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_rows(points: &[Vec<f64>]) -> Result<usize, GeometryError> {
    let first = points.first().ok_or(GeometryError::Empty)?;
    let dim = first.len();
    for (row, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(GeometryError::ShapeMismatch {
                row,
                expected: dim,
                found: p.len(),
            });
        }
    }
    Ok(dim)
}

/// Per-coordinate arithmetic mean.
pub fn centroid(points: &[Vec<f64>]) -> Result<Vec<f64>, GeometryError> {
    let dim = check_rows(points)?;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (acc, v) in mean.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let k = points.len() as f64;
    mean.iter_mut().for_each(|v| *v /= k);
    Ok(mean)
}

/// `points[i] - center` for every row.
pub fn deviations(points: &[Vec<f64>], center: &[f64]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| p.iter().zip(center).map(|(a, b)| a - b).collect())
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the eigenvectors as columns (`vectors[row][col]`),
/// unsorted. Iterates until the off-diagonal Frobenius mass falls below
/// `1e-12` times the total.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), GeometryError> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let total: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if total == 0.0 {
        return Ok((vec![0.0; n], v));
    }

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * total {
            return Ok(((0..n).map(|i| a[i][i]).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(GeometryError::NoConvergence(JACOBI_MAX_SWEEPS))
}

/// First principal axis of the mean-centered centroids, oriented so that
/// projections correlate non-negatively with `log_magnitudes`.
pub fn pc1(centroids: &[Vec<f64>], log_magnitudes: &[f64]) -> Result<MagnitudeAxis, GeometryError> {
    let m = centroids.len();
    if m < 2 {
        return Err(GeometryError::TooFewCentroids(m));
    }
    if log_magnitudes.len() != m {
        return Err(GeometryError::LengthMismatch {
            centroids: m,
            log_magnitudes: log_magnitudes.len(),
        });
    }
    let dim = check_rows(centroids)?;
    let grand = centroid(centroids)?;
    let centered = deviations(centroids, &grand);

    let mut gram = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let g = dot(&centered[i], &centered[j]);
            gram[i][j] = g;
            gram[j][i] = g;
        }
    }
    let trace: f64 = (0..m).map(|i| gram[i][i]).sum();
    if !(trace > 0.0) {
        return Err(GeometryError::Degenerate);
    }

    let (values, vectors) = symmetric_eigen(&gram)?;
    // Lowest index wins ties so the choice is deterministic.
    let top = (0..m).fold(0, |best, k| if values[k] > values[best] { k } else { best });
    let lambda = values[top];

    let mut direction = vec![0.0; dim];
    for (i, row) in centered.iter().enumerate() {
        let w = vectors[i][top];
        for (acc, x) in direction.iter_mut().zip(row) {
            *acc += w * x;
        }
    }
    let len = norm(&direction);
    if !(len > 0.0) {
        return Err(GeometryError::Degenerate);
    }
    direction.iter_mut().for_each(|x| *x /= len);

    let projections: Vec<f64> = centered.iter().map(|c| dot(c, &direction)).collect();
    let mut corr = pearson(&projections, log_magnitudes);
    if corr < 0.0 {
        direction.iter_mut().for_each(|x| *x = -*x);
        corr = -corr;
    }

    Ok(MagnitudeAxis {
        direction,
        explained_variance_ratio: (lambda / trace).clamp(0.0, 1.0),
        orientation_corr: corr,
    })
}

/// Per-point deviations from the set's own centroid, split into the signed
/// on-axis score and the norm of the orthogonal remainder.
pub fn project_deviations(
    points: &[Vec<f64>],
    axis: &MagnitudeAxis,
) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
    let dim = check_rows(points)?;
    if dim != axis.direction.len() {
        return Err(GeometryError::ShapeMismatch {
            row: 0,
            expected: axis.direction.len(),
            found: dim,
        });
    }
    let center = centroid(points)?;
    let mut on_axis = Vec::with_capacity(points.len());
    let mut off_axis = Vec::with_capacity(points.len());
    for d in deviations(points, &center) {
        let score = dot(&d, &axis.direction);
        let off = d
            .iter()
            .zip(&axis.direction)
            .map(|(x, u)| {
                let r = x - score * u;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        on_axis.push(score);
        off_axis.push(off);
    }
    Ok((on_axis, off_axis))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(direction: Vec<f64>) -> MagnitudeAxis {
        MagnitudeAxis {
            direction,
            explained_variance_ratio: 1.0,
            orientation_corr: 1.0,
        }
    }

    #[test]
    fn centroid_examples() {
        let square = vec![
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![2.0, 2.0],
            vec![1.0, 1.0],
        ];
        assert_eq!(centroid(&square).unwrap(), vec![1.0, 1.0]);
        assert_eq!(centroid(&[vec![3.5, -1.0]]).unwrap(), vec![3.5, -1.0]);
        assert_eq!(
            centroid(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(centroid(&[]), Err(GeometryError::Empty));
        assert!(matches!(
            centroid(&[vec![1.0], vec![1.0, 2.0]]),
            Err(GeometryError::ShapeMismatch { row: 1, .. })
        ));
    }

    #[test]
    fn collinear_centroids_give_e1() {
        let logs: Vec<f64> = [1.0f64, 10.0, 100.0].iter().map(|n| n.ln()).collect();
        let cents: Vec<Vec<f64>> = logs.iter().map(|&l| vec![l, 0.0, 0.0]).collect();
        let ax = pc1(&cents, &logs).unwrap();
        assert!((ax.direction[0] - 1.0).abs() < 1e-12);
        assert!(ax.direction[1].abs() < 1e-12 && ax.direction[2].abs() < 1e-12);
        assert!((ax.explained_variance_ratio - 1.0).abs() < 1e-12);
        assert!((ax.orientation_corr - 1.0).abs() < 1e-12);

        // Negated centroids: the axis flips so projections still rise with log n.
        let negated: Vec<Vec<f64>> = logs.iter().map(|&l| vec![-l, 0.0, 0.0]).collect();
        let ax = pc1(&negated, &logs).unwrap();
        assert!((ax.direction[0] + 1.0).abs() < 1e-12);
        assert!(ax.orientation_corr >= 0.0);
    }

    #[test]
    fn degenerate_centroids_rejected() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert_eq!(
            pc1(&same, &[0.0, 1.0, 2.0, 3.0]),
            Err(GeometryError::Degenerate)
        );
        assert_eq!(
            pc1(&[vec![1.0]], &[0.0]),
            Err(GeometryError::TooFewCentroids(1))
        );
        assert!(matches!(
            pc1(&[vec![1.0], vec![2.0]], &[0.0]),
            Err(GeometryError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn projection_hand_example() {
        let pts = vec![
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![2.0, 0.0],
            vec![-2.0, 0.0],
        ];
        let (on, off) = project_deviations(&pts, &axis(vec![1.0, 0.0])).unwrap();
        assert_eq!(on, vec![1.0, -1.0, 2.0, -2.0]);
        assert_eq!(off, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn points_on_and_orthogonal_to_axis() {
        let u = vec![0.6, 0.8];
        let along: Vec<Vec<f64>> = [-1.0, 0.5, 3.0]
            .iter()
            .map(|t| vec![0.6 * t, 0.8 * t])
            .collect();
        let (on, off) = project_deviations(&along, &axis(u.clone())).unwrap();
        assert!(off.iter().all(|v| v.abs() < 1e-12));
        assert!((on.iter().sum::<f64>()).abs() < 1e-12);

        let across: Vec<Vec<f64>> = [-1.0, 0.5, 3.0]
            .iter()
            .map(|t| vec![-0.8 * t, 0.6 * t])
            .collect();
        let (on, _) = project_deviations(&across, &axis(u)).unwrap();
        assert!(on.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn jacobi_diagonalizes() {
        let m = vec![
            vec![4.0, 1.0, 2.0],
            vec![1.0, 3.0, 0.5],
            vec![2.0, 0.5, 5.0],
        ];
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                let mv: f64 = (0..3).map(|j| m[i][j] * vecs[j][k]).sum();
                assert!((mv - vals[k] * vecs[i][k]).abs() < 1e-10);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 12.0).abs() < 1e-12);
    }
}
