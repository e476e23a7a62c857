//! Principal component analysis via cyclic Jacobi eigendecomposition.

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which Jacobi iteration stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n x n` matrix (row-major).
///
/// Returns eigenvalues in descending order (stable on ties) and the matching
/// unit eigenvectors. Pivots are visited row-major, `(0,1), (0,2), ...,
/// (n-2,n-1)`, and every sweep starts with the convergence check.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < JACOBI_TOLERANCE {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&col| (0..n).map(|k| v[k * n + col]).collect())
        .collect();
    (values, vectors)
}

/// Flips `v` so its largest-magnitude entry (lowest index on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Non-increasing variances along each component.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    /// Fits the top `k` components of `data` (one row per sample) using the
    /// `1/(n-1)` sample covariance.
    pub fn fit(data: &[&[f64]], k: usize) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Param(format!("PCA needs at least 2 samples, got {}", data.len())));
        }
        let dim = data[0].len();
        if data.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("PCA input rows have inconsistent lengths".into()));
        }
        if k > dim {
            return Err(Error::Param(format!("PCA k = {k} exceeds dimension {dim}")));
        }
        if data.iter().any(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::Data("PCA input contains non-finite values".into()));
        }
        let n = data.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in data {
            for (m, x) in mean.iter_mut().zip(*r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = vec![0.0; dim * dim];
        let mut centered = vec![0.0; dim];
        for r in data {
            for (c, (x, m)) in centered.iter_mut().zip(r.iter().zip(&mean)) {
                *c = x - m;
            }
            for i in 0..dim {
                for j in i..dim {
                    cov[i * dim + j] += centered[i] * centered[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / (n - 1.0);
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }

        let (values, vectors) = symmetric_eigen(&cov, dim);
        let components = vectors
            .into_iter()
            .take(k)
            .map(|mut v| {
                fix_sign(&mut v);
                v
            })
            .collect();
        let explained_variance = values.into_iter().take(k).map(|v| v.max(0.0)).collect();
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `components · (z - mean)`.
    pub fn transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Shape {
                what: "PCA input",
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(z.iter().zip(&self.mean)).map(|(w, (x, m))| w * (x - m)).sum())
            .collect())
    }

    /// `mean + componentsᵀ · y`.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.k() {
            return Err(Error::Shape {
                what: "PCA projection",
                expected: self.k(),
                got: y.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, coef) in self.components.iter().zip(y) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += coef * w;
            }
        }
        Ok(out)
    }
}
