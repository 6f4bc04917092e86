use std::io::Write;

use crate::error::{Error, Result};
use crate::nn::Matrix;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Returns `(values, vectors)` with `vectors.row(k)` the unit
/// eigenvector of `values[k]`, sorted by decreasing eigenvalue.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Contract(format!("eigendecomposition needs a square matrix, got {}x{}", n, a.cols())));
    }
    let mut m = a.clone();
    // v accumulates the rotations; its columns become the eigenvectors
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = m.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q) * m.get(p, q))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(r, k, v.get(k, i));
        }
    }
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes, one per row, by decreasing variance.
    pub axes: Matrix,
    /// Sample-covariance eigenvalues, clamped at zero.
    pub variances: Vec<f64>,
    /// `variances / Σ variances`; all zero for constant data.
    pub ratios: Vec<f64>,
    /// Projection of each centered sample on every axis.
    pub scores: Matrix,
}

/// Principal components of the rows of `data`.
pub fn pca(data: &Matrix) -> Result<PcaResult> {
    let (rows, n) = (data.rows(), data.cols());
    if rows < 2 || n == 0 {
        return Err(Error::Insufficient(format!("PCA needs at least 2 samples of dimension >= 1, got {rows}x{n}")));
    }
    let mut mean = vec![0.0; n];
    for r in data.iter_rows() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut cov = Matrix::zeros(n, n);
    for r in data.iter_rows() {
        for i in 0..n {
            let di = r[i] - mean[i];
            for j in i..n {
                let v = cov.get(i, j) + di * (r[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov.get(i, j) / (rows - 1) as f64;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let (values, axes) = symmetric_eigen(&cov)?;
    let variances: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = variances.iter().sum();
    let ratios = variances
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let mut scores = Matrix::zeros(rows, n);
    for (b, r) in data.iter_rows().enumerate() {
        let centered: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for k in 0..n {
            scores.set(b, k, axes.row(k).iter().zip(&centered).map(|(a, c)| a * c).sum());
        }
    }
    Ok(PcaResult {
        mean,
        axes,
        variances,
        ratios,
        scores,
    })
}

/// Number of components whose explained-variance ratio is at least
/// `threshold`.
pub fn count_components(p: &PcaResult, threshold: f64) -> usize {
    p.ratios.iter().filter(|&&r| r >= threshold).count()
}

impl PcaResult {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps scores back to the original space.
    pub fn reconstruct(&self, sample: usize) -> Vec<f64> {
        let mut x = self.mean.clone();
        for k in 0..self.dim() {
            let s = self.scores.get(sample, k);
            for (xi, a) in x.iter_mut().zip(self.axes.row(k)) {
                *xi += s * a;
            }
        }
        x
    }

    /// `component, variance, ratio` per row.
    pub fn write_spectrum_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["component", "variance", "ratio"])?;
        for (k, (v, r)) in self.variances.iter().zip(&self.ratios).enumerate() {
            out.write_record([k.to_string(), v.to_string(), r.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}
