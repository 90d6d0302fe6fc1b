//! Singular value decomposition and linear least squares.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. It is slow for large
//! matrices but accurate to machine precision, which is what the alignment
//! solve needs; anchor dimensions stay in the hundreds.

use crate::error::{Error, Result};

use super::Matrix;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U · diag(S) · Vᵀ`.
///
/// For an `m × n` input with `k = min(m, n)`, `u` is `m × k`, `v` is `n × k`
/// and `singular_values` has `k` entries in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_t(&self.v)
    }

    /// Number of singular values above `tol · σ_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > tol * max && s > 0.0)
            .count()
    }
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    a.ensure_finite("svd input")?;
    if a.rows() >= a.cols() {
        Ok(jacobi_tall(a))
    } else {
        let t = jacobi_tall(&a.transpose());
        Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

/// One-sided Jacobi for `m ≥ n`.
fn jacobi_tall(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    // Work on columns stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let sigma_max = order.first().map(|&i| sigma[i]).unwrap_or(0.0);
    let negligible = sigma_max * (m.max(n) as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_sorted = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        let candidate = if s > negligible && s > 0.0 {
            Some(cols[j].iter().map(|x| x / s).collect::<Vec<_>>())
        } else {
            None
        };
        let col = orthonormal_completion(candidate, &u_cols, m);
        u_cols.push(col);
        v_cols.push(v[j].clone());
        s_sorted.push(if s > negligible { s } else { s.max(0.0) });
    }
    sigma.clear();

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Svd {
        u,
        singular_values: s_sorted,
        v,
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Re-orthogonalizes `candidate` against `basis`; falls back to unit vectors
/// when the candidate is missing or degenerate.
fn orthonormal_completion(candidate: Option<Vec<f64>>, basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let project_out = |mut w: Vec<f64>| -> Option<Vec<f64>> {
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for b in basis {
                let d: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in w.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            Some(w.into_iter().map(|x| x / norm).collect())
        } else {
            None
        }
    };
    if let Some(w) = candidate.and_then(project_out) {
        return w;
    }
    for e in 0..m {
        let mut w = vec![0.0; m];
        w[e] = 1.0;
        if let Some(w) = project_out(w) {
            return w;
        }
    }
    unreachable!("basis of {} vectors spans R^{}", basis.len(), m)
}

/// Result of [`least_squares`].
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: Matrix,
    pub rank: usize,
    /// True when the minimizer is not unique and the minimum-norm one was
    /// returned.
    pub rank_deficient: bool,
}

/// Minimizes `‖X·A − B‖_F` over `X`.
///
/// `A` is `d × N` and `B` is `p × N`: column `c` of each holds one paired
/// observation. Returns the minimum-norm minimizer `X = B·A⁺`.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<LeastSquares> {
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "least squares needs paired columns, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    b.ensure_finite("least squares target")?;
    let dec = svd(a)?;
    let tol = (a.rows().max(a.cols()) as f64) * f64::EPSILON;
    let rank = dec.rank(tol);
    // A⁺ = V · S⁺ · Uᵀ, so X = (B·V) · S⁺ · Uᵀ.
    let mut bv = b.matmul(&dec.v);
    for i in 0..bv.rows() {
        for j in 0..bv.cols() {
            bv[(i, j)] = if j < rank {
                bv[(i, j)] / dec.singular_values[j]
            } else {
                0.0
            };
        }
    }
    let solution = bv.matmul_t(&dec.u);
    solution.ensure_finite("least squares solution")?;
    Ok(LeastSquares {
        solution,
        rank,
        rank_deficient: rank < a.rows(),
    })
}

/// Orthogonal Procrustes: the orthogonal `W` minimizing `‖W·A − B‖_F`, via
/// `B·Aᵀ = U·S·Vᵀ`, `W = U·Vᵀ`.
pub fn procrustes(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "procrustes needs equally shaped inputs, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let m = b.matmul_t(a);
    let dec = svd(&m)?;
    Ok(dec.u.matmul_t(&dec.v))
}
