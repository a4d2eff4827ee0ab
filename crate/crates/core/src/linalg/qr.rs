//! Householder QR with column pivoting for dense least squares.

use crate::{Error, Result};

/// Factorisation `A P = Q R` of a tall `n × m` matrix, kept in compact
/// Householder form so that many right-hand sides can be solved cheaply.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    rows: usize,
    cols: usize,
    // column-major, Householder vectors below the diagonal, R on and above
    a: Vec<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    /// Factors a row-major `rows × cols` matrix. Fails with the original column
    /// index of the first pivot whose magnitude drops below `rel_tol · |r₀₀|`.
    pub fn new(data: &[f64], rows: usize, cols: usize, rel_tol: f64) -> Result<Self> {
        Self::factor(data, rows, cols, rel_tol, false)
    }

    /// Like [`PivotedQr::new`] but stops at the numerical rank instead of
    /// failing; [`PivotedQr::solve`] then returns the basic solution, with
    /// zeros for the columns left out.
    pub fn truncated(data: &[f64], rows: usize, cols: usize, rel_tol: f64) -> Result<Self> {
        Self::factor(data, rows, cols, rel_tol, true)
    }

    fn factor(data: &[f64], rows: usize, cols: usize, rel_tol: f64, truncate: bool) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
                context: "QR input",
            });
        }
        if rows < cols {
            return Err(Error::invalid(format!(
                "least squares needs at least {cols} rows, got {rows}"
            )));
        }
        let mut a = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                a[j * rows + i] = data[i * cols + j];
            }
        }
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut norms: Vec<f64> = (0..cols)
            .map(|j| a[j * rows..(j + 1) * rows].iter().map(|v| v * v).sum())
            .collect();
        let mut tau = vec![0.0; cols];
        let mut r00 = 0.0;
        let mut rank = cols;
        for k in 0..cols {
            let (pivot, _) = norms[k..]
                .iter()
                .enumerate()
                .fold((k, f64::NEG_INFINITY), |best, (off, &v)| {
                    if v > best.1 {
                        (k + off, v)
                    } else {
                        best
                    }
                });
            if pivot != k {
                for i in 0..rows {
                    a.swap(k * rows + i, pivot * rows + i);
                }
                norms.swap(k, pivot);
                perm.swap(k, pivot);
            }
            let col = &mut a[k * rows..(k + 1) * rows];
            let alpha: f64 = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if k == 0 {
                r00 = alpha;
            }
            if !(alpha > rel_tol * r00) || alpha == 0.0 {
                if truncate {
                    rank = k;
                    break;
                }
                return Err(Error::RankDeficient { index: perm[k] });
            }
            let beta = if col[k] > 0.0 { -alpha } else { alpha };
            let v0 = col[k] - beta;
            for v in col[k + 1..].iter_mut() {
                *v /= v0;
            }
            tau[k] = (beta - col[k]) / beta;
            col[k] = beta;
            for j in (k + 1)..cols {
                let (head, tail) = a.split_at_mut(j * rows);
                let v = &head[k * rows..(k + 1) * rows];
                let c = &mut tail[..rows];
                let mut dot = c[k];
                for i in (k + 1)..rows {
                    dot += v[i] * c[i];
                }
                dot *= tau[k];
                c[k] -= dot;
                for i in (k + 1)..rows {
                    c[i] -= dot * v[i];
                }
                norms[j] = c[k + 1..].iter().map(|x| x * x).sum();
            }
        }
        Ok(Self {
            rows,
            cols,
            a,
            tau,
            perm,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Original indices of the columns dropped by a truncated factorisation.
    pub fn dropped(&self) -> &[usize] {
        &self.perm[self.rank..]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Least-squares solution of `A x ≈ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.rows {
            return Err(Error::Dimension {
                expected: self.rows,
                found: b.len(),
                context: "least-squares right-hand side",
            });
        }
        let (n, m) = (self.rows, self.cols);
        let r = self.rank;
        let mut y = b.to_vec();
        for k in 0..r {
            let v = &self.a[k * n..(k + 1) * n];
            let mut dot = y[k];
            for i in (k + 1)..n {
                dot += v[i] * y[i];
            }
            dot *= self.tau[k];
            y[k] -= dot;
            for i in (k + 1)..n {
                y[i] -= dot * v[i];
            }
        }
        let mut z = vec![0.0; m];
        for k in (0..r).rev() {
            let mut s = y[k];
            for j in (k + 1)..r {
                s -= self.a[j * n + k] * z[j];
            }
            z[k] = s / self.a[k * n + k];
        }
        let mut x = vec![0.0; m];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        Ok(x)
    }
}
