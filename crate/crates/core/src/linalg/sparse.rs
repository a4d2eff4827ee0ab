//! Symmetric sparse matrices and a fill-reducing sparse Cholesky.
//!
//! Matrices are stored with both triangles in CSC form. Factorisation
//! permutes by reverse Cuthill–McKee before calling the left-looking
//! Cholesky from `nalgebra-sparse`, which keeps fill bounded by the
//! bandwidth of the reordered mesh graph.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::ops::serial::spsolve_csc_lower_triangular;
use nalgebra_sparse::ops::Op;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SparseSym {
    csc: CscMatrix<f64>,
}

impl SparseSym {
    /// Duplicate entries are summed. Only the entries given are stored; the
    /// caller is responsible for supplying both `(i, j)` and `(j, i)`.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut coo = CooMatrix::new(n, n);
        for &(i, j, v) in triplets {
            coo.push(i, j, v);
        }
        Self {
            csc: CscMatrix::from(&coo),
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), &t)
    }

    pub fn n(&self) -> usize {
        self.csc.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.csc.nnz()
    }

    pub fn csc(&self) -> &CscMatrix<f64> {
        &self.csc
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.csc.triplet_iter().map(|(i, j, v)| (i, j, *v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.csc
            .get_entry(i, j)
            .map_or(0.0, |e| e.into_value())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for (i, j, v) in self.triplets() {
            y[i] += v * x[j];
        }
        y
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.triplets().map(|(i, j, v)| x[i] * v * x[j]).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut csc = self.csc.clone();
        csc.values_mut().iter_mut().for_each(|v| *v *= a);
        Self { csc }
    }

    pub fn add(&self, other: &SparseSym) -> Self {
        Self {
            csc: &self.csc + &other.csc,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n(), self.n());
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n()];
        for (i, j, _) in self.triplets() {
            if i != j {
                adj[j].push(i);
            }
        }
        adj
    }

    /// `P A Pᵀ` with `(P A Pᵀ)[a][b] = A[perm[a]][perm[b]]`.
    fn permuted(&self, perm: &[usize]) -> CscMatrix<f64> {
        let mut inv = vec![0; perm.len()];
        for (a, &p) in perm.iter().enumerate() {
            inv[p] = a;
        }
        let mut coo = CooMatrix::new(self.n(), self.n());
        for (i, j, v) in self.triplets() {
            coo.push(inv[i], inv[j], v);
        }
        CscMatrix::from(&coo)
    }
}

/// Reverse Cuthill–McKee ordering of a graph given by adjacency lists.
/// Each connected component starts from a pseudo-peripheral vertex.
pub fn rcm_ordering(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, mark: &mut Vec<usize>, stamp: usize| -> (usize, usize) {
        // returns (eccentricity, a min-degree vertex of the last level)
        let mut queue = VecDeque::from([(start, 0usize)]);
        mark[start] = stamp;
        let mut last = (0, start);
        while let Some((v, d)) = queue.pop_front() {
            if d > last.0 || (d == last.0 && degree[v] < degree[last.1]) {
                last = (d, v);
            }
            for &w in &adj[v] {
                if mark[w] != stamp {
                    mark[w] = stamp;
                    queue.push_back((w, d + 1));
                }
            }
        }
        last
    };

    let mut mark = vec![usize::MAX; n];
    let mut stamp = 0;
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start, &mut mark, stamp);
        stamp += 1;
        loop {
            let (e, f) = bfs_levels(far, &mut mark, stamp);
            stamp += 1;
            if e <= ecc {
                break;
            }
            start = far;
            ecc = e;
            far = f;
        }
        let begin = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = begin;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                order.push(w);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` of a sparse symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    perm: Vec<usize>,
    chol: CscCholesky<f64>,
    log_det: f64,
}

impl SparseCholesky {
    pub fn new(a: &SparseSym) -> Result<Self> {
        let perm = rcm_ordering(&a.adjacency());
        Self::with_ordering(a, perm)
    }

    pub fn with_ordering(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let pa = a.permuted(&perm);
        let chol = CscCholesky::factor(&pa)
            .map_err(|_| Error::NotPositiveDefinite(format!("sparse {}x{} matrix", a.n(), a.n())))?;
        let log_det = 2.0 * chol.l().diagonal_as_csc().values().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite("non-finite Cholesky diagonal".into()));
        }
        Ok(Self {
            perm,
            chol,
            log_det,
        })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Fill of the factor.
    pub fn factor_nnz(&self) -> usize {
        self.chol.l().nnz()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let bp: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        let y = self.chol.solve(&DVector::from_vec(bp));
        let mut x = vec![0.0; self.n()];
        for (a, &p) in self.perm.iter().enumerate() {
            x[p] = y[a];
        }
        x
    }

    /// `Pᵀ L⁻ᵀ z`; for standard normal `z` the result has covariance `A⁻¹`.
    pub fn solve_lt(&self, z: &[f64]) -> Vec<f64> {
        let mut y = DVector::from_column_slice(z);
        spsolve_csc_lower_triangular(Op::Transpose(self.chol.l()), &mut y)
            .expect("factor has a nonzero diagonal");
        let mut x = vec![0.0; self.n()];
        for (a, &p) in self.perm.iter().enumerate() {
            x[p] = y[a];
        }
        x
    }
}
