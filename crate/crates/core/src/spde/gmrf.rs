use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::Site;
use crate::linalg::sparse::{SparseCholesky, SparseSym};
use crate::{Error, Result};

use super::mesh::TriangleMesh;

/// Sparse `n × M` interpolation matrix from mesh vertices to data sites.
#[derive(Debug, Clone)]
pub struct Projection {
    m: usize,
    rows: Vec<[(usize, f64); 3]>,
}

impl Projection {
    pub fn new(mesh: &TriangleMesh, sites: &[Site]) -> Result<Self> {
        let rows = sites
            .iter()
            .map(|s| {
                let loc = mesh.locate(s)?;
                let tri = mesh.triangles()[loc.triangle];
                Ok([0, 1, 2].map(|k| (tri[k], loc.weights[k])))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            m: mesh.n_vertices(),
            rows,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.rows.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.m
    }

    /// `A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(v, w)| w * x[v]).sum())
            .collect()
    }

    /// `Aᵀ y`
    pub fn transpose_apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (r, &yi) in self.rows.iter().zip(y) {
            for &(v, w) in r {
                out[v] += w * yi;
            }
        }
        out
    }

    /// `AᵀA / s`
    pub fn gram(&self, s: f64) -> SparseSym {
        let mut t = Vec::with_capacity(9 * self.rows.len());
        for r in &self.rows {
            for &(a, wa) in r {
                for &(b, wb) in r {
                    t.push((a, b, wa * wb / s));
                }
            }
        }
        SparseSym::from_triplets(self.m, &t)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut a = nalgebra::DMatrix::zeros(self.rows.len(), self.m);
        for (i, r) in self.rows.iter().enumerate() {
            for &(v, w) in r {
                a[(i, v)] += w;
            }
        }
        a
    }
}

/// Data-side quantities `yᵀy`, `Aᵀy`, `AᵀA` reused across likelihood
/// evaluations with the same observations.
#[derive(Debug, Clone)]
pub struct GmrfData {
    n: usize,
    yty: f64,
    aty: Vec<f64>,
    ata: SparseSym,
}

impl GmrfData {
    pub fn new(y: &[f64], a: &Projection) -> Result<Self> {
        if y.len() != a.n_sites() {
            return Err(Error::Dimension {
                expected: a.n_sites(),
                found: y.len(),
                context: "GMRF data",
            });
        }
        Ok(Self {
            n: y.len(),
            yty: y.iter().map(|v| v * v).sum(),
            aty: a.transpose_apply(y),
            ata: a.gram(1.0),
        })
    }

    /// Log density of `y ~ N(0, A Q⁻¹ Aᵀ + σ² I)` through sparse
    /// factorisations of `Q` and `Q + AᵀA/σ²`, including the `2π` constant.
    pub fn log_likelihood(&self, q: &SparseSym, noise_var: f64) -> Result<f64> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid("noise variance must be positive"));
        }
        let n = self.n as f64;
        let chol_q = SparseCholesky::new(q)?;
        let chol_post = SparseCholesky::new(&q.add(&self.ata.scale(1.0 / noise_var)))?;
        let b: Vec<f64> = self.aty.iter().map(|v| v / noise_var).collect();
        let mu = chol_post.solve(&b);
        let quad = self.yty / noise_var - b.iter().zip(&mu).map(|(u, v)| u * v).sum::<f64>();
        let log_det = chol_post.log_det() - chol_q.log_det() + n * noise_var.ln();
        Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }
}

/// One-off [`GmrfData::log_likelihood`].
pub fn gmrf_log_likelihood(y: &[f64], a: &Projection, q: &SparseSym, noise_var: f64) -> Result<f64> {
    GmrfData::new(y, a)?.log_likelihood(q, noise_var)
}

/// One draw from `N(0, Q⁻¹)`.
pub fn sample_gmrf<R: Rng>(chol: &SparseCholesky, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..chol.n()).map(|_| rng.sample(StandardNormal)).collect();
    chol.solve_lt(&z)
}

/// `(κd) K₁(κd)`, the Matérn ν = 1 correlation.
pub fn matern_correlation(distance: f64, kappa: f64) -> f64 {
    let x = kappa * distance;
    if x < 1e-12 {
        1.0
    } else {
        x * puruspe::Kn(1, x)
    }
}

/// Marginal variance `1 / (4π κ² τ²)` of the planar ν = 1 field.
pub fn matern_variance(kappa: f64, tau: f64) -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * kappa * kappa * tau * tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::unit_square_grid;
    use crate::spde::fem::{fem_matrices, precision_matrix};
    use crate::spde::mesh::{build_planar_mesh, RingSpec};
    use rand::SeedableRng;

    fn dense_log_likelihood(y: &[f64], a: &Projection, q: &SparseSym, s: f64) -> f64 {
        let qd = q.to_dense();
        let ad = a.to_dense();
        let sigma = &ad * qd.try_inverse().unwrap() * ad.transpose()
            + nalgebra::DMatrix::identity(y.len(), y.len()) * s;
        let chol = sigma.cholesky().unwrap();
        let yv = nalgebra::DVector::from_column_slice(y);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + yv.dot(&chol.solve(&yv)))
    }

    fn small_problem() -> (TriangleMesh, Projection, SparseSym) {
        let mesh = build_planar_mesh(&unit_square_grid(4, 4), RingSpec { width: 0.4, spacing: Some(0.4) }).unwrap();
        assert!(mesh.n_vertices() <= 50, "{}", mesh.n_vertices());
        let fem = fem_matrices(&mesh).unwrap();
        let m = mesh.n_vertices();
        let kappa: Vec<f64> = (0..m).map(|i| 2.0 + 0.1 * (i % 5) as f64).collect();
        let tau: Vec<f64> = (0..m).map(|i| 0.5 + 0.05 * (i % 3) as f64).collect();
        let q = precision_matrix(&fem, &kappa, &tau).unwrap();
        let sites: Vec<Site> = (0..12)
            .map(|i| Site::planar(0.05 + 0.08 * i as f64, 0.9 - 0.07 * i as f64).unwrap())
            .collect();
        let a = Projection::new(&mesh, &sites).unwrap();
        (mesh, a, q)
    }

    #[test]
    fn sparse_matches_dense() {
        let (_, a, q) = small_problem();
        let y: Vec<f64> = (0..a.n_sites()).map(|i| (i as f64 * 0.7).sin()).collect();
        for s in [0.01, 0.3, 2.0] {
            let sparse = gmrf_log_likelihood(&y, &a, &q, s).unwrap();
            let dense = dense_log_likelihood(&y, &a, &q, s);
            assert!((sparse - dense).abs() < 1e-8 * dense.abs().max(1.0), "{sparse} vs {dense}");
        }
        let zero = vec![0.0; a.n_sites()];
        let sparse = gmrf_log_likelihood(&zero, &a, &q, 0.1).unwrap();
        assert!((sparse - dense_log_likelihood(&zero, &a, &q, 0.1)).abs() < 1e-8);
    }

    #[test]
    fn large_noise_limit() {
        let (_, a, q) = small_problem();
        let y: Vec<f64> = (0..a.n_sites()).map(|i| i as f64 * 10.0).collect();
        let s = 1e6;
        let n = y.len() as f64;
        let pure = -0.5 * (n * (2.0 * std::f64::consts::PI * s).ln() + y.iter().map(|v| v * v).sum::<f64>() / s);
        assert!((gmrf_log_likelihood(&y, &a, &q, s).unwrap() - pure).abs() < 1e-3);
    }

    #[test]
    fn sample_quadratic_form() {
        let (mesh, _, q) = small_problem();
        let chol = SparseCholesky::new(&q).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let m = mesh.n_vertices() as f64;
        let avg: f64 = (0..200).map(|_| q.quad_form(&sample_gmrf(&chol, &mut rng)) / m).sum::<f64>() / 200.0;
        assert!((0.9..=1.1).contains(&avg), "{avg}");
    }

    #[test]
    fn matern_reference_values() {
        // K₁(1) = 0.601907230197235
        assert!((matern_correlation(1.0, 1.0) - 0.601_907_230_197_235).abs() < 1e-10);
        assert_eq!(matern_correlation(0.0, 3.0), 1.0);
        assert!(matern_correlation(1e-6, 1.0) > 0.999_999);
        assert!((matern_variance(1.0, 1.0) - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
    }
}
