use crate::linalg::sparse::SparseSym;
use crate::{Error, Result};

use super::mesh::{dot, TriangleMesh};

/// Lumped mass and stiffness matrices of piecewise-linear elements.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// `∫ φ_i`
    pub c: Vec<f64>,
    /// `∫ ∇φ_i · ∇φ_j`
    pub g: SparseSym,
}

/// Element-wise assembly. Triangles on the sphere are treated as flat in the
/// embedding.
pub fn fem_matrices(mesh: &TriangleMesh) -> Result<FemMatrices> {
    let m = mesh.n_vertices();
    let mut c = vec![0.0; m];
    let mut triplets = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateGeometry(format!("triangle {t} has zero area")));
        }
        let p = tri.map(|v| mesh.vertices()[v]);
        // edge opposite each vertex
        let e = [0, 1, 2].map(|i| {
            let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
        });
        for i in 0..3 {
            c[tri[i]] += area / 3.0;
            for j in 0..3 {
                triplets.push((tri[i], tri[j], dot(e[i], e[j]) / (4.0 * area)));
            }
        }
    }
    Ok(FemMatrices {
        c,
        g: SparseSym::from_triplets(m, &triplets),
    })
}

/// `Q = T (K²C + G) C⁻¹ (K²C + G) T` with `T = diag(τ)`, `K²C = diag(κ²·C)`.
pub fn precision_matrix(fem: &FemMatrices, kappa: &[f64], tau: &[f64]) -> Result<SparseSym> {
    let m = fem.c.len();
    if kappa.len() != m || tau.len() != m {
        return Err(Error::Dimension {
            expected: m,
            found: kappa.len().min(tau.len()),
            context: "vertex kappa/tau values",
        });
    }
    if kappa.iter().chain(tau).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("kappa and tau must be positive".into()));
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, j, v) in fem.g.triplets() {
        rows[i].push((j, v));
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let d = kappa[i] * kappa[i] * fem.c[i];
        match row.iter_mut().find(|(j, _)| *j == i) {
            Some(e) => e.1 += d,
            None => row.push((i, d)),
        }
    }
    let mut triplets = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        for &(i, hik) in row {
            for &(j, hkj) in row {
                triplets.push((i, j, tau[i] * hik * hkj * tau[j] / fem.c[k]));
            }
        }
    }
    Ok(SparseSym::from_triplets(m, &triplets))
}
