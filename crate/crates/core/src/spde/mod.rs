//! Matérn (ν = 1) Gaussian Markov random fields on triangulations, with
//! log-κ and log-τ surfaces expanded in a basis.

mod estimate;
mod fem;
mod gmrf;
mod mesh;

use std::io::{Read, Write};

use crate::basis::{BasisSet, DesignMatrix, GridField};
use crate::linalg::sparse::SparseSym;
use crate::{Error, Result};

pub use estimate::{
    bfgs, estimate_spde_params, estimate_spde_params_with, fd_gradient, planar_mesh_for, BfgsResult,
    EstimateOptions, SpdeEstimate,
};
pub use fem::{fem_matrices, precision_matrix, FemMatrices};
pub use gmrf::{gmrf_log_likelihood, GmrfData, matern_correlation, matern_variance, sample_gmrf, Projection};
pub use mesh::{build_mesh, build_planar_mesh, grid_mesh, icosphere, Location, RingSpec, TriangleMesh};

/// `log κ(s) = Σ_z kappa_coeffs[z] ψ_z(s)` and likewise for `τ`, plus the
/// nugget variance.
#[derive(Debug, Clone)]
pub struct SpdeField {
    pub kappa_coeffs: Vec<f64>,
    pub tau_coeffs: Vec<f64>,
    pub kappa_basis: BasisSet,
    pub tau_basis: BasisSet,
    pub noise_var: f64,
}

impl SpdeField {
    pub fn new(
        kappa_coeffs: Vec<f64>,
        tau_coeffs: Vec<f64>,
        kappa_basis: BasisSet,
        tau_basis: BasisSet,
        noise_var: f64,
    ) -> Result<Self> {
        if kappa_coeffs.len() != kappa_basis.size() {
            return Err(Error::Dimension {
                expected: kappa_basis.size(),
                found: kappa_coeffs.len(),
                context: "kappa coefficients",
            });
        }
        if tau_coeffs.len() != tau_basis.size() {
            return Err(Error::Dimension {
                expected: tau_basis.size(),
                found: tau_coeffs.len(),
                context: "tau coefficients",
            });
        }
        if kappa_coeffs.iter().chain(&tau_coeffs).any(|v| !v.is_finite()) {
            return Err(Error::invalid("SPDE coefficients must be finite"));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        Ok(Self {
            kappa_coeffs,
            tau_coeffs,
            kappa_basis,
            tau_basis,
            noise_var,
        })
    }

    /// Constant κ and τ, expressed through the least-squares fit of the
    /// constant function on `mesh` vertices.
    pub fn stationary(
        mesh: &TriangleMesh,
        kappa_basis: BasisSet,
        tau_basis: BasisSet,
        kappa: f64,
        tau: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let (uk, ut) = constant_fits(mesh, &kappa_basis, &tau_basis)?;
        Self::new(
            uk.iter().map(|u| u * kappa.ln()).collect(),
            ut.iter().map(|u| u * tau.ln()).collect(),
            kappa_basis,
            tau_basis,
            noise_var,
        )
    }

    /// `(κ_i, τ_i)` at every mesh vertex.
    pub fn vertex_values(&self, mesh: &TriangleMesh) -> Result<(Vec<f64>, Vec<f64>)> {
        let sites = mesh.vertex_sites()?;
        let psi_k = self.kappa_basis.design_matrix(&sites)?;
        let psi_t = self.tau_basis.design_matrix(&sites)?;
        Ok((exp_of(&psi_k, &self.kappa_coeffs), exp_of(&psi_t, &self.tau_coeffs)))
    }

    pub fn precision(&self, mesh: &TriangleMesh, fem: &FemMatrices) -> Result<SparseSym> {
        let (k, t) = self.vertex_values(mesh)?;
        precision_matrix(fem, &k, &t)
    }

    /// Rows `type,z,value` with `type` in `{kappa, tau}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["type", "z", "value"])?;
        for (kind, coeffs) in [("kappa", &self.kappa_coeffs), ("tau", &self.tau_coeffs)] {
            for (z, v) in coeffs.iter().enumerate() {
                w.write_record([kind.to_string(), z.to_string(), format!("{v:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, kappa_basis: BasisSet, tau_basis: BasisSet, noise_var: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut kappa = vec![None; kappa_basis.size()];
        let mut tau = vec![None; tau_basis.size()];
        for rec in r.records() {
            let rec = rec?;
            let z: usize = rec[1].parse().map_err(|e| Error::invalid(format!("bad index: {e}")))?;
            let v: f64 = rec[2].parse().map_err(|e| Error::invalid(format!("bad value: {e}")))?;
            let slot = match &rec[0] {
                "kappa" => kappa.get_mut(z),
                "tau" => tau.get_mut(z),
                other => return Err(Error::invalid(format!("unknown coefficient type {other:?}"))),
            };
            *slot.ok_or_else(|| Error::invalid(format!("index {z} out of range")))? = Some(v);
        }
        let collect = |v: Vec<Option<f64>>, what: &str| {
            v.into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::invalid(format!("missing {what} coefficients")))
        };
        Self::new(collect(kappa, "kappa")?, collect(tau, "tau")?, kappa_basis, tau_basis, noise_var)
    }
}

/// Marginal log-likelihood of `y` under `field` on `mesh`.
pub fn gmrf_loglik(y: &GridField, mesh: &TriangleMesh, field: &SpdeField) -> Result<f64> {
    let fem = fem_matrices(mesh)?;
    let q = field.precision(mesh, &fem)?;
    let a = Projection::new(mesh, y.sites())?;
    gmrf_log_likelihood(y.values(), &a, &q, field.noise_var)
}

fn exp_of(psi: &DesignMatrix, coeffs: &[f64]) -> Vec<f64> {
    psi.mul_vec(coeffs).into_iter().map(f64::exp).collect()
}

/// Least-squares coefficients of the constant 1 at mesh vertices.
fn constant_fits(mesh: &TriangleMesh, kb: &BasisSet, tb: &BasisSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let sites = mesh.vertex_sites()?;
    let ones = vec![1.0; sites.len()];
    let uk = kb.projector(&sites)?.fit_values(&ones)?.values;
    let ut = tb.projector(&sites)?.fit_values(&ones)?.values;
    Ok((uk, ut))
}
