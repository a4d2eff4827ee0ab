use log::warn;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, DesignMatrix, GridField, Site, SiteKind};
use crate::{Error, Result};

use super::fem::{fem_matrices, precision_matrix, FemMatrices};
use super::gmrf::{GmrfData, Projection};
use super::mesh::{build_planar_mesh, RingSpec, TriangleMesh};
use super::{constant_fits, SpdeField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub max_iter: usize,
    /// sup-norm of the gradient at which the ascent stops
    pub grad_tol: f64,
    /// relative objective change at which the ascent stops
    pub f_tol: f64,
    /// relative finite-difference step
    pub fd_step: f64,
    /// largest Euclidean step in coefficient space per iteration
    pub max_step: f64,
    /// variance of the zero-mean Gaussian penalty on κ and τ coefficients
    pub penalty_var: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-3,
            f_tol: 1e-10,
            fd_step: 1e-5,
            max_step: 1.0,
            penalty_var: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpdeEstimate {
    pub field: SpdeField,
    /// marginal log-likelihood of the centered data at the estimate
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// κ and τ of the stationary initial fit
    pub stationary: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central differences with step `h·max(1, |x_i|)`; one-sided where the
/// objective is infinite on one side.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * step),
                (true, false) => (up - f(x)) / step,
                (false, true) => (f(x) - down) / step,
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Minimizes `f` by BFGS with finite-difference gradients and a
/// backtracking Armijo line search. `f` may return `+∞` outside its domain.
pub fn bfgs(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], opts: &EstimateOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return BfgsResult {
            x,
            value: fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = fd_gradient(f, &x, opts.fd_step);
    let mut h = identity(n);
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    for iter in 0..opts.max_iter {
        if sup(&g) <= opts.grad_tol {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut p = mat_vec(&h, &g).into_iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dotv(&g, &p);
        if !(slope < 0.0) {
            h = identity(n);
            p = g.iter().map(|v| -v).collect();
            slope = dotv(&g, &p);
        }
        let norm = dotv(&p, &p).sqrt();
        if norm > opts.max_step {
            let s = opts.max_step / norm;
            p.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let fxn = f(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * alpha * slope {
                next = Some((xn, fxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = next else {
            // no descent along the search direction: flat up to gradient noise
            let converged = sup(&g) <= 100.0 * opts.grad_tol;
            return BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged,
            };
        };
        let gn = fd_gradient(f, &xn, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotv(&s, &y);
        if sy > 1e-12 {
            let hy = mat_vec(&h, &y);
            let yhy = dotv(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let change = (fx - fxn).abs();
        x = xn;
        fx = fxn;
        g = gn;
        if change <= opts.f_tol * (1.0 + fx.abs()) {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
            };
        }
    }
    BfgsResult {
        x,
        value: fx,
        iterations: opts.max_iter,
        converged: sup(&g) <= opts.grad_tol,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dotv(row, v)).collect()
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Penalized negative log-likelihood over `(κ coeffs, τ coeffs, log σ²)`.
struct Objective {
    fem: FemMatrices,
    data: GmrfData,
    psi_k: DesignMatrix,
    psi_t: DesignMatrix,
    penalty_var: f64,
}

impl Objective {
    fn n_kappa(&self) -> usize {
        self.psi_k.cols
    }

    fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let nk = self.n_kappa();
        let (xk, rest) = x.split_at(nk);
        let (xt, xs) = rest.split_at(rest.len() - 1);
        let kappa: Vec<f64> = self.psi_k.mul_vec(xk).into_iter().map(f64::exp).collect();
        let tau: Vec<f64> = self.psi_t.mul_vec(xt).into_iter().map(f64::exp).collect();
        let q = precision_matrix(&self.fem, &kappa, &tau)?;
        self.data.log_likelihood(&q, xs[0].exp())
    }

    fn value(&self, x: &[f64]) -> f64 {
        let coeffs = &x[..x.len() - 1];
        let penalty = coeffs.iter().map(|c| c * c).sum::<f64>() / (2.0 * self.penalty_var);
        match self.log_likelihood(x) {
            Ok(l) if l.is_finite() => -l + penalty,
            _ => f64::INFINITY,
        }
    }
}

/// Marginal-likelihood estimate of log-κ, log-τ basis coefficients and the
/// nugget variance for one field, with default options.
pub fn estimate_spde_params(
    y: &GridField,
    mesh: &TriangleMesh,
    basis_kappa: &BasisSet,
    basis_tau: &BasisSet,
) -> Result<SpdeEstimate> {
    estimate_spde_params_with(y, mesh, basis_kappa, basis_tau, &EstimateOptions::default())
}

/// The field is centered at its site mean, then a stationary fit (one scalar
/// per surface plus the nugget) warm-starts the full fit.
pub fn estimate_spde_params_with(
    y: &GridField,
    mesh: &TriangleMesh,
    basis_kappa: &BasisSet,
    basis_tau: &BasisSet,
    opts: &EstimateOptions,
) -> Result<SpdeEstimate> {
    if y.len() < 3 {
        return Err(Error::invalid("need at least 3 observations"));
    }
    let mean = y.mean();
    let centered: Vec<f64> = y.values().iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / centered.len() as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("SPDE data field is constant".into()));
    }
    let sites = mesh.vertex_sites()?;
    let obj = Objective {
        fem: fem_matrices(mesh)?,
        data: GmrfData::new(&centered, &Projection::new(mesh, y.sites())?)?,
        psi_k: basis_kappa.design_matrix(&sites)?,
        psi_t: basis_tau.design_matrix(&sites)?,
        penalty_var: opts.penalty_var,
    };
    let (uk, ut) = constant_fits(mesh, basis_kappa, basis_tau)?;
    let expand = |s: &[f64]| -> Vec<f64> {
        uk.iter()
            .map(|u| u * s[0])
            .chain(ut.iter().map(|u| u * s[1]))
            .chain([s[2]])
            .collect()
    };
    let stationary = |s: &[f64]| obj.value(&expand(s));

    // crude range scan for the starting point
    let diam = diameter(y.sites());
    let mut start = None;
    for frac in [0.05, 0.1, 0.2, 0.4, 0.8] {
        let kappa = 8f64.sqrt() / (frac * diam);
        let tau = 1.0 / (kappa * (4.0 * std::f64::consts::PI * 0.9 * var).sqrt());
        let s = [kappa.ln(), tau.ln(), (0.1 * var).ln()];
        let v = stationary(&s);
        if v.is_finite() && start.as_ref().is_none_or(|(_, best)| v < *best) {
            start = Some((s, v));
        }
    }
    let (s0, _) = start.ok_or_else(|| Error::NotPositiveDefinite("no finite stationary starting point".into()))?;
    let stage1 = bfgs(&stationary, &s0, opts);
    let stage2 = bfgs(&|x: &[f64]| obj.value(x), &expand(&stage1.x), opts);
    if !stage2.converged {
        warn!(
            "SPDE estimate did not converge after {} iterations (objective {})",
            stage2.iterations, stage2.value
        );
    }
    let x = stage2.x;
    let nk = basis_kappa.size();
    let log_likelihood = obj.log_likelihood(&x)?;
    let field = SpdeField::new(
        x[..nk].to_vec(),
        x[nk..x.len() - 1].to_vec(),
        basis_kappa.clone(),
        basis_tau.clone(),
        x[x.len() - 1].exp(),
    )?;
    Ok(SpdeEstimate {
        field,
        log_likelihood,
        converged: stage2.converged,
        iterations: stage1.iterations + stage2.iterations,
        stationary: (stage1.x[0].exp(), stage1.x[1].exp()),
    })
}

fn diameter(sites: &[Site]) -> f64 {
    match sites.first().map(Site::kind) {
        Some(SiteKind::Spherical) => 2.0,
        _ => {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for s in sites {
                let p = s.xyz();
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt().max(1e-12)
        }
    }
}

/// Planar mesh whose extension ring is 1.5 correlation ranges of a
/// stationary pilot fit of `y` (pilot ring: a fifth of the site diameter).
pub fn planar_mesh_for(y: &GridField, opts: &EstimateOptions) -> Result<TriangleMesh> {
    let pilot_ring = RingSpec {
        width: 0.2 * diameter(y.sites()),
        spacing: None,
    };
    let pilot = build_planar_mesh(y.sites(), pilot_ring)?;
    let constant = BasisSet::new(crate::basis::BasisSpec::bspline(1, 0))?;
    let fit = estimate_spde_params_with(y, &pilot, &constant, &constant, opts)?;
    build_planar_mesh(y.sites(), RingSpec::for_kappa(fit.stationary.0))
}
