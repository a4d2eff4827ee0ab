//! Block-diagonal Gaussian-process calibration in coefficient space.
//!
//! Each basis index `z` contributes one independent block. For `z < N_η` the
//! block stacks the observation coefficient `c^F_z` (treated as a model run at
//! the unknown `θ*`, plus discrepancy and observation error) over the `r`
//! model-run coefficients. For `N_η ≤ z < N_y` the model coefficients are zero
//! and the block reduces to the scalar `1/λ_δ + 1/λ_ε`. Optional SPDE `κ` and
//! `τ` coefficient blocks follow the same recipe with shared hyperparameters.
//!
//! All full blocks share one covariance matrix, so a likelihood evaluation is
//! a single Cholesky factorisation with a multi-column solve.

mod prior;
mod standardize;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

pub use prior::{BetaPrior, GammaPrior, PriorSpec};
pub use standardize::{standardize, Standardizer};

use crate::doe::Design;
use crate::sampler::{ChainTrace, ParamSpec, Target};
use crate::{Error, Result};

/// Added to every block diagonal before factorisation.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Coefficient,
    Kappa,
    Tau,
}

/// Model-run coefficients and the design that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCoefficients {
    pub theta: Design,
    /// `r × N_y`; columns `z ≥ n_eta` are zero
    pub c_model: Vec<Vec<f64>>,
    pub n_eta: usize,
    /// `r × N_κ`
    pub kappa: Option<Vec<Vec<f64>>>,
    /// `r × N_τ`
    pub tau: Option<Vec<Vec<f64>>>,
}

impl EnsembleCoefficients {
    /// `model` holds the `N_η` fitted coefficients per run; they are padded
    /// with zeros up to `n_y`.
    pub fn new(theta: Design, model: Vec<Vec<f64>>, n_y: usize) -> Result<Self> {
        if model.len() != theta.runs() {
            return Err(Error::Dimension {
                expected: theta.runs(),
                found: model.len(),
                context: "model coefficient rows",
            });
        }
        let n_eta = model.first().map_or(0, Vec::len);
        if n_eta > n_y || model.iter().any(|m| m.len() != n_eta) {
            return Err(Error::invalid(format!(
                "model coefficients must have a common length N_eta <= N_y = {n_y}"
            )));
        }
        let c_model = model
            .into_iter()
            .map(|mut m| {
                m.resize(n_y, 0.0);
                m
            })
            .collect();
        Ok(Self {
            theta,
            c_model,
            n_eta,
            kappa: None,
            tau: None,
        })
    }

    pub fn with_spde(mut self, kappa: Vec<Vec<f64>>, tau: Vec<Vec<f64>>) -> Result<Self> {
        for (name, m) in [("kappa", &kappa), ("tau", &tau)] {
            let w = m.first().map_or(0, Vec::len);
            if m.len() != self.runs() || m.iter().any(|row| row.len() != w) {
                return Err(Error::invalid(format!("{name} coefficients must be r rows of equal length")));
            }
        }
        self.kappa = Some(kappa);
        self.tau = Some(tau);
        Ok(self)
    }

    pub fn runs(&self) -> usize {
        self.theta.runs()
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn n_y(&self) -> usize {
        self.c_model.first().map_or(0, Vec::len)
    }

    pub fn n_kappa(&self) -> usize {
        self.kappa.as_ref().and_then(|k| k.first()).map_or(0, Vec::len)
    }

    pub fn n_tau(&self) -> usize {
        self.tau.as_ref().and_then(|k| k.first()).map_or(0, Vec::len)
    }

    /// Runs reordered by `perm`, rows of every coefficient block permuted jointly.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |m: &Vec<Vec<f64>>| perm.iter().map(|&j| m[j].clone()).collect::<Vec<_>>();
        Self {
            theta: self.theta.permuted(perm),
            c_model: pick(&self.c_model),
            n_eta: self.n_eta,
            kappa: self.kappa.as_ref().map(pick),
            tau: self.tau.as_ref().map(pick),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationCoefficients {
    pub c_obs: Vec<f64>,
    pub kappa_obs: Option<Vec<f64>>,
    pub tau_obs: Option<Vec<f64>>,
}

impl ObservationCoefficients {
    pub fn new(c_obs: Vec<f64>) -> Self {
        Self {
            c_obs,
            kappa_obs: None,
            tau_obs: None,
        }
    }

    pub fn with_spde(mut self, kappa: Vec<f64>, tau: Vec<f64>) -> Self {
        self.kappa_obs = Some(kappa);
        self.tau_obs = Some(tau);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub theta_star: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda_eta: f64,
    pub lambda_delta: f64,
    pub lambda_eps: f64,
}

impl Hyperparameters {
    /// Layout `θ_1..θ_q, ρ_1..ρ_q, λ_η, λ_δ, λ_ε`.
    pub fn from_vector(x: &[f64], q: usize) -> Self {
        Self {
            theta_star: x[..q].to_vec(),
            rho: x[q..2 * q].to_vec(),
            lambda_eta: x[2 * q],
            lambda_delta: x[2 * q + 1],
            lambda_eps: x[2 * q + 2],
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.theta_star.clone();
        v.extend(&self.rho);
        v.extend([self.lambda_eta, self.lambda_delta, self.lambda_eps]);
        v
    }

    pub fn in_support(&self) -> bool {
        self.theta_star.iter().all(|t| (0.0..=1.0).contains(t))
            && self.rho.iter().all(|r| *r > 0.0 && *r < 1.0)
            && [self.lambda_eta, self.lambda_delta, self.lambda_eps]
                .iter()
                .all(|l| *l > 0.0 && l.is_finite())
    }

    /// Variance of an observation coefficient beyond the emulator: `1/λ_δ + 1/λ_ε`.
    pub fn obs_var(&self) -> f64 {
        1.0 / self.lambda_delta + 1.0 / self.lambda_eps
    }
}

/// `Π_k ρ_k^{4 (a_k − b_k)²}`
pub fn correlation(a: &[f64], b: &[f64], rho: &[f64]) -> f64 {
    let e: f64 = a
        .iter()
        .zip(b)
        .zip(rho)
        .map(|((x, y), r)| 4.0 * (x - y).powi(2) * r.ln())
        .sum();
    e.exp()
}

/// Emulator covariance between coefficient `z_a` at `theta_a` and `z_b` at `theta_b`.
pub fn cov_eta_entry(theta_a: &[f64], theta_b: &[f64], z_a: usize, z_b: usize, hp: &Hyperparameters) -> f64 {
    if z_a != z_b {
        return 0.0;
    }
    correlation(theta_a, theta_b, &hp.rho) / hp.lambda_eta
}

/// `(r+1) × (r+1)` covariance of `(c^F_z, c^M_{z,1..r})`, shared by every
/// block whose model coefficients are modelled.
pub fn full_block(design: &Design, theta_star: &[f64], rho: &[f64], lambda_eta: f64, obs_var: f64) -> DMatrix<f64> {
    emulator_block(design, theta_star, rho, lambda_eta, obs_var, 0.0)
}

/// [`full_block`] with the emulator correlation `R + g I` in place of `R`.
pub fn emulator_block(
    design: &Design,
    theta_star: &[f64],
    rho: &[f64],
    lambda_eta: f64,
    obs_var: f64,
    nugget: f64,
) -> DMatrix<f64> {
    let r = design.runs();
    let diag = (1.0 + nugget) / lambda_eta;
    let mut b = DMatrix::zeros(r + 1, r + 1);
    b[(0, 0)] = diag + obs_var + JITTER;
    for j in 0..r {
        let c = correlation(theta_star, design.point(j), rho) / lambda_eta;
        b[(0, j + 1)] = c;
        b[(j + 1, 0)] = c;
        b[(j + 1, j + 1)] = diag + JITTER;
        for i in 0..j {
            let c = correlation(design.point(i), design.point(j), rho) / lambda_eta;
            b[(i + 1, j + 1)] = c;
            b[(j + 1, i + 1)] = c;
        }
    }
    b
}

/// Block for coefficient `z` of kind `kind`.
pub fn assemble_block(
    kind: BlockKind,
    z: usize,
    ens: &EnsembleCoefficients,
    hp: &Hyperparameters,
) -> Result<DMatrix<f64>> {
    let limit = match kind {
        BlockKind::Coefficient => ens.n_y(),
        BlockKind::Kappa => ens.n_kappa(),
        BlockKind::Tau => ens.n_tau(),
    };
    if z >= limit {
        return Err(Error::invalid(format!("{kind:?} block index {z} out of range {limit}")));
    }
    if kind == BlockKind::Coefficient && z >= ens.n_eta {
        return Ok(DMatrix::from_element(1, 1, hp.obs_var() + JITTER));
    }
    let b = full_block(&ens.theta, &hp.theta_star, &hp.rho, hp.lambda_eta, hp.obs_var());
    if b.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(format!("{kind:?} block {z}")));
    }
    Ok(b)
}

fn check_consistent(ens: &EnsembleCoefficients, obs: &ObservationCoefficients) -> Result<()> {
    let lens = [
        (ens.n_y(), obs.c_obs.len(), "observation coefficients"),
        (ens.n_kappa(), obs.kappa_obs.as_ref().map_or(0, Vec::len), "observation kappa coefficients"),
        (ens.n_tau(), obs.tau_obs.as_ref().map_or(0, Vec::len), "observation tau coefficients"),
    ];
    for (expected, found, context) in lens {
        if expected != found {
            return Err(Error::Dimension { expected, found, context });
        }
    }
    Ok(())
}

/// Coefficient data arranged for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct CalibrationModel {
    ens: EnsembleCoefficients,
    obs: ObservationCoefficients,
    priors: PriorSpec,
    /// `(r+1) × m` data of all full blocks, ordered c, κ, τ then ascending z
    full_data: DMatrix<f64>,
    /// observation coefficients of the scalar blocks
    scalar_data: Vec<f64>,
    nugget: f64,
}

impl CalibrationModel {
    pub fn new(ens: EnsembleCoefficients, obs: ObservationCoefficients, priors: PriorSpec) -> Result<Self> {
        check_consistent(&ens, &obs)?;
        priors.validate()?;
        let r = ens.runs();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for z in 0..ens.n_eta {
            columns.push(std::iter::once(obs.c_obs[z]).chain(ens.c_model.iter().map(|m| m[z])).collect());
        }
        for (model, observed) in [(&ens.kappa, &obs.kappa_obs), (&ens.tau, &obs.tau_obs)] {
            if let (Some(model), Some(observed)) = (model, observed) {
                for (z, &o) in observed.iter().enumerate() {
                    columns.push(std::iter::once(o).chain(model.iter().map(|m| m[z])).collect());
                }
            }
        }
        let full_data = DMatrix::from_fn(r + 1, columns.len(), |i, c| columns[c][i]);
        let scalar_data = obs.c_obs[ens.n_eta..].to_vec();
        Ok(Self {
            ens,
            obs,
            priors,
            full_data,
            scalar_data,
            nugget: 0.0,
        })
    }

    /// Relative emulator nugget `g`: run-to-run correlations become `R + g I`.
    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::invalid("nugget must be finite and nonnegative"));
        }
        self.nugget = nugget;
        Ok(self)
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn ensemble(&self) -> &EnsembleCoefficients {
        &self.ens
    }

    pub fn observation(&self) -> &ObservationCoefficients {
        &self.obs
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn dim(&self) -> usize {
        self.ens.dim()
    }

    fn factor(&self, hp: &Hyperparameters) -> Result<Cholesky<f64, Dyn>> {
        let b = emulator_block(&self.ens.theta, &hp.theta_star, &hp.rho, hp.lambda_eta, hp.obs_var(), self.nugget);
        b.cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("emulator block".into()))
    }

    /// `Σ_z [−½ log det B_z − ½ d_zᵀ B_z⁻¹ d_z]`, constants dropped.
    pub fn log_likelihood(&self, hp: &Hyperparameters) -> Result<f64> {
        let mut total = 0.0;
        if self.full_data.ncols() > 0 {
            let chol = self.factor(hp)?;
            let l = chol.l_dirty();
            let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
            let mut w = self.full_data.clone();
            l.solve_lower_triangular_unchecked_mut(&mut w);
            let quad: f64 = w.iter().map(|v| v * v).sum();
            total += -0.5 * (self.full_data.ncols() as f64 * log_det + quad);
        }
        if !self.scalar_data.is_empty() {
            let s = hp.obs_var() + JITTER;
            let quad: f64 = self.scalar_data.iter().map(|c| c * c).sum::<f64>() / s;
            total += -0.5 * (self.scalar_data.len() as f64 * s.ln() + quad);
        }
        Ok(total)
    }

    pub fn log_prior(&self, hp: &Hyperparameters) -> f64 {
        if !hp.in_support() {
            return f64::NEG_INFINITY;
        }
        let p = &self.priors;
        p.lambda_eta.ln_pdf(hp.lambda_eta)
            + p.lambda_delta.ln_pdf(hp.lambda_delta)
            + p.lambda_eps.ln_pdf(hp.lambda_eps)
            + hp.rho.iter().map(|&r| p.rho.ln_pdf(r)).sum::<f64>()
    }

    /// Log-likelihood plus log priors; `−∞` outside the support or when a
    /// block is not positive definite.
    pub fn log_posterior(&self, hp: &Hyperparameters) -> f64 {
        if hp.theta_star.len() != self.dim() || hp.rho.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior(hp);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self.log_likelihood(hp) {
            Ok(ll) if ll.is_finite() => ll + lp,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Conditional mean of `c^δ` (length `N_y`) given the data, averaged over draws.
    pub fn discrepancy_mean(&self, draws: &[Hyperparameters]) -> Result<Vec<f64>> {
        if draws.is_empty() {
            return Err(Error::invalid("need at least one posterior draw"));
        }
        let n_y = self.ens.n_y();
        let n_eta = self.ens.n_eta;
        let mut acc = vec![0.0; n_y];
        for hp in draws {
            let var_delta = 1.0 / hp.lambda_delta;
            if n_eta > 0 {
                let chol = self.factor(hp)?;
                let sol = chol.solve(&self.full_data.columns(0, n_eta).into_owned());
                for z in 0..n_eta {
                    acc[z] += var_delta * sol[(0, z)];
                }
            }
            let s = hp.obs_var() + JITTER;
            for z in n_eta..n_y {
                acc[z] += var_delta / s * self.obs.c_obs[z];
            }
        }
        Ok(acc.into_iter().map(|v| v / draws.len() as f64).collect())
    }

    /// Post-burn-in draws from `traces`, every `thin`-th iteration.
    pub fn draws(&self, traces: &[ChainTrace], burn_in: usize, thin: usize) -> Vec<Hyperparameters> {
        traces
            .iter()
            .flat_map(|t| t.samples.iter().skip(burn_in).step_by(thin.max(1)))
            .map(|x| Hyperparameters::from_vector(x, self.dim()))
            .collect()
    }
}

impl Target for CalibrationModel {
    fn params(&self) -> Vec<ParamSpec> {
        let q = self.dim();
        let mut p: Vec<ParamSpec> = (1..=q).map(|k| ParamSpec::unit(format!("theta_{k}"))).collect();
        p.extend((1..=q).map(|k| ParamSpec {
            start: (0.05, 0.95),
            ..ParamSpec::unit(format!("rho_{k}"))
        }));
        p.push(ParamSpec::positive("lambda_eta", 0.2, 5.0));
        p.push(ParamSpec::positive("lambda_delta", 1.0, 200.0));
        p.push(ParamSpec::positive("lambda_eps", 10.0, 1000.0));
        p
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_posterior(&Hyperparameters::from_vector(x, self.dim()))
    }
}

pub fn log_likelihood(ens: &EnsembleCoefficients, obs: &ObservationCoefficients, hp: &Hyperparameters) -> Result<f64> {
    CalibrationModel::new(ens.clone(), obs.clone(), PriorSpec::default())?.log_likelihood(hp)
}

pub fn log_posterior(
    ens: &EnsembleCoefficients,
    obs: &ObservationCoefficients,
    hp: &Hyperparameters,
    priors: &PriorSpec,
) -> f64 {
    match CalibrationModel::new(ens.clone(), obs.clone(), *priors) {
        Ok(m) => m.log_posterior(hp),
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn posterior_discrepancy_mean(
    ens: &EnsembleCoefficients,
    obs: &ObservationCoefficients,
    draws: &[Hyperparameters],
) -> Result<Vec<f64>> {
    CalibrationModel::new(ens.clone(), obs.clone(), PriorSpec::default())?.discrepancy_mean(draws)
}
