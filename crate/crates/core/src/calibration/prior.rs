use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Gamma density with shape `a` and rate `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) {
            return Err(Error::invalid(format!("gamma prior needs a, b > 0, got ({shape}, {rate})")));
        }
        Ok(Self { shape, rate })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid(format!("beta prior needs a, b > 0, got ({a}, {b})")));
        }
        Ok(Self { a, b })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln() - ln_beta(self.a, self.b)
    }
}

/// Priors on the emulator and error hyperparameters. Calibration inputs get
/// independent uniform priors on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub lambda_eta: GammaPrior,
    pub lambda_delta: GammaPrior,
    pub lambda_eps: GammaPrior,
    pub rho: BetaPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            lambda_eta: GammaPrior { shape: 5.0, rate: 5.0 },
            lambda_delta: GammaPrior { shape: 1.0, rate: 0.01 },
            lambda_eps: GammaPrior { shape: 1.0, rate: 0.003 },
            rho: BetaPrior { a: 1.0, b: 0.1 },
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for g in [self.lambda_eta, self.lambda_delta, self.lambda_eps] {
            GammaPrior::new(g.shape, g.rate)?;
        }
        BetaPrior::new(self.rho.a, self.rho.b)?;
        Ok(())
    }
}
