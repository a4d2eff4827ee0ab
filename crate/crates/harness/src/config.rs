//! Experiment configuration, stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use basiscal_core::basis::{BasisSet, BasisSpec, ModePolicy};
use basiscal_core::calibration::PriorSpec;
use basiscal_core::sampler::ChainConfig;
use basiscal_core::spde::EstimateOptions;
use basiscal_core::{Error, Result};

use crate::examples::ExampleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    /// Synthetic example; `seed` drives noise and example-1 sites.
    Example { example: ExampleId, seed: u64 },
    /// Field CSVs named `run_{j}.csv` in `ensemble`, a unit-cube design CSV
    /// and an observation CSV on the same sites.
    Files {
        ensemble: PathBuf,
        design: PathBuf,
        observation: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    /// basis fitted to each model run (`N_η` functions)
    pub eta: BasisSpec,
    /// basis fitted to the observation (`N_y ≥ N_η` functions)
    pub y: BasisSpec,
    /// accept a rank-deficient design matrix and fix the dependent
    /// coefficients at zero instead of failing
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub basic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeConfig {
    pub kappa: BasisSpec,
    pub tau: BasisSpec,
    /// icosphere subdivision level on the sphere
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    #[serde(default)]
    pub options: EstimateOptions,
}

fn default_refinement() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub runs: usize,
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: Source,
    pub basis: BasisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spde: Option<SpdeConfig>,
    pub design: DesignConfig,
    pub chain: ChainConfig,
    #[serde(default)]
    pub priors: PriorSpec,
    /// relative emulator nugget: run-to-run correlations are `R + nugget·I`
    #[serde(default = "default_nugget")]
    pub nugget: f64,
    /// keep every `thin`-th post-burn-in draw for the discrepancy mean
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

pub fn default_nugget() -> f64 {
    NUGGET
}

/// Default relative emulator nugget.
pub const NUGGET: f64 = 1e-6;

fn default_thin() -> usize {
    10
}

impl ExperimentConfig {
    /// Harmonic orders `eta_order ≤ y_order` with a shared mode policy; for
    /// the planar example the two numbers are cubic B-spline counts.
    pub fn example(example: ExampleId, eta_order: usize, y_order: usize, modes: ModePolicy, runs: usize) -> Self {
        let basis = match example {
            ExampleId::Example1 => BasisConfig {
                eta: BasisSpec::bspline_first(eta_order, 3),
                y: BasisSpec::bspline_first(y_order, 3),
                basic: false,
            },
            _ => BasisConfig {
                eta: BasisSpec::sh(eta_order, modes),
                y: BasisSpec::sh(y_order, modes),
                basic: false,
            },
        };
        Self {
            source: Source::Example { example, seed: 1 },
            basis,
            spde: None,
            design: DesignConfig {
                runs,
                seed: 1,
                restarts: default_restarts(),
            },
            chain: ChainConfig::default(),
            priors: PriorSpec::default(),
            nugget: default_nugget(),
            thin: default_thin(),
            output: None,
        }
    }

    /// Adds SPDE blocks with harmonic (sphere) or 2×2 B-spline (plane) bases.
    pub fn with_spde(mut self, kappa_order: usize, tau_order: usize) -> Self {
        let planar = matches!(self.basis.eta, BasisSpec::BsplineTensor { .. });
        let modes = match self.basis.eta {
            BasisSpec::SphericalHarmonic { modes, .. } => modes,
            _ => ModePolicy::Nonnegative,
        };
        let spec = |order: usize| {
            if planar {
                let n = order.max(1);
                BasisSpec::bspline(n, (n - 1).min(1))
            } else {
                BasisSpec::sh(order, modes)
            }
        };
        self.spde = Some(SpdeConfig {
            kappa: spec(kappa_order),
            tau: spec(tau_order),
            refinement: default_refinement(),
            options: EstimateOptions::default(),
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::invalid("nugget must be finite and nonnegative"));
        }
        if self.design.runs < 2 {
            return Err(Error::invalid("need at least two runs"));
        }
        if self.chain.burn_in >= self.chain.n_iter || self.chain.n_chains == 0 {
            return Err(Error::invalid("chain needs n_chains >= 1 and burn_in < n_iter"));
        }
        match (&self.basis.eta, &self.basis.y) {
            (
                BasisSpec::SphericalHarmonic { order: a, modes: ma },
                BasisSpec::SphericalHarmonic { order: b, modes: mb },
            ) => {
                if ma != mb || a > b {
                    return Err(Error::invalid("eta basis must be a leading subset of the y basis"));
                }
            }
            (
                BasisSpec::BsplineTensor {
                    per_axis: pa,
                    degree: da,
                    limit: la,
                },
                BasisSpec::BsplineTensor {
                    per_axis: pb,
                    degree: db,
                    limit: lb,
                },
            ) => {
                let (na, nb) = (la.unwrap_or(pa * pa), lb.unwrap_or(pb * pb));
                if pa != pb || da != db || na > nb {
                    return Err(Error::invalid("eta basis must be a leading subset of the y basis"));
                }
            }
            _ => return Err(Error::invalid("eta and y bases must share a family")),
        }
        for spec in [&self.basis.eta, &self.basis.y] {
            BasisSet::new(*spec)?;
        }
        if let Some(s) = &self.spde {
            BasisSet::new(s.kappa)?;
            BasisSet::new(s.tau)?;
            if s.kappa.site_kind() != self.basis.eta.site_kind() || s.tau.site_kind() != self.basis.eta.site_kind() {
                return Err(Error::invalid("SPDE bases must live on the same domain as the coefficients"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use basiscal_core::sampler::Width;
    use proptest::prelude::*;

    #[test]
    fn examples_validate_and_round_trip() {
        for ex in ExampleId::all() {
            let (a, b) = if ex == ExampleId::Example1 { (10, 15) } else { (2, 3) };
            let cfg = ExperimentConfig::example(ex, a, b, ModePolicy::Full, 10).with_spde(2, 2);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        let files = ExperimentConfig {
            source: Source::Files {
                ensemble: "runs".into(),
                design: "design.csv".into(),
                observation: "obs.csv".into(),
            },
            output: Some("out".into()),
            ..ExperimentConfig::example(ExampleId::Example2, 1, 1, ModePolicy::Nonnegative, 5)
        };
        assert_eq!(ExperimentConfig::from_toml(&files.to_toml().unwrap()).unwrap(), files);
    }

    #[test]
    fn rejects_inverted_orders() {
        let cfg = ExperimentConfig::example(ExampleId::Example3, 4, 2, ModePolicy::Full, 10);
        assert!(cfg.validate().is_err());
        let mut mixed = ExperimentConfig::example(ExampleId::Example3, 2, 2, ModePolicy::Full, 10);
        mixed.basis.y = BasisSpec::sh(3, ModePolicy::Nonnegative);
        assert!(mixed.validate().is_err());
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let text = r#"
            [source]
            kind = "example"
            example = "example3"
            seed = 4

            [basis.eta]
            family = "spherical-harmonic"
            order = 2
            modes = "full"

            [basis.y]
            family = "spherical-harmonic"
            order = 2
            modes = "full"

            [design]
            runs = 50
            seed = 7

            [chain]
            n_iter = 2000
            burn_in = 1000
            seed = 3
            n_chains = 2
            tune = true
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.design.restarts, 5);
        assert_eq!(cfg.priors, PriorSpec::default());
        assert_eq!(cfg.thin, 10);
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            eta in 0usize..5, extra in 0usize..3, runs in 2usize..80, seed in 0u64..1_000_000,
            n_iter in 10usize..20_000, width in 0.01f64..3.0, thin in 1usize..20,
        ) {
            let mut cfg = ExperimentConfig::example(ExampleId::Example4, eta, eta + extra, ModePolicy::Nonnegative, runs);
            cfg.design.seed = seed;
            cfg.chain.n_iter = n_iter;
            cfg.chain.burn_in = n_iter / 2;
            cfg.chain.widths = Some(vec![Width::Window(width); 9]);
            cfg.thin = thin;
            let cfg = cfg.with_spde(1, 2);
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
