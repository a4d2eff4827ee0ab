use serde::{Deserialize, Serialize};

use crate::basis::GridField;
use crate::{Error, Result};

/// Global affine standardisation by the ensemble's pooled mean and SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub fn fit(ensemble: &[GridField]) -> Result<Self> {
        let n: usize = ensemble.iter().map(GridField::len).sum();
        if n == 0 {
            return Err(Error::invalid("empty ensemble"));
        }
        let values = || ensemble.iter().flat_map(|f| f.values().iter().copied());
        let mean = values().sum::<f64>() / n as f64;
        let sd = (values().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVariance("ensemble values have zero spread".into()));
        }
        Ok(Self { mean, sd })
    }

    pub fn forward(&self, field: &GridField) -> GridField {
        field.map_values(|v| (v - self.mean) / self.sd)
    }

    pub fn inverse(&self, field: &GridField) -> GridField {
        field.map_values(|v| v * self.sd + self.mean)
    }
}

/// Standardises the ensemble and the observation with the ensemble statistics.
pub fn standardize(
    ensemble: &[GridField],
    observation: &GridField,
) -> Result<(Vec<GridField>, GridField, Standardizer)> {
    let s = Standardizer::fit(ensemble)?;
    Ok((
        ensemble.iter().map(|f| s.forward(f)).collect(),
        s.forward(observation),
        s,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::unit_square_grid;

    fn field(f: impl Fn(f64, f64) -> f64) -> GridField {
        GridField::from_fn(unit_square_grid(5, 4), |s| match *s {
            crate::basis::Site::Planar { x1, x2 } => f(x1, x2),
            _ => unreachable!(),
        })
        .unwrap()
    }

    #[test]
    fn shifted_ensemble() {
        let ens: Vec<GridField> = (0..4).map(|j| field(|a, b| 100.0 + a + 2.0 * b + j as f64)).collect();
        let obs = field(|a, _| a);
        let (std_ens, std_obs, s) = standardize(&ens, &obs).unwrap();
        let all: Vec<f64> = std_ens.iter().flat_map(|f| f.values().to_vec()).collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let sd = (all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        let back = s.inverse(&std_obs);
        for (a, b) in back.values().iter().zip(obs.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fixture_scale() {
        // values ±11.14 around 3: SD 11.14, so 3 + 11.14 maps to 1
        let ens = vec![field(|a, _| if a < 0.5 { 3.0 - 11.14 } else { 3.0 + 11.14 })];
        let s = Standardizer::fit(&ens).unwrap();
        let lo = ens[0].values().iter().filter(|&&v| v < 3.0).count() as f64;
        let hi = ens[0].len() as f64 - lo;
        let mean = (lo * (3.0 - 11.14) + hi * (3.0 + 11.14)) / (lo + hi);
        assert!((s.mean - mean).abs() < 1e-12);
        let direct_sd = ((lo * (3.0 - 11.14 - mean).powi(2) + hi * (3.0 + 11.14 - mean).powi(2))
            / (lo + hi))
            .sqrt();
        assert!((s.sd - direct_sd).abs() < 1e-12);
        let z = s.forward(&field(|_, _| 20.0));
        assert!((z.values()[0] - (20.0 - mean) / direct_sd).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_rejected() {
        let ens = vec![field(|_, _| 1.0), field(|_, _| 1.0)];
        assert!(matches!(Standardizer::fit(&ens), Err(Error::ZeroVariance(_))));
    }
}
