//! Synthetic simulators and ensembles for the four worked examples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use basiscal_core::basis::{lat_lon_grid, GridField, Site};
use basiscal_core::doe::{maximin_lhd, Design};
use basiscal_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    Example1,
    Example2,
    Example3,
    Example4,
}

impl ExampleId {
    pub fn all() -> [ExampleId; 4] {
        [Self::Example1, Self::Example2, Self::Example3, Self::Example4]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example3 => "example3",
            Self::Example4 => "example4",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Example1 => 2,
            _ => 3,
        }
    }

    pub fn truth(&self) -> SyntheticTruth {
        match self {
            Self::Example1 => SyntheticTruth {
                theta: vec![0.3, 0.7],
                noise_sd: 0.1,
                discrepancy: "model runs offset by one draw of N(var(y)/2, 0.01) per site".into(),
            },
            Self::Example2 => SyntheticTruth {
                theta: vec![0.3, 0.7, 0.9],
                noise_sd: 0.0,
                discrepancy: "model runs offset by 0.05 s2 s3".into(),
            },
            Self::Example3 => SyntheticTruth {
                theta: vec![0.3, 0.7, 0.9],
                noise_sd: 0.1,
                discrepancy: "none".into(),
            },
            Self::Example4 => SyntheticTruth {
                theta: vec![0.5, 0.2, 0.8],
                noise_sd: 0.0,
                discrepancy: "none".into(),
            },
        }
    }

    /// Example 1 draws its irregular sites from a seeded maximin design.
    pub fn sites(&self, seed: u64) -> Result<Vec<Site>> {
        Ok(match self {
            Self::Example1 => {
                let d = maximin_lhd(100, 2, 5, seed ^ 0x5173)?;
                d.rows().map(|p| Site::planar(p[0], p[1])).collect::<Result<_>>()?
            }
            Self::Example2 => lat_lon_grid(96, 144),
            Self::Example3 | Self::Example4 => lat_lon_grid(10, 10),
        })
    }

    pub fn simulate(&self, theta: &[f64], sites: &[Site]) -> Result<GridField> {
        match self {
            Self::Example1 => synth_example1(theta, sites),
            Self::Example2 => synth_example2(theta, sites),
            Self::Example3 => synth_example3(theta, sites),
            Self::Example4 => synth_example4(theta, sites),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub theta: Vec<f64>,
    /// SD of the observation noise
    pub noise_sd: f64,
    pub discrepancy: String,
}

fn check_dim(theta: &[f64], q: usize) -> Result<()> {
    if theta.len() != q {
        return Err(Error::Dimension {
            expected: q,
            found: theta.len(),
            context: "example parameters",
        });
    }
    Ok(())
}

fn spherical(sites: &[Site]) -> Result<()> {
    if sites.iter().any(|s| !matches!(s, Site::Spherical { .. })) {
        return Err(Error::domain("this example lives on the sphere"));
    }
    Ok(())
}

/// Bivariate-normal-like bump on the unit square.
pub fn synth_example1(theta: &[f64], sites: &[Site]) -> Result<GridField> {
    check_dim(theta, 2)?;
    let (t1, t2) = (theta[0], theta[1]);
    if t1 == 0.0 || t2 == 0.0 {
        return Err(Error::domain("example 1 needs nonzero parameters"));
    }
    let mut values = Vec::with_capacity(sites.len());
    for s in sites {
        let Site::Planar { x1, x2 } = *s else {
            return Err(Error::domain("example 1 lives on the plane"));
        };
        let (a, b) = (x1 - 0.5, x2 - 0.5);
        let quad = a * a / (t1 * t1) - a * b / (t1 * t2) + b * b / (t2 * t2);
        let tp = 2.0 * std::f64::consts::PI;
        values.push((-quad / tp).exp() / (tp * t1 * t2));
    }
    GridField::new(sites.to_vec(), values)
}

/// `θ1 s1³ + θ2 s1 s2 + θ3 s3²`
pub fn synth_example2(theta: &[f64], sites: &[Site]) -> Result<GridField> {
    check_dim(theta, 3)?;
    spherical(sites)?;
    GridField::from_fn(sites.to_vec(), |s| {
        let [s1, s2, s3] = s.xyz();
        theta[0] * s1.powi(3) + theta[1] * s1 * s2 + theta[2] * s3 * s3
    })
}

/// The example-2 model bias `0.05 s2 s3`.
pub fn example2_bias(site: &Site) -> f64 {
    let [_, s2, s3] = site.xyz();
    0.05 * s2 * s3
}

/// `θ1 s1 + exp(−θ2 s2 − θ3 s3²)`
pub fn synth_example3(theta: &[f64], sites: &[Site]) -> Result<GridField> {
    check_dim(theta, 3)?;
    spherical(sites)?;
    GridField::from_fn(sites.to_vec(), |s| {
        let [s1, s2, s3] = s.xyz();
        theta[0] * s1 + (-theta[1] * s2 - theta[2] * s3 * s3).exp()
    })
}

/// `(s1²/2 + θ1 s2 s3)` times `θ2 s2` in the northern hemisphere
/// (colatitude ≤ π/2) and `θ3 exp(−s3 − s1)` in the southern.
pub fn synth_example4(theta: &[f64], sites: &[Site]) -> Result<GridField> {
    check_dim(theta, 3)?;
    spherical(sites)?;
    GridField::from_fn(sites.to_vec(), |s| example4_branches(theta, s)[usize::from(!is_north(s))])
}

fn is_north(s: &Site) -> bool {
    match *s {
        Site::Spherical { colat, .. } => colat <= std::f64::consts::FRAC_PI_2,
        _ => false,
    }
}

/// Values of the northern and southern formulas at `s`.
pub fn example4_branches(theta: &[f64], s: &Site) -> [f64; 2] {
    let [s1, s2, s3] = s.xyz();
    let common = 0.5 * s1 * s1 + theta[0] * s2 * s3;
    [common * theta[1] * s2, common * theta[2] * (-s3 - s1).exp()]
}

/// Ensemble, observation and the simulator used to produce them.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub example: ExampleId,
    pub sites: Vec<Site>,
    pub design: Design,
    pub ensemble: Vec<GridField>,
    pub observation: GridField,
    pub truth: SyntheticTruth,
    /// additive model offset at each site, shared by every run
    pub model_offset: Vec<f64>,
}

impl SyntheticData {
    /// Model output at `theta`, offset included.
    pub fn run_model(&self, theta: &[f64]) -> Result<GridField> {
        let f = self.example.simulate(theta, &self.sites)?;
        let values = f.values().iter().zip(&self.model_offset).map(|(a, b)| a + b).collect();
        f.with_values(values)
    }
}

/// Simulates the example at every design point and at the true parameters.
/// `seed` drives the observation noise, the example-1 offset and the
/// example-1 sites.
pub fn generate(example: ExampleId, design: &Design, seed: u64) -> Result<SyntheticData> {
    if design.dim() != example.dim() {
        return Err(Error::Dimension {
            expected: example.dim(),
            found: design.dim(),
            context: "design dimension",
        });
    }
    let truth = example.truth();
    let sites = example.sites(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = example.simulate(&truth.theta, &sites)?;
    let observation = if truth.noise_sd > 0.0 {
        let noise = Normal::new(0.0, truth.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        clean.map_values(|v| v + noise.sample(&mut rng))
    } else {
        clean
    };
    let model_offset: Vec<f64> = match example {
        ExampleId::Example1 => {
            let var = observation.sd().powi(2);
            let delta = Normal::new(0.5 * var, 0.1).map_err(|e| Error::invalid(e.to_string()))?;
            sites.iter().map(|_| delta.sample(&mut rng)).collect()
        }
        ExampleId::Example2 => sites.iter().map(example2_bias).collect(),
        _ => vec![0.0; sites.len()],
    };
    let mut data = SyntheticData {
        example,
        sites,
        design: design.clone(),
        ensemble: Vec::new(),
        observation: observation.with_label("observation"),
        truth,
        model_offset,
    };
    data.ensemble = (0..design.runs())
        .map(|j| Ok(data.run_model(design.point(j))?.with_run(j)))
        .collect::<Result<_>>()?;
    Ok(data)
}
