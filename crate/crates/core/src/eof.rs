//! Empirical orthogonal functions of an ensemble and the per-weight
//! Gaussian-process calibration built on them.

use std::path::Path;
use std::sync::Mutex;

use nalgebra::DMatrix;

use crate::basis::{GridField, Site};
use crate::calibration::{emulator_block, PriorSpec};
use crate::doe::Design;
use crate::sampler::{run_chains, summarize, ChainConfig, ChainTrace, ParamSpec, PosteriorSummary, Target};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EofDecomposition {
    sites: Vec<Site>,
    /// ensemble mean at each site
    pub mean: Vec<f64>,
    /// `n × p` unweighted EOFs, the leading columns of `(1/√r) U D`
    pub eofs: DMatrix<f64>,
    /// `r × p` run weights `√r V`
    pub weights: DMatrix<f64>,
    /// all `min(n, r)` singular values, nonincreasing
    pub singular_values: Vec<f64>,
    pub area_weights: Vec<f64>,
    /// `U_p` of the weighted anomalies, kept for projections
    left: DMatrix<f64>,
}

/// `cos(latitude)` on the sphere, 1 on the plane.
pub fn area_weights(sites: &[Site]) -> Vec<f64> {
    sites
        .iter()
        .map(|s| s.lat_deg().map_or(1.0, |lat| lat.to_radians().cos().max(0.0)))
        .collect()
}

/// Anomalies about the run mean at each site, rows scaled by `√cos(lat)`,
/// decomposed as `U D Vᵀ`; the leading `p` components are kept.
pub fn eof_decompose(ensemble: &[GridField], p: usize) -> Result<EofDecomposition> {
    let first = ensemble.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
    if ensemble.iter().any(|f| !f.same_sites(first)) {
        return Err(Error::invalid("ensemble fields must share one site set"));
    }
    let (n, r) = (first.len(), ensemble.len());
    if p == 0 || p > n.min(r) {
        return Err(Error::invalid(format!("cannot keep {p} components of an {n} x {r} ensemble")));
    }
    let x = DMatrix::from_fn(n, r, |i, j| ensemble[j].values()[i]);
    let mean: Vec<f64> = (0..n).map(|i| x.row(i).mean()).collect();
    let aw = area_weights(first.sites());
    let xw = DMatrix::from_fn(n, r, |i, j| aw[i].sqrt() * (x[(i, j)] - mean[i]));
    let svd = xw.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let sr = (r as f64).sqrt();
    let left = DMatrix::from_fn(n, p, |i, k| u[(i, order[k])]);
    let weights = DMatrix::from_fn(r, p, |j, k| sr * vt[(order[k], j)]);
    // (1/√r) X V_p, which is W^{-1/2} (1/√r) U_p D_p without dividing by weights
    let anomalies = DMatrix::from_fn(n, r, |i, j| x[(i, j)] - mean[i]);
    let eofs = &anomalies * &weights / r as f64;
    Ok(EofDecomposition {
        sites: first.sites().to_vec(),
        mean,
        eofs,
        weights,
        singular_values,
        area_weights: aw,
        left,
    })
}

impl EofDecomposition {
    pub fn n_components(&self) -> usize {
        self.eofs.ncols()
    }

    pub fn runs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// Share of the weighted anomaly variance carried by each component.
    pub fn explained_variance(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().map(|d| d * d).sum();
        self.singular_values.iter().map(|d| d * d / total).collect()
    }

    pub fn cumulative_explained_variance(&self) -> Vec<f64> {
        self.explained_variance()
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    /// Weighted least-squares weights of `field − mean` on the EOFs; 0 for
    /// components with a vanishing singular value.
    pub fn project(&self, field: &GridField) -> Result<Vec<f64>> {
        if field.sites() != self.sites.as_slice() {
            return Err(Error::invalid("field is not on the decomposition sites"));
        }
        let sr = (self.runs() as f64).sqrt();
        let floor = self.singular_values[0] * 1e-12;
        Ok((0..self.n_components())
            .map(|k| {
                let d = self.singular_values[k];
                if d <= floor {
                    // null direction of the ensemble
                    return 0.0;
                }
                let s: f64 = (0..self.sites.len())
                    .map(|i| self.left[(i, k)] * self.area_weights[i].sqrt() * (field.values()[i] - self.mean[i]))
                    .sum();
                sr * s / d
            })
            .collect())
    }

    /// `mean + Σ_k w_k EOF_k`
    pub fn reconstruct(&self, w: &[f64]) -> Result<GridField> {
        if w.len() != self.n_components() {
            return Err(Error::Dimension {
                expected: self.n_components(),
                found: w.len(),
                context: "EOF weights",
            });
        }
        let values = (0..self.sites.len())
            .map(|i| self.mean[i] + (0..w.len()).map(|k| self.eofs[(i, k)] * w[k]).sum::<f64>())
            .collect();
        GridField::new(self.sites.clone(), values)
    }

    pub fn component(&self, k: usize) -> Result<GridField> {
        GridField::new(self.sites.clone(), self.eofs.column(k).iter().copied().collect())
    }

    /// `eof_{k}.csv` maps, `weights.csv` (`run,w_1..w_p`) and
    /// `singular_values.csv` (`component,value,explained`).
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for k in 0..self.n_components() {
            self.component(k)?.with_label(format!("eof_{}", k + 1)).save(dir.join(format!("eof_{}.csv", k + 1)))?;
        }
        let mut w = csv::Writer::from_path(dir.join("weights.csv"))?;
        let mut header = vec!["run".to_string()];
        header.extend((1..=self.n_components()).map(|k| format!("w_{k}")));
        w.write_record(&header)?;
        for j in 0..self.runs() {
            let mut rec = vec![j.to_string()];
            rec.extend(self.weights.row(j).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("singular_values.csv"))?;
        w.write_record(["component", "value", "explained"])?;
        for (k, (d, e)) in self.singular_values.iter().zip(self.explained_variance()).enumerate() {
            w.write_record([(k + 1).to_string(), format!("{d:e}"), format!("{e:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Independent GP per EOF weight with its own precision `λ_wi` and
/// correlations `ρ_wi1..ρ_wiq`; the observation weights carry a discrepancy
/// of precision `λ_δ` and noise of precision `λ_ε`.
///
/// Parameter layout: `θ_1..q`, then `ρ_{i,1..q}` for each component, then
/// `λ_w1..λ_wp`, `λ_δ`, `λ_ε`.
pub struct EofModel {
    design: Design,
    /// `p × (r+1)`: observation weight followed by run weights
    data: Vec<Vec<f64>>,
    priors: PriorSpec,
    nugget: f64,
    cache: Vec<Mutex<Option<(Vec<u64>, f64)>>>,
}

impl EofModel {
    pub fn new(decomp: &EofDecomposition, design: Design, observation: &GridField, priors: PriorSpec) -> Result<Self> {
        priors.validate()?;
        if design.runs() != decomp.runs() {
            return Err(Error::Dimension {
                expected: decomp.runs(),
                found: design.runs(),
                context: "design runs",
            });
        }
        let wf = decomp.project(observation)?;
        let data = (0..decomp.n_components())
            .map(|k| std::iter::once(wf[k]).chain(decomp.weights.column(k).iter().copied()).collect())
            .collect();
        Ok(Self {
            design,
            data,
            priors,
            nugget: 0.0,
            cache: (0..decomp.n_components()).map(|_| Mutex::new(None)).collect(),
        })
    }

    /// Relative emulator nugget, as in [`crate::calibration::CalibrationModel::with_nugget`].
    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::invalid("nugget must be finite and nonnegative"));
        }
        self.nugget = nugget;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    pub fn n_components(&self) -> usize {
        self.data.len()
    }

    pub fn observation_weights(&self) -> Vec<f64> {
        self.data.iter().map(|d| d[0]).collect()
    }

    fn component_loglik(&self, k: usize, theta: &[f64], rho: &[f64], lambda_w: f64, obs_var: f64) -> f64 {
        let key: Vec<u64> = theta
            .iter()
            .chain(rho)
            .chain([&lambda_w, &obs_var])
            .map(|v| v.to_bits())
            .collect();
        if let Some((cached_key, v)) = self.cache[k].lock().unwrap().as_ref() {
            if *cached_key == key {
                return *v;
            }
        }
        let b = emulator_block(&self.design, theta, rho, lambda_w, obs_var, self.nugget);
        let value = match b.cholesky() {
            Some(chol) => {
                let l = chol.l_dirty();
                let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
                let mut w = nalgebra::DVector::from_column_slice(&self.data[k]);
                l.solve_lower_triangular_unchecked_mut(&mut w);
                -0.5 * (log_det + w.norm_squared())
            }
            None => f64::NEG_INFINITY,
        };
        *self.cache[k].lock().unwrap() = Some((key, value));
        value
    }
}

impl Target for EofModel {
    fn params(&self) -> Vec<ParamSpec> {
        let (q, p) = (self.dim(), self.n_components());
        let mut out: Vec<ParamSpec> = (1..=q).map(|k| ParamSpec::unit(format!("theta_{k}"))).collect();
        for i in 1..=p {
            out.extend((1..=q).map(|k| ParamSpec {
                start: (0.05, 0.95),
                ..ParamSpec::unit(format!("rho_w{i}_{k}"))
            }));
        }
        out.extend((1..=p).map(|i| ParamSpec::positive(format!("lambda_w{i}"), 0.2, 5.0)));
        out.push(ParamSpec::positive("lambda_delta", 1.0, 200.0));
        out.push(ParamSpec::positive("lambda_eps", 10.0, 1000.0));
        out
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let (q, p) = (self.dim(), self.n_components());
        let theta = &x[..q];
        let rho = &x[q..q + p * q];
        let lambda_w = &x[q + p * q..q + p * q + p];
        let (ld, le) = (x[q + p * q + p], x[q + p * q + p + 1]);
        if theta.iter().chain(rho).any(|v| !(0.0..=1.0).contains(v))
            || rho.iter().any(|v| *v <= 0.0)
            || lambda_w.iter().chain([&ld, &le]).any(|v| !(*v > 0.0))
        {
            return f64::NEG_INFINITY;
        }
        let pr = &self.priors;
        let mut total = pr.lambda_delta.ln_pdf(ld) + pr.lambda_eps.ln_pdf(le);
        total += rho.iter().map(|&r| pr.rho.ln_pdf(r)).sum::<f64>();
        total += lambda_w.iter().map(|&l| pr.lambda_eta.ln_pdf(l)).sum::<f64>();
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        let obs_var = 1.0 / ld + 1.0 / le;
        for k in 0..p {
            total += self.component_loglik(k, theta, &rho[k * q..(k + 1) * q], lambda_w[k], obs_var);
            if !total.is_finite() {
                return f64::NEG_INFINITY;
            }
        }
        total
    }
}

/// Projects `observation`, samples the EOF-weight posterior and summarizes
/// the chains after burn-in.
pub fn eof_calibrate(
    decomp: &EofDecomposition,
    design: &Design,
    observation: &GridField,
    priors: &PriorSpec,
    nugget: f64,
    config: &ChainConfig,
    trace_dir: Option<&Path>,
) -> Result<(PosteriorSummary, Vec<ChainTrace>)> {
    let model = EofModel::new(decomp, design.clone(), observation, *priors)?.with_nugget(nugget)?;
    let traces = run_chains(&model, config, trace_dir)?;
    let summary = summarize(&traces, config.burn_in)?;
    Ok((summary, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{lat_lon_grid, unit_square_grid};
    use crate::doe::maximin_lhd;
    use proptest::prelude::*;

    fn ensemble(r: usize, seed: u64) -> Vec<GridField> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sites = lat_lon_grid(8, 10);
        (0..r)
            .map(|_| {
                let values = sites.iter().map(|s| s.xyz()[0] + rng.random::<f64>()).collect();
                GridField::new(sites.clone(), values).unwrap()
            })
            .collect()
    }

    #[test]
    fn rank_one_ensemble() {
        let sites = unit_square_grid(6, 6);
        let ens: Vec<GridField> = (0..5)
            .map(|j| GridField::from_fn(sites.clone(), |s| (j as f64 - 2.0) * (s.xyz()[0] + 2.0 * s.xyz()[1])).unwrap())
            .collect();
        let d = eof_decompose(&ens, 2).unwrap();
        let ev = d.explained_variance();
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!(ev[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(eof_decompose(&ens, 6).is_err());
    }

    #[test]
    fn full_rank_reconstruction_and_invariants() {
        let ens = ensemble(12, 1);
        let p = 12;
        let d = eof_decompose(&ens, p).unwrap();
        // centered anomalies of 12 runs have rank 11
        assert!(d.singular_values[11] < 1e-10 * d.singular_values[0]);
        for (j, f) in ens.iter().enumerate() {
            let w: Vec<f64> = d.weights.row(j).iter().copied().collect();
            let rec = d.reconstruct(&w).unwrap();
            for (a, b) in rec.values().iter().zip(f.values()) {
                assert!((a - b).abs() < 1e-8);
            }
            let proj = d.project(f).unwrap();
            for (a, b) in proj.iter().zip(&w).take(11) {
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
        // V orthonormal: weightsᵀ weights = r I
        let gram = d.weights.transpose() * &d.weights / 12.0;
        assert!((gram - DMatrix::identity(p, p)).abs().max() < 1e-8);
        assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let energy: f64 = d.singular_values.iter().map(|s| s * s).sum();
        let direct: f64 = ens
            .iter()
            .flat_map(|f| f.values().iter().enumerate().map(|(i, v)| d.area_weights[i] * (v - d.mean[i]).powi(2)))
            .sum();
        assert!((energy - direct).abs() < 1e-8 * direct);
        let cum = d.cumulative_explained_variance();
        assert!((cum.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_of_mean_plus_first_eof() {
        let ens = ensemble(10, 2);
        let d = eof_decompose(&ens, 3).unwrap();
        let obs = d.reconstruct(&[1.0, 0.0, 0.0]).unwrap();
        let w = d.project(&obs).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-10 && w[1].abs() < 1e-10 && w[2].abs() < 1e-10, "{w:?}");
        // direct area-weighted inner product with the first EOF
        let e = d.component(0).unwrap();
        let num: f64 = (0..e.len()).map(|i| d.area_weights[i] * e.values()[i] * (obs.values()[i] - d.mean[i])).sum();
        let den: f64 = (0..e.len()).map(|i| d.area_weights[i] * e.values()[i].powi(2)).sum();
        assert!((w[0] - num / den).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn permutation_equivariance(seed in 0u64..100, shift in 1usize..9) {
            let ens = ensemble(9, seed);
            let perm: Vec<usize> = (0..9).map(|j| (j + shift) % 9).collect();
            let permuted: Vec<GridField> = perm.iter().map(|&j| ens[j].clone()).collect();
            let a = eof_decompose(&ens, 3).unwrap();
            let b = eof_decompose(&permuted, 3).unwrap();
            for k in 0..3 {
                // components are defined up to sign
                let s = (a.weights[(perm[0], k)] * b.weights[(0, k)]).signum();
                for (j, &pj) in perm.iter().enumerate() {
                    prop_assert!((b.weights[(j, k)] - s * a.weights[(pj, k)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn model_density_is_finite_and_cached_consistently() {
        let ens = ensemble(8, 3);
        let d = eof_decompose(&ens, 2).unwrap();
        let design = maximin_lhd(8, 3, 2, 5).unwrap();
        let model = EofModel::new(&d, design, &ens[0], PriorSpec::default()).unwrap();
        let params = model.params();
        assert_eq!(params.len(), 3 + 2 * 3 + 2 + 2);
        let x = [0.3, 0.5, 0.7, 0.5, 0.6, 0.7, 0.4, 0.5, 0.6, 1.0, 2.0, 50.0, 300.0];
        let a = model.log_density(&x);
        assert!(a.is_finite());
        assert_eq!(model.log_density(&x), a);
        let mut y = x;
        y[3] = 0.9;
        let b = model.log_density(&y);
        assert_ne!(a, b);
        assert_eq!(model.log_density(&x), a);
        y[0] = 1.5;
        assert_eq!(model.log_density(&y), f64::NEG_INFINITY);
    }
}
