//! End-to-end calibration: inputs, coefficients, optional SPDE blocks,
//! sampling and the persisted result bundle.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use basiscal_core::basis::{BasisSet, CoefficientVector, GridField, SiteKind};
use basiscal_core::calibration::{
    standardize, CalibrationModel, EnsembleCoefficients, ObservationCoefficients, Standardizer,
};
use basiscal_core::calibration::PriorSpec;
use basiscal_core::doe::{maximin_lhd, Design};
use basiscal_core::eof::{eof_calibrate, eof_decompose, EofDecomposition};
use basiscal_core::sampler::{run_chains, ChainConfig, summarize, ChainTrace, PosteriorSummary};
use basiscal_core::spde::{build_mesh, estimate_spde_params_with, planar_mesh_for, RingSpec, SpdeEstimate, TriangleMesh};
use basiscal_core::Error;

use crate::config::{ExperimentConfig, Source, SpdeConfig};
use crate::examples::{generate, SyntheticData};
use crate::metrics::rmse;

/// A module error tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for basiscal_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub design: Design,
    pub ensemble: Vec<GridField>,
    pub observation: GridField,
    /// present for synthetic sources
    pub synthetic: Option<SyntheticData>,
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    match &cfg.source {
        Source::Example { example, seed } => {
            let design = maximin_lhd(cfg.design.runs, example.dim(), cfg.design.restarts, cfg.design.seed).stage("design")?;
            let data = generate(*example, &design, *seed).stage("simulate")?;
            Ok(Inputs {
                design,
                ensemble: data.ensemble.clone(),
                observation: data.observation.clone(),
                synthetic: Some(data),
            })
        }
        Source::Files {
            ensemble,
            design,
            observation,
        } => {
            let design = Design::load(design).stage("load design")?;
            let ensemble = (0..design.runs())
                .map(|j| GridField::load(ensemble.join(format!("run_{j}.csv"))))
                .collect::<basiscal_core::Result<Vec<_>>>()
                .stage("load ensemble")?;
            let observation = GridField::load(observation).stage("load observation")?;
            if ensemble.iter().any(|f| !f.same_sites(&observation)) {
                return Err(PipelineError {
                    stage: "load ensemble",
                    source: Error::invalid("ensemble and observation sites differ"),
                });
            }
            Ok(Inputs {
                design,
                ensemble,
                observation,
                synthetic: None,
            })
        }
    }
}

/// Standardized fields and their basis coefficients.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub standardizer: Standardizer,
    pub ensemble: Vec<GridField>,
    pub observation: GridField,
    pub eta_basis: BasisSet,
    pub y_basis: BasisSet,
    pub model: Vec<CoefficientVector>,
    pub obs: CoefficientVector,
}

pub fn fit_coefficients(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Coefficients> {
    let (ensemble, observation, standardizer) = standardize(&inputs.ensemble, &inputs.observation).stage("standardize")?;
    let eta_basis = BasisSet::new(cfg.basis.eta).stage("basis")?;
    let y_basis = BasisSet::new(cfg.basis.y).stage("basis")?;
    let sites = observation.sites();
    let projector = |b: &BasisSet| {
        if cfg.basis.basic {
            b.basic_projector(sites)
        } else {
            b.projector(sites)
        }
    };
    let eta_proj = projector(&eta_basis).stage("eta projection")?;
    let y_proj = projector(&y_basis).stage("y projection")?;
    if !y_proj.dropped().is_empty() {
        warn!("basis indices {:?} are not identifiable on these sites and are fixed at zero", y_proj.dropped());
    }
    let model = ensemble
        .par_iter()
        .map(|f| eta_proj.fit(f))
        .collect::<basiscal_core::Result<Vec<_>>>()
        .stage("eta projection")?;
    let obs = y_proj.fit(&observation).stage("y projection")?;
    Ok(Coefficients {
        standardizer,
        ensemble,
        observation,
        eta_basis,
        y_basis,
        model,
        obs,
    })
}

/// SPDE estimates for every run and for the observation.
#[derive(Debug, Clone)]
pub struct SpdeFits {
    pub config: SpdeConfig,
    pub mesh: TriangleMesh,
    pub runs: Vec<SpdeEstimate>,
    pub observation: SpdeEstimate,
}

impl SpdeFits {
    pub fn not_converged(&self) -> usize {
        self.runs.iter().chain([&self.observation]).filter(|e| !e.converged).count()
    }

    /// κ and τ blocks centered at the ensemble mean of each coefficient and
    /// scaled by the pooled SD of each type: `(run κ, run τ, obs κ, obs τ)`.
    pub fn blocks(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let scale = |get: &dyn Fn(&SpdeEstimate) -> &Vec<f64>| {
            let rows: Vec<&Vec<f64>> = self.runs.iter().map(get).collect();
            let n = rows[0].len();
            let r = rows.len() as f64;
            let mean: Vec<f64> = (0..n).map(|z| rows.iter().map(|row| row[z]).sum::<f64>() / r).collect();
            let ss: f64 = rows.iter().flat_map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m).powi(2))).sum();
            let sd = (ss / (r * n as f64)).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            let apply = |row: &Vec<f64>| row.iter().zip(&mean).map(|(v, m)| (v - m) / sd).collect::<Vec<_>>();
            (rows.iter().map(|row| apply(row)).collect::<Vec<_>>(), apply(get(&self.observation)))
        };
        let (k_runs, k_obs) = scale(&|e| &e.field.kappa_coeffs);
        let (t_runs, t_obs) = scale(&|e| &e.field.tau_coeffs);
        (k_runs, t_runs, k_obs, t_obs)
    }
}

pub fn fit_spde(spde: &SpdeConfig, coeffs: &Coefficients) -> Result<SpdeFits> {
    let kb = BasisSet::new(spde.kappa).stage("spde basis")?;
    let tb = BasisSet::new(spde.tau).stage("spde basis")?;
    let obs = &coeffs.observation;
    let mesh = match obs.kind() {
        Some(SiteKind::Planar) => planar_mesh_for(obs, &spde.options),
        _ => build_mesh(obs.sites(), spde.refinement, RingSpec::none()),
    }
    .stage("mesh")?;
    let fields: Vec<&GridField> = coeffs.ensemble.iter().chain([obs]).collect();
    let mut fits = fields
        .par_iter()
        .map(|f| estimate_spde_params_with(f, &mesh, &kb, &tb, &spde.options))
        .collect::<basiscal_core::Result<Vec<_>>>()
        .stage("spde estimate")?;
    let observation = fits.pop().expect("observation fit");
    let out = SpdeFits {
        config: spde.clone(),
        mesh,
        runs: fits,
        observation,
    };
    if out.not_converged() > 0 {
        warn!("{} SPDE fits did not converge", out.not_converged());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub theta_mean: Vec<f64>,
    pub theta_sd: Vec<f64>,
    pub rhat: Vec<Option<f64>>,
    pub truth: Option<Vec<f64>>,
    pub abs_error: Option<Vec<f64>>,
    pub n_eta: usize,
    pub n_y: usize,
    pub n_kappa: usize,
    pub n_tau: usize,
    /// observation against its own `y`-basis reconstruction
    pub rmse_reconstruction: f64,
    /// observation against the simulator at the posterior mean
    pub rmse_calibrated: Option<f64>,
    /// as above, plus the posterior mean discrepancy
    pub rmse_calibrated_with_discrepancy: Option<f64>,
    pub spde_not_converged: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub config: ExperimentConfig,
    pub design: Design,
    pub summary: PosteriorSummary,
    pub traces: Vec<ChainTrace>,
    /// posterior mean discrepancy in the observation's units
    pub discrepancy: GridField,
    pub metrics: Metrics,
    pub coefficients: Coefficients,
    pub spde: Option<SpdeFits>,
}

impl PipelineResult {
    pub fn theta_names(&self) -> Vec<String> {
        (1..=self.design.dim()).map(|k| format!("theta_{k}")).collect()
    }
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineResult> {
    cfg.validate().stage("config")?;
    let inputs = load_inputs(cfg)?;
    run_pipeline_with(cfg, &inputs, None)
}

/// Runs from prepared inputs; `spde` reuses earlier SPDE fits made with the
/// same SPDE configuration.
pub fn run_pipeline_with(cfg: &ExperimentConfig, inputs: &Inputs, spde: Option<SpdeFits>) -> Result<PipelineResult> {
    let start = Instant::now();
    cfg.validate().stage("config")?;
    let coefficients = fit_coefficients(cfg, inputs)?;
    let spde = match (&cfg.spde, spde) {
        (Some(c), Some(fits)) if fits.config == *c => Some(fits),
        (Some(c), _) => Some(fit_spde(c, &coefficients)?),
        (None, _) => None,
    };
    let model_rows: Vec<Vec<f64>> = coefficients.model.iter().map(|c| c.values.clone()).collect();
    let mut ens = EnsembleCoefficients::new(inputs.design.clone(), model_rows, coefficients.y_basis.size())
        .stage("ensemble coefficients")?;
    let mut obs = ObservationCoefficients::new(coefficients.obs.values.clone());
    if let Some(fits) = &spde {
        let (k, t, ko, to) = fits.blocks();
        ens = ens.with_spde(k, t).stage("ensemble coefficients")?;
        obs = obs.with_spde(ko, to);
    }
    let model = CalibrationModel::new(ens, obs, cfg.priors)
        .and_then(|m| m.with_nugget(cfg.nugget))
        .stage("calibration model")?;

    let out = cfg.output.as_deref();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(Error::from).stage("bundle")?;
    }
    let trace_dir = out.map(|d| d.join("chains"));
    info!("sampling {} chains of {} iterations", cfg.chain.n_chains, cfg.chain.n_iter);
    let traces = run_chains(&model, &cfg.chain, trace_dir.as_deref()).stage("sampling")?;
    let summary = summarize(&traces, cfg.chain.burn_in).stage("summary")?;

    let draws = model.draws(&traces, cfg.chain.burn_in, cfg.thin);
    let delta = model.discrepancy_mean(&draws).stage("discrepancy")?;
    let sites = coefficients.observation.sites();
    let y_proj = if cfg.basis.basic {
        coefficients.y_basis.basic_projector(sites)
    } else {
        coefficients.y_basis.projector(sites)
    }
    .stage("discrepancy")?;
    let delta_field = CoefficientVector::new(delta, coefficients.y_basis.clone())
        .and_then(|c| y_proj.reconstruct(&c))
        .stage("discrepancy")?;
    let sd = coefficients.standardizer.sd;
    let discrepancy = delta_field.map_values(|v| v * sd).with_label("discrepancy");

    let q = inputs.design.dim();
    let theta_mean = summary.means()[..q].to_vec();
    let theta_sd = summary.sds()[..q].to_vec();
    let rhat = summary.params[..q].iter().map(|p| p.rhat).collect();
    let recon = y_proj
        .reconstruct(&coefficients.obs)
        .map(|f| coefficients.standardizer.inverse(&f))
        .and_then(|f| rmse(&f, &inputs.observation))
        .stage("metrics")?;
    let (truth, abs_error, rmse_cal, rmse_cal_d) = match &inputs.synthetic {
        Some(data) => {
            let fitted = data.run_model(&theta_mean).stage("metrics")?;
            let plus: Vec<f64> = fitted.values().iter().zip(discrepancy.values()).map(|(a, b)| a + b).collect();
            let with_d = fitted.with_values(plus).stage("metrics")?;
            let t = data.truth.theta.clone();
            let err = theta_mean.iter().zip(&t).map(|(a, b)| (a - b).abs()).collect();
            (
                Some(t),
                Some(err),
                Some(rmse(&fitted, &inputs.observation).stage("metrics")?),
                Some(rmse(&with_d, &inputs.observation).stage("metrics")?),
            )
        }
        None => (None, None, None, None),
    };
    let metrics = Metrics {
        theta_mean,
        theta_sd,
        rhat,
        truth,
        abs_error,
        n_eta: coefficients.eta_basis.size(),
        n_y: coefficients.y_basis.size(),
        n_kappa: spde.as_ref().map_or(0, |s| s.runs[0].field.kappa_coeffs.len()),
        n_tau: spde.as_ref().map_or(0, |s| s.runs[0].field.tau_coeffs.len()),
        rmse_reconstruction: recon,
        rmse_calibrated: rmse_cal,
        rmse_calibrated_with_discrepancy: rmse_cal_d,
        spde_not_converged: spde.as_ref().map_or(0, SpdeFits::not_converged),
        seconds: start.elapsed().as_secs_f64(),
    };
    let result = PipelineResult {
        config: cfg.clone(),
        design: inputs.design.clone(),
        summary,
        traces,
        discrepancy,
        metrics,
        coefficients,
        spde,
    };
    if let Some(dir) = out {
        write_bundle(dir, &result).stage("bundle")?;
    }
    Ok(result)
}

/// `config.toml`, `design.csv`, `coeffs/`, `summary.json`, `discrepancy.csv`
/// and `metrics.json`; chains are streamed to `chains/` while sampling.
pub fn write_bundle(dir: &Path, result: &PipelineResult) -> basiscal_core::Result<()> {
    std::fs::create_dir_all(dir.join("coeffs"))?;
    result.config.save(dir.join("config.toml"))?;
    result.design.save(dir.join("design.csv"))?;
    let c = &result.coefficients;
    for (j, v) in c.model.iter().enumerate() {
        v.write_csv(std::fs::File::create(dir.join("coeffs").join(format!("run_{j}.csv")))?)?;
    }
    c.obs.write_csv(std::fs::File::create(dir.join("coeffs/observation.csv"))?)?;
    if let Some(fits) = &result.spde {
        for (j, e) in fits.runs.iter().enumerate() {
            e.field.write_csv(std::fs::File::create(dir.join("coeffs").join(format!("spde_run_{j}.csv")))?)?;
        }
        fits.observation
            .field
            .write_csv(std::fs::File::create(dir.join("coeffs/spde_observation.csv"))?)?;
        fits.mesh.write_csv(dir.join("mesh"))?;
    }
    let trace_dir = dir.join("chains");
    if !trace_dir.join("chain_0.csv").exists() {
        std::fs::create_dir_all(&trace_dir)?;
        for (i, t) in result.traces.iter().enumerate() {
            t.write_csv(std::fs::File::create(trace_dir.join(format!("chain_{i}.csv")))?)?;
        }
    }
    result.summary.save(dir.join("summary.json"))?;
    result.discrepancy.save(dir.join("discrepancy.csv"))?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&result.metrics)?)?;
    Ok(())
}

/// Artifacts read back from a bundle directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub design: Design,
    pub summary: PosteriorSummary,
    pub traces: Vec<ChainTrace>,
    pub discrepancy: GridField,
    pub metrics: Metrics,
    pub observation_coeffs: CoefficientVector,
}

pub fn load_bundle(dir: impl AsRef<Path>) -> basiscal_core::Result<Bundle> {
    let dir = dir.as_ref();
    let config = ExperimentConfig::load(dir.join("config.toml"))?;
    let mut traces = Vec::new();
    for i in 0..config.chain.n_chains {
        traces.push(ChainTrace::read_csv(dir.join("chains").join(format!("chain_{i}.csv")))?);
    }
    let y_basis = BasisSet::new(config.basis.y)?;
    let observation_coeffs = CoefficientVector::read_csv(std::fs::File::open(dir.join("coeffs/observation.csv"))?, y_basis)?;
    Ok(Bundle {
        dir: dir.to_path_buf(),
        design: Design::load(dir.join("design.csv"))?,
        summary: PosteriorSummary::load(dir.join("summary.json"))?,
        discrepancy: GridField::load(dir.join("discrepancy.csv"))?,
        metrics: serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json"))?)?,
        traces,
        config,
        observation_coeffs,
    })
}

#[derive(Debug, Clone)]
pub struct EofResult {
    pub decomposition: EofDecomposition,
    pub summary: PosteriorSummary,
    pub traces: Vec<ChainTrace>,
}

/// EOF decomposition of the standardized ensemble and calibration on the
/// leading `components` weights; `out` receives `eofs/`, `chains/` and
/// `summary.json`.
pub fn run_eof(
    inputs: &Inputs,
    components: usize,
    priors: &PriorSpec,
    nugget: f64,
    chain: &ChainConfig,
    out: Option<&Path>,
) -> Result<EofResult> {
    let (ensemble, observation, _) = standardize(&inputs.ensemble, &inputs.observation).stage("standardize")?;
    let decomposition = eof_decompose(&ensemble, components).stage("eof decomposition")?;
    let trace_dir = out.map(|d| d.join("chains"));
    let (summary, traces) = eof_calibrate(
        &decomposition,
        &inputs.design,
        &observation,
        priors,
        nugget,
        chain,
        trace_dir.as_deref(),
    )
        .stage("eof calibration")?;
    if let Some(dir) = out {
        decomposition.write_csv(dir.join("eofs")).stage("bundle")?;
        summary.save(dir.join("summary.json")).stage("bundle")?;
    }
    Ok(EofResult {
        decomposition,
        summary,
        traces,
    })
}
