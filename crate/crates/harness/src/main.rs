use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use basiscal::config::ExperimentConfig;
use basiscal::examples::{generate, ExampleId};
use basiscal::pipeline::{load_inputs, run_eof, run_pipeline, Inputs};
use basiscal_core::basis::{BasisSet, BasisSpec, GridField, ModePolicy, SiteKind};
use basiscal_core::calibration::PriorSpec;
use basiscal_core::doe::{maximin_lhd, Design};
use basiscal_core::sampler::ChainConfig;
use basiscal_core::spde::{build_mesh, estimate_spde_params_with, planar_mesh_for, EstimateOptions, RingSpec};

const FILE_FORMATS: &str = "\
File formats (CSV with a header row):
  field         lat_deg,lon_deg,value on the sphere or x1,x2,value on [0,1]^2
  design        theta_1,...,theta_q with every value in [0,1]; one row per run
  coefficients  z,k,h,value where (k, h) are the harmonic order and index,
                or the two B-spline indices
  spde          type,z,value with type kappa or tau (log-scale coefficients)
  chain         iter,<parameters>,log_posterior,acc_<parameters>
  summary.json  mean, sd, mode, argmax, acceptance and rhat per parameter
  metrics.json  theta summaries, truth when known, reconstruction and fit RMSE";

#[derive(Parser)]
#[command(name = "basiscal", version, about = "Calibrate spatial simulators through basis coefficients", after_help = FILE_FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modes {
    Full,
    Nonnegative,
}

impl From<Modes> for ModePolicy {
    fn from(m: Modes) -> Self {
        match m {
            Modes::Full => ModePolicy::Full,
            Modes::Nonnegative => ModePolicy::Nonnegative,
        }
    }
}

#[derive(clap::Args)]
struct Chain {
    #[arg(long, default_value_t = 10_000)]
    n_iter: usize,
    #[arg(long, default_value_t = 5_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 3)]
    chains: usize,
    #[arg(long, default_value_t = 1)]
    chain_seed: u64,
}

impl Chain {
    fn config(&self) -> ChainConfig {
        ChainConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            seed: self.chain_seed,
            n_chains: self.chains,
            ..ChainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Maximin Latin hypercube design on the unit cube
    Design {
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic example: design.csv, runs/run_{j}.csv, observation.csv
    Synth {
        #[arg(long, value_enum)]
        example: Example,
        #[arg(long)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        design_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Least-squares basis coefficients of a field
    Decompose {
        #[arg(long)]
        field: PathBuf,
        /// harmonic order, or B-spline functions per axis
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value = "full")]
        modes: Modes,
        /// B-spline degree for planar fields
        #[arg(long, default_value_t = 3)]
        degree: usize,
        /// keep only the first N functions of a B-spline layout
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit log-κ and log-τ surfaces of a Matérn field; writes spde.csv and mesh/
    SpdeFit {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 1)]
        kappa_order: usize,
        #[arg(long, default_value_t = 1)]
        tau_order: usize,
        #[arg(long, value_enum, default_value = "full")]
        modes: Modes,
        /// icosphere subdivision level (sphere only)
        #[arg(long, default_value_t = 3)]
        refinement: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a TOML experiment and write the result bundle
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// overrides `output` in the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// EOF decomposition and calibration on the leading weights
    Eof {
        /// directory with run_{j}.csv
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        observation: PathBuf,
        #[arg(long)]
        components: usize,
        /// relative emulator nugget
        #[arg(long, default_value_t = basiscal::config::NUGGET)]
        nugget: f64,
        #[command(flatten)]
        chain: Chain,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a starting TOML config for a synthetic example
    Init {
        #[arg(long, value_enum)]
        example: Example,
        #[arg(long)]
        eta: usize,
        #[arg(long)]
        y: usize,
        #[arg(long, value_enum, default_value = "full")]
        modes: Modes,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        /// add SPDE blocks of this order for κ and τ
        #[arg(long)]
        spde: Option<usize>,
    },
    /// Check a TOML config without running it
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Example1,
    Example2,
    Example3,
    Example4,
}

impl From<Example> for ExampleId {
    fn from(e: Example) -> Self {
        match e {
            Example::Example1 => ExampleId::Example1,
            Example::Example2 => ExampleId::Example2,
            Example::Example3 => ExampleId::Example3,
            Example::Example4 => ExampleId::Example4,
        }
    }
}

type AnyResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn basis_for(field: &GridField, order: usize, modes: Modes, degree: usize, limit: Option<usize>) -> BasisSpec {
    match field.kind() {
        Some(SiteKind::Planar) => BasisSpec::BsplineTensor {
            per_axis: order,
            degree,
            limit,
        },
        _ => BasisSpec::sh(order, modes.into()),
    }
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::Design {
            runs,
            dim,
            seed,
            restarts,
            out,
        } => maximin_lhd(runs, dim, restarts, seed)?.save(out)?,
        Command::Synth {
            example,
            runs,
            seed,
            design_seed,
            out,
        } => {
            let example = ExampleId::from(example);
            let design = maximin_lhd(runs, example.dim(), 5, design_seed)?;
            let data = generate(example, &design, seed)?;
            std::fs::create_dir_all(out.join("runs"))?;
            design.save(out.join("design.csv"))?;
            for (j, f) in data.ensemble.iter().enumerate() {
                f.save(out.join("runs").join(format!("run_{j}.csv")))?;
            }
            data.observation.save(out.join("observation.csv"))?;
        }
        Command::Decompose {
            field,
            order,
            modes,
            degree,
            limit,
            out,
        } => {
            let field = GridField::load(field)?;
            let basis = BasisSet::new(basis_for(&field, order, modes, degree, limit))?;
            let coeffs = basis.projector(field.sites())?.fit(&field)?;
            coeffs.write_csv(File::create(out)?)?;
        }
        Command::SpdeFit {
            field,
            kappa_order,
            tau_order,
            modes,
            refinement,
            out,
        } => {
            let field = GridField::load(field)?;
            let opts = EstimateOptions::default();
            let planar = field.kind() == Some(SiteKind::Planar);
            let spec = |o: usize| {
                if planar {
                    BasisSpec::bspline(o.max(1), (o.max(1) - 1).min(1))
                } else {
                    BasisSpec::sh(o, modes.into())
                }
            };
            let mean = field.mean();
            let centered = field.map_values(|v| v - mean);
            let mesh = if planar {
                planar_mesh_for(&centered, &opts)?
            } else {
                build_mesh(field.sites(), refinement, RingSpec::none())?
            };
            let fit = estimate_spde_params_with(
                &centered,
                &mesh,
                &BasisSet::new(spec(kappa_order))?,
                &BasisSet::new(spec(tau_order))?,
                &opts,
            )?;
            std::fs::create_dir_all(&out)?;
            fit.field.write_csv(File::create(out.join("spde.csv"))?)?;
            mesh.write_csv(out.join("mesh"))?;
            println!(
                "log-likelihood {:.6} noise variance {:.6e} converged {} after {} iterations",
                fit.log_likelihood, fit.field.noise_var, fit.converged, fit.iterations
            );
        }
        Command::Calibrate { config, out } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if out.is_some() {
                cfg.output = out;
            }
            let res = run_pipeline(&cfg)?;
            for (name, (m, s)) in res.theta_names().iter().zip(res.metrics.theta_mean.iter().zip(&res.metrics.theta_sd)) {
                println!("{name} {m:.4} ± {s:.4}");
            }
            if let Some(dir) = &cfg.output {
                info!("bundle written to {}", dir.display());
            }
        }
        Command::Eof {
            ensemble,
            design,
            observation,
            components,
            nugget,
            chain,
            out,
        } => {
            let inputs = read_inputs(&ensemble, &design, &observation)?;
            std::fs::create_dir_all(&out)?;
            let res = run_eof(&inputs, components, &PriorSpec::default(), nugget, &chain.config(), Some(&out))?;
            let explained = res.decomposition.cumulative_explained_variance();
            for (k, e) in explained.iter().take(components).enumerate() {
                println!("EOF {} cumulative explained variance {:.2}%", k + 1, 100.0 * e);
            }
            for p in res.summary.params.iter().take(inputs.design.dim()) {
                println!("{} {:.4} ± {:.4}", p.name, p.mean, p.sd);
            }
        }
        Command::Init {
            example,
            eta,
            y,
            modes,
            runs,
            spde,
        } => {
            let mut cfg = ExperimentConfig::example(example.into(), eta, y, modes.into(), runs);
            if let Some(o) = spde {
                cfg = cfg.with_spde(o, o);
            }
            cfg.validate()?;
            print!("{}", cfg.to_toml()?);
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let inputs = load_inputs(&cfg)?;
            println!(
                "ok: {} runs of {} sites, q = {}",
                inputs.ensemble.len(),
                inputs.observation.len(),
                inputs.design.dim()
            );
        }
    }
    Ok(())
}

fn read_inputs(ensemble: &Path, design: &Path, observation: &Path) -> AnyResult<Inputs> {
    let design = Design::load(design)?;
    let ensemble = (0..design.runs())
        .map(|j| GridField::load(ensemble.join(format!("run_{j}.csv"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Inputs {
        design,
        ensemble,
        observation: GridField::load(observation)?,
        synthetic: None,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
