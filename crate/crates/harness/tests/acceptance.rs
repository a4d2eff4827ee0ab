//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 unless `ACCEPTANCE_STRICT=1`, in which case any FAIL is fatal.
//! `ACCEPTANCE_ONLY=counts,smoke` runs a subset.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF};

use basiscal::config::ExperimentConfig;
use basiscal::examples::ExampleId;
use basiscal::pipeline::{load_bundle, load_inputs, run_eof, run_pipeline, run_pipeline_with, PipelineResult};
use basiscal_core::basis::{unit_square_grid, BasisSet, BasisSpec, ModePolicy};
use basiscal_core::calibration::{
    cov_eta_entry, log_likelihood, standardize, EnsembleCoefficients, Hyperparameters, ObservationCoefficients, JITTER,
};
use basiscal_core::doe::Design;
use basiscal_core::eof::eof_decompose;
use basiscal_core::linalg::sparse::SparseCholesky;
use basiscal_core::sampler::{run_chains, ChainConfig, FnTarget, ParamSpec, Width};
use basiscal_core::spde::{
    build_planar_mesh, fem_matrices, gmrf_log_likelihood, grid_mesh, matern_correlation, matern_variance,
    precision_matrix, sample_gmrf, Projection, RingSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("({})", parts.join(", "))
}

fn fmt_rhat(v: &[Option<f64>]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.map_or("n/a".into(), |r| format!("{r:.3}"))).collect();
    format!("({})", parts.join(", "))
}

fn sds(res: &PipelineResult) -> &[f64] {
    &res.metrics.theta_sd
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn config(example: ExampleId, eta: usize, y: usize, modes: ModePolicy, runs: usize) -> ExperimentConfig {
    ExperimentConfig::example(example, eta, y, modes, runs)
}

fn coefficient_counts() -> Outcome {
    let full = [4, 9, 16, 25, 36, 49, 64];
    let restricted = [3, 6, 10, 15, 21, 28, 36];
    let mut got_f = Vec::new();
    let mut got_r = Vec::new();
    for order in 1..=7 {
        got_f.push(BasisSet::new(BasisSpec::sh(order, ModePolicy::Full)).unwrap().size());
        got_r.push(BasisSet::new(BasisSpec::sh(order, ModePolicy::Nonnegative)).unwrap().size());
    }
    outcome(
        got_f == full && got_r == restricted,
        format!("full {got_f:?}, restricted {got_r:?}"),
    )
}

fn example2_recovery() -> Outcome {
    let res = run_pipeline(&config(ExampleId::Example2, 2, 2, ModePolicy::Full, 25)).unwrap();
    let m = &res.metrics.theta_mean;
    let truth = [0.3, 0.7, 0.9];
    let close = m.iter().zip(truth).all(|(a, b)| (a - b).abs() <= 0.15);
    let over = m[1] > 0.7 && m[2] > 0.9;
    outcome(
        close && over,
        format!(
            "means {} sd {} rhat {}; within 0.15: {close}; theta_2, theta_3 overestimated: {over}",
            fmt(m),
            fmt(sds(&res)),
            fmt_rhat(&res.metrics.rhat)
        ),
    )
}

fn example2_order_trend() -> Outcome {
    let base = config(ExampleId::Example2, 5, 5, ModePolicy::Full, 50);
    let inputs = load_inputs(&base).unwrap();
    let full5 = run_pipeline_with(&base, &inputs, None).unwrap();
    let mut detail = format!("full order 5 sd {}", fmt(sds(&full5)));
    let mut pass = true;
    for order in 2..=4 {
        let cfg = config(ExampleId::Example2, order, order, ModePolicy::Nonnegative, 50);
        let res = run_pipeline_with(&cfg, &inputs, None).unwrap();
        let below = sds(&res).iter().zip(sds(&full5)).all(|(a, b)| a < b);
        pass &= below;
        detail += &format!(
            "; restricted order {order} sd {} mean {} below: {below}",
            fmt(sds(&res)),
            fmt(&res.metrics.theta_mean)
        );
    }
    outcome(pass, detail)
}

fn converged(means: &[f64], rhat: &[Option<f64>], truth: &[f64]) -> (bool, bool) {
    let gr = rhat.iter().all(|r| r.is_some_and(|r| r < 1.1));
    let near = means.iter().zip(truth).all(|(a, b)| (a - b).abs() < 0.1);
    (gr, near)
}

fn example3_eof_contrast() -> Outcome {
    let cfg = config(ExampleId::Example3, 2, 2, ModePolicy::Full, 50);
    let inputs = load_inputs(&cfg).unwrap();
    let sh = run_pipeline_with(&cfg, &inputs, None).unwrap();
    let truth = [0.3, 0.7, 0.9];
    let (sh_gr, sh_near) = converged(&sh.metrics.theta_mean, &sh.metrics.rhat, &truth);
    let eof = run_eof(&inputs, 9, &cfg.priors, cfg.nugget, &cfg.chain, None).unwrap();
    let q = truth.len();
    let eof_means: Vec<f64> = eof.summary.params[..q].iter().map(|p| p.mean).collect();
    let eof_rhat: Vec<Option<f64>> = eof.summary.params[..q].iter().map(|p| p.rhat).collect();
    let (eof_gr, eof_near) = converged(&eof_means, &eof_rhat, &truth);
    outcome(
        sh_gr && sh_near && !(eof_gr && eof_near),
        format!(
            "SH means {} rhat {} (GR<1.1: {sh_gr}, within 0.1: {sh_near}); EOF-9 means {} rhat {} (GR<1.1: {eof_gr}, within 0.1: {eof_near})",
            fmt(&sh.metrics.theta_mean),
            fmt_rhat(&sh.metrics.rhat),
            fmt(&eof_means),
            fmt_rhat(&eof_rhat)
        ),
    )
}

// ten longitudes alias the highest modes from order 6 up; aliased
// coefficients are fixed at zero
fn example4(order: usize) -> ExperimentConfig {
    let mut cfg = config(ExampleId::Example4, order, order, ModePolicy::Nonnegative, 50);
    cfg.basis.basic = true;
    cfg
}

fn example4_spde_benefit() -> Outcome {
    let start = Instant::now();
    let inputs = load_inputs(&example4(4)).unwrap();
    let mut detail = String::new();
    let mut best_sh = f64::INFINITY;
    for order in 4..=7 {
        let res = run_pipeline_with(&example4(order), &inputs, None).unwrap();
        let err = (res.metrics.theta_mean[2] - 0.8).abs();
        best_sh = best_sh.min(err);
        detail += &format!(
            "SH {order} [{}] mean {} |theta_3-0.8| {err:.4}; ",
            res.metrics.n_y,
            fmt(&res.metrics.theta_mean)
        );
    }
    let mut best_spde = f64::INFINITY;
    let mut fits = None;
    for order in [4, 5] {
        let cfg = example4(order).with_spde(2, 2);
        let res = run_pipeline_with(&cfg, &inputs, fits.take()).unwrap();
        let err = (res.metrics.theta_mean[2] - 0.8).abs();
        best_spde = best_spde.min(err);
        detail += &format!(
            "SH {order}+SPDE 2 [{}] mean {} |theta_3-0.8| {err:.4} (unconverged fits {}); ",
            res.metrics.n_y + res.metrics.n_kappa + res.metrics.n_tau,
            fmt(&res.metrics.theta_mean),
            res.metrics.spde_not_converged
        );
        fits = res.spde;
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    outcome(
        best_spde < best_sh && minutes <= 30.0,
        format!("{detail}best SPDE {best_spde:.4} vs best SH {best_sh:.4}; {minutes:.1} min"),
    )
}

fn gmrf_fidelity() -> Outcome {
    let n = 101;
    let (lo, hi) = (-1.5, 2.5);
    let h = (hi - lo) / (n - 1) as f64;
    let mesh = grid_mesh(lo, hi, n).unwrap();
    let fem = fem_matrices(&mesh).unwrap();
    let m = mesh.n_vertices();
    let kappa = 5.0;
    let tau = 1.0 / (kappa * (4.0 * std::f64::consts::PI).sqrt());
    let q = precision_matrix(&fem, &vec![kappa; m], &vec![tau; m]).unwrap();
    let chol = SparseCholesky::new(&q).unwrap();
    let id = |i: usize, j: usize| j * n + i;
    let bases: Vec<(usize, usize)> = (0..5).flat_map(|a| (0..5).map(move |b| (38 + 6 * a, 38 + 6 * b))).collect();
    let max_lag = (3.0 / kappa / h).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n_samples = 2000;
    let mut cross = vec![0.0; max_lag + 1];
    let mut var = 0.0;
    for _ in 0..n_samples {
        let x = sample_gmrf(&chol, &mut rng);
        for &(i, j) in &bases {
            let x0 = x[id(i, j)];
            var += x0 * x0;
            for (lag, c) in cross.iter_mut().enumerate() {
                *c += 0.5 * x0 * (x[id(i + lag, j)] + x[id(i, j + lag)]);
            }
        }
    }
    let total = (n_samples * bases.len()) as f64;
    let var = var / total;
    let worst = cross
        .iter()
        .enumerate()
        .map(|(lag, c)| (c / total / var - matern_correlation(lag as f64 * h, kappa)).abs())
        .fold(0.0f64, f64::max);
    outcome(
        worst < 0.05,
        format!(
            "sup |empirical - Matérn| = {worst:.4} over {} lags up to 3/kappa; unit-variance check {:.3}, sample variance {var:.3}",
            max_lag + 1,
            matern_variance(kappa, tau)
        ),
    )
}

/// Dense Gaussian over `(c^F_0..c^F_{N_y}, c^M_{j,z<N_η})`.
fn dense_gp_loglik(ens: &EnsembleCoefficients, obs: &ObservationCoefficients, h: &Hyperparameters) -> f64 {
    let (r, n_y, n_eta) = (ens.runs(), ens.n_y(), ens.n_eta);
    let dim = n_y + r * n_eta;
    let mut sigma = DMatrix::zeros(dim, dim);
    let mut data = DVector::zeros(dim);
    let idx = |j: usize, z: usize| n_y + j * n_eta + z;
    for z in 0..n_y {
        data[z] = obs.c_obs[z];
        let eta = if z < n_eta { 1.0 / h.lambda_eta } else { 0.0 };
        sigma[(z, z)] = eta + h.obs_var() + JITTER;
    }
    for j in 0..r {
        for z in 0..n_eta {
            let a = idx(j, z);
            data[a] = ens.c_model[j][z];
            let c = cov_eta_entry(&h.theta_star, ens.theta.point(j), z, z, h);
            sigma[(a, z)] = c;
            sigma[(z, a)] = c;
            for i in 0..r {
                sigma[(idx(i, z), a)] = cov_eta_entry(ens.theta.point(i), ens.theta.point(j), z, z, h);
            }
            sigma[(a, a)] += JITTER;
        }
    }
    let chol = sigma.cholesky().unwrap();
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (log_det + data.dot(&chol.solve(&data)))
}

fn dense_gmrf_loglik(y: &[f64], a: &Projection, q: &DMatrix<f64>, noise_var: f64) -> f64 {
    let ad = a.to_dense();
    let cov = &ad * q.clone().try_inverse().unwrap() * ad.transpose() + DMatrix::identity(y.len(), y.len()) * noise_var;
    let chol = cov.cholesky().unwrap();
    let y = DVector::from_column_slice(y);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + y.dot(&chol.solve(&y)))
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_gp = 0.0f64;
    for _ in 0..40 {
        let r = rng.random_range(2..=5);
        let q = rng.random_range(1..=3);
        let n_y = rng.random_range(1..=6);
        let n_eta = rng.random_range(1..=n_y);
        let rows: Vec<Vec<f64>> = (0..r).map(|_| (0..q).map(|_| rng.random::<f64>()).collect()).collect();
        let design = Design::from_rows(&rows, 0).unwrap();
        let model = (0..r).map(|_| (0..n_eta).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ens = EnsembleCoefficients::new(design, model, n_y).unwrap();
        let obs = ObservationCoefficients::new((0..n_y).map(|_| rng.random_range(-2.0..2.0)).collect());
        let h = Hyperparameters {
            theta_star: (0..q).map(|_| rng.random::<f64>()).collect(),
            rho: (0..q).map(|_| rng.random_range(0.05..0.95)).collect(),
            lambda_eta: rng.random_range(0.2..5.0),
            lambda_delta: rng.random_range(1.0..200.0),
            lambda_eps: rng.random_range(10.0..1000.0),
        };
        let block = log_likelihood(&ens, &obs, &h).unwrap();
        let dense = dense_gp_loglik(&ens, &obs, &h);
        let rel = (block - dense).abs() / dense.abs().max(1.0);
        worst_gp = worst_gp.max(rel);
    }

    let sites = unit_square_grid(4, 4);
    let mesh = build_planar_mesh(&sites, RingSpec {
            width: 0.4,
            spacing: Some(0.4),
        }).unwrap();
    let fem = fem_matrices(&mesh).unwrap();
    let mv = mesh.n_vertices();
    let a = Projection::new(&mesh, &sites).unwrap();
    let mut worst_gmrf = 0.0f64;
    for _ in 0..10 {
        let k: Vec<f64> = (0..mv).map(|_| rng.random_range(1.0..6.0)).collect();
        let t: Vec<f64> = (0..mv).map(|_| rng.random_range(0.2..2.0)).collect();
        let q = precision_matrix(&fem, &k, &t).unwrap();
        let y: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s2 = rng.random_range(0.01..1.0);
        let sparse = gmrf_log_likelihood(&y, &a, &q, s2).unwrap();
        let dense = dense_gmrf_loglik(&y, &a, &q.to_dense(), s2);
        worst_gmrf = worst_gmrf.max((sparse - dense).abs() / dense.abs().max(1.0));
    }

    let chain = |spec: ParamSpec, f: fn(&[f64]) -> f64, width: Width, n: usize, seed: u64| {
        let target = FnTarget { params: vec![spec], f };
        let cfg = ChainConfig {
            n_iter: n,
            burn_in: 1000,
            widths: Some(vec![width]),
            seed,
            n_chains: 1,
            tune: false,
        };
        run_chains(&target, &cfg, None).unwrap()[0].column(0, 1000)
    };
    let gauss = chain(
        ParamSpec {
            start: (-3.0, 3.0),
            ..ParamSpec::interval("x", -1e9, 1e9)
        },
        |x| -0.5 * x[0] * x[0],
        Width::Window(3.0),
        51_000,
        3,
    );
    let (gm, gsd) = mean_sd(&gauss);
    let gauss_ok = gm.abs() < 0.05 && (0.93..=1.07).contains(&gsd);
    let beta = chain(
        ParamSpec::unit("x"),
        |x| {
            if x[0] <= 0.0 || x[0] >= 1.0 {
                f64::NEG_INFINITY
            } else {
                x[0].ln() + 4.0 * (1.0 - x[0]).ln()
            }
        },
        Width::Window(0.2),
        201_000,
        5,
    );
    let thinned: Vec<f64> = beta.iter().step_by(20).copied().collect();
    let dist = Beta::new(2.0, 5.0).unwrap();
    let bins = 10;
    let total = thinned.len() as f64;
    let mut counts = vec![0.0; bins];
    for x in &thinned {
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    let chi2: f64 = (0..bins)
        .map(|b| {
            let p = dist.cdf((b + 1) as f64 / bins as f64) - dist.cdf(b as f64 / bins as f64);
            (counts[b] - total * p).powi(2) / (total * p)
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    let expo = chain(
        ParamSpec::positive("x", 0.5, 2.0),
        |x| if x[0] > 0.0 { -x[0] } else { f64::NEG_INFINITY },
        Width::Relative {
            relative: 1.5,
            absolute: 0.2,
        },
        201_000,
        8,
    );
    let (em, esd) = mean_sd(&expo);
    let expo_ok = (em - 1.0).abs() < 0.05 && (esd - 1.0).abs() < 0.07;
    outcome(
        worst_gp < 1e-8 && worst_gmrf < 1e-8 && gauss_ok && p_value > 0.01 && expo_ok,
        format!(
            "block vs dense GP rel {worst_gp:.2e}; sparse vs dense GMRF rel {worst_gmrf:.2e} (M = {mv}); N(0,1) mean {gm:.3} sd {gsd:.3}; Beta(2,5) chi2 p {p_value:.3}; Exp(1) mean {em:.3} sd {esd:.3}"
        ),
    )
}

fn explained_variance() -> Outcome {
    let paper = [71.28, 82.82, 92.76];
    let mut detail = String::new();
    let mut any = false;
    for seed in 1..=5 {
        let mut cfg = config(ExampleId::Example3, 2, 2, ModePolicy::Full, 50);
        cfg.design.seed = seed;
        let inputs = load_inputs(&cfg).unwrap();
        let (ens, _, _) = standardize(&inputs.ensemble, &inputs.observation).unwrap();
        let d = eof_decompose(&ens, 3).unwrap();
        let cum: Vec<f64> = d.cumulative_explained_variance()[..3].iter().map(|v| 100.0 * v).collect();
        let ok = cum.iter().zip(paper).all(|(a, b)| (a - b).abs() <= 2.0);
        any |= ok;
        detail += &format!("seed {seed}: ({:.2}, {:.2}, {:.2}) {ok}; ", cum[0], cum[1], cum[2]);
    }
    outcome(any, format!("{detail}target (71.28, 82.82, 92.76) ± 2"))
}

fn smoke() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ExampleId::Example2, 3, 4, ModePolicy::Full, 10).with_spde(1, 1);
    cfg.output = Some(dir.path().join("bundle"));
    let res = run_pipeline(&cfg).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let bundle = load_bundle(dir.path().join("bundle")).unwrap();
    let m = &res.metrics;
    let checks = [
        ("13824 sites", res.discrepancy.len() == 13_824),
        ("coefficient counts", (m.n_eta, m.n_y, m.n_kappa, m.n_tau) == (16, 25, 4, 4)),
        ("finite summary", res.summary.params.iter().all(|p| p.mean.is_finite() && p.sd.is_finite())),
        ("theta in [0,1]", m.theta_mean.iter().all(|t| (0.0..=1.0).contains(t))),
        ("finite discrepancy", res.discrepancy.values().iter().all(|v| v.is_finite())),
        ("bundle reloads", bundle.summary == res.summary && bundle.metrics == res.metrics),
        ("spde per run", res.spde.as_ref().is_some_and(|s| s.runs.len() == 10)),
        ("under 30 min", minutes <= 30.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "{minutes:.1} min; means {} rmse {:.4}; failed checks {failed:?}",
            fmt(&m.theta_mean),
            m.rmse_calibrated.unwrap_or(f64::NAN)
        ),
    )
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("counts", coefficient_counts),
        ("example2-recovery", example2_recovery),
        ("example2-order-trend", example2_order_trend),
        ("example3-eof-contrast", example3_eof_contrast),
        ("example4-spde-benefit", example4_spde_benefit),
        ("gmrf-fidelity", gmrf_fidelity),
        ("oracle-equivalences", oracle_equivalences),
        ("explained-variance", explained_variance),
        ("smoke", smoke),
    ];
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let mut passed = 0;
    let mut total = 0;
    for (name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == name)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        total += 1;
        passed += usize::from(out.pass);
        println!(
            "{} {name} [{:.1}s]: {}",
            if out.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!("{passed} of {total} criteria passed");
    if passed < total && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
