use basiscal_core::basis::{lat_lon_grid, BasisSet, BasisSpec, GridField, ModePolicy};
use basiscal_core::linalg::sparse::SparseCholesky;
use basiscal_core::spde::{
    estimate_spde_params, fem_matrices, grid_mesh, icosphere, matern_correlation, matern_variance, precision_matrix,
    sample_gmrf, Projection,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn empirical_covariance_matches_matern() {
    // spacing 0.04 on [-1.5, 2.5]²; correlation range √8/5 ≈ 0.57
    let n = 101;
    let (lo, hi) = (-1.5, 2.5);
    let h = (hi - lo) / (n - 1) as f64;
    let mesh = grid_mesh(lo, hi, n).unwrap();
    let fem = fem_matrices(&mesh).unwrap();
    let m = mesh.n_vertices();
    let kappa = 5.0;
    let tau = 1.0 / (kappa * (4.0 * std::f64::consts::PI).sqrt());
    assert!((matern_variance(kappa, tau) - 1.0).abs() < 1e-12);
    let q = precision_matrix(&fem, &vec![kappa; m], &vec![tau; m]).unwrap();
    let chol = SparseCholesky::new(&q).unwrap();

    // base points in the interior, at least 1.5 ranges from the boundary
    let id = |i: usize, j: usize| j * n + i;
    let bases: Vec<(usize, usize)> = (0..5).flat_map(|a| (0..5).map(move |b| (38 + 6 * a, 38 + 6 * b))).collect();
    let max_lag = (3.0 / kappa / h).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n_samples = 2000;
    let mut cross = vec![0.0; max_lag + 1];
    let mut var = 0.0;
    for _ in 0..n_samples {
        let x = sample_gmrf(&chol, &mut rng);
        for &(i, j) in &bases {
            let x0 = x[id(i, j)];
            var += x0 * x0;
            for (lag, c) in cross.iter_mut().enumerate() {
                // average the two axis directions
                *c += 0.5 * x0 * (x[id(i + lag, j)] + x[id(i, j + lag)]);
            }
        }
    }
    let var = var / (n_samples * bases.len()) as f64;
    let mut worst = 0.0f64;
    for (lag, c) in cross.iter().enumerate() {
        let emp = c / (n_samples * bases.len()) as f64 / var;
        let want = matern_correlation(lag as f64 * h, kappa);
        worst = worst.max((emp - want).abs());
    }
    assert!(worst < 0.05, "sup-norm correlation error {worst}");
}

fn simulate_sphere_field(kappa: f64, tau: f64, seed: u64) -> GridField {
    let mesh = icosphere(4).unwrap();
    let fem = fem_matrices(&mesh).unwrap();
    let m = mesh.n_vertices();
    let q = precision_matrix(&fem, &vec![kappa; m], &vec![tau; m]).unwrap();
    let chol = SparseCholesky::new(&q).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_gmrf(&chol, &mut rng);
    let sites = lat_lon_grid(20, 20);
    let a = Projection::new(&mesh, &sites).unwrap();
    let noise = Normal::new(0.0, 0.05).unwrap();
    let y: Vec<f64> = a.apply(&x).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
    GridField::new(sites, y).unwrap()
}

#[test]
fn stationary_parameters_are_recovered() {
    let (kappa0, tau0) = (5.0f64, 0.06f64);
    let y = simulate_sphere_field(kappa0, tau0, 9);
    assert_eq!(y.len(), 400);
    let mesh = icosphere(3).unwrap();
    let basis = BasisSet::new(BasisSpec::sh(0, ModePolicy::Full)).unwrap();
    let est = estimate_spde_params(&y, &mesh, &basis, &basis).unwrap();
    assert!(est.converged);
    // the order-0 harmonic is 1/√(4π)
    let scale = (4.0 * std::f64::consts::PI).sqrt();
    let (lk, lt) = (est.field.kappa_coeffs[0] / scale, est.field.tau_coeffs[0] / scale);
    assert!((lk - kappa0.ln()).abs() < 0.2 * kappa0.ln().abs(), "log kappa {lk} vs {}", kappa0.ln());
    assert!((lt - tau0.ln()).abs() < 0.2 * tau0.ln().abs(), "log tau {lt} vs {}", tau0.ln());
}

#[test]
fn global_scale_shifts_log_tau() {
    let y = simulate_sphere_field(4.0, 0.08, 3);
    let a = 3.0f64;
    let scaled = y.map_values(|v| a * v);
    let mesh = icosphere(3).unwrap();
    let basis = BasisSet::new(BasisSpec::sh(1, ModePolicy::Nonnegative)).unwrap();
    let e1 = estimate_spde_params(&y, &mesh, &basis, &basis).unwrap();
    let e2 = estimate_spde_params(&scaled, &mesh, &basis, &basis).unwrap();
    let scale = (4.0 * std::f64::consts::PI).sqrt();
    let shift = (e2.field.tau_coeffs[0] - e1.field.tau_coeffs[0]) / scale;
    assert!((shift + a.ln()).abs() < 0.05, "log tau shift {shift} vs {}", -a.ln());
    for (k1, k2) in e1.field.kappa_coeffs.iter().zip(&e2.field.kappa_coeffs) {
        assert!((k1 - k2).abs() < 0.05, "{k1} vs {k2}");
    }
    assert!((e2.field.noise_var / e1.field.noise_var / (a * a) - 1.0).abs() < 0.05);
}
