use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uad_core::ocsvm::{default_gamma, fit_ocsvm, kernel_matrix, solve_dual, SolverConfig};

fn samples(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Euclidean projection onto {a : Σa = 1, 0 <= a <= c}, by bisection on the shift.
fn project_capped_simplex(v: &[f64], c: f64) -> Vec<f64> {
    let total = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).clamp(0.0, c)).collect()
}

fn oracle_objective(k: &[f64], n: usize, nu: f64) -> f64 {
    let c = 1.0 / (nu * n as f64);
    let mut a = vec![1.0 / n as f64; n];
    // step 1/L with L <= trace bound n (kernel entries <= 1)
    let step = 1.0 / n as f64;
    for _ in 0..20_000 {
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i * n + j] * a[j]).sum()).collect();
        let v: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x - step * gi).collect();
        a = project_capped_simplex(&v, c);
    }
    let mut obj = 0.0;
    for i in 0..n {
        for j in 0..n {
            obj += a[i] * k[i * n + j] * a[j];
        }
    }
    0.5 * obj
}

#[test]
fn dual_objective_matches_projected_gradient_oracle() {
    for (seed, nu) in [(1u64, 0.1), (2, 0.3), (3, 0.5)] {
        let s = samples(40, 3, seed);
        let gamma = default_gamma(&s).unwrap();
        let k = kernel_matrix(&s, gamma);
        let sol = solve_dual(&k, 40, nu, &SolverConfig { tol: 1e-9, ..Default::default() }).unwrap();
        let oracle = oracle_objective(&k, 40, nu);
        assert!(
            (sol.objective - oracle).abs() <= 1e-6 * oracle.abs().max(1e-12),
            "seed {seed}: smo {} vs oracle {oracle}",
            sol.objective
        );
        let c = 1.0 / (nu * 40.0);
        assert!((sol.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
    }
}

#[test]
fn nu_bounds_outliers_and_support_vectors() {
    let s = samples(500, 4, 11);
    let gamma = default_gamma(&s).unwrap();
    let cfg = SolverConfig::default();
    for nu in [0.03, 0.1, 0.25] {
        let m = fit_ocsvm(&s, nu, gamma, &cfg).unwrap();
        let n = s.len() as f64;
        let margin_errors = s.iter().filter(|z| m.decision(z) < -cfg.tol).count() as f64;
        let n_sv = m.alphas.len() as f64;
        assert!(margin_errors <= nu * n, "nu {nu}: {margin_errors} margin errors");
        assert!(n_sv >= nu * n, "nu {nu}: {n_sv} support vectors");
    }
}

#[test]
fn fraction_inside_tracks_nu_on_fresh_data() {
    let train = samples(500, 2, 21);
    let test = samples(4000, 2, 22);
    let nu = 0.1;
    let m = fit_ocsvm(&train, nu, default_gamma(&train).unwrap(), &SolverConfig::default()).unwrap();
    let outside = test.iter().filter(|z| m.decision(z) < 0.0).count() as f64 / test.len() as f64;
    assert!((outside - nu).abs() < 0.05, "outside fraction {outside}");
}
