mod common;

use common::random_jet;
use kam_engine::cli::{exclusion_scan, RunConfig};
use kam_engine::hamiltonian::{mode_l1, JetFunction, PolyHamiltonian};
use kam_engine::homological::{solve_angle_eq, solve_linear, Thresholds};
use kam_engine::wave::{build_hamiltonian, unperturbed, WaveConfig, WaveSystem};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn system() -> WaveSystem {
    let cfg = WaveConfig {
        epsilon: 0.0,
        ..WaveConfig::default()
    };
    build_hamiltonian(&cfg, &cfg.rho_centre()).unwrap()
}

fn count_modes(p: &PolyHamiltonian, keep: impl Fn(u32) -> bool) -> usize {
    p.terms().filter(|(t, _)| keep(mode_l1(&t.k))).count()
}

fn scan_config(counts: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.domain.counts = vec![counts; cfg.wave.n()];
    cfg.domain.kappa_tilde = Some(1e-5);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn linear_solution_respects_mode_support(seed in any::<u64>(), n_cut in 1u32..4) {
        let sys = system();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_jet(&mut rng, &sys.layout, 4, 1e-3);
        let thr = Thresholds { kappa: 1e-6, kappa_tilde: 1e-6, n_cut };
        let sol = solve_linear(&sys.h, &sys.lattice, &JetFunction { poly: f.clone() }, thr).unwrap();
        prop_assert!(sol.residual <= 1e-10 * f.max_coeff().max(1.0));
        // S lives on |k| ≤ N, the remainder strictly beyond, ĥ at k = 0.
        prop_assert_eq!(count_modes(&sol.s.poly, |k| k > n_cut), 0);
        prop_assert_eq!(count_modes(&sol.r.poly, |k| k <= n_cut), 0);
        prop_assert_eq!(count_modes(&sol.h_hat.poly, |k| k > 0), 0);
        prop_assert!(sol.r.poly.distance(&f.split_modes(n_cut).1) <= 1e-15);
        prop_assert!(sol.s.poly.reality_defect() <= 1e-14 * sol.s.poly.max_coeff().max(1.0));
        prop_assert!(sol.h_hat.k_hat.is_pi_projected(1e-14));
        prop_assert!(sol.h_hat.k_hat.is_block_diagonal(&sys.lattice, 0.0));
        prop_assert!(sol.report.iter().all(|e| e.value >= e.threshold));
    }

    #[test]
    fn angle_equation_inverts_the_derivative(seed in any::<u64>()) {
        use rand::Rng;
        let sys = system();
        let omega = &sys.h.omega;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = kam_engine::hamiltonian::Fourier::new();
        for k in kam_engine::hamiltonian::modes_up_to(omega.len(), 5).into_iter().filter(|k| mode_l1(k) > 0) {
            psi.insert(k, kam_engine::spaces::C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        }
        let (phi, rest) = solve_angle_eq(&psi, omega, 1e-6, 3).unwrap();
        for (k, c) in &psi {
            let l1 = mode_l1(k);
            let kw = kam_engine::hamiltonian::mode_dot(k, omega);
            let solved = phi.get(k).copied().unwrap_or_default();
            let left = rest.get(k).copied().unwrap_or_default();
            if l1 > 3 {
                prop_assert!(solved.norm() == 0.0);
                prop_assert!((left - c).norm() == 0.0);
            } else {
                prop_assert!((kam_engine::hamiltonian::I * kw * solved - c).norm() <= 1e-12 * c.norm().max(1.0));
                prop_assert!(left.norm() == 0.0);
            }
        }
    }
}

#[test]
fn exclusion_grows_with_kappa_and_cut() {
    let cfg = scan_config(8);
    let dead = |kappa: f64, n: u32| -> Vec<bool> {
        exclusion_scan(&cfg, kappa, n, None)
            .unwrap()
            .records
            .iter()
            .map(|r| !r.alive)
            .collect()
    };
    let subset = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(x, y)| !*x || *y);
    let base = dead(1e-4, 4);
    assert!(subset(&base, &dead(3e-4, 4)));
    assert!(subset(&base, &dead(1e-4, 6)));
    assert!(subset(&dead(1e-5, 4), &base));
}

#[test]
fn surviving_samples_admit_a_solve() {
    let cfg = scan_config(6);
    let (kappa, n_cut) = (1e-4, 4);
    let ex = exclusion_scan(&cfg, kappa, n_cut, None).unwrap();
    let alive: Vec<_> = ex.records.iter().filter(|r| r.alive).collect();
    assert!(!alive.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for rec in alive.iter().step_by(alive.len().div_ceil(6)) {
        let sys = build_hamiltonian(
            &WaveConfig {
                epsilon: 0.0,
                ..cfg.wave.clone()
            },
            &rec.rho,
        )
        .unwrap();
        let f = random_jet(&mut rng, &sys.layout, n_cut as i32, 1e-3);
        let thr = Thresholds {
            kappa,
            kappa_tilde: 1e-5,
            n_cut,
        };
        assert!(
            solve_linear(&sys.h, &sys.lattice, &JetFunction { poly: f }, thr).is_ok(),
            "ρ = {:?}",
            rec.rho
        );
    }
}

#[test]
fn dead_samples_hit_a_small_divisor() {
    let cfg = scan_config(6);
    let ex = exclusion_scan(&cfg, 4e-4, 4, None).unwrap();
    for rec in ex.records.iter().filter(|r| !r.alive) {
        assert!(rec.offending.is_some());
        assert!(unperturbed(&cfg.wave, &rec.rho).is_ok());
    }
}
