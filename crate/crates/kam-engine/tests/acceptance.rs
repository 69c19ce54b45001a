//! One pass/fail line per acceptance criterion. The run always finishes;
//! a red line is reported, not hidden, and the exit status stays zero so
//! the rest of the suite still reports.

mod common;

use std::time::Instant;

use kam_engine::cli::{exclusion_scan, execute, remainder_at, RunConfig};
use kam_engine::hamiltonian::{jet_norm, JetFunction, Point, PolyHamiltonian, SamplePlan, I, ZERO};
use kam_engine::homological::{solve_linear, solve_nonlinear, Margins, Thresholds};
use kam_engine::kam::schedule;
use kam_engine::resonance::{fit_slope, melnikov_exclude, ParamDomain, SpectrumAt};
use kam_engine::spaces::{
    mat_mul, mat_norm, mat_vec, norm_beta, norm_constants, outer, SiteLattice, C64,
};
use kam_engine::wave::{
    build_hamiltonian, pde_residual, reconstruct_solution, unperturbed, WaveConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_matrix, random_seq, Class};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, start: Instant, out: Result<Outcome, String>) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match out {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {id} [{title}]: {} | {detail} | {secs:.1} s",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn norm_algebra() -> Result<Outcome, String> {
    let beta = 0.5;
    let lat = SiteLattice::singletons(&[], 32);
    let c = norm_constants(beta, 32, 4000).max();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0001);
    // worst lhs / rhs per item
    let mut worst = [0.0f64; 6];
    for _ in 0..200 {
        let a = random_matrix(&mut rng, &lat, beta, Class::BetaPlus);
        let b = random_matrix(&mut rng, &lat, beta, Class::Beta);
        let z = random_seq(&mut rng, &lat, beta, Class::Beta);
        let zp = random_seq(&mut rng, &lat, beta, Class::BetaPlus);
        let yp = random_seq(&mut rng, &lat, beta, Class::BetaPlus);
        let ap = mat_norm(&lat, &a, beta, true);
        let bn = mat_norm(&lat, &b, beta, false);
        let ab = mat_norm(&lat, &mat_mul(&a, &b).map_err(err)?, beta, false);
        let ba = mat_norm(&lat, &mat_mul(&b, &a).map_err(err)?, beta, false);
        worst[0] = worst[0].max(ab.max(ba) / (c * ap * bn));
        let az = norm_beta(&lat, &mat_vec(&a, &z).map_err(err)?, beta, false);
        worst[1] = worst[1].max(az / (c * ap * norm_beta(&lat, &z, beta, false)));
        let bz = norm_beta(&lat, &mat_vec(&b, &zp).map_err(err)?, beta, false);
        worst[2] = worst[2].max(bz / (c * bn * norm_beta(&lat, &zp, beta, true)));
        let azp = norm_beta(&lat, &mat_vec(&a, &zp).map_err(err)?, beta, true);
        worst[3] = worst[3].max(azp / (c * ap * norm_beta(&lat, &zp, beta, true)));
        let xy = mat_norm(&lat, &outer(&z, &zp).map_err(err)?, beta, false);
        worst[4] = worst[4]
            .max(xy / (2.0 * norm_beta(&lat, &z, beta, false) * norm_beta(&lat, &zp, beta, false)));
        let xyp = mat_norm(&lat, &outer(&zp, &yp).map_err(err)?, beta, true);
        worst[5] = worst[5]
            .max(xyp / (2.0 * norm_beta(&lat, &zp, beta, true) * norm_beta(&lat, &yp, beta, true)));
    }
    let pass = worst.iter().all(|&w| w <= 1.0);
    let ratios: Vec<String> = worst.iter().map(|w| format!("{w:.3}")).collect();
    Ok(Outcome {
        pass,
        detail: format!("C = {c:.3}, worst lhs/rhs per item [{}]", ratios.join(", ")),
    })
}

fn jet_bound() -> Result<Outcome, String> {
    let plan = SamplePlan::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0002);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut cfg = WaveConfig::default();
        cfg.actions = (0..cfg.n())
            .map(|_| 0.02 + 0.06 * rng.random::<f64>())
            .collect();
        let rho: Vec<f64> = cfg
            .rho_lo
            .iter()
            .zip(&cfg.rho_hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect();
        let sys = build_hamiltonian(&cfg, &rho).map_err(err)?;
        let full = jet_norm(&sys.f, &sys.lattice, 1.0, 0.1, &plan).map_err(err)?;
        let jet = jet_norm(&sys.f.jet(), &sys.lattice, 1.0, 0.1, &plan).map_err(err)?;
        worst = worst.max(jet / full);
    }
    Ok(Outcome {
        pass: worst <= 3.0,
        detail: format!("max ⟦f^T⟧/⟦f⟧ = {worst:.4} (bound 3)"),
    })
}

/// `{f, g}` at `x` from the two gradients.
fn bracket_at(f: &PolyHamiltonian, g: &PolyHamiltonian, x: &Point) -> C64 {
    let (ft, fr, fz) = f.gradient(x);
    let (gt, gr, gz) = g.gradient(x);
    let mut s = ZERO;
    for a in 0..ft.len() {
        s += fr[a] * gt[a] - ft[a] * gr[a];
    }
    for p in 0..fz.len() / 2 {
        s += I * (fz[2 * p] * gz[2 * p + 1] - fz[2 * p + 1] * gz[2 * p]);
    }
    s
}

fn homological_residual() -> Result<Outcome, String> {
    let cfg = WaveConfig {
        epsilon: 1e-5,
        ..WaveConfig::default()
    };
    let sys = build_hamiltonian(&cfg, &cfg.rho_centre()).map_err(err)?;
    let thr = Thresholds {
        kappa: 1e-5,
        kappa_tilde: 1e-5,
        n_cut: 8,
    };
    let lin = solve_linear(
        &sys.h,
        &sys.lattice,
        &JetFunction { poly: sys.f.jet() },
        thr,
    )
    .map_err(err)?;
    let margins = Margins {
        sigma: 1.0,
        sigma_to: 0.75,
        mu: 0.1,
        mu_to: 0.075,
    };
    let sol = solve_nonlinear(&sys.h, &sys.lattice, &sys.f, thr, margins).map_err(err)?;
    let s = &sol.s.poly;
    let f_t = sys.f.jet();
    let rest_s = sys.f.sub(&f_t).bracket(s).map_err(err)?.jet();
    let h = sys.h.to_poly(&sys.f.layout, &sys.lattice);
    let plan = SamplePlan::default();
    let mut pointwise = 0.0f64;
    for x in plan
        .points_for(&sys.lattice, cfg.n(), 0.75, 0.075)
        .iter()
        .take(20)
    {
        let v = bracket_at(&h, s, x) + rest_s.eval(x) + f_t.eval(x)
            - sol.h_hat.poly.eval(x)
            - sol.r.poly.eval(x);
        pointwise = pointwise.max(v.norm());
    }
    Ok(Outcome {
        pass: lin.residual <= 1e-10 && pointwise <= 1e-9,
        detail: format!(
            "linear per-mode {:.2e} (≤ 1e-10), nonlinear pointwise {pointwise:.2e} (≤ 1e-9)",
            lin.residual
        ),
    })
}

fn remainder_decay() -> Result<Outcome, String> {
    let mut cfg = RunConfig::default();
    cfg.wave.epsilon = 1e-5;
    let ns = [4u32, 8, 16, 32];
    let mut norms = Vec::new();
    for &n in &ns {
        norms.push(remainder_at(&cfg, n).map_err(err)?);
    }
    let eps = norms[0].0;
    let sched = schedule(0, eps, cfg.schedule.sigma, cfg.schedule.mu).map_err(err)?;
    let target = -(cfg.schedule.sigma - sched.sigma_next) / 2.0;
    let listed: Vec<String> = ns
        .iter()
        .zip(&norms)
        .map(|(n, r)| format!("N={n}: {:.2e}", r.1))
        .collect();
    let positive = norms.iter().all(|r| r.1 > 0.0);
    let (pass, fit) = if positive {
        let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let y: Vec<f64> = norms.iter().map(|r| r.1.ln()).collect();
        let slope = fit_slope(&x, &y);
        (
            (slope - target).abs() <= 0.25 * target.abs(),
            format!("slope {slope:.4}"),
        )
    } else {
        (
            false,
            "⟦R⟧ vanishes identically past the jet's Fourier support, no slope to fit".to_string(),
        )
    };
    Ok(Outcome {
        pass,
        detail: format!("{}; target slope {target:.4}; {fit}", listed.join(", ")),
    })
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let slope = fit_slope(x, y);
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    1.0 - ss_res / ss_tot
}

fn exclusion_scaling() -> Result<Outcome, String> {
    let mut cfg = RunConfig::default();
    cfg.domain.counts = vec![24, 24];
    cfg.domain.n_cut = 6;
    let kappas = [1e-4, 2e-4, 4e-4];
    let mut fractions = Vec::new();
    let mut dead: Vec<Vec<bool>> = Vec::new();
    for &k in &kappas {
        let ex = exclusion_scan(&cfg, k, 6, None).map_err(err)?;
        fractions.push(ex.excluded_fraction);
        dead.push(ex.records.iter().map(|r| !r.alive).collect());
    }
    let monotone = fractions.windows(2).all(|w| w[0] <= w[1]);
    let nested = dead
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| !a || *b));
    // A second pass at the same κ removes nothing and revives nothing.
    let wave = &cfg.wave;
    let mut domain = ParamDomain::grid(&wave.rho_lo, &wave.rho_hi, &cfg.domain.counts, None);
    domain.alive = dead[0].iter().map(|d| !d).collect();
    let spectrum = |p: &[f64]| {
        let (_, lat, h) = unperturbed(wave, p).expect("inside the box");
        SpectrumAt::of(&h, &lat)
    };
    let again =
        melnikov_exclude(&mut domain, &spectrum, kappas[0], 1e-5, 6, Some(0.2)).map_err(err)?;
    let idempotent = again.newly_dead == 0 && (again.excluded_fraction - fractions[0]).abs() == 0.0;
    let r2 = r_squared(&kappas, &fractions);
    let listed: Vec<String> = fractions.iter().map(|f| format!("{f:.4}")).collect();
    Ok(Outcome {
        pass: monotone && nested && idempotent && r2 >= 0.9,
        detail: format!(
            "excluded [{}] on {} samples, R² = {r2:.4} (≥ 0.9), monotone {monotone}, nested {nested}, idempotent {idempotent}",
            listed.join(", "),
            dead[0].len()
        ),
    })
}

fn main() {
    let mut all = Vec::new();

    let t = Instant::now();
    let r = norm_algebra().map(|o| Outcome {
        pass: o.pass && t.elapsed().as_secs_f64() < 10.0,
        ..o
    });
    all.push(report(1, "norm algebra", t, r));

    let t = Instant::now();
    let r = jet_bound().map(|o| Outcome {
        pass: o.pass && t.elapsed().as_secs_f64() < 10.0,
        ..o
    });
    all.push(report(2, "jet bound", t, r));

    let t = Instant::now();
    let r = homological_residual().map(|o| Outcome {
        pass: o.pass && t.elapsed().as_secs_f64() < 60.0,
        ..o
    });
    all.push(report(3, "homological residual", t, r));

    let t = Instant::now();
    let r = remainder_decay().map(|o| Outcome {
        pass: o.pass && t.elapsed().as_secs_f64() < 120.0,
        ..o
    });
    all.push(report(4, "remainder decay", t, r));

    let t = Instant::now();
    let r = exclusion_scaling().map(|o| Outcome {
        pass: o.pass && t.elapsed().as_secs_f64() < 120.0,
        ..o
    });
    let eight = (t, r);

    // Criteria 5, 6, 7 and 9 share the default run.
    let t = Instant::now();
    let cfg = RunConfig::default();
    let run = execute(&cfg, false);
    let run_secs = t.elapsed().as_secs_f64();
    match run {
        Err(e) => {
            for (id, title) in [
                (5, "symplecticity"),
                (6, "contraction"),
                (7, "PDE verification"),
            ] {
                all.push(report(id, title, t, Err(e.to_string())));
            }
            all.push(report(8, "exclusion scaling", eight.0, eight.1));
            all.push(report(9, "frequency/matrix drift", t, Err(e.to_string())));
        }
        Ok(o) => {
            let checks = &o.report.checks;
            let pick = |prefix: &[&str]| -> Vec<&kam_engine::cli::Check> {
                checks
                    .iter()
                    .filter(|c| prefix.iter().any(|p| c.name.starts_with(p)))
                    .collect()
            };
            let describe = |cs: &[&kam_engine::cli::Check]| -> String {
                cs.iter()
                    .map(|c| {
                        format!(
                            "{} {:.2e} {} {:.2e}",
                            c.name, c.measured, c.relation, c.tolerance
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(", ")
            };

            let t5 = Instant::now();
            let sym = pick(&["symplectic_", "flow_theta_bound_", "flow_zeta_bound_"]);
            let ok = sym.len() == 3 * o.kam.transforms.len()
                && !sym.is_empty()
                && sym.iter().all(|c| c.pass);
            all.push(report(
                5,
                "symplecticity",
                t5,
                Ok(Outcome {
                    pass: ok,
                    detail: describe(&sym),
                }),
            ));

            let t6 = Instant::now();
            let con = pick(&["contraction_", "phi_distance_"]);
            let steps = o.kam.table.len();
            let ok = steps == 3
                && con.iter().any(|c| c.name.starts_with("contraction_"))
                && con.iter().all(|c| c.pass)
                && run_secs < 600.0;
            let detail = format!(
                "{steps} steps, run {run_secs:.1} s (< 600 s); {}",
                describe(&con)
            );
            all.push(report(
                6,
                "contraction",
                t6,
                Ok(Outcome { pass: ok, detail }),
            ));

            let t7 = Instant::now();
            let eps = cfg.wave.epsilon;
            let pde = (|| -> Result<Outcome, String> {
                let grid = cfg.checks.torus_grid;
                let alpha = cfg.schedule.alpha;
                let two = &o.kam.transforms[..2.min(o.kam.transforms.len())];
                let sol = reconstruct_solution(
                    two,
                    &o.kam.omega_tilde,
                    &o.system,
                    &cfg.wave,
                    grid,
                    alpha,
                    "two-step",
                )
                .map_err(err)?;
                let times: Vec<f64> = (0..cfg.checks.time_samples)
                    .map(|j| cfg.checks.time_step * j as f64)
                    .collect();
                let theta0 = vec![0.0; cfg.wave.n()];
                let res = pde_residual(&sol, &o.system, &cfg.wave, &theta0, &times).sup;
                let naive = o.naive_residual.sup;
                let pass =
                    naive > eps.powf(1.5) && res <= eps.powf(1.5) && sol.distance <= eps.powf(0.8);
                Ok(Outcome {
                    pass: pass && t7.elapsed().as_secs_f64() < 300.0,
                    detail: format!(
                        "naive residual {naive:.2e} ({:.2}·ε), after 2 steps {res:.2e} (≤ ε^1.5 = {:.2e}), H^α distance {:.2e} (≤ ε^0.8 = {:.2e})",
                        naive / eps,
                        eps.powf(1.5),
                        sol.distance,
                        eps.powf(0.8)
                    ),
                })
            })();
            all.push(report(7, "PDE verification", t7, pde));

            all.push(report(8, "exclusion scaling", eight.0, eight.1));

            let t9 = Instant::now();
            let dr = pick(&["omega_drift", "a_drift"]);
            let ok = dr.len() == 2 && dr.iter().all(|c| c.pass);
            all.push(report(
                9,
                "frequency/matrix drift",
                t9,
                Ok(Outcome {
                    pass: ok,
                    detail: describe(&dr),
                }),
            ));
        }
    }
    let passed = all.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria pass", all.len());
}
