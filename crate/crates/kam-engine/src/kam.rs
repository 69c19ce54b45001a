//! The KAM iteration: schedule, elementary step and the limit objects.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::error::KamError;
use crate::flow::{flow_time, integrate_flow, FlowMap};
use crate::hamiltonian::{jet_norm, NormalFormHam, Point, PolyHamiltonian, SamplePlan};
use crate::homological::{kappa_tilde_default, solve_nonlinear, Margins, Thresholds};
use crate::resonance::{melnikov_exclude, ParamDomain, SpectrumAt};
use crate::spaces::{mat_norm, norm_alpha, SiteLattice, C64};

/// Values of the parameter list at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub sigma_next: f64,
    pub mu_next: f64,
    pub n_k: u64,
    pub kappa: f64,
}

/// `(½ + 2^{−(k+1)})`.
pub fn ladder_factor(k: usize) -> f64 {
    0.5 + 0.5f64.powi(k as i32 + 1)
}

pub fn schedule(k: usize, eps: f64, sigma: f64, mu: f64) -> Result<Schedule, KamError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(KamError::BadEpsilon(eps));
    }
    let (s0, s1) = (ladder_factor(k) * sigma, ladder_factor(k + 1) * sigma);
    let raw = 10.0 / (s0 - s1) * (1.0 / eps).ln();
    if raw < 1.0 {
        return Err(KamError::Degenerate(raw.ceil() as u64, eps));
    }
    Ok(Schedule {
        sigma_next: s1,
        mu_next: ladder_factor(k + 1) * mu,
        n_k: raw.ceil() as u64,
        kappa: eps.powf(0.05),
    })
}

/// Desk-scale settings for the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct KamConfig {
    pub sigma: f64,
    pub mu: f64,
    pub k_max: usize,
    pub jet_tol: f64,
    pub quad_nodes: usize,
    /// Upper bound applied to `N_k`.
    pub n_cap: u32,
    /// Upper bound applied to `κ_k`.
    pub kappa_max: f64,
    /// Fixed `κ̃`; `None` uses the default exponent law.
    pub kappa_tilde: Option<f64>,
    pub delta: f64,
    pub beta: f64,
    pub plan: SamplePlan,
    /// Jet norms below this are treated as truncation noise.
    pub floor: f64,
    pub drift_budget: f64,
    pub flow_tol: f64,
}

impl Default for KamConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            mu: 0.1,
            k_max: 3,
            jet_tol: 0.0,
            quad_nodes: 5,
            n_cap: 8,
            kappa_max: 1e-5,
            kappa_tilde: Some(1e-5),
            delta: 0.2,
            beta: 0.5,
            plan: SamplePlan::default(),
            floor: 1e-13,
            drift_budget: 0.025,
            flow_tol: 1e-14,
        }
    }
}

/// Normal form at a parameter value, for domain pruning.
pub type SpectrumModel = Arc<dyn Fn(&[f64]) -> Option<NormalFormHam> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub sigma: f64,
    pub mu: f64,
    pub kappa: f64,
    pub n_k: u64,
    pub n_used: u32,
    pub eps: f64,
    pub xi: f64,
    pub eps_next: f64,
    pub wall_time: f64,
    pub phi_dist: f64,
    /// `log ε_{k+1} / log ε_k`.
    pub contraction: f64,
    pub residual: f64,
    /// `⟦S⟧` against `½ην²` required for the flow to stay in the domain.
    pub s_norm: f64,
    pub s_bound: f64,
    pub excluded: f64,
    pub discarded: f64,
}

#[derive(Clone)]
pub struct KamState {
    pub k: usize,
    pub lattice: SiteLattice,
    pub rho: Vec<f64>,
    pub h0: NormalFormHam,
    pub h: NormalFormHam,
    pub f: PolyHamiltonian,
    pub sigma: f64,
    pub mu: f64,
    pub kappa: f64,
    pub n_k: u64,
    pub eps: f64,
    pub xi: f64,
    pub transforms: Vec<FlowMap>,
    pub domain: ParamDomain,
    pub model: Option<SpectrumModel>,
    pub table: Vec<StepRecord>,
}

impl KamState {
    pub fn new(
        h: NormalFormHam,
        f: PolyHamiltonian,
        lattice: SiteLattice,
        rho: Vec<f64>,
        domain: ParamDomain,
        model: Option<SpectrumModel>,
        cfg: &KamConfig,
    ) -> Result<Self, KamError> {
        let eps = jet_norm(&f.jet(), &lattice, cfg.sigma, cfg.mu, &cfg.plan)?;
        let xi = jet_norm(&f, &lattice, cfg.sigma, cfg.mu, &cfg.plan)?;
        Ok(Self {
            k: 0,
            lattice,
            rho,
            h0: h.clone(),
            h,
            f,
            sigma: cfg.sigma,
            mu: cfg.mu,
            kappa: 0.0,
            n_k: 0,
            eps,
            xi,
            transforms: Vec::new(),
            domain,
            model,
            table: Vec::new(),
        })
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// `∫₀¹ (1−t) G∘Φ^t dt` where `G∘Φ^t = Σ tʲ/j! Lʲ G` and `L g = {g, S}`.
fn remainder_integral(
    g: &PolyHamiltonian,
    s: &PolyHamiltonian,
    nodes: usize,
    tol: f64,
) -> Result<PolyHamiltonian, KamError> {
    let quad = gauss_legendre(nodes);
    let mut out = PolyHamiltonian::zero(&g.layout);
    let mut term = g.clone();
    let scale = g.l1().max(f64::MIN_POSITIVE);
    let mut fact = 1.0;
    for j in 0..60 {
        let c: f64 = quad
            .iter()
            .map(|&(t, w)| w * (1.0 - t) * t.powi(j))
            .sum::<f64>()
            / fact;
        out.add_assign_scaled(&term, C64::new(c, 0.0));
        if term.is_empty() || c * term.l1() < tol * scale {
            break;
        }
        term = term.bracket(s)?;
        fact *= (j + 1) as f64;
    }
    out.discarded += term.discarded;
    Ok(out)
}

/// `sup ‖Φ(x) − x‖` over the plan's points, the ζ-part in `Y_α`.
fn displacement(
    phi: &FlowMap,
    lat: &SiteLattice,
    sigma: f64,
    mu: f64,
    plan: &SamplePlan,
) -> Result<f64, KamError> {
    let n = phi.layout().n;
    let mut worst = 0.0f64;
    for x in plan.points_for(lat, n, sigma, mu) {
        let y = integrate_flow(&phi.generator, &x, phi.t, phi.tol)?;
        let mut d = Point::origin(n, x.z.len());
        for a in 0..n {
            worst = worst
                .max((y.theta[a] - x.theta[a]).norm())
                .max((y.r[a] - x.r[a]).norm());
        }
        for (i, v) in d.z.iter_mut().enumerate() {
            *v = y.z[i] - x.z[i];
        }
        worst = worst.max(norm_alpha(lat, &d.seq(), plan.alpha));
    }
    Ok(worst)
}

/// A vanishing jet leaves everything but the index unchanged.
fn identity_step(mut state: KamState, cfg: &KamConfig, start: Instant) -> KamState {
    let k = state.k;
    let zero = PolyHamiltonian::zero(&state.f.layout);
    let phi = flow_time(&zero, 1.0, cfg.flow_tol, None).expect("t = 1 is valid");
    state.table.push(StepRecord {
        k,
        sigma: state.sigma,
        mu: state.mu,
        kappa: 0.0,
        n_k: 0,
        n_used: 0,
        eps: 0.0,
        xi: state.xi,
        eps_next: 0.0,
        wall_time: start.elapsed().as_secs_f64(),
        phi_dist: 0.0,
        contraction: f64::NAN,
        residual: 0.0,
        s_norm: 0.0,
        s_bound: 0.0,
        excluded: 1.0 - state.domain.measure_fraction(),
        discarded: state.f.discarded,
    });
    state.transforms.push(phi);
    state.sigma = ladder_factor(k + 1) * cfg.sigma;
    state.mu = ladder_factor(k + 1) * cfg.mu;
    state.k = k + 1;
    state
}

/// One Newton step: solve, transform, re-measure.
pub fn kam_step(state: KamState, cfg: &KamConfig) -> Result<KamState, KamError> {
    let start = Instant::now();
    if state.eps == 0.0 {
        return Ok(identity_step(state, cfg, start));
    }
    let KamState {
        k,
        lattice,
        rho,
        h0,
        h,
        f,
        eps,
        xi,
        mut transforms,
        mut domain,
        model,
        mut table,
        ..
    } = state;
    let sched = schedule(k, eps, cfg.sigma, cfg.mu)?;
    let (sigma, mu) = (ladder_factor(k) * cfg.sigma, ladder_factor(k) * cfg.mu);
    let n_used = sched.n_k.min(cfg.n_cap as u64) as u32;
    let kappa = sched.kappa.min(cfg.kappa_max);
    let kappa_tilde = cfg
        .kappa_tilde
        .unwrap_or_else(|| kappa_tilde_default(kappa, cfg.delta, cfg.beta));

    let mut excluded = 1.0 - domain.measure_fraction();
    if let Some(m) = &model {
        if let Some(h_ref) = m(&rho) {
            let reference = SpectrumAt::of(&h_ref, &lattice);
            let current = SpectrumAt::of(&h, &lattice);
            let lat = &lattice;
            let spectrum = |p: &[f64]| match m(p) {
                Some(base) => SpectrumAt::of(&base, lat).drifted(&reference, &current),
                // Outside the model's domain: an exact resonance.
                None => SpectrumAt {
                    omega: vec![0.0; current.omega.len()],
                    levels: current.levels.clone(),
                },
            };
            let ex = melnikov_exclude(
                &mut domain,
                &spectrum,
                kappa,
                kappa_tilde,
                n_used,
                Some(cfg.delta),
            )?;
            excluded = ex.excluded_fraction;
        }
        if domain.alive_count() == 0 {
            return Err(KamError::Exhausted);
        }
    }

    let thr = Thresholds {
        kappa,
        kappa_tilde,
        n_cut: n_used,
    };
    let margins = Margins {
        sigma,
        sigma_to: sched.sigma_next,
        mu,
        mu_to: sched.mu_next,
    };
    let sol = solve_nonlinear(&h, &lattice, &f, thr, margins)?;
    let s = sol.s.poly.clone();
    let layout = f.layout.clone();

    // (h + f)∘Φ with L g = {g, S}: Φ is the time-1 flow of −S.
    let phi = flow_time(&s.neg(), 1.0, cfg.flow_tol, None)?;
    let f_t = f.jet();
    let rest = f.sub(&f_t);
    let fs = f.bracket(&s)?;
    let h_poly = h.to_poly(&layout, &lattice);
    let mut hfs = h_poly.bracket(&s)?;
    hfs.add_assign_scaled(&fs, C64::new(1.0, 0.0));
    let g2 = hfs.bracket(&s)?;
    let integral = remainder_integral(&g2, &s, cfg.quad_nodes, cfg.flow_tol)?;
    let mut f_next = sol.r.poly.clone();
    f_next.add_assign_scaled(&rest, C64::new(1.0, 0.0));
    f_next.add_assign_scaled(&fs, C64::new(1.0, 0.0));
    // {f − f^T, S}^T from the bracket already at hand
    let mut rest_s = fs.jet();
    rest_s.add_assign_scaled(&f_t.bracket(&s)?.jet(), C64::new(-1.0, 0.0));
    f_next.add_assign_scaled(&rest_s, C64::new(-1.0, 0.0));
    f_next.add_assign_scaled(&integral, C64::new(1.0, 0.0));
    f_next.discarded =
        f.discarded + fs.discarded + hfs.discarded + g2.discarded + integral.discarded;
    f_next.prune(layout.prune);

    let mut h_next = h.clone();
    for (w, c) in h_next.omega.iter_mut().zip(&sol.h_hat.chi) {
        *w += c;
    }
    h_next.correction = h
        .correction
        .add(&sol.h_hat.k_hat)
        .map_err(crate::error::HamiltonianError::from)?;
    h_next.correction.normal_form = true;
    h_next.constant += sol.h_hat.constant;
    let norm = mat_norm(&lattice, &h_next.correction, cfg.beta, false);
    if norm > cfg.delta / 8.0 {
        return Err(crate::error::HamiltonianError::HypothesisB {
            norm,
            bound: cfg.delta / 8.0,
        }
        .into());
    }
    let drift = h_next
        .omega
        .iter()
        .zip(&h0.omega)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if drift >= cfg.drift_budget {
        return Err(KamError::Drift {
            drift,
            budget: cfg.drift_budget,
        });
    }

    let (s1, m1) = (sched.sigma_next, sched.mu_next);
    let eps_next = jet_norm(&f_next.jet(), &lattice, s1, m1, &cfg.plan)?;
    let xi_next = jet_norm(&f_next, &lattice, s1, m1, &cfg.plan)?;
    if eps_next > eps && eps_next > cfg.floor {
        return Err(KamError::NoContraction {
            step: k,
            prev: eps,
            next: eps_next,
        });
    }
    let phi_dist = displacement(&phi, &lattice, s1, m1, &cfg.plan)?;
    let s_norm = jet_norm(&s, &lattice, sigma, mu, &cfg.plan)?;
    let (eta, nu) = (sigma - s1, m1 / 8.0);
    table.push(StepRecord {
        k,
        sigma,
        mu,
        kappa,
        n_k: sched.n_k,
        n_used,
        eps,
        xi,
        eps_next,
        wall_time: start.elapsed().as_secs_f64(),
        phi_dist,
        contraction: eps_next.ln() / eps.ln(),
        residual: sol.residual,
        s_norm,
        s_bound: 0.5 * eta * nu * nu,
        excluded,
        discarded: f_next.discarded,
    });
    transforms.push(phi);
    Ok(KamState {
        k: k + 1,
        lattice,
        rho,
        h0,
        h: h_next,
        f: f_next,
        sigma: s1,
        mu: m1,
        kappa: sched.kappa,
        n_k: sched.n_k,
        eps: eps_next,
        xi: xi_next,
        transforms,
        domain,
        model,
        table,
    })
}

#[derive(Clone)]
pub struct KamResult {
    pub omega_tilde: Vec<f64>,
    pub a_tilde: crate::spaces::BlockMatrix,
    /// `Φ_0, Φ_1, …`; the composed map applies the last one first.
    pub transforms: Vec<FlowMap>,
    pub f_inf_jet_norm: f64,
    pub table: Vec<StepRecord>,
    pub omega_drift: f64,
    pub a_drift: f64,
    pub state: KamState,
}

impl KamResult {
    /// `Φ_0 ∘ Φ_1 ∘ … ∘ Φ_{K−1}` at `x`, by direct integration.
    pub fn apply(&self, x: &Point) -> Result<Point, KamError> {
        let mut y = x.clone();
        for phi in self.transforms.iter().rev() {
            y = integrate_flow(&phi.generator, &y, phi.t, phi.tol)?;
        }
        Ok(y)
    }
}

pub fn run(initial: KamState, cfg: &KamConfig) -> Result<KamResult, KamError> {
    let mut state = initial;
    while state.k < cfg.k_max && !(state.eps < cfg.jet_tol) {
        state = kam_step(state, cfg)?;
    }
    let omega_drift = state
        .h
        .omega
        .iter()
        .zip(&state.h0.omega)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let diff = state
        .h
        .a_matrix()
        .add(&state.h0.a_matrix().scale(-1.0))
        .map_err(crate::error::HamiltonianError::from)?;
    let a_drift = mat_norm(&state.lattice, &diff, cfg.beta, false);
    Ok(KamResult {
        omega_tilde: state.h.omega.clone(),
        a_tilde: state.h.a_matrix(),
        transforms: state.transforms.clone(),
        f_inf_jet_norm: state.eps,
        table: state.table.clone(),
        omega_drift,
        a_drift,
        state,
    })
}

/// Convergence table as CSV. Wall times are left out so that reruns are
/// byte-identical.
pub fn write_convergence<W: std::io::Write>(
    table: &[StepRecord],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "sigma",
        "mu",
        "kappa",
        "N",
        "N_used",
        "eps",
        "Xi",
        "eps_next",
        "phi_dist",
        "contraction",
        "residual",
        "s_norm",
        "s_bound",
        "excluded",
        "discarded",
    ])?;
    for r in table {
        w.write_record([
            r.k.to_string(),
            r.sigma.to_string(),
            r.mu.to_string(),
            format!("{:e}", r.kappa),
            r.n_k.to_string(),
            r.n_used.to_string(),
            format!("{:e}", r.eps),
            format!("{:e}", r.xi),
            format!("{:e}", r.eps_next),
            format!("{:e}", r.phi_dist),
            format!("{:.4}", r.contraction),
            format!("{:e}", r.residual),
            format!("{:e}", r.s_norm),
            format!("{:e}", r.s_bound),
            format!("{:.6}", r.excluded),
            format!("{:e}", r.discarded),
        ])?;
    }
    w.flush()?;
    Ok(())
}
