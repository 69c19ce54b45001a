//! Nonlinear wave equation `u_tt − u_xx + V⋆u + εg(x,u) = 0` on the circle.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::WaveError;
use crate::hamiltonian::{
    real_hessian, Layout, Mode, Mono, NormalFormHam, Point, PolyHamiltonian, I, MAX_TANGENTIAL,
    ZERO,
};
use crate::spaces::{mat_norm, norm_alpha, SiteLattice, BLOCK_TOL, C64};

/// One term `c(x) u^power` of the nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearTerm {
    pub power: usize,
    /// `(m, re, im)`: Fourier coefficients of `c(x) = Σ c_m e^{imx}`.
    pub coeffs: Vec<(i64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub tangential: Vec<i64>,
    pub actions: Vec<f64>,
    /// Fixed `V̂(a)` off the tangential set; missing sites are zero.
    pub potential: BTreeMap<i64, f64>,
    pub rho_lo: Vec<f64>,
    pub rho_hi: Vec<f64>,
    pub nonlinearity: Vec<NonlinearTerm>,
    pub epsilon: f64,
    pub m_x: usize,
    pub s_max: i64,
    pub k_theta: u32,
    pub cap_r: usize,
    pub cap_z: usize,
    pub prune: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            tangential: vec![1, 2],
            actions: vec![0.05, 0.05],
            potential: BTreeMap::from([(0, 0.5)]),
            rho_lo: vec![1.0, 1.0],
            rho_hi: vec![2.0, 2.0],
            nonlinearity: vec![NonlinearTerm {
                power: 3,
                coeffs: vec![(0, 4.0, 0.0)],
            }],
            epsilon: 1e-6,
            m_x: 64,
            s_max: 16,
            k_theta: 8,
            cap_r: 2,
            cap_z: 4,
            prune: 1e-21,
        }
    }
}

impl WaveConfig {
    pub fn n(&self) -> usize {
        self.tangential.len()
    }

    /// Highest power of `u` in `g`.
    pub fn degree(&self) -> usize {
        self.nonlinearity
            .iter()
            .filter(|t| !t.coeffs.is_empty())
            .map(|t| t.power)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), WaveError> {
        let n = self.n();
        if n == 0 || n > MAX_TANGENTIAL {
            return Err(WaveError::Invalid(format!("{n} tangential sites")));
        }
        if self.tangential.windows(2).any(|w| w[0] >= w[1]) {
            return Err(WaveError::Invalid(
                "tangential sites must be strictly increasing".into(),
            ));
        }
        if self.tangential.iter().any(|a| a.abs() > self.s_max) {
            return Err(WaveError::Invalid("tangential site beyond S_max".into()));
        }
        for (name, v) in [
            ("actions", &self.actions),
            ("rho_lo", &self.rho_lo),
            ("rho_hi", &self.rho_hi),
        ] {
            if v.len() != n {
                return Err(WaveError::Invalid(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
        }
        for (&a, &v) in self.tangential.iter().zip(&self.actions) {
            if !(v > 0.0) {
                return Err(WaveError::Action { a, value: v });
            }
        }
        if self.rho_lo.iter().zip(&self.rho_hi).any(|(l, h)| !(l <= h)) {
            return Err(WaveError::Invalid("empty parameter box".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(WaveError::Invalid(format!("epsilon = {}", self.epsilon)));
        }
        if self
            .nonlinearity
            .iter()
            .any(|t| t.power == 0 && !t.coeffs.is_empty())
        {
            return Err(WaveError::Invalid("g must vanish at u = 0".into()));
        }
        let deg = self.degree();
        if deg > 0 && self.cap_z < 2 {
            return Err(WaveError::Caps(deg + 1));
        }
        let amax = self.tangential.iter().map(|a| a.abs()).max().unwrap_or(0) as usize;
        let cmax = self
            .nonlinearity
            .iter()
            .flat_map(|t| t.coeffs.iter().map(|c| c.0.unsigned_abs() as usize))
            .max()
            .unwrap_or(0);
        let need = deg * amax + cmax;
        if self.m_x < 2 * need + 1 {
            return Err(WaveError::Grid {
                have: self.m_x,
                need,
            });
        }
        // Positivity over the whole box; extremes suffice since ω is monotone.
        for (a, &lo) in self.tangential.iter().zip(&self.rho_lo) {
            let value = (a * a) as f64 + lo;
            if !(value > 0.0) {
                return Err(WaveError::NonPositive { a: *a, value });
            }
        }
        for s in -self.s_max..=self.s_max {
            if !self.tangential.contains(&s) {
                let value = (s * s) as f64 + self.vhat(s);
                if !(value > 0.0) {
                    return Err(WaveError::NonPositive { a: s, value });
                }
            }
        }
        Ok(())
    }

    pub fn vhat(&self, s: i64) -> f64 {
        self.potential.get(&s).copied().unwrap_or(0.0)
    }

    pub fn rho_centre(&self) -> Vec<f64> {
        self.rho_lo
            .iter()
            .zip(&self.rho_hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }
}

/// Frequencies at a parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct Frequencies {
    pub omega: Vec<f64>,
    /// Diagonal `∂ω_a/∂ρ_a`.
    pub domega: Vec<f64>,
    /// `(s, λ_s)` over the normal sites in lattice order.
    pub lambdas: Vec<(i64, f64)>,
}

pub fn frequencies(cfg: &WaveConfig, rho: &[f64]) -> Result<Frequencies, WaveError> {
    if rho.len() != cfg.n() {
        return Err(WaveError::Invalid(format!("ρ has {} entries", rho.len())));
    }
    let mut omega = Vec::with_capacity(rho.len());
    let mut domega = Vec::with_capacity(rho.len());
    for (&a, &p) in cfg.tangential.iter().zip(rho) {
        let value = (a * a) as f64 + p;
        if !(value > 0.0) {
            return Err(WaveError::NonPositive { a, value });
        }
        let w = value.sqrt();
        omega.push(w);
        domega.push(0.5 / w);
    }
    let mut lambdas = Vec::new();
    for s in -cfg.s_max..=cfg.s_max {
        if cfg.tangential.contains(&s) {
            continue;
        }
        let value = (s * s) as f64 + cfg.vhat(s);
        if !(value > 0.0) {
            return Err(WaveError::NonPositive { a: s, value });
        }
        lambdas.push((s, value.sqrt()));
    }
    Ok(Frequencies {
        omega,
        domega,
        lambdas,
    })
}

/// Assembled wave Hamiltonian `h + εf` at one parameter value.
#[derive(Clone, Debug)]
pub struct WaveSystem {
    pub rho: Vec<f64>,
    pub freq: Frequencies,
    pub lattice: SiteLattice,
    pub layout: Layout,
    pub h: NormalFormHam,
    /// The perturbation, already multiplied by ε.
    pub f: PolyHamiltonian,
}

/// Lattice and normal form only; cheap enough to call per parameter sample.
pub fn unperturbed(
    cfg: &WaveConfig,
    rho: &[f64],
) -> Result<(Frequencies, SiteLattice, NormalFormHam), WaveError> {
    let freq = frequencies(cfg, rho)?;
    let table: BTreeMap<i64, f64> = freq.lambdas.iter().copied().collect();
    for (i, &(s, l)) in freq.lambdas.iter().enumerate() {
        for &(s2, l2) in &freq.lambdas[i + 1..] {
            if s2 != -s && (l - l2).abs() <= BLOCK_TOL {
                return Err(WaveError::Degenerate { s, s2 });
            }
        }
    }
    let lattice = SiteLattice::new(&cfg.tangential, cfg.s_max, |s| table[&s], 2)?;
    let mut h = NormalFormHam::new(
        freq.omega.clone(),
        freq.lambdas.iter().map(|p| p.1).collect(),
    );
    let n = cfg.n();
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        d[a][a] = freq.domega[a];
    }
    h.domega = Some(d);
    Ok((freq, lattice, h))
}

type Modal = BTreeMap<i64, PolyHamiltonian>;

fn unit_mode(a: usize, sign: i8) -> Mode {
    let mut k = [0i8; MAX_TANGENTIAL];
    k[a] = sign;
    k
}

/// `√(I + r)` to r-degree `cap` around `r = 0`.
fn sqrt_series(i0: f64, cap: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cap + 1);
    let mut binom = 1.0;
    for j in 0..=cap {
        out.push(binom * i0.powf(0.5 - j as f64));
        binom *= (0.5 - j as f64) / (j as f64 + 1.0);
    }
    out
}

/// Coefficients `w_m` of `u = Σ w_m e^{imx}` as polynomials in `(θ, r, ζ)`.
fn modal_u(cfg: &WaveConfig, freq: &Frequencies, layout: &Layout) -> Modal {
    let norm = (2.0 * PI).sqrt().recip();
    let mut w: Modal = BTreeMap::new();
    let mut push = |m: i64, mono: Mono, k: Mode, c: f64| {
        w.entry(m)
            .or_insert_with(|| PolyHamiltonian::zero(layout))
            .add_term(mono, k, C64::new(c, 0.0));
    };
    for (a, &site) in cfg.tangential.iter().enumerate() {
        let scale = norm / (2.0 * freq.omega[a]).sqrt();
        for (j, c) in sqrt_series(cfg.actions[a], layout.cap_r)
            .into_iter()
            .enumerate()
        {
            let mut r = [0u8; MAX_TANGENTIAL];
            r[a] = j as u8;
            let mono = Mono::from_parts(&r, &[]);
            push(site, mono, unit_mode(a, -1), c * scale);
            push(-site, mono, unit_mode(a, 1), c * scale);
        }
    }
    for (i, &(s, l)) in freq.lambdas.iter().enumerate() {
        let scale = norm / (2.0 * l).sqrt();
        push(
            s,
            Mono::from_parts(&[], &[2 * i]),
            [0; MAX_TANGENTIAL],
            scale,
        );
        push(
            -s,
            Mono::from_parts(&[], &[2 * i + 1]),
            [0; MAX_TANGENTIAL],
            scale,
        );
    }
    w
}

fn convolve(a: &Modal, b: &Modal) -> Result<Modal, WaveError> {
    let mut out: Modal = BTreeMap::new();
    for (ma, pa) in a {
        for (mb, pb) in b {
            let prod = pa.mul(pb)?;
            if prod.is_empty() {
                continue;
            }
            match out.get_mut(&(ma + mb)) {
                Some(acc) => acc.add_assign_scaled(&prod, C64::new(1.0, 0.0)),
                None => {
                    out.insert(ma + mb, prod);
                }
            }
        }
    }
    Ok(out)
}

pub fn build_hamiltonian(cfg: &WaveConfig, rho: &[f64]) -> Result<WaveSystem, WaveError> {
    cfg.validate()?;
    let (freq, lattice, h) = unperturbed(cfg, rho)?;
    let mut layout =
        Layout::new(cfg.n(), lattice.len(), cfg.k_theta)?.with_caps(cfg.cap_r, cfg.cap_z)?;
    layout.prune = cfg.prune;
    let mut f = PolyHamiltonian::zero(&layout);
    let deg = cfg.degree();
    if deg > 0 && cfg.epsilon > 0.0 {
        let u = modal_u(cfg, &freq, &layout);
        // powers[p] holds u^{p}; the top power is only needed at the modes of c(x)
        let mut powers: Vec<Modal> = vec![BTreeMap::new(), u.clone()];
        for _ in 2..=deg {
            let next = convolve(powers.last().expect("nonempty"), &u)?;
            powers.push(next);
        }
        // ∫ c(x) u^{p+1}/(p+1) dx = 2π Σ_j c_j [u^{p+1}]_{−j} / (p+1)
        for t in &cfg.nonlinearity {
            for &(j, re, im) in &t.coeffs {
                let c = C64::new(re, im) * (2.0 * PI * cfg.epsilon / (t.power + 1) as f64);
                for (m, p) in &powers[t.power] {
                    if let Some(q) = u.get(&(-j - m)) {
                        let prod = p.mul(q)?;
                        f.discarded += prod.discarded * c.norm();
                        f.add_assign_scaled(&prod, c);
                    }
                }
            }
        }
        f.prune(cfg.prune);
    }
    Ok(WaveSystem {
        rho: rho.to_vec(),
        freq,
        lattice,
        layout,
        h,
        f,
    })
}

/// `u(x)` on a uniform grid from coefficients of `e^{imx}`.
pub fn synthesize(coeffs: &BTreeMap<i64, C64>, m_x: usize) -> Vec<C64> {
    (0..m_x)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / m_x as f64;
            coeffs
                .iter()
                .map(|(&m, &c)| c * (I * (m as f64) * x).exp())
                .sum()
        })
        .collect()
}

/// Coefficient of `e^{imx}` from grid values.
pub fn analyse(values: &[C64], m: i64) -> C64 {
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(j, &v)| v * (-I * (m as f64) * 2.0 * PI * j as f64 / n).exp())
        .sum::<C64>()
        / n
}

/// `e^{imx}` coefficients of `u` at a phase-space point (real convention for ζ not required).
pub fn u_coefficients(sys: &WaveSystem, cfg: &WaveConfig, x: &Point) -> BTreeMap<i64, C64> {
    let norm = (2.0 * PI).sqrt().recip();
    let mut out: BTreeMap<i64, C64> = BTreeMap::new();
    for (a, &site) in cfg.tangential.iter().enumerate() {
        let amp = (cfg.actions[a] + x.r[a]).sqrt() * norm / (2.0 * sys.freq.omega[a]).sqrt();
        *out.entry(site).or_insert(ZERO) += amp * (-I * x.theta[a]).exp();
        *out.entry(-site).or_insert(ZERO) += amp * (I * x.theta[a]).exp();
    }
    for (i, &(s, l)) in sys.freq.lambdas.iter().enumerate() {
        let scale = norm / (2.0 * l).sqrt();
        *out.entry(s).or_insert(ZERO) += x.z[2 * i] * scale;
        *out.entry(-s).or_insert(ZERO) += x.z[2 * i + 1] * scale;
    }
    out
}

/// `Σ_p c_p(x) u^p` and its `u`-derivatives on the grid.
pub fn nonlinearity_on_grid(cfg: &WaveConfig, u: &[C64], order: usize) -> Vec<C64> {
    let m_x = u.len();
    let mut out = vec![ZERO; m_x];
    for t in &cfg.nonlinearity {
        if t.power < order {
            continue;
        }
        let mut fall = 1.0;
        for q in 0..order {
            fall *= (t.power - q) as f64;
        }
        let c: BTreeMap<i64, C64> = t
            .coeffs
            .iter()
            .map(|&(m, re, im)| (m, C64::new(re, im)))
            .collect();
        let cx = synthesize(&c, m_x);
        for j in 0..m_x {
            out[j] += cx[j] * fall * u[j].powu((t.power - order) as u32);
        }
    }
    out
}

/// `∫ G(x, u) dx` by quadrature.
pub fn potential_energy(cfg: &WaveConfig, u: &[C64]) -> C64 {
    let m_x = u.len();
    let mut total = ZERO;
    for t in &cfg.nonlinearity {
        let c: BTreeMap<i64, C64> = t
            .coeffs
            .iter()
            .map(|&(m, re, im)| (m, C64::new(re, im)))
            .collect();
        let cx = synthesize(&c, m_x);
        for j in 0..m_x {
            total += cx[j] * u[j].powu((t.power + 1) as u32) / (t.power + 1) as f64;
        }
    }
    total * 2.0 * PI / m_x as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    /// `sup_θ |∇²_ζ f|_{1/2}` over the sampled torus angles.
    pub hessian_beta: f64,
    /// Largest deviation between the polynomial Hessian and the Fourier-integral formula.
    pub hessian_formula_dev: f64,
    /// `sup_θ ‖∇_ζ f‖_α`.
    pub gradient_alpha: f64,
    /// `ε sup_{θ, m} |(∂²_u G)^(m)|` in the `φ_m` normalisation.
    pub d2g_hat_sup: f64,
}

pub fn verify_regularity(
    sys: &WaveSystem,
    cfg: &WaveConfig,
    thetas: &[Vec<f64>],
    alpha: f64,
) -> RegularityReport {
    let nvar = sys.layout.nvar;
    let momentum = |v: usize| {
        let s = sys.freq.lambdas[v / 2].0;
        if v.is_multiple_of(2) {
            s
        } else {
            -s
        }
    };
    let mut rep = RegularityReport {
        hessian_beta: 0.0,
        hessian_formula_dev: 0.0,
        gradient_alpha: 0.0,
        d2g_hat_sup: 0.0,
    };
    for th in thetas {
        let mut x = Point::origin(cfg.n(), nvar);
        x.theta = th.iter().map(|&t| C64::new(t, 0.0)).collect();
        let hz = sys.f.hessian_z(&x);
        rep.hessian_beta =
            rep.hessian_beta
                .max(mat_norm(&sys.lattice, &real_hessian(&hz), 0.5, false));
        let (_, _, gz) = sys.f.gradient(&x);
        rep.gradient_alpha = rep.gradient_alpha.max(norm_alpha(
            &sys.lattice,
            &crate::hamiltonian::real_gradient(&gz),
            alpha,
        ));

        let u = synthesize(&u_coefficients(sys, cfg, &x), cfg.m_x);
        let d2 = nonlinearity_on_grid(cfg, &u, 1);
        let half = (cfg.m_x / 2) as i64;
        let dhat: BTreeMap<i64, C64> = (-half + 1..half).map(|m| (m, analyse(&d2, m))).collect();
        for c in dhat.values() {
            // (∂²_uG)^(m) against orthonormal φ_m carries √(2π).
            rep.d2g_hat_sup = rep
                .d2g_hat_sup
                .max(cfg.epsilon * c.norm() * (2.0 * PI).sqrt());
        }
        for v in 0..nvar {
            for w in 0..nvar {
                let m = -(momentum(v) + momentum(w));
                let integral = dhat.get(&m).copied().unwrap_or(ZERO);
                let lv = sys.freq.lambdas[v / 2].1;
                let lw = sys.freq.lambdas[w / 2].1;
                let formula = integral * cfg.epsilon / (2.0 * (lv * lw).sqrt());
                rep.hessian_formula_dev = rep.hessian_formula_dev.max((formula - hz[v][w]).norm());
            }
        }
    }
    rep
}

/// `u(θ, x) = Σ û(k, m) e^{ik·θ} e^{imx}` on an invariant torus.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusSolution {
    pub u_hat: BTreeMap<(Vec<i32>, i64), C64>,
    pub omega_prime: Vec<f64>,
    pub run_id: String,
    /// Angle samples per axis used for the transform.
    pub grid: usize,
    /// `sup_θ ‖u(θ,·) − u_{I,V}(θ,·)‖_{H^α}` on the sample grid.
    pub distance: f64,
    /// Largest `|Im u|` over the sample grid and `M_x` points.
    pub imag_defect: f64,
}

fn theta_grid(n: usize, grid: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..grid).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

/// `Σ_m |c_m|² ⟨m⟩^{2α}` with `c_m` the `e^{imx}` coefficients.
pub fn sobolev_norm(c: &BTreeMap<i64, C64>, alpha: f64) -> f64 {
    c.iter()
        .map(|(&m, v)| v.norm_sqr() * (m.unsigned_abs().max(1) as f64).powf(2.0 * alpha))
        .sum::<f64>()
        .sqrt()
}

/// Pushes `{r = 0, ζ = 0}` through `Φ_0 ∘ … ∘ Φ_{K−1}` and Fourier-analyses
/// the resulting `u` on a uniform angle grid.
pub fn reconstruct_solution(
    transforms: &[crate::flow::FlowMap],
    omega_prime: &[f64],
    sys: &WaveSystem,
    cfg: &WaveConfig,
    grid: usize,
    alpha: f64,
    run_id: &str,
) -> Result<TorusSolution, WaveError> {
    let n = cfg.n();
    let nodes = theta_grid(n, grid);
    let step = 2.0 * PI / grid as f64;
    let mut samples: Vec<(Vec<f64>, BTreeMap<i64, C64>)> = Vec::with_capacity(nodes.len());
    let mut distance = 0.0f64;
    let mut imag_defect = 0.0f64;
    for idx in &nodes {
        let theta: Vec<f64> = idx.iter().map(|&j| j as f64 * step).collect();
        let mut x = Point::origin(n, sys.layout.nvar);
        x.theta = theta.iter().map(|&t| C64::new(t, 0.0)).collect();
        let base = u_coefficients(sys, cfg, &x);
        let mut y = x.clone();
        for phi in transforms.iter().rev() {
            y = crate::flow::integrate_flow(&phi.generator, &y, phi.t, phi.tol)
                .map_err(crate::error::KamError::from)?;
        }
        let c = u_coefficients(sys, cfg, &y);
        let diff: BTreeMap<i64, C64> = c
            .iter()
            .map(|(&m, &v)| (m, v - base.get(&m).copied().unwrap_or(ZERO)))
            .collect();
        distance = distance.max(sobolev_norm(&diff, alpha));
        let ux = synthesize(&c, cfg.m_x);
        imag_defect = ux.iter().map(|v| v.im.abs()).fold(imag_defect, f64::max);
        samples.push((theta, c));
    }
    let half = (grid / 2) as i32;
    let kcut = half - 1;
    let mut u_hat = BTreeMap::new();
    let modes: Vec<Vec<i32>> = theta_grid(n, (2 * kcut + 1) as usize)
        .into_iter()
        .map(|v| v.into_iter().map(|j| j as i32 - kcut).collect())
        .collect();
    let norm = 1.0 / nodes.len() as f64;
    let sites: Vec<i64> = samples
        .first()
        .map(|s| s.1.keys().copied().collect())
        .unwrap_or_default();
    for k in &modes {
        let phases: Vec<C64> = samples
            .iter()
            .map(|(th, _)| (-I * k.iter().zip(th).map(|(&a, &b)| a as f64 * b).sum::<f64>()).exp())
            .collect();
        for &m in &sites {
            let v: C64 = samples
                .iter()
                .zip(&phases)
                .map(|((_, c), p)| c[&m] * p)
                .sum::<C64>()
                * norm;
            if v.norm() > 1e-300 {
                u_hat.insert((k.clone(), m), v);
            }
        }
    }
    Ok(TorusSolution {
        u_hat,
        omega_prime: omega_prime.to_vec(),
        run_id: run_id.to_string(),
        grid,
        distance,
        imag_defect,
    })
}

/// Discrete convolution of `e^{imx}` coefficient maps.
fn conv(a: &BTreeMap<i64, C64>, b: &BTreeMap<i64, C64>) -> BTreeMap<i64, C64> {
    let mut out = BTreeMap::new();
    for (&ma, &va) in a {
        for (&mb, &vb) in b {
            *out.entry(ma + mb).or_insert(ZERO) += va * vb;
        }
    }
    out
}

fn coeff_map(t: &NonlinearTerm) -> BTreeMap<i64, C64> {
    t.coeffs
        .iter()
        .map(|&(m, re, im)| (m, C64::new(re, im)))
        .collect()
}

/// `Σ_p c_p u^p` and `Σ_p p c_p u^{p−1}` as coefficient maps.
fn g_and_dg(cfg: &WaveConfig, u: &BTreeMap<i64, C64>) -> (BTreeMap<i64, C64>, BTreeMap<i64, C64>) {
    let deg = cfg.degree();
    let mut powers = vec![BTreeMap::from([(0i64, C64::new(1.0, 0.0))])];
    for p in 1..=deg {
        let next = conv(&powers[p - 1], u);
        powers.push(next);
    }
    let mut g = BTreeMap::new();
    let mut dg = BTreeMap::new();
    for t in &cfg.nonlinearity {
        let c = coeff_map(t);
        for (m, v) in conv(&c, &powers[t.power]) {
            *g.entry(m).or_insert(ZERO) += v;
        }
        if t.power >= 1 {
            for (m, v) in conv(&c, &powers[t.power - 1]) {
                *dg.entry(m).or_insert(ZERO) += v * t.power as f64;
            }
        }
    }
    (g, dg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub t: Vec<f64>,
    /// `‖res(t, ·)‖_{L²}` per time.
    pub l2: Vec<f64>,
    /// `sup_x |res(t, x)|` on the `M_x` grid per time.
    pub sup_x: Vec<f64>,
    pub sup: f64,
}

/// Residual of `u(θ₀ + tω′, x)` in the wave equation. Per mode,
/// `c̈ + i(λ_m − λ_{−m})ċ + λ_mλ_{−m}c + ε[(λ_{−m}/2λ_m + λ_m/2λ_{−m})ĝ_m − i(1/2λ_{−m} − 1/2λ_m)(g′(u)u_t)^_m]`,
/// which reduces to `u_tt + Λ²u + εg` when `λ_m = λ_{−m}`.
pub fn pde_residual(
    sol: &TorusSolution,
    sys: &WaveSystem,
    cfg: &WaveConfig,
    theta0: &[f64],
    t_grid: &[f64],
) -> ResidualReport {
    let lam = |m: i64| -> f64 {
        match cfg.tangential.iter().position(|&a| a == m) {
            Some(a) => (((m * m) as f64) + sys.rho[a]).sqrt(),
            None => (((m * m) as f64) + cfg.vhat(m)).sqrt(),
        }
    };
    let eps = cfg.epsilon;
    let mut rep = ResidualReport {
        t: t_grid.to_vec(),
        l2: Vec::new(),
        sup_x: Vec::new(),
        sup: 0.0,
    };
    for &t in t_grid {
        let theta: Vec<f64> = theta0
            .iter()
            .zip(&sol.omega_prime)
            .map(|(a, w)| a + t * w)
            .collect();
        let mut c = BTreeMap::new();
        let mut ct = BTreeMap::new();
        let mut ctt = BTreeMap::new();
        for ((k, m), &v) in &sol.u_hat {
            let kw: f64 = k
                .iter()
                .zip(&sol.omega_prime)
                .map(|(&a, w)| a as f64 * w)
                .sum();
            let kt: f64 = k.iter().zip(&theta).map(|(&a, th)| a as f64 * th).sum();
            let e = v * (I * kt).exp();
            *c.entry(*m).or_insert(ZERO) += e;
            *ct.entry(*m).or_insert(ZERO) += e * I * kw;
            *ctt.entry(*m).or_insert(ZERO) += -e * kw * kw;
        }
        let (g, dg) = g_and_dg(cfg, &c);
        let gdot = conv(&dg, &ct);
        let mut modes: std::collections::BTreeSet<i64> = c.keys().copied().collect();
        modes.extend(g.keys().copied());
        modes.extend(gdot.keys().copied());
        let mut res = BTreeMap::new();
        for m in modes {
            let (lp, lm) = (lam(m), lam(-m));
            let get = |mp: &BTreeMap<i64, C64>| mp.get(&m).copied().unwrap_or(ZERO);
            let lin = get(&ctt) + I * (lp - lm) * get(&ct) + lp * lm * get(&c);
            let force = (lm / (2.0 * lp) + lp / (2.0 * lm)) * get(&g)
                - I * (0.5 / lm - 0.5 / lp) * get(&gdot);
            res.insert(m, lin + eps * force);
        }
        let l2 = (2.0 * PI * res.values().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();
        let sup_x = synthesize(&res, cfg.m_x)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        rep.sup = rep.sup.max(sup_x);
        rep.l2.push(l2);
        rep.sup_x.push(sup_x);
    }
    rep
}
