//! Homological equation `{h, S} + f^T = ĥ + R`.
//!
//! With `h = ω·r + ⟨ξ, Qη⟩` every component equation decouples per Fourier
//! mode and per block (pair). In the eigenbasis `Q_{[s]} = U Λ U*`:
//!
//! * angle and action parts: `i k·ω Ŝ = −f̂`;
//! * `ξ`-linear: `i(k·ω − Q) Ŝ = −f̂`, `η`-linear: `i(k·ω + Qᵀ) Ŝ = −f̂`;
//! * `ξξ`, `ηη`: divisors `k·ω ∓ (α_l + α_m)`;
//! * `ξη`: divisor `k·ω − α_l + α_m`, with the `k = 0` same-block part
//!   moved into the normal-form correction `K̂`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{DivisorKind, HomologicalError};
use crate::hamiltonian::{
    hermitian_eigen, mode_dot, mode_l1, q_to_real_block, Fourier, JetFunction, Layout, Mode, Mono,
    NormalFormHam, PolyHamiltonian, I, MAX_TANGENTIAL, ZERO,
};
use crate::spaces::{BlockMatrix, SiteLattice, C64};

/// Small-divisor thresholds and the Fourier cut.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub n_cut: u32,
}

/// `κ̃ = δ (κ/δ)^{6β/(9+2β)}`.
pub fn kappa_tilde_default(kappa: f64, delta: f64, beta: f64) -> f64 {
    delta * (kappa / delta).powf(6.0 * beta / (9.0 + 2.0 * beta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivisorEntry {
    pub k: Vec<i32>,
    pub s: Option<i64>,
    pub s2: Option<i64>,
    pub kind: DivisorKind,
    pub value: f64,
    pub threshold: f64,
}

/// `ĥ = C + χ·r + ⟨ξ, K̂ η⟩`.
#[derive(Clone, Debug)]
pub struct NormalCorrection {
    pub constant: f64,
    pub chi: Vec<f64>,
    /// Real 2×2-block form of `K̂`, Π-projected and block-diagonal.
    pub k_hat: BlockMatrix,
    pub poly: PolyHamiltonian,
}

#[derive(Clone, Debug)]
pub struct HomologicalSolution {
    pub s: JetFunction,
    pub h_hat: NormalCorrection,
    pub r: JetFunction,
    pub report: Vec<DivisorEntry>,
    /// Largest coefficient of the residual identity.
    pub residual: f64,
    /// `(σ_j, μ_j)` stages used by the nonlinear cascade.
    pub ladder: Vec<(f64, f64)>,
}

fn kvec(k: &Mode, n: usize) -> Vec<i32> {
    k[..n].iter().map(|&x| x as i32).collect()
}

fn check(
    report: &mut Vec<DivisorEntry>,
    kind: DivisorKind,
    k: &Mode,
    n: usize,
    s: Option<i64>,
    s2: Option<i64>,
    value: f64,
    threshold: f64,
) -> Result<(), HomologicalError> {
    let entry = DivisorEntry {
        k: kvec(k, n),
        s,
        s2,
        kind,
        value,
        threshold,
    };
    if value < threshold {
        return Err(HomologicalError::Resonance {
            kind,
            k: entry.k,
            s,
            s2,
            value,
            threshold,
        });
    }
    report.push(entry);
    Ok(())
}

/// Solves `∇_θ φ·ω = ψ` for `0 < |k|₁ ≤ N`; modes beyond `N` go to the
/// remainder.
pub fn solve_angle_eq(
    psi: &Fourier,
    omega: &[f64],
    kappa: f64,
    n_cut: u32,
) -> Result<(Fourier, Fourier), HomologicalError> {
    let mut report = Vec::new();
    angle_with_report(psi, omega, kappa, n_cut, &mut report)
}

fn angle_with_report(
    psi: &Fourier,
    omega: &[f64],
    kappa: f64,
    n_cut: u32,
    report: &mut Vec<DivisorEntry>,
) -> Result<(Fourier, Fourier), HomologicalError> {
    let mut phi = Fourier::new();
    let mut rem = Fourier::new();
    for (k, &c) in psi {
        if c == ZERO {
            continue;
        }
        if mode_l1(k) == 0 {
            return Err(HomologicalError::NonzeroMean);
        }
        if mode_l1(k) > n_cut {
            rem.insert(*k, c);
            continue;
        }
        let d = mode_dot(k, omega);
        check(
            report,
            DivisorKind::Angle,
            k,
            omega.len(),
            None,
            None,
            d.abs(),
            kappa,
        )?;
        phi.insert(*k, -I * c / d);
    }
    Ok((phi, rem))
}

type Mat = Vec<Vec<C64>>;

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![ZERO; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn adjoint(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j].conj()).collect())
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn conj(a: &Mat) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|x| x.conj()).collect())
        .collect()
}

/// Per-block eigen data of the normal form.
struct Spectrum {
    values: Vec<Vec<f64>>,
    vectors: Vec<Mat>,
}

impl Spectrum {
    fn new(h: &NormalFormHam, lat: &SiteLattice) -> Self {
        let (values, vectors) = h.q_blocks(lat).iter().map(|q| hermitian_eigen(q)).unzip();
        Self { values, vectors }
    }
}

/// Which pieces of the jet a linear solve should handle.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Parts {
    theta: bool,
    linear: bool,
    action_quad: bool,
}

const ALL: Parts = Parts {
    theta: true,
    linear: true,
    action_quad: true,
};

struct Solver<'a> {
    lat: &'a SiteLattice,
    layout: &'a Layout,
    omega: &'a [f64],
    spec: Spectrum,
    thr: Thresholds,
    report: Vec<DivisorEntry>,
}

#[derive(Default)]
struct Pieces {
    theta: Fourier,
    r: Vec<Fourier>,
    /// site → (ξ series, η series)
    xi: BTreeMap<usize, Fourier>,
    eta: BTreeMap<usize, Fourier>,
    /// (i, j) with i ≤ j → series of `ξ_i ξ_j`, likewise `η_i η_j`.
    xixi: BTreeMap<(usize, usize), Fourier>,
    etaeta: BTreeMap<(usize, usize), Fourier>,
    /// (i, j) → series of `ξ_i η_j`.
    xieta: BTreeMap<(usize, usize), Fourier>,
}

fn split_jet(j: &PolyHamiltonian, n: usize) -> Pieces {
    let mut p = Pieces {
        r: vec![Fourier::new(); n],
        ..Default::default()
    };
    for (t, &c) in j.terms() {
        let m = &t.mono;
        let vars: Vec<usize> = m.vars().collect();
        let slot = match (m.rdeg(), vars.len()) {
            (0, 0) => &mut p.theta,
            (1, 0) => &mut p.r[(0..n).find(|&a| m.r[a] == 1).expect("action")],
            (0, 1) => {
                let v = vars[0];
                if v.is_multiple_of(2) {
                    p.xi.entry(v / 2).or_default()
                } else {
                    p.eta.entry(v / 2).or_default()
                }
            }
            (0, 2) => {
                let (v, w) = (vars[0], vars[1]);
                match (v % 2, w % 2) {
                    (0, 0) => p.xixi.entry((v / 2, w / 2)).or_default(),
                    (1, 1) => p.etaeta.entry((v / 2, w / 2)).or_default(),
                    (0, 1) => p.xieta.entry((v / 2, w / 2)).or_default(),
                    _ => p.xieta.entry((w / 2, v / 2)).or_default(),
                }
            }
            _ => continue,
        };
        *slot.entry(t.k).or_insert(ZERO) += c;
    }
    p
}

fn xi(i: usize) -> usize {
    2 * i
}
fn eta(i: usize) -> usize {
    2 * i + 1
}

type PairTable = BTreeMap<((usize, usize), Mode), Vec<((usize, usize), C64)>>;

/// Collects per (block pair, mode) the coefficient matrices.
/// With `symmetric` the pair is ordered so that `block(i) ≤ block(j)`.
fn gather(
    lat: &SiteLattice,
    src: &BTreeMap<(usize, usize), Fourier>,
    symmetric: bool,
) -> PairTable {
    let mut out = PairTable::new();
    for (&(i, j), f) in src {
        let (mut i, mut j) = (i, j);
        if symmetric && lat.block_of(i) > lat.block_of(j) {
            std::mem::swap(&mut i, &mut j);
        }
        let (bi, bj) = (lat.block_of(i), lat.block_of(j));
        for (k, &c) in f {
            out.entry(((bi, bj), *k)).or_default().push(((i, j), c));
        }
    }
    out
}

impl<'a> Solver<'a> {
    fn n(&self) -> usize {
        self.layout.n
    }

    fn site(&self, i: usize) -> i64 {
        self.lat.site(i)
    }

    fn angle(&mut self, f: &Fourier) -> Result<(Fourier, Fourier, C64), HomologicalError> {
        let mean = f.get(&[0; MAX_TANGENTIAL]).copied().unwrap_or(ZERO);
        let psi: Fourier = f
            .iter()
            .filter(|(k, _)| mode_l1(k) != 0)
            .map(|(k, c)| (*k, -c))
            .collect();
        let (phi, rem) = angle_with_report(
            &psi,
            self.omega,
            self.thr.kappa,
            self.thr.n_cut,
            &mut self.report,
        )?;
        let rem = rem.into_iter().map(|(k, c)| (k, -c)).collect();
        Ok((phi, rem, mean))
    }

    /// `ξ`- or `η`-linear equations.
    fn linear(
        &mut self,
        f: &BTreeMap<usize, Fourier>,
        is_eta: bool,
        s: &mut PolyHamiltonian,
        r: &mut PolyHamiltonian,
    ) -> Result<(), HomologicalError> {
        let mut by_block: BTreeMap<(usize, Mode), Vec<(usize, C64)>> = BTreeMap::new();
        for (&i, ser) in f {
            for (k, &c) in ser {
                by_block
                    .entry((self.lat.block_of(i), *k))
                    .or_default()
                    .push((i, c));
            }
        }
        let var = |i: usize| if is_eta { eta(i) } else { xi(i) };
        for ((b, k), entries) in by_block {
            if mode_l1(&k) > self.thr.n_cut {
                for (i, c) in entries {
                    r.add_term(Mono::from_parts(&[], &[var(i)]), k, c);
                }
                continue;
            }
            let members = &self.lat.blocks[b];
            let pos = |i: usize| members.iter().position(|&m| m == i).expect("member");
            let mut fv = vec![vec![ZERO]; members.len()];
            for &(i, c) in &entries {
                fv[pos(i)][0] += c;
            }
            let kw = mode_dot(&k, self.omega);
            let u = &self.spec.vectors[b];
            let alphas = self.spec.values[b].clone();
            let s0 = self.site(members[0]);
            let w = self.lat.weight(members[0]);
            let n = self.n();
            // ξ: â = U diag(i/(k·ω − α)) U* f;  η: b̂ = Ū diag(i/(k·ω + α)) Uᵀ f.
            let (left, right) = if is_eta {
                (conj(u), transpose(u))
            } else {
                (u.clone(), adjoint(u))
            };
            let mut g = mat_mul(&right, &fv);
            for (l, &a) in alphas.iter().enumerate() {
                let d = if is_eta { kw + a } else { kw - a };
                check(
                    &mut self.report,
                    DivisorKind::Single,
                    &k,
                    n,
                    Some(s0),
                    Some(s0),
                    d.abs(),
                    self.thr.kappa * w,
                )?;
                g[l][0] *= I / d;
            }
            let sol = mat_mul(&left, &g);
            for (x, &i) in members.iter().enumerate() {
                s.add_term(Mono::from_parts(&[], &[var(i)]), k, sol[x][0]);
            }
        }
        Ok(())
    }

    /// `ξξ` (sum, minus sign) or `ηη` (sum, plus sign) equations.
    fn sum_family(
        &mut self,
        f: &BTreeMap<(usize, usize), Fourier>,
        is_eta: bool,
        s: &mut PolyHamiltonian,
        r: &mut PolyHamiltonian,
    ) -> Result<(), HomologicalError> {
        let var = |i: usize| if is_eta { eta(i) } else { xi(i) };
        for (((bi, bj), k), entries) in gather(self.lat, f, true) {
            if mode_l1(&k) > self.thr.n_cut {
                for ((i, j), c) in entries {
                    r.add_term(Mono::from_parts(&[], &[var(i), var(j)]), k, c);
                }
                continue;
            }
            let (mi, mj) = (&self.lat.blocks[bi], &self.lat.blocks[bj]);
            let mut fm = vec![vec![ZERO; mj.len()]; mi.len()];
            for &((i, j), c) in &entries {
                let (x, y) = (
                    mi.iter().position(|&m| m == i).unwrap(),
                    mj.iter().position(|&m| m == j).unwrap(),
                );
                if i == j {
                    fm[x][y] += c;
                } else if bi == bj {
                    fm[x][y] += c * 0.5;
                    fm[y][x] += c * 0.5;
                } else {
                    fm[x][y] += c * 0.5;
                }
            }
            let (ui, uj) = (&self.spec.vectors[bi], &self.spec.vectors[bj]);
            let kw = mode_dot(&k, self.omega);
            let thr = self.thr.kappa * (self.lat.weight(mi[0]) + self.lat.weight(mj[0]));
            // ξξ: X = U_i Y U_jᵀ, Y = i U_i* F Ū_j / (k·ω − α − α′).
            // ηη: X = Ū_i Z U_j*, Z = i U_iᵀ F U_j / (k·ω + α + α′).
            let mut y = if is_eta {
                mat_mul(&mat_mul(&transpose(ui), &fm), uj)
            } else {
                mat_mul(&mat_mul(&adjoint(ui), &fm), &conj(uj))
            };
            let (ai, aj) = (self.spec.values[bi].clone(), self.spec.values[bj].clone());
            let (si, sj, n) = (self.site(mi[0]), self.site(mj[0]), self.n());
            for (l, &a) in ai.iter().enumerate() {
                for (m, &b) in aj.iter().enumerate() {
                    let d = if is_eta { kw + a + b } else { kw - a - b };
                    check(
                        &mut self.report,
                        DivisorKind::Sum,
                        &k,
                        n,
                        Some(si),
                        Some(sj),
                        d.abs(),
                        thr,
                    )?;
                    y[l][m] *= I / d;
                }
            }
            let x = if is_eta {
                mat_mul(&mat_mul(&conj(ui), &y), &adjoint(uj))
            } else {
                mat_mul(&mat_mul(ui, &y), &transpose(uj))
            };
            for (p, &i) in mi.iter().enumerate() {
                for (q, &j) in mj.iter().enumerate() {
                    if bi == bj && j < i {
                        continue;
                    }
                    let c = if i == j { x[p][q] } else { x[p][q] * 2.0 };
                    s.add_term(Mono::from_parts(&[], &[var(i), var(j)]), k, c);
                }
            }
        }
        Ok(())
    }

    /// `ξη` equations; `k = 0` same-block data feeds `K̂`.
    fn difference_family(
        &mut self,
        f: &BTreeMap<(usize, usize), Fourier>,
        s: &mut PolyHamiltonian,
        r: &mut PolyHamiltonian,
        k_hat: &mut PolyHamiltonian,
    ) -> Result<(), HomologicalError> {
        for (((bi, bj), k), entries) in gather(self.lat, f, false) {
            let mono = |i: usize, j: usize| Mono::from_parts(&[], &[xi(i), eta(j)]);
            if mode_l1(&k) > self.thr.n_cut {
                for ((i, j), c) in entries {
                    r.add_term(mono(i, j), k, c);
                }
                continue;
            }
            if bi == bj && mode_l1(&k) == 0 {
                for ((i, j), c) in entries {
                    k_hat.add_term(mono(i, j), k, c);
                }
                continue;
            }
            let (mi, mj) = (&self.lat.blocks[bi], &self.lat.blocks[bj]);
            let mut fm = vec![vec![ZERO; mj.len()]; mi.len()];
            for &((i, j), c) in &entries {
                let (x, y) = (
                    mi.iter().position(|&m| m == i).unwrap(),
                    mj.iter().position(|&m| m == j).unwrap(),
                );
                fm[x][y] += c;
            }
            let (ui, uj) = (&self.spec.vectors[bi], &self.spec.vectors[bj]);
            let kw = mode_dot(&k, self.omega);
            let thr = self.thr.kappa_tilde * self.lat.separation(mi[0], mj[0]);
            // W = U_i V U_j*, V = i U_i* F U_j / (k·ω − α + α′).
            let mut v = mat_mul(&mat_mul(&adjoint(ui), &fm), uj);
            let (ai, aj) = (self.spec.values[bi].clone(), self.spec.values[bj].clone());
            let (si, sj, n) = (self.site(mi[0]), self.site(mj[0]), self.n());
            for (l, &a) in ai.iter().enumerate() {
                for (m, &b) in aj.iter().enumerate() {
                    let d = kw - a + b;
                    check(
                        &mut self.report,
                        DivisorKind::Difference,
                        &k,
                        n,
                        Some(si),
                        Some(sj),
                        d.abs(),
                        thr,
                    )?;
                    v[l][m] *= I / d;
                }
            }
            let w = mat_mul(&mat_mul(ui, &v), &adjoint(uj));
            for (p, &i) in mi.iter().enumerate() {
                for (q, &j) in mj.iter().enumerate() {
                    s.add_term(mono(i, j), k, w[p][q]);
                }
            }
        }
        Ok(())
    }

    fn solve(
        &mut self,
        fj: &PolyHamiltonian,
        parts: Parts,
    ) -> Result<(PolyHamiltonian, PolyHamiltonian, PolyHamiltonian), HomologicalError> {
        let n = self.n();
        let p = split_jet(fj, n);
        let mut s = PolyHamiltonian::zero(self.layout);
        let mut r = PolyHamiltonian::zero(self.layout);
        let mut hh = PolyHamiltonian::zero(self.layout);
        let zero_mode = [0i8; MAX_TANGENTIAL];
        let insert = |dst: &mut PolyHamiltonian, mono: Mono, f: &Fourier| {
            for (k, &c) in f {
                dst.add_term(mono, *k, c);
            }
        };
        if parts.theta {
            let (phi, rem, mean) = self.angle(&p.theta)?;
            insert(&mut s, Mono::ONE, &phi);
            insert(&mut r, Mono::ONE, &rem);
            hh.add_term(Mono::ONE, zero_mode, mean);
        }
        if parts.action_quad {
            for a in 0..n {
                let mut e = [0u8; MAX_TANGENTIAL];
                e[a] = 1;
                let mono = Mono::from_parts(&e[..n], &[]);
                let (phi, rem, mean) = self.angle(&p.r[a])?;
                insert(&mut s, mono, &phi);
                insert(&mut r, mono, &rem);
                hh.add_term(mono, zero_mode, mean);
            }
            self.sum_family(&p.xixi, false, &mut s, &mut r)?;
            self.sum_family(&p.etaeta, true, &mut s, &mut r)?;
            self.difference_family(&p.xieta, &mut s, &mut r, &mut hh)?;
        }
        if parts.linear {
            self.linear(&p.xi, false, &mut s, &mut r)?;
            self.linear(&p.eta, true, &mut s, &mut r)?;
        }
        Ok((s, r, hh))
    }
}

fn correction_from_poly(hh: &PolyHamiltonian, lat: &SiteLattice) -> NormalCorrection {
    let n = hh.layout.n;
    let zero_mode = [0i8; MAX_TANGENTIAL];
    let constant = hh.coeff(&Mono::ONE, &zero_mode).re;
    let chi = (0..n)
        .map(|a| {
            let mut e = [0u8; MAX_TANGENTIAL];
            e[a] = 1;
            hh.coeff(&Mono::from_parts(&e[..n], &[]), &zero_mode).re
        })
        .collect();
    let mut k_hat = BlockMatrix::zeros(lat.len(), true);
    k_hat.normal_form = true;
    for members in &lat.blocks {
        for &i in members {
            for &j in members {
                if j < i {
                    continue;
                }
                let q = hh.coeff(&Mono::from_parts(&[], &[xi(i), eta(j)]), &zero_mode);
                if q != ZERO {
                    k_hat.set(i, j, q_to_real_block(q));
                }
            }
        }
    }
    NormalCorrection {
        constant,
        chi,
        k_hat,
        poly: hh.clone(),
    }
}

fn identity_residual(
    h_poly: &PolyHamiltonian,
    s: &PolyHamiltonian,
    f: &PolyHamiltonian,
    hh: &PolyHamiltonian,
    r: &PolyHamiltonian,
) -> Result<f64, HomologicalError> {
    let mut lhs = h_poly.bracket(s)?;
    lhs.add_assign_scaled(f, C64::new(1.0, 0.0));
    lhs.add_assign_scaled(hh, C64::new(-1.0, 0.0));
    lhs.add_assign_scaled(r, C64::new(-1.0, 0.0));
    Ok(lhs.max_coeff())
}

const RESIDUAL_TOL: f64 = 1e-10;

fn solve_parts(
    h: &NormalFormHam,
    lat: &SiteLattice,
    fj: &PolyHamiltonian,
    thr: Thresholds,
    parts: Parts,
) -> Result<
    (
        PolyHamiltonian,
        PolyHamiltonian,
        PolyHamiltonian,
        Vec<DivisorEntry>,
    ),
    HomologicalError,
> {
    let mut solver = Solver {
        lat,
        layout: &fj.layout,
        omega: &h.omega,
        spec: Spectrum::new(h, lat),
        thr,
        report: Vec::new(),
    };
    let (s, r, hh) = solver.solve(fj, parts)?;
    Ok((s.realify(), r.realify(), hh.realify(), solver.report))
}

/// Linear homological equation for a jet `f^T`.
pub fn solve_linear(
    h: &NormalFormHam,
    lat: &SiteLattice,
    f_t: &JetFunction,
    thr: Thresholds,
) -> Result<HomologicalSolution, HomologicalError> {
    let fj = &f_t.poly;
    let (s, r, hh, report) = solve_parts(h, lat, fj, thr, ALL)?;
    let h_poly = h.to_poly(&fj.layout, lat);
    let residual = identity_residual(&h_poly, &s, fj, &hh, &r)?;
    let scale = fj.max_coeff().max(1.0);
    if residual > RESIDUAL_TOL * scale {
        return Err(HomologicalError::Residual(residual));
    }
    Ok(HomologicalSolution {
        s: JetFunction { poly: s },
        h_hat: correction_from_poly(&hh, lat),
        r: JetFunction { poly: r },
        report,
        residual,
        ladder: Vec::new(),
    })
}

/// Domain before and after the solve, split into three stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margins {
    pub sigma: f64,
    pub sigma_to: f64,
    pub mu: f64,
    pub mu_to: f64,
}

impl Margins {
    /// Arithmetic σ-steps and geometric μ-steps.
    pub fn ladder(&self) -> Result<Vec<(f64, f64)>, HomologicalError> {
        if !(self.sigma_to < self.sigma && self.sigma_to > 0.0) {
            return Err(HomologicalError::Ladder(format!(
                "σ′ = {} not in (0, {})",
                self.sigma_to, self.sigma
            )));
        }
        if !(self.mu_to < self.mu && self.mu_to > 0.0) {
            return Err(HomologicalError::Ladder(format!(
                "μ′ = {} not in (0, {})",
                self.mu_to, self.mu
            )));
        }
        let ratio = (self.mu_to / self.mu).powf(1.0 / 3.0);
        Ok((0..=3)
            .map(|j| {
                (
                    self.sigma - j as f64 * (self.sigma - self.sigma_to) / 3.0,
                    self.mu * ratio.powi(j),
                )
            })
            .collect())
    }
}

/// `{h, S} + {f − f^T, S}^T + f^T = ĥ + R` by the angle / linear /
/// (action, quadratic) cascade. Brackets with the higher-order part of `f`
/// only feed later stages, so each stage is a linear solve.
pub fn solve_nonlinear(
    h: &NormalFormHam,
    lat: &SiteLattice,
    f: &PolyHamiltonian,
    thr: Thresholds,
    margins: Margins,
) -> Result<HomologicalSolution, HomologicalError> {
    let ladder = margins.ladder()?;
    let f_t = f.jet();
    let g = f.sub(&f_t);
    let only = |p: &PolyHamiltonian, pick: fn(&Mono) -> bool| p.filter(|t| pick(&t.mono));
    let is_theta: fn(&Mono) -> bool = |m| m.rdeg() == 0 && m.zdeg() == 0;
    let is_lin: fn(&Mono) -> bool = |m| m.rdeg() == 0 && m.zdeg() == 1;
    let is_rest: fn(&Mono) -> bool = |m| m.in_jet() && !(m.rdeg() == 0 && m.zdeg() <= 1);

    let (s0, r0, h0, mut report) = solve_parts(
        h,
        lat,
        &only(&f_t, is_theta),
        thr,
        Parts {
            theta: true,
            linear: false,
            action_quad: false,
        },
    )?;
    let f1 = g.bracket(&s0)?.jet();

    let lin_in = only(&f_t, is_lin).add(&only(&f1, is_lin));
    let (s1, r1, h1, rep1) = solve_parts(
        h,
        lat,
        &lin_in,
        thr,
        Parts {
            theta: false,
            linear: true,
            action_quad: false,
        },
    )?;
    let f2 = g.bracket(&s1)?.jet();

    let rest_in = only(&f_t, is_rest)
        .add(&only(&f1, is_rest))
        .add(&only(&f2, is_rest));
    let (s2, r2, h2, rep2) = solve_parts(
        h,
        lat,
        &rest_in,
        thr,
        Parts {
            theta: false,
            linear: false,
            action_quad: true,
        },
    )?;
    report.extend(rep1);
    report.extend(rep2);

    let s = s0.add(&s1).add(&s2);
    let r = r0.add(&r1).add(&r2);
    let hh = h0.add(&h1).add(&h2);
    let h_poly = h.to_poly(&f.layout, lat);
    let mut lhs = h_poly.bracket(&s)?;
    lhs.add_assign_scaled(&g.bracket(&s)?.jet(), C64::new(1.0, 0.0));
    lhs.add_assign_scaled(&f_t, C64::new(1.0, 0.0));
    lhs.add_assign_scaled(&hh, C64::new(-1.0, 0.0));
    lhs.add_assign_scaled(&r, C64::new(-1.0, 0.0));
    let residual = lhs.max_coeff();
    let scale = f_t.max_coeff().max(1.0);
    if residual > RESIDUAL_TOL * scale {
        return Err(HomologicalError::Residual(residual));
    }
    Ok(HomologicalSolution {
        s: JetFunction { poly: s },
        h_hat: correction_from_poly(&hh, lat),
        r: JetFunction { poly: r },
        report,
        residual,
        ladder,
    })
}

/// Writes a divisor report as CSV with columns `k, s, s′, type, value,
/// threshold`.
pub fn write_report<W: std::io::Write>(report: &[DivisorEntry], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "s", "s2", "type", "value", "threshold"])?;
    for e in report {
        let k =
            e.k.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ");
        let site = |s: Option<i64>| s.map_or(String::new(), |v| v.to_string());
        w.write_record([
            k,
            site(e.s),
            site(e.s2),
            e.kind.to_string(),
            format!("{:e}", e.value),
            format!("{:e}", e.threshold),
        ])?;
    }
    w.flush()?;
    Ok(())
}
