//! Polynomial Hamiltonians in `(r, ξ, η)` with θ-Fourier coefficients.
//!
//! All algebra runs in complex normal coordinates `ξ_s = (p_s + i q_s)/√2`,
//! `η_s = (p_s − i q_s)/√2`. Variable `2i` is `ξ` at lattice position `i`,
//! variable `2i + 1` is `η` there. A term is a monomial
//! `r^e ∏ z_v e^{i k·θ}` with a complex coefficient.
//!
//! The bracket is
//! `{f, g} = ∇_r f·∇_θ g − ∇_θ f·∇_r g + ⟨∇_ζ f, J ∇_ζ g⟩`, which in complex
//! coordinates reads `… + i Σ_s (∂_{ξ_s} f ∂_{η_s} g − ∂_{η_s} f ∂_{ξ_s} g)`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::error::HamiltonianError;
use crate::spaces::{
    mat_norm, norm_alpha, norm_beta, Block, BlockMatrix, Convention, SiteLattice, WeightedSeq, C64,
};

pub const MAX_TANGENTIAL: usize = 4;
pub const MAX_ZDEG: usize = 6;
const EMPTY: u16 = u16::MAX;

pub type Mode = [i8; MAX_TANGENTIAL];

pub const I: C64 = C64::new(0.0, 1.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

pub fn mode_l1(k: &Mode) -> u32 {
    k.iter().map(|&x| (x as i32).unsigned_abs()).sum()
}

pub fn mode_add(a: &Mode, b: &Mode) -> Mode {
    let mut out = [0i8; MAX_TANGENTIAL];
    for i in 0..MAX_TANGENTIAL {
        out[i] = a[i] + b[i];
    }
    out
}

pub fn mode_neg(a: &Mode) -> Mode {
    let mut out = *a;
    for x in &mut out {
        *x = -*x;
    }
    out
}

pub fn mode_dot(k: &Mode, w: &[f64]) -> f64 {
    w.iter().enumerate().map(|(i, &x)| k[i] as f64 * x).sum()
}

pub fn mode_from(v: &[i32]) -> Mode {
    let mut k = [0i8; MAX_TANGENTIAL];
    for (i, &x) in v.iter().enumerate() {
        k[i] = x as i8;
    }
    k
}

/// All modes of `n` angles with `|k|₁ ≤ kmax`, in lexicographic order.
pub fn modes_up_to(n: usize, kmax: u32) -> Vec<Mode> {
    let mut out = vec![[0i8; MAX_TANGENTIAL]];
    for a in 0..n {
        let mut next = Vec::new();
        for k in &out {
            let used = mode_l1(k);
            let room = (kmax - used) as i32;
            for x in -room..=room {
                let mut m = *k;
                m[a] = x as i8;
                next.push(m);
            }
        }
        out = next;
    }
    out.sort();
    out
}

/// `r^e ∏ z_v`, variables sorted ascending.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mono {
    pub r: [u8; MAX_TANGENTIAL],
    z: [u16; MAX_ZDEG],
}

impl Mono {
    pub const ONE: Mono = Mono {
        r: [0; MAX_TANGENTIAL],
        z: [EMPTY; MAX_ZDEG],
    };

    pub fn from_parts(r: &[u8], vars: &[usize]) -> Mono {
        let mut m = Mono::ONE;
        for (i, &e) in r.iter().enumerate() {
            m.r[i] = e;
        }
        for &v in vars {
            m = m.times_var(v).expect("degree within MAX_ZDEG");
        }
        m
    }

    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.z
            .iter()
            .take_while(|&&v| v != EMPTY)
            .map(|&v| v as usize)
    }

    pub fn zdeg(&self) -> usize {
        self.z.iter().take_while(|&&v| v != EMPTY).count()
    }

    pub fn rdeg(&self) -> usize {
        self.r.iter().map(|&e| e as usize).sum()
    }

    pub fn times_var(&self, v: usize) -> Option<Mono> {
        let d = self.zdeg();
        if d >= MAX_ZDEG {
            return None;
        }
        let mut out = *self;
        let mut pos = d;
        while pos > 0 && out.z[pos - 1] as usize > v {
            out.z[pos] = out.z[pos - 1];
            pos -= 1;
        }
        out.z[pos] = v as u16;
        Some(out)
    }

    /// Removes one factor `z_v`; returns the multiplicity it had.
    pub fn without_var(&self, v: usize) -> Option<(Mono, usize)> {
        let d = self.zdeg();
        let first = (0..d).find(|&i| self.z[i] as usize == v)?;
        let mult = (first..d).take_while(|&i| self.z[i] as usize == v).count();
        let mut out = *self;
        for i in first..d - 1 {
            out.z[i] = out.z[i + 1];
        }
        out.z[d - 1] = EMPTY;
        Some((out, mult))
    }

    /// Distinct variables with multiplicities.
    pub fn var_counts(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(4);
        for v in self.vars() {
            match out.last_mut() {
                Some((w, c)) if *w == v => *c += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }

    pub fn mul(&self, o: &Mono) -> Option<Mono> {
        let (da, db) = (self.zdeg(), o.zdeg());
        if da + db > MAX_ZDEG {
            return None;
        }
        let mut out = Mono::ONE;
        for i in 0..MAX_TANGENTIAL {
            out.r[i] = self.r[i].checked_add(o.r[i])?;
        }
        let (mut i, mut j, mut t) = (0, 0, 0);
        while i < da || j < db {
            if j >= db || (i < da && self.z[i] <= o.z[j]) {
                out.z[t] = self.z[i];
                i += 1;
            } else {
                out.z[t] = o.z[j];
                j += 1;
            }
            t += 1;
        }
        Some(out)
    }

    /// Swaps every `ξ` with the matching `η`.
    pub fn conj_vars(&self) -> Mono {
        let mut vs: Vec<usize> = self.vars().map(|v| v ^ 1).collect();
        vs.sort_unstable();
        let mut out = Mono {
            r: self.r,
            z: [EMPTY; MAX_ZDEG],
        };
        for (i, v) in vs.into_iter().enumerate() {
            out.z[i] = v as u16;
        }
        out
    }

    /// True for the jet template: `1`, `r_a`, `z_v`, `z_v z_w`.
    pub fn in_jet(&self) -> bool {
        let (dr, dz) = (self.rdeg(), self.zdeg());
        (dr == 0 && dz <= 2) || (dr == 1 && dz == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub mono: Mono,
    pub k: Mode,
}

/// Shape of the phase space and the truncation caps.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub n: usize,
    pub nvar: usize,
    pub k_max: u32,
    pub cap_r: usize,
    pub cap_z: usize,
    /// Coefficients below this magnitude are dropped after products.
    pub prune: f64,
}

impl Layout {
    pub fn new(n: usize, sites: usize, k_max: u32) -> Result<Self, HamiltonianError> {
        if n > MAX_TANGENTIAL {
            return Err(HamiltonianError::TooManyAngles(n));
        }
        if 2 * sites >= EMPTY as usize {
            return Err(HamiltonianError::TooManyVariables(2 * sites));
        }
        Ok(Self {
            n,
            nvar: 2 * sites,
            k_max,
            cap_r: 2,
            cap_z: 4,
            prune: 0.0,
        })
    }

    pub fn with_caps(mut self, cap_r: usize, cap_z: usize) -> Result<Self, HamiltonianError> {
        if cap_z > MAX_ZDEG {
            return Err(HamiltonianError::CapTooLarge(cap_z));
        }
        self.cap_r = cap_r;
        self.cap_z = cap_z;
        Ok(self)
    }

    pub fn sites(&self) -> usize {
        self.nvar / 2
    }
}

/// A point of the complexified phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub theta: Vec<C64>,
    pub r: Vec<C64>,
    /// Flattened `(ξ_0, η_0, ξ_1, η_1, …)`.
    pub z: Vec<C64>,
}

impl Point {
    pub fn origin(n: usize, nvar: usize) -> Self {
        Self {
            theta: vec![ZERO; n],
            r: vec![ZERO; n],
            z: vec![ZERO; nvar],
        }
    }

    pub fn seq(&self) -> WeightedSeq {
        WeightedSeq {
            entries: self.z.chunks(2).map(|c| [c[0], c[1]]).collect(),
            convention: Convention::Complex,
        }
    }

    pub fn set_seq(&mut self, z: &WeightedSeq) {
        let c = z.to_complex();
        for (i, e) in c.entries.iter().enumerate() {
            self.z[2 * i] = e[0];
            self.z[2 * i + 1] = e[1];
        }
    }
}

/// Evaluation cache for `e^{i j θ_a}`.
struct Phases {
    kmax: i32,
    table: Vec<Vec<C64>>,
}

impl Phases {
    fn new(theta: &[C64], kmax: u32) -> Self {
        let kmax = kmax as i32;
        let table = theta
            .iter()
            .map(|&t| (-kmax..=kmax).map(|j| (I * t * j as f64).exp()).collect())
            .collect();
        Self { kmax, table }
    }

    fn get(&self, k: &Mode) -> C64 {
        let mut p = C64::new(1.0, 0.0);
        for (a, row) in self.table.iter().enumerate() {
            if k[a] != 0 {
                p *= row[(k[a] as i32 + self.kmax) as usize];
            }
        }
        p
    }
}

fn rpow(r: &[C64], e: &[u8; MAX_TANGENTIAL]) -> C64 {
    let mut p = C64::new(1.0, 0.0);
    for (a, &x) in r.iter().enumerate() {
        for _ in 0..e[a] {
            p *= x;
        }
    }
    p
}

/// Truncated polynomial Hamiltonian.
#[derive(Clone, Debug)]
pub struct PolyHamiltonian {
    pub layout: Layout,
    terms: FxHashMap<Term, C64>,
    /// Sum of coefficient magnitudes dropped by truncation and pruning.
    pub discarded: f64,
}

impl PartialEq for PolyHamiltonian {
    fn eq(&self, o: &Self) -> bool {
        self.layout == o.layout && self.distance(o) == 0.0
    }
}

impl PolyHamiltonian {
    pub fn zero(layout: &Layout) -> Self {
        Self {
            layout: layout.clone(),
            terms: FxHashMap::default(),
            discarded: 0.0,
        }
    }

    pub fn constant(layout: &Layout, c: f64) -> Self {
        let mut p = Self::zero(layout);
        p.add_term(Mono::ONE, [0; MAX_TANGENTIAL], C64::new(c, 0.0));
        p
    }

    /// `r_a`.
    pub fn action(layout: &Layout, a: usize) -> Self {
        let mut r = [0u8; MAX_TANGENTIAL];
        r[a] = 1;
        let mut p = Self::zero(layout);
        p.add_term(
            Mono::from_parts(&r, &[]),
            [0; MAX_TANGENTIAL],
            C64::new(1.0, 0.0),
        );
        p
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Term, &C64)> {
        self.terms.iter()
    }

    /// Terms sorted by key, for reproducible output.
    pub fn sorted_terms(&self) -> Vec<(Term, C64)> {
        let mut v: Vec<(Term, C64)> = self.terms.iter().map(|(t, c)| (*t, *c)).collect();
        v.sort_by_key(|a| a.0);
        v
    }

    pub fn coeff(&self, mono: &Mono, k: &Mode) -> C64 {
        self.terms
            .get(&Term { mono: *mono, k: *k })
            .copied()
            .unwrap_or(ZERO)
    }

    pub fn add_term(&mut self, mono: Mono, k: Mode, c: C64) {
        if c == ZERO {
            return;
        }
        let e = self.terms.entry(Term { mono, k }).or_insert(ZERO);
        *e += c;
        if *e == ZERO {
            self.terms.remove(&Term { mono, k });
        }
    }

    /// Adds a term honouring the caps; dropped mass is recorded.
    fn add_capped(&mut self, mono: Mono, k: Mode, c: C64) {
        if mono.zdeg() > self.layout.cap_z
            || mono.rdeg() > self.layout.cap_r
            || mode_l1(&k) > self.layout.k_max
        {
            self.discarded += c.norm();
            return;
        }
        self.add_term(mono, k, c);
    }

    pub fn from_terms(layout: &Layout, terms: impl IntoIterator<Item = (Mono, Mode, C64)>) -> Self {
        let mut p = Self::zero(layout);
        for (m, k, c) in terms {
            p.add_capped(m, k, c);
        }
        p
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out.terms.retain(|_, v| *v != ZERO);
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(C64::new(-1.0, 0.0))
    }

    pub fn add_assign_scaled(&mut self, o: &Self, c: C64) {
        for (t, v) in &o.terms {
            self.add_term(t.mono, t.k, v * c);
        }
        self.discarded += o.discarded * c.norm();
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign_scaled(o, C64::new(1.0, 0.0));
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign_scaled(o, C64::new(-1.0, 0.0));
        out
    }

    /// Sum of coefficient magnitudes.
    pub fn l1(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `Σ |a − b|` over all coefficients.
    pub fn distance(&self, o: &Self) -> f64 {
        let mut d = 0.0;
        for (t, v) in &self.terms {
            d += (v - o.terms.get(t).copied().unwrap_or(ZERO)).norm();
        }
        for (t, v) in &o.terms {
            if !self.terms.contains_key(t) {
                d += v.norm();
            }
        }
        d
    }

    /// Drops coefficients below `tol`, recording their mass.
    pub fn prune(&mut self, tol: f64) {
        if tol <= 0.0 {
            return;
        }
        let mut lost = 0.0;
        self.terms.retain(|_, v| {
            let keep = v.norm() >= tol;
            if !keep {
                lost += v.norm();
            }
            keep
        });
        self.discarded += lost;
    }

    pub fn filter(&self, keep: impl Fn(&Term) -> bool) -> Self {
        let mut out = Self::zero(&self.layout);
        for (t, v) in &self.terms {
            if keep(t) {
                out.terms.insert(*t, *v);
            }
        }
        out
    }

    /// Exact Taylor jet at `r = 0`, `ζ = 0`.
    pub fn jet(&self) -> Self {
        self.filter(|t| t.mono.in_jet())
    }

    /// Splits into modes `|k|₁ ≤ n` and the rest.
    pub fn split_modes(&self, n: u32) -> (Self, Self) {
        (
            self.filter(|t| mode_l1(&t.k) <= n),
            self.filter(|t| mode_l1(&t.k) > n),
        )
    }

    /// Image under complex conjugation of a real point: coefficient of
    /// `(m, k)` becomes the conjugate of the coefficient of `(m̄, −k)`.
    pub fn conjugate(&self) -> Self {
        let mut out = Self::zero(&self.layout);
        for (t, v) in &self.terms {
            out.terms.insert(
                Term {
                    mono: t.mono.conj_vars(),
                    k: mode_neg(&t.k),
                },
                v.conj(),
            );
        }
        out
    }

    /// `½(F + F̄)`: the real part on real points.
    pub fn realify(&self) -> Self {
        let mut out = self.scale(C64::new(0.5, 0.0));
        out.add_assign_scaled(&self.conjugate(), C64::new(0.5, 0.0));
        out.discarded = self.discarded;
        out
    }

    /// Defect of the reality condition.
    pub fn reality_defect(&self) -> f64 {
        self.distance(&self.conjugate())
    }

    pub fn eval(&self, x: &Point) -> C64 {
        let ph = Phases::new(&x.theta, self.layout.k_max);
        let mut s = ZERO;
        for (t, c) in &self.terms {
            let mut p = c * ph.get(&t.k) * rpow(&x.r, &t.mono.r);
            for v in t.mono.vars() {
                p *= x.z[v];
            }
            s += p;
        }
        s
    }

    /// `(∇_θ F, ∇_r F, ∇_z F)` at `x` in complex variables.
    pub fn gradient(&self, x: &Point) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let n = self.layout.n;
        let ph = Phases::new(&x.theta, self.layout.k_max);
        let mut gt = vec![ZERO; n];
        let mut gr = vec![ZERO; n];
        let mut gz = vec![ZERO; self.layout.nvar];
        for (t, c) in &self.terms {
            let base = c * ph.get(&t.k);
            let rp = rpow(&x.r, &t.mono.r);
            let vars: Vec<usize> = t.mono.vars().collect();
            let zp: C64 = vars.iter().map(|&v| x.z[v]).product();
            let full = base * rp * zp;
            for a in 0..n {
                if t.k[a] != 0 {
                    gt[a] += full * I * t.k[a] as f64;
                }
                if t.mono.r[a] > 0 {
                    let mut e = t.mono.r;
                    e[a] -= 1;
                    gr[a] += base * zp * rpow(&x.r, &e) * t.mono.r[a] as f64;
                }
            }
            for i in 0..vars.len() {
                let others: C64 = vars
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| x.z[v])
                    .product();
                gz[vars[i]] += base * rp * others;
            }
        }
        (gt, gr, gz)
    }

    /// Value, `z`-gradient and dense `z`-Hessian in one pass.
    pub fn value_grad_hess(&self, x: &Point) -> (C64, Vec<C64>, Vec<Vec<C64>>) {
        let nv = self.layout.nvar;
        let ph = Phases::new(&x.theta, self.layout.k_max);
        let mut value = ZERO;
        let mut g = vec![ZERO; nv];
        let mut h = vec![vec![ZERO; nv]; nv];
        let mut vars = [0usize; MAX_ZDEG];
        let mut zv = [ZERO; MAX_ZDEG];
        for (t, c) in &self.terms {
            let d = t.mono.zdeg();
            for (i, v) in t.mono.vars().enumerate() {
                vars[i] = v;
                zv[i] = x.z[v];
            }
            let base = c * ph.get(&t.k) * rpow(&x.r, &t.mono.r);
            let all: C64 = zv[..d].iter().product();
            value += base * all;
            for i in 0..d {
                let without_i: C64 = (0..d).filter(|&l| l != i).map(|l| zv[l]).product();
                g[vars[i]] += base * without_i;
                for j in 0..d {
                    if j != i {
                        let without_ij: C64 = (0..d)
                            .filter(|&l| l != i && l != j)
                            .map(|l| zv[l])
                            .product();
                        h[vars[i]][vars[j]] += base * without_ij;
                    }
                }
            }
        }
        (value, g, h)
    }

    /// Dense Hessian in the complex `z` variables.
    pub fn hessian_z(&self, x: &Point) -> Vec<Vec<C64>> {
        let nv = self.layout.nvar;
        let ph = Phases::new(&x.theta, self.layout.k_max);
        let mut h = vec![vec![ZERO; nv]; nv];
        for (t, c) in &self.terms {
            let vars: Vec<usize> = t.mono.vars().collect();
            if vars.len() < 2 {
                continue;
            }
            let base = c * ph.get(&t.k) * rpow(&x.r, &t.mono.r);
            for i in 0..vars.len() {
                for j in 0..vars.len() {
                    if i == j {
                        continue;
                    }
                    let others: C64 = vars
                        .iter()
                        .enumerate()
                        .filter(|&(l, _)| l != i && l != j)
                        .map(|(_, &v)| x.z[v])
                        .product();
                    h[vars[i]][vars[j]] += base * others;
                }
            }
        }
        h
    }

    /// `∂_θ_a F` as a polynomial.
    pub fn d_theta(&self, a: usize) -> Self {
        let mut out = Self::zero(&self.layout);
        for (t, c) in &self.terms {
            if t.k[a] != 0 {
                out.terms.insert(*t, c * I * t.k[a] as f64);
            }
        }
        out
    }

    /// Product truncated to the caps.
    pub fn mul(&self, o: &Self) -> Result<Self, HamiltonianError> {
        if self.layout.n != o.layout.n || self.layout.nvar != o.layout.nvar {
            return Err(HamiltonianError::LayoutMismatch);
        }
        let lay = &self.layout;
        let mut acc: FxHashMap<Term, C64> = FxHashMap::default();
        let mut lost = 0.0;
        for (a, ca) in &self.terms {
            for (b, cb) in &o.terms {
                let c = ca * cb;
                let k = mode_add(&a.k, &b.k);
                match a.mono.mul(&b.mono) {
                    Some(m)
                        if m.zdeg() <= lay.cap_z
                            && m.rdeg() <= lay.cap_r
                            && mode_l1(&k) <= lay.k_max =>
                    {
                        *acc.entry(Term { mono: m, k }).or_insert(ZERO) += c;
                    }
                    _ => lost += c.norm(),
                }
            }
        }
        let mut out = Self::zero(lay);
        out.terms = acc.into_iter().filter(|(_, c)| *c != ZERO).collect();
        out.discarded = lost;
        out.prune(lay.prune);
        Ok(out)
    }

    /// Poisson bracket `{self, g}` truncated to the caps. Single products
    /// below `layout.prune` are skipped and counted as discarded.
    pub fn bracket(&self, g: &Self) -> Result<Self, HamiltonianError> {
        if self.layout.n != g.layout.n || self.layout.nvar != g.layout.nvar {
            return Err(HamiltonianError::LayoutMismatch);
        }
        let lay = &self.layout;
        let mut out = Self::zero(lay);
        let mut lost = 0.0;
        let prune = lay.prune;

        // ζ part, indexed by the variable of g being differentiated.
        let mut by_var: Vec<Vec<(Mono, Mode, C64)>> = vec![Vec::new(); lay.nvar];
        for (t, c) in &g.terms {
            for (v, m) in t.mono.var_counts() {
                let (rest, _) = t.mono.without_var(v).expect("var present");
                by_var[v].push((rest, t.k, c * m as f64));
            }
        }
        let by_var: Vec<Sorted> = by_var.into_iter().map(Sorted::new).collect();
        let mut acc: FxHashMap<Term, C64> = FxHashMap::default();
        let push = |mono: Option<Mono>,
                    k: Mode,
                    c: C64,
                    acc: &mut FxHashMap<Term, C64>,
                    lost: &mut f64| {
            match mono {
                Some(m)
                    if m.zdeg() <= lay.cap_z
                        && m.rdeg() <= lay.cap_r
                        && mode_l1(&k) <= lay.k_max =>
                {
                    *acc.entry(Term { mono: m, k }).or_insert(ZERO) += c;
                }
                _ => *lost += c.norm(),
            }
        };
        for (t, c) in &self.terms {
            for (v, m) in t.mono.var_counts() {
                let (rest, _) = t.mono.without_var(v).expect("var present");
                let list = &by_var[v ^ 1];
                let sign = if v % 2 == 0 { I } else { -I };
                let cf = c * m as f64 * sign;
                let restdeg = rest.zdeg();
                let stop = list.cut(cf.norm(), prune, &mut lost);
                for (gm, gk, gc) in &list.items[..stop] {
                    if restdeg + gm.zdeg() > lay.cap_z {
                        lost += (cf * gc).norm();
                        continue;
                    }
                    push(
                        rest.mul(gm),
                        mode_add(&t.k, gk),
                        cf * gc,
                        &mut acc,
                        &mut lost,
                    );
                }
            }
        }

        // (r, θ) part.
        for a in 0..lay.n {
            let g_theta = Sorted::new(
                g.terms
                    .iter()
                    .filter(|(t, _)| t.k[a] != 0)
                    .map(|(t, c)| (t.mono, t.k, c * I * t.k[a] as f64))
                    .collect(),
            );
            let g_r = Sorted::new(
                g.terms
                    .iter()
                    .filter(|(t, _)| t.mono.r[a] > 0)
                    .map(|(t, c)| {
                        let mut m = t.mono;
                        m.r[a] -= 1;
                        (m, t.k, c * t.mono.r[a] as f64)
                    })
                    .collect(),
            );
            for (t, c) in &self.terms {
                if t.mono.r[a] > 0 && !g_theta.items.is_empty() {
                    let mut m = t.mono;
                    m.r[a] -= 1;
                    let cf = c * t.mono.r[a] as f64;
                    let stop = g_theta.cut(cf.norm(), prune, &mut lost);
                    for (gm, gk, gc) in &g_theta.items[..stop] {
                        push(m.mul(gm), mode_add(&t.k, gk), cf * gc, &mut acc, &mut lost);
                    }
                }
                if t.k[a] != 0 && !g_r.items.is_empty() {
                    let cf = -c * I * t.k[a] as f64;
                    let stop = g_r.cut(cf.norm(), prune, &mut lost);
                    for (gm, gk, gc) in &g_r.items[..stop] {
                        push(
                            t.mono.mul(gm),
                            mode_add(&t.k, gk),
                            cf * gc,
                            &mut acc,
                            &mut lost,
                        );
                    }
                }
            }
        }
        for (t, c) in acc {
            if c != ZERO {
                out.terms.insert(t, c);
            }
        }
        out.discarded = lost;
        out.prune(lay.prune);
        Ok(out)
    }
}

/// Factors sorted by decreasing magnitude with suffix sums of magnitudes,
/// so products below a threshold can be cut off in one step.
struct Sorted {
    items: Vec<(Mono, Mode, C64)>,
    norms: Vec<f64>,
    suffix: Vec<f64>,
}

impl Sorted {
    fn new(mut items: Vec<(Mono, Mode, C64)>) -> Self {
        items.sort_by(|a, b| b.2.norm().total_cmp(&a.2.norm()));
        let norms: Vec<f64> = items.iter().map(|x| x.2.norm()).collect();
        let mut suffix = vec![0.0; norms.len() + 1];
        for i in (0..norms.len()).rev() {
            suffix[i] = suffix[i + 1] + norms[i];
        }
        Self {
            items,
            norms,
            suffix,
        }
    }

    /// Number of leading factors whose product with `scale` reaches `prune`.
    fn cut(&self, scale: f64, prune: f64, lost: &mut f64) -> usize {
        if prune <= 0.0 {
            return self.items.len();
        }
        let stop = self.norms.partition_point(|&x| x * scale >= prune);
        *lost += scale * self.suffix[stop];
        stop
    }
}

/// Jet `f_θ + f_r·r + ⟨f_ζ, ζ⟩ + ½⟨f_ζζ ζ, ζ⟩` stored as a polynomial with
/// only template terms.
#[derive(Clone, Debug, PartialEq)]
pub struct JetFunction {
    pub poly: PolyHamiltonian,
}

pub type Fourier = BTreeMap<Mode, C64>;

impl JetFunction {
    pub fn from_poly(f: &PolyHamiltonian) -> Self {
        Self { poly: f.jet() }
    }

    pub fn zero(layout: &Layout) -> Self {
        Self {
            poly: PolyHamiltonian::zero(layout),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.poly.layout
    }

    fn collect(&self, pick: impl Fn(&Mono) -> bool) -> Fourier {
        let mut out = Fourier::new();
        for (t, c) in self.poly.terms() {
            if pick(&t.mono) {
                *out.entry(t.k).or_insert(ZERO) += c;
            }
        }
        out
    }

    pub fn f_theta(&self) -> Fourier {
        self.collect(|m| m.rdeg() == 0 && m.zdeg() == 0)
    }

    pub fn f_r(&self, a: usize) -> Fourier {
        self.collect(|m| m.rdeg() == 1 && m.r[a] == 1 && m.zdeg() == 0)
    }

    /// Coefficient series of `z_v`.
    pub fn f_zeta(&self, v: usize) -> Fourier {
        self.collect(|m| m.rdeg() == 0 && m.zdeg() == 1 && m.vars().next() == Some(v))
    }

    /// Coefficient series of the monomial `z_v z_w` (not the Hessian entry).
    pub fn f_zetazeta(&self, v: usize, w: usize) -> Fourier {
        let (a, b) = (v.min(w), v.max(w));
        self.collect(|m| {
            if m.rdeg() != 0 || m.zdeg() != 2 {
                return false;
            }
            let vs: Vec<usize> = m.vars().collect();
            vs == [a, b]
        })
    }
}

/// Seeded points of `O(σ, μ)` for the surrogate jet norm.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub seed: u64,
    pub points: usize,
    pub shifts: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            seed: 0x5eed_0001,
            points: 64,
            shifts: 4,
            alpha: 1.0,
            beta: 0.5,
        }
    }
}

impl SamplePlan {
    /// Base points with real angles, real `ζ` of `‖ζ‖_α = μ` and `|r| = μ²`.
    pub fn base_points(&self, lat: &SiteLattice, n: usize, mu: f64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let m = lat.len();
        (0..self.points)
            .map(|_| {
                let theta: Vec<C64> = (0..n)
                    .map(|_| C64::new(rng.random::<f64>() * std::f64::consts::TAU, 0.0))
                    .collect();
                let mut r: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                for x in &mut r {
                    *x *= mu * mu / rn;
                }
                let decay: Vec<[f64; 2]> = (0..m)
                    .map(|i| {
                        let w = lat.weight(i).powi(-2);
                        [
                            (rng.random::<f64>() * 2.0 - 1.0) * w,
                            (rng.random::<f64>() * 2.0 - 1.0) * w,
                        ]
                    })
                    .collect();
                let mut z = WeightedSeq::from_real(&decay);
                let na = norm_alpha(lat, &z, self.alpha).max(1e-300);
                for e in &mut z.entries {
                    e[0] *= mu / na;
                    e[1] *= mu / na;
                }
                let mut p = Point::origin(n, 2 * m);
                p.theta = theta;
                p.r = r.into_iter().map(|x| C64::new(x, 0.0)).collect();
                p.set_seq(&z);
                p
            })
            .collect()
    }

    /// Imaginary shifts: vertices `±0.9σ e_a` of the ℓ¹ ball, cycled.
    pub fn shift_vectors(&self, n: usize, sigma: f64) -> Vec<Vec<f64>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        (0..self.shifts)
            .map(|j| {
                let mut v = vec![0.0; n];
                let a = (j / 2) % n;
                v[a] = if j % 2 == 0 {
                    0.9 * sigma
                } else {
                    -0.9 * sigma
                };
                v
            })
            .collect()
    }

    /// Every evaluation point: each base point at real θ and at each shift.
    pub fn points_for(&self, lat: &SiteLattice, n: usize, sigma: f64, mu: f64) -> Vec<Point> {
        let base = self.base_points(lat, n, mu);
        let shifts = self.shift_vectors(n, sigma);
        let mut out = Vec::with_capacity(base.len() * (shifts.len() + 1));
        for p in base {
            for s in &shifts {
                let mut q = p.clone();
                for (a, t) in q.theta.iter_mut().enumerate() {
                    *t += C64::new(0.0, s[a]);
                }
                out.push(q);
            }
            out.push(p);
        }
        out
    }
}

/// Real-coordinate gradient `(∂_p, ∂_q)` per site from complex derivatives.
pub fn real_gradient(gz: &[C64]) -> WeightedSeq {
    let entries = gz
        .chunks(2)
        .map(|c| {
            [
                (c[0] + c[1]) * FRAC_1_SQRT_2,
                I * (c[0] - c[1]) * FRAC_1_SQRT_2,
            ]
        })
        .collect();
    WeightedSeq {
        entries,
        convention: Convention::Real,
    }
}

/// Real-coordinate Hessian blocks from the complex Hessian.
pub fn real_hessian(h: &[Vec<C64>]) -> BlockMatrix {
    let m = h.len() / 2;
    let t = [
        [C64::new(FRAC_1_SQRT_2, 0.0), C64::new(FRAC_1_SQRT_2, 0.0)],
        [I * FRAC_1_SQRT_2, -I * FRAC_1_SQRT_2],
    ];
    let mut out = BlockMatrix::zeros(m, false);
    for i in 0..m {
        for j in 0..m {
            let c = [
                [h[2 * i][2 * j], h[2 * i][2 * j + 1]],
                [h[2 * i + 1][2 * j], h[2 * i + 1][2 * j + 1]],
            ];
            if c.iter().flatten().all(|x| *x == ZERO) {
                continue;
            }
            let mut b = [[ZERO; 2]; 2];
            for (r, row) in b.iter_mut().enumerate() {
                for (s, e) in row.iter_mut().enumerate() {
                    for u in 0..2 {
                        for v in 0..2 {
                            *e += t[r][u] * c[u][v] * t[s][v];
                        }
                    }
                }
            }
            out.set(i, j, Block(b));
        }
    }
    out
}

/// The four scaled quantities of the jet norm at a single point.
pub fn norm_terms(
    f: &PolyHamiltonian,
    lat: &SiteLattice,
    x: &Point,
    mu: f64,
    plan: &SamplePlan,
    plus: bool,
) -> [f64; 4] {
    let (value, gz, hz) = f.value_grad_hess(x);
    let v = value.norm();
    let g = real_gradient(&gz);
    let h = real_hessian(&hz);
    [
        v,
        mu * norm_alpha(lat, &g, plan.alpha),
        mu * norm_beta(lat, &g, plan.beta, plus),
        mu * mu * mat_norm(lat, &h, plan.beta, plus),
    ]
}

/// Surrogate of `⟦F⟧` on `O(σ, μ)`: maximum of the four scaled bounds over
/// the sample plan.
pub fn jet_norm(
    f: &PolyHamiltonian,
    lat: &SiteLattice,
    sigma: f64,
    mu: f64,
    plan: &SamplePlan,
) -> Result<f64, HamiltonianError> {
    jet_norm_with(f, lat, sigma, mu, plan, false)
}

pub fn jet_norm_with(
    f: &PolyHamiltonian,
    lat: &SiteLattice,
    sigma: f64,
    mu: f64,
    plan: &SamplePlan,
    plus: bool,
) -> Result<f64, HamiltonianError> {
    if plan.points == 0 {
        return Err(HamiltonianError::EmptySamplePlan);
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    let pts = plan.points_for(lat, f.layout.n, sigma, mu);
    Ok(pts
        .iter()
        .map(|x| {
            norm_terms(f, lat, x, mu, plan, plus)
                .into_iter()
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max))
}

/// Hermitian 2×2 (or 1×1) eigen-decomposition in closed form: returns
/// eigenvalues and the unitary whose columns are eigenvectors.
pub fn hermitian_eigen(q: &[Vec<C64>]) -> (Vec<f64>, Vec<Vec<C64>>) {
    match q.len() {
        1 => (vec![q[0][0].re], vec![vec![C64::new(1.0, 0.0)]]),
        2 => {
            let (a, d, b) = (q[0][0].re, q[1][1].re, q[0][1]);
            let mean = 0.5 * (a + d);
            let half = 0.5 * (a - d);
            let rad = (half * half + b.norm_sqr()).sqrt();
            if b.norm() <= 1e-300 {
                return (
                    vec![a, d],
                    vec![
                        vec![C64::new(1.0, 0.0), ZERO],
                        vec![ZERO, C64::new(1.0, 0.0)],
                    ],
                );
            }
            let l1 = mean + rad;
            let l2 = mean - rad;
            // (Q − l I) v = 0 ⇒ v = (b, l − a) up to scale.
            let col = |l: f64| {
                let v0 = b;
                let v1 = C64::new(l - a, 0.0);
                let nrm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
                [v0 / nrm, v1 / nrm]
            };
            let (c1, c2) = (col(l1), col(l2));
            (vec![l1, l2], vec![vec![c1[0], c2[0]], vec![c1[1], c2[1]]])
        }
        _ => panic!("blocks are limited to two sites"),
    }
}

/// Normal form `ω·r + ½⟨ζ, Aζ⟩` with `A = D + N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormHam {
    pub omega: Vec<f64>,
    /// `∂ω_a/∂ρ_b`, when known.
    pub domega: Option<Vec<Vec<f64>>>,
    pub lambdas: Vec<f64>,
    /// Block-diagonal correction in real 2×2 blocks, Π-projected.
    pub correction: BlockMatrix,
    pub constant: f64,
}

impl NormalFormHam {
    pub fn new(omega: Vec<f64>, lambdas: Vec<f64>) -> Self {
        let m = lambdas.len();
        let mut correction = BlockMatrix::zeros(m, true);
        correction.normal_form = true;
        Self {
            omega,
            domega: None,
            lambdas,
            correction,
            constant: 0.0,
        }
    }

    /// Checks `λ_s ≥ c0⟨s⟩` and `|N|_β ≤ δ/8`.
    pub fn validate(
        &self,
        lat: &SiteLattice,
        c0: f64,
        delta: f64,
        beta: f64,
    ) -> Result<(), HamiltonianError> {
        for (i, &l) in self.lambdas.iter().enumerate() {
            let bound = c0 * lat.weight(i);
            if l < bound {
                return Err(HamiltonianError::FrequencyBound {
                    site: lat.site(i),
                    lambda: l,
                    bound,
                });
            }
        }
        let norm = mat_norm(lat, &self.correction, beta, false);
        if norm > delta / 8.0 {
            return Err(HamiltonianError::HypothesisB {
                norm,
                bound: delta / 8.0,
            });
        }
        Ok(())
    }

    /// Full `A = D + N` in real blocks.
    pub fn a_matrix(&self) -> BlockMatrix {
        let mut d = BlockMatrix::zeros(self.lambdas.len(), true);
        for (i, &l) in self.lambdas.iter().enumerate() {
            d.set(i, i, Block::identity().scale(C64::new(l, 0.0)));
        }
        d.normal_form = true;
        d.add(&self.correction).expect("same dimension")
    }

    /// Hermitian `Q_{[s]}` of each lattice block in complex coordinates.
    pub fn q_blocks(&self, lat: &SiteLattice) -> Vec<Vec<Vec<C64>>> {
        let a = self.a_matrix();
        lat.blocks
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|&i| {
                        members
                            .iter()
                            .map(|&j| real_block_to_q(&a.get(i, j)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// `ω·r + ⟨ξ, Qη⟩ + constant` as a polynomial.
    pub fn to_poly(&self, layout: &Layout, lat: &SiteLattice) -> PolyHamiltonian {
        let mut p = PolyHamiltonian::constant(layout, self.constant);
        for (a, &w) in self.omega.iter().enumerate() {
            p.add_assign_scaled(&PolyHamiltonian::action(layout, a), C64::new(w, 0.0));
        }
        for (b, q) in lat.blocks.iter().zip(self.q_blocks(lat)) {
            for (x, &i) in b.iter().enumerate() {
                for (y, &j) in b.iter().enumerate() {
                    p.add_term(
                        Mono::from_parts(&[], &[2 * i, 2 * j + 1]),
                        [0; MAX_TANGENTIAL],
                        q[x][y],
                    );
                }
            }
        }
        p
    }

    /// `h(x)` at a real-convention point `(r, ζ)`; θ does not enter.
    pub fn eval(&self, r: &[f64], z: &WeightedSeq) -> f64 {
        let a = self.a_matrix();
        let zr = z.to_real();
        let az = crate::spaces::mat_vec(&a, &zr).expect("dimension");
        let quad: f64 = zr
            .entries
            .iter()
            .zip(&az.entries)
            .map(|(x, y)| (x[0] * y[0] + x[1] * y[1]).re)
            .sum();
        self.constant + self.omega.iter().zip(r).map(|(w, x)| w * x).sum::<f64>() + 0.5 * quad
    }

    /// `(∇_r h, ∇_θ h, ∇_ζ h) = (ω, 0, Aζ)`.
    pub fn grad(&self, z: &WeightedSeq) -> (Vec<f64>, Vec<f64>, WeightedSeq) {
        let a = self.a_matrix();
        let az = crate::spaces::mat_vec(&a, &z.to_real()).expect("dimension");
        (self.omega.clone(), vec![0.0; self.omega.len()], az)
    }
}

/// Real block `aI + bσ2` at `(s, s′)` ↦ complex coefficient `a − i b` of
/// `ξ_s η_{s′}`.
pub fn real_block_to_q(b: &Block) -> C64 {
    let p = crate::spaces::pi_project(b);
    let a = p.0[0][0];
    let bb = p.0[1][0];
    a - I * bb
}

/// Inverse of [`real_block_to_q`] for a Hermitian coefficient pair.
pub fn q_to_real_block(q: C64) -> Block {
    // q = a − i b with a, b real.
    Block::rotation(C64::new(q.re, 0.0), C64::new(-q.im, 0.0))
}

/// Hermiticity defect of the complex normal-form matrix.
pub fn hermitian_defect(blocks: &[Vec<Vec<C64>>]) -> f64 {
    blocks
        .iter()
        .flat_map(|q| {
            let n = q.len();
            (0..n).flat_map(move |i| (0..n).map(move |j| (q[i][j] - q[j][i].conj()).norm()))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::SiteLattice;

    fn setup() -> (Layout, SiteLattice) {
        let lat = SiteLattice::singletons(&[1], 2);
        let lay = Layout::new(2, lat.len(), 6).unwrap();
        (lay, lat)
    }

    fn xi(i: usize) -> usize {
        2 * i
    }
    fn eta(i: usize) -> usize {
        2 * i + 1
    }

    #[test]
    fn single_pass_matches_separate_evaluations() {
        let (lay, _) = setup();
        let mut f = PolyHamiltonian::zero(&lay);
        f.add_term(
            Mono::from_parts(&[1, 0], &[xi(0), xi(0), eta(1)]),
            mode_from(&[1, -1]),
            C64::new(0.7, 0.2),
        );
        f.add_term(
            Mono::from_parts(&[], &[xi(1), eta(1), eta(2), eta(2)]),
            mode_from(&[0, 2]),
            C64::new(-0.3, 0.0),
        );
        f.add_term(
            Mono::from_parts(&[0, 2], &[]),
            mode_from(&[1, 0]),
            C64::new(0.1, 0.0),
        );
        let mut x = Point::origin(2, lay.nvar);
        x.theta = vec![C64::new(0.3, 0.1), C64::new(1.1, -0.2)];
        x.r = vec![C64::new(0.02, 0.0), C64::new(-0.01, 0.0)];
        x.z = (0..lay.nvar)
            .map(|v| C64::new(0.1 + 0.03 * v as f64, -0.02 * v as f64))
            .collect();
        let (v, g, h) = f.value_grad_hess(&x);
        assert!((v - f.eval(&x)).norm() < 1e-15);
        let (_, _, gz) = f.gradient(&x);
        let hz = f.hessian_z(&x);
        for i in 0..lay.nvar {
            assert!((g[i] - gz[i]).norm() < 1e-15);
            for j in 0..lay.nvar {
                assert!((h[i][j] - hz[i][j]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn canonical_pair() {
        let (lay, _) = setup();
        let r1 = PolyHamiltonian::action(&lay, 0);
        // θ₁ as −i e^{iθ₁} + …  is not polynomial; use {r₁, e^{iθ₁}} = i e^{iθ₁}.
        let mut e = PolyHamiltonian::zero(&lay);
        e.add_term(Mono::ONE, mode_from(&[1, 0]), C64::new(1.0, 0.0));
        let b = r1.bracket(&e).unwrap();
        assert!((b.coeff(&Mono::ONE, &mode_from(&[1, 0])) - I).norm() < 1e-15);
    }

    #[test]
    fn oscillator_bracket_gives_q() {
        let (lay, _) = setup();
        let r = FRAC_1_SQRT_2;
        // ½(p² + q²) = ξη and p = (ξ + η)/√2.
        let mut h = PolyHamiltonian::zero(&lay);
        h.add_term(
            Mono::from_parts(&[], &[xi(0), eta(0)]),
            [0; 4],
            C64::new(1.0, 0.0),
        );
        let mut p = PolyHamiltonian::zero(&lay);
        p.add_term(Mono::from_parts(&[], &[xi(0)]), [0; 4], C64::new(r, 0.0));
        p.add_term(Mono::from_parts(&[], &[eta(0)]), [0; 4], C64::new(r, 0.0));
        let b = h.bracket(&p).unwrap();
        // q = −i(ξ − η)/√2.
        assert!((b.coeff(&Mono::from_parts(&[], &[xi(0)]), &[0; 4]) - (-I * r)).norm() < 1e-15);
        assert!((b.coeff(&Mono::from_parts(&[], &[eta(0)]), &[0; 4]) - (I * r)).norm() < 1e-15);
    }

    #[test]
    fn jet_extracts_template_and_is_idempotent() {
        let (lay, _) = setup();
        let mut f = PolyHamiltonian::zero(&lay);
        f.add_term(Mono::ONE, mode_from(&[1, 0]), C64::new(0.5, 0.0));
        f.add_term(Mono::from_parts(&[1, 0], &[]), [0; 4], C64::new(2.0, 0.0));
        f.add_term(
            Mono::from_parts(&[1, 0], &[xi(1)]),
            [0; 4],
            C64::new(3.0, 0.0),
        );
        f.add_term(Mono::from_parts(&[2, 0], &[]), [0; 4], C64::new(3.0, 0.0));
        f.add_term(
            Mono::from_parts(&[], &[xi(1), eta(2)]),
            [0; 4],
            C64::new(4.0, 0.0),
        );
        f.add_term(
            Mono::from_parts(&[], &[xi(1), eta(2), eta(0)]),
            [0; 4],
            C64::new(5.0, 0.0),
        );
        let j = f.jet();
        assert_eq!(j.len(), 3);
        assert_eq!(j.jet(), j);
        assert!(PolyHamiltonian::zero(&lay).jet().is_empty());
    }

    #[test]
    fn monomial_ops() {
        let m = Mono::from_parts(&[1, 0], &[5, 2, 2]);
        assert_eq!(m.vars().collect::<Vec<_>>(), vec![2, 2, 5]);
        assert_eq!(m.var_counts(), vec![(2, 2), (5, 1)]);
        let (rest, mult) = m.without_var(2).unwrap();
        assert_eq!(mult, 2);
        assert_eq!(rest.vars().collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(m.conj_vars().vars().collect::<Vec<_>>(), vec![3, 3, 4]);
        let p = rest.mul(&Mono::from_parts(&[0, 1], &[3])).unwrap();
        assert_eq!(p.vars().collect::<Vec<_>>(), vec![2, 3, 5]);
        assert_eq!(p.r[..2], [1, 1]);
    }

    #[test]
    fn modes_enumeration() {
        assert_eq!(modes_up_to(2, 1).len(), 5);
        assert_eq!(modes_up_to(2, 8).len(), 145);
        assert_eq!(modes_up_to(1, 3).len(), 7);
    }

    #[test]
    fn constant_norm_is_its_modulus() {
        let (lay, lat) = setup();
        let c = PolyHamiltonian::constant(&lay, -0.75);
        let v = jet_norm(&c, &lat, 0.5, 0.1, &SamplePlan::default()).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        assert_eq!(
            jet_norm(
                &PolyHamiltonian::zero(&lay),
                &lat,
                0.5,
                0.1,
                &SamplePlan::default()
            )
            .unwrap(),
            0.0
        );
        let empty = SamplePlan {
            points: 0,
            ..SamplePlan::default()
        };
        assert!(jet_norm(&c, &lat, 0.5, 0.1, &empty).is_err());
    }

    #[test]
    fn sample_points_lie_on_the_domain_boundary() {
        let (_, lat) = setup();
        let plan = SamplePlan::default();
        for p in plan.base_points(&lat, 2, 0.2) {
            let na = norm_alpha(&lat, &p.seq(), plan.alpha);
            assert!((na - 0.2).abs() < 1e-12);
            let rn = p.r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!((rn - 0.04).abs() < 1e-12);
            assert!(p.seq().is_real_point(1e-12));
        }
        for s in plan.shift_vectors(2, 1.0) {
            assert!((s.iter().map(|x| x.abs()).sum::<f64>() - 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        let q = vec![
            vec![C64::new(2.0, 0.0), C64::new(0.3, -0.4)],
            vec![C64::new(0.3, 0.4), C64::new(1.5, 0.0)],
        ];
        let (l, u) = hermitian_eigen(&q);
        for i in 0..2 {
            for j in 0..2 {
                let mut s = ZERO;
                for k in 0..2 {
                    s += u[i][k] * l[k] * u[j][k].conj();
                }
                assert!((s - q[i][j]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn normal_form_poly_matches_real_evaluation() {
        let lat = SiteLattice::new(&[1], 3, |s| ((s * s) as f64 + 2.0).sqrt(), 2).unwrap();
        let lay = Layout::new(1, lat.len(), 4).unwrap();
        let mut h = NormalFormHam::new(
            vec![1.3],
            (0..lat.len())
                .map(|i| ((lat.site(i).pow(2)) as f64 + 2.0).sqrt())
                .collect(),
        );
        let i3 = lat.index_of(3).unwrap();
        let m3 = lat.index_of(-3).unwrap();
        h.correction.set(
            m3,
            i3,
            Block::rotation(C64::new(0.01, 0.0), C64::new(0.02, 0.0)),
        );
        let qb = h.q_blocks(&lat);
        assert!(hermitian_defect(&qb) < 1e-15);
        let poly = h.to_poly(&lay, &lat);
        let pairs: Vec<[f64; 2]> = (0..lat.len())
            .map(|i| [0.1 * i as f64 - 0.2, 0.05 * (i as f64).sin()])
            .collect();
        let z = WeightedSeq::from_real(&pairs);
        let mut x = Point::origin(1, lay.nvar);
        x.r = vec![C64::new(0.2, 0.0)];
        x.set_seq(&z);
        let direct = h.eval(&[0.2], &z);
        assert!((poly.eval(&x) - C64::new(direct, 0.0)).norm() < 1e-13);
        assert!(poly.reality_defect() < 1e-15);
    }
}
