//! Time-t flows of jet Hamiltonians.
//!
//! Along the flow of `S`, a function evolves by `ġ = {S, g}`, so
//! `θ̇ = ∇_r S`, `ṙ = −∇_θ S` and, in complex coordinates,
//! `ξ̇ = −i ∂_η S`, `η̇ = i ∂_ξ S`. For a jet the θ-equation decouples, the
//! ζ-equation is affine in ζ and the r-equation affine in r, so the image is
//! `(K(θ⁰), S(θ⁰) r⁰ + L(θ⁰, ζ⁰), T(θ⁰) + U(θ⁰) ζ⁰)`.

use crate::error::FlowError;
use crate::hamiltonian::{Layout, Mode, Point, PolyHamiltonian, I, ZERO};
use crate::spaces::{norm_alpha, SiteLattice, C64};

const MAX_TERMS: usize = 60;
const CHEB_NODES: usize = 24;

/// Adaptive Dormand–Prince 5(4) integration of `ẏ = f(y)` from 0 to `t`.
pub fn dopri5(
    f: &dyn Fn(&[C64]) -> Vec<C64>,
    y0: &[C64],
    t: f64,
    tol: f64,
) -> Result<Vec<C64>, FlowError> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut y = y0.to_vec();
    if t == 0.0 {
        return Ok(y);
    }
    let dir = t.signum();
    let mut h = 0.05 * t.abs().min(1.0) * dir;
    let mut done = 0.0f64;
    let mut steps = 0usize;
    while (t - done).abs() > 1e-15 * t.abs().max(1.0) {
        if (done + h - t) * dir > 0.0 {
            h = t - done;
        }
        let mut k: Vec<Vec<C64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    for (yi, ki) in ys.iter_mut().zip(kj) {
                        *yi += ki * (h * A[s][j]);
                    }
                }
            }
            k.push(f(&ys));
        }
        let mut err = 0.0f64;
        let mut ynew = y.clone();
        for i in 0..y.len() {
            let mut d5 = ZERO;
            let mut d4 = ZERO;
            for s in 0..7 {
                d5 += k[s][i] * B5[s];
                d4 += k[s][i] * B4[s];
            }
            ynew[i] += d5 * h;
            let scale = tol * (1.0 + y[i].norm().max(ynew[i].norm()));
            err = err.max(((d5 - d4) * h).norm() / scale);
        }
        if err <= 1.0 {
            done += h;
            y = ynew;
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= fac;
        steps += 1;
        if steps > 200_000 {
            return Err(FlowError::NoConvergence {
                terms: steps,
                last: err,
            });
        }
    }
    Ok(y)
}

/// Hamiltonian vector field of `h` at `x`, same layout as the point.
pub fn vector_field(h: &PolyHamiltonian, x: &Point) -> Point {
    let (gt, gr, gz) = h.gradient(x);
    let mut z = vec![ZERO; gz.len()];
    for i in 0..gz.len() / 2 {
        z[2 * i] = -I * gz[2 * i + 1];
        z[2 * i + 1] = I * gz[2 * i];
    }
    Point {
        theta: gr,
        r: gt.into_iter().map(|v| -v).collect(),
        z,
    }
}

fn pack(x: &Point) -> Vec<C64> {
    x.theta.iter().chain(&x.r).chain(&x.z).copied().collect()
}

fn unpack(y: &[C64], n: usize) -> Point {
    Point {
        theta: y[..n].to_vec(),
        r: y[n..2 * n].to_vec(),
        z: y[2 * n..].to_vec(),
    }
}

/// Direct integration of the full Hamiltonian system of `h`.
pub fn integrate_flow(
    h: &PolyHamiltonian,
    x0: &Point,
    t: f64,
    tol: f64,
) -> Result<Point, FlowError> {
    let n = x0.theta.len();
    let f = |y: &[C64]| pack(&vector_field(h, &unpack(y, n)));
    Ok(unpack(&dopri5(&f, &pack(x0), t, tol)?, n))
}

/// Cumulative integration on Gauss–Chebyshev nodes of `[0, t]`.
#[derive(Clone, Debug)]
struct ChebGrid {
    nodes: Vec<f64>,
    /// Row `i`: weights of `∫_0^{τ_i}`; the last row integrates to `t`.
    integ: Vec<Vec<f64>>,
}

impl ChebGrid {
    fn new(m: usize, t: f64) -> Self {
        use std::f64::consts::PI;
        let x: Vec<f64> = (0..m)
            .map(|i| -(PI * (2 * i + 1) as f64 / (2 * m) as f64).cos())
            .collect();
        let cheb = |k: usize, xv: f64| (k as f64 * xv.clamp(-1.0, 1.0).acos()).cos();
        let mut eval_pts = x.clone();
        eval_pts.push(1.0);
        let mut integ = vec![vec![0.0; m]; m + 1];
        for j in 0..m {
            // Chebyshev coefficients of the j-th cardinal function.
            let mut a: Vec<f64> = (0..m).map(|k| 2.0 / m as f64 * cheb(k, x[j])).collect();
            a[0] *= 0.5;
            let mut b = vec![0.0; m + 1];
            for (k, &ak) in a.iter().enumerate() {
                match k {
                    0 => b[1] += ak,
                    1 => b[2] += ak / 4.0,
                    _ => {
                        b[k + 1] += ak / (2.0 * (k + 1) as f64);
                        b[k - 1] -= ak / (2.0 * (k - 1) as f64);
                    }
                }
            }
            let at = |xv: f64| {
                b.iter()
                    .enumerate()
                    .map(|(k, &bk)| bk * cheb(k, xv))
                    .sum::<f64>()
            };
            let base = at(-1.0);
            for (i, &xv) in eval_pts.iter().enumerate() {
                integ[i][j] = (at(xv) - base) * 0.5 * t;
            }
        }
        Self {
            nodes: x.iter().map(|&xv| 0.5 * t * (1.0 + xv)).collect(),
            integ,
        }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }
}

type Series = Vec<(Mode, C64)>;

fn eval_series(s: &Series, theta: &[C64]) -> C64 {
    s.iter()
        .map(|(k, c)| {
            let mut ph = ZERO;
            for (a, t) in theta.iter().enumerate() {
                ph += t * k[a] as f64;
            }
            c * (I * ph).exp()
        })
        .sum()
}

fn eval_series_d(s: &Series, theta: &[C64], a: usize) -> C64 {
    s.iter()
        .filter(|(k, _)| k[a] != 0)
        .map(|(k, c)| {
            let mut ph = ZERO;
            for (b, t) in theta.iter().enumerate() {
                ph += t * k[b] as f64;
            }
            c * I * k[a] as f64 * (I * ph).exp()
        })
        .sum()
}

/// Structured image of one base angle.
#[derive(Clone, Debug)]
pub struct FlowComponents {
    pub theta: Vec<C64>,
    pub t_vec: Vec<C64>,
    pub u: Vec<Vec<C64>>,
    pub s_mat: Vec<Vec<C64>>,
    pub l_const: Vec<C64>,
    pub l_lin: Vec<Vec<C64>>,
    /// `r`-piece `½⟨ζ⁰, Q_a ζ⁰⟩`.
    pub l_quad: Vec<Vec<Vec<C64>>>,
    pub series_terms: usize,
}

impl FlowComponents {
    pub fn apply(&self, x: &Point) -> Point {
        let n = self.theta.len();
        let nv = self.t_vec.len();
        let mut z = self.t_vec.clone();
        for (i, zi) in z.iter_mut().enumerate() {
            for j in 0..nv {
                *zi += self.u[i][j] * x.z[j];
            }
        }
        let mut r = self.l_const.clone();
        for a in 0..n {
            for b in 0..n {
                r[a] += self.s_mat[a][b] * x.r[b];
            }
            for j in 0..nv {
                r[a] += self.l_lin[a][j] * x.z[j];
            }
            let mut q = ZERO;
            for i in 0..nv {
                for j in 0..nv {
                    if self.l_quad[a][i][j] != ZERO {
                        q += x.z[i] * self.l_quad[a][i][j] * x.z[j];
                    }
                }
            }
            r[a] += q * 0.5;
        }
        Point {
            theta: self.theta.clone(),
            r,
            z,
        }
    }
}

/// Measured norm of the generator and the domain margins `(η, ν)`.
#[derive(Clone, Copy, Debug)]
pub struct Smallness {
    pub norm: f64,
    pub eta: f64,
    pub nu: f64,
}

/// Time-t map of a jet generator.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub t: f64,
    pub tol: f64,
    pub generator: PolyHamiltonian,
    s_theta: Series,
    s_r: Vec<Series>,
    s_z: Vec<(usize, Series)>,
    /// Hessian entries `(v, w)` of the quadratic part, both orders.
    s_zz: Vec<(usize, usize, Series)>,
    grid: ChebGrid,
}

/// Builds the time-`t` flow of a jet. The smallness condition
/// `⟦S⟧ ≤ ½ην²` is enforced when margins are given.
pub fn flow_time(
    s_jet: &PolyHamiltonian,
    t: f64,
    tol: f64,
    check: Option<Smallness>,
) -> Result<FlowMap, FlowError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::BadTime(t));
    }
    if let Some(c) = check {
        let bound = 0.5 * c.eta * c.nu * c.nu;
        if c.norm > bound {
            return Err(FlowError::TooLarge {
                norm: c.norm,
                bound,
            });
        }
    }
    let jet = s_jet.jet();
    let n = jet.layout.n;
    let mut s_theta = Series::new();
    let mut s_r = vec![Series::new(); n];
    let mut s_z: std::collections::BTreeMap<usize, Series> = Default::default();
    let mut s_zz: std::collections::BTreeMap<(usize, usize), Series> = Default::default();
    for (term, c) in jet.sorted_terms() {
        let m = term.mono;
        let vars: Vec<usize> = m.vars().collect();
        match (m.rdeg(), vars.len()) {
            (0, 0) => s_theta.push((term.k, c)),
            (1, 0) => {
                let a = (0..n).find(|&a| m.r[a] == 1).expect("one action");
                s_r[a].push((term.k, c));
            }
            (0, 1) => s_z.entry(vars[0]).or_default().push((term.k, c)),
            (0, 2) => {
                let (v, w) = (vars[0], vars[1]);
                if v == w {
                    s_zz.entry((v, v)).or_default().push((term.k, c * 2.0));
                } else {
                    s_zz.entry((v, w)).or_default().push((term.k, c));
                    s_zz.entry((w, v)).or_default().push((term.k, c));
                }
            }
            _ => unreachable!("jet template"),
        }
    }
    Ok(FlowMap {
        t,
        tol,
        generator: jet,
        s_theta,
        s_r,
        s_z: s_z.into_iter().collect(),
        s_zz: s_zz.into_iter().map(|((v, w), s)| (v, w, s)).collect(),
        grid: ChebGrid::new(CHEB_NODES, t),
    })
}

type Sparse = Vec<(usize, usize, C64)>;

fn sparse_mul(m: &Sparse, x: &[Vec<C64>], rows: usize) -> Vec<Vec<C64>> {
    let cols = x.first().map_or(0, |r| r.len());
    let mut out = vec![vec![ZERO; cols]; rows];
    for &(i, j, v) in m {
        for (o, xv) in out[i].iter_mut().zip(&x[j]) {
            *o += v * xv;
        }
    }
    out
}

fn sparse_vec(m: &Sparse, x: &[C64], rows: usize) -> Vec<C64> {
    let mut out = vec![ZERO; rows];
    for &(i, j, v) in m {
        out[i] += v * x[j];
    }
    out
}

fn max_abs_mat(m: &[Vec<C64>]) -> f64 {
    m.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Picard series for `Ẋ = M(τ) X + F(τ)`, `X(0) = X0`, with values on the
/// grid nodes plus the endpoint.
fn picard<X: Clone>(
    grid: &ChebGrid,
    x0: Option<&X>,
    forcing: Option<&[X]>,
    apply: &dyn Fn(usize, &X) -> X,
    combine: &dyn Fn(&[f64], &[X]) -> X,
    size: &dyn Fn(&X) -> f64,
    add: &dyn Fn(&mut X, &X),
    tol: f64,
) -> Result<(Vec<X>, usize), FlowError> {
    let m = grid.len();
    // Values at nodes (0..m) and endpoint (m).
    let mut term: Vec<X> = match (x0, forcing) {
        (Some(x), None) => vec![x.clone(); m + 1],
        (None, Some(f)) => (0..=m).map(|i| combine(&grid.integ[i], f)).collect(),
        _ => unreachable!("either initial value or forcing"),
    };
    let mut total = term.clone();
    let mut used = 1;
    loop {
        let mapped: Vec<X> = (0..m).map(|l| apply(l, &term[l])).collect();
        let next: Vec<X> = (0..=m).map(|i| combine(&grid.integ[i], &mapped)).collect();
        let mag = next.iter().map(size).fold(0.0, f64::max);
        for (t, x) in total.iter_mut().zip(&next) {
            add(t, x);
        }
        used += 1;
        if mag < tol {
            break;
        }
        if used >= MAX_TERMS {
            return Err(FlowError::NoConvergence {
                terms: used,
                last: mag,
            });
        }
        term = next;
    }
    Ok((total, used))
}

fn combine_mat(w: &[f64], xs: &[Vec<Vec<C64>>]) -> Vec<Vec<C64>> {
    let mut out = vec![vec![ZERO; xs[0].first().map_or(0, |r| r.len())]; xs[0].len()];
    for (wl, x) in w.iter().zip(xs) {
        if *wl == 0.0 {
            continue;
        }
        for (o, xr) in out.iter_mut().zip(x) {
            for (oe, xe) in o.iter_mut().zip(xr) {
                *oe += xe * *wl;
            }
        }
    }
    out
}

#[allow(clippy::ptr_arg)] // passed where a `fn(&mut Vec<_>, &Vec<_>)` is expected
fn add_mat(a: &mut Vec<Vec<C64>>, b: &Vec<Vec<C64>>) {
    for (ar, br) in a.iter_mut().zip(b) {
        for (x, y) in ar.iter_mut().zip(br) {
            *x += y;
        }
    }
}

fn column(v: &[C64]) -> Vec<Vec<C64>> {
    v.iter().map(|&x| vec![x]).collect()
}

fn identity(n: usize) -> Vec<Vec<C64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { C64::new(1.0, 0.0) } else { ZERO })
                .collect()
        })
        .collect()
}

impl FlowMap {
    pub fn layout(&self) -> &Layout {
        &self.generator.layout
    }

    /// `θ̇ = ∇_r S(θ)`.
    fn theta_rhs(&self, th: &[C64]) -> Vec<C64> {
        self.s_r.iter().map(|s| eval_series(s, th)).collect()
    }

    /// `K(θ⁰; τ)` at the grid nodes and at `t`.
    fn theta_path(&self, theta0: &[C64]) -> Result<Vec<Vec<C64>>, FlowError> {
        let mut out = Vec::with_capacity(self.grid.len() + 1);
        let mut cur = theta0.to_vec();
        let mut at = 0.0;
        let f = |y: &[C64]| self.theta_rhs(y);
        let tol = (self.tol * 1e-2).max(1e-15);
        for &tau in self.grid.nodes.iter().chain(std::iter::once(&self.t)) {
            cur = dopri5(&f, &cur, tau - at, tol)?;
            at = tau;
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// `K(θ⁰; t)`.
    pub fn angle_map(&self, theta0: &[C64]) -> Result<Vec<C64>, FlowError> {
        let f = |y: &[C64]| self.theta_rhs(y);
        dopri5(&f, theta0, self.t, (self.tol * 1e-2).max(1e-15))
    }

    pub fn components(&self, theta0: &[C64]) -> Result<FlowComponents, FlowError> {
        let n = self.layout().n;
        let nv = self.layout().nvar;
        let m = self.grid.len();
        let path = self.theta_path(theta0)?;

        // ζ-system ż = P(s₁ + H z), `P` = (ξ ↦ −i ∂_η, η ↦ i ∂_ξ).
        let p_row = |v: usize| {
            if v.is_multiple_of(2) {
                (v + 1, -I)
            } else {
                (v - 1, I)
            }
        };
        let mut mz: Vec<Sparse> = Vec::with_capacity(m);
        let mut bz: Vec<Vec<C64>> = Vec::with_capacity(m);
        for th in path.iter().take(m) {
            let mut sp = Sparse::new();
            for (v, w, s) in &self.s_zz {
                let c = eval_series(s, th);
                // row of P·H: (PH)_{u, w} = coef · H_{v, w} with v = partner(u).
                let u = *v ^ 1;
                let (_, coef) = p_row(u);
                sp.push((u, *w, coef * c));
            }
            mz.push(sp);
            let mut b = vec![ZERO; nv];
            for (v, s) in &self.s_z {
                let u = *v ^ 1;
                let (_, coef) = p_row(u);
                b[u] += coef * eval_series(s, th);
            }
            bz.push(b);
        }
        let apply_m = |l: usize, x: &Vec<Vec<C64>>| sparse_mul(&mz[l], x, nv);
        let (u_vals, used_u) = picard(
            &self.grid,
            Some(&identity(nv)),
            None,
            &apply_m,
            &combine_mat,
            &|x| max_abs_mat(x),
            &add_mat,
            self.tol,
        )?;
        let forcing: Vec<Vec<Vec<C64>>> = bz.iter().map(|b| column(b)).collect();
        let (t_vals, used_t) = if self.s_z.is_empty() {
            (vec![vec![vec![ZERO]; nv]; m + 1], 0)
        } else {
            picard(
                &self.grid,
                None,
                Some(&forcing),
                &apply_m,
                &combine_mat,
                &|x| max_abs_mat(x),
                &add_mat,
                self.tol,
            )?
        };

        // r-system ṙ = −D r − g(θ, z), D_ab = ∂_a S_r,b.
        let mut dmat: Vec<Vec<Vec<C64>>> = Vec::with_capacity(m);
        let mut g_const: Vec<Vec<Vec<C64>>> = Vec::with_capacity(m);
        let mut g_lin: Vec<Vec<Vec<C64>>> = Vec::with_capacity(m);
        let mut g_quad: Vec<Vec<Vec<Vec<C64>>>> = Vec::with_capacity(m);
        for (l, th) in path.iter().take(m).enumerate() {
            let mut d = vec![vec![ZERO; n]; n];
            for (a, row) in d.iter_mut().enumerate() {
                for (b, e) in row.iter_mut().enumerate() {
                    *e = eval_series_d(&self.s_r[b], th, a);
                }
            }
            dmat.push(d.iter().map(|r| r.iter().map(|x| -x).collect()).collect());
            let tv: Vec<C64> = t_vals[l].iter().map(|r| r[0]).collect();
            let uv = &u_vals[l];
            let mut gc = Vec::with_capacity(n);
            let mut gl = Vec::with_capacity(n);
            let mut gq = Vec::with_capacity(n);
            for a in 0..n {
                let dl: Vec<(usize, C64)> = self
                    .s_z
                    .iter()
                    .map(|(v, s)| (*v, eval_series_d(s, th, a)))
                    .collect();
                let dw: Sparse = self
                    .s_zz
                    .iter()
                    .map(|(v, w, s)| (*v, *w, eval_series_d(s, th, a)))
                    .collect();
                let wt = sparse_vec(&dw, &tv, nv);
                let mut c = eval_series_d(&self.s_theta, th, a);
                for &(v, x) in &dl {
                    c += x * tv[v];
                }
                c += tv.iter().zip(&wt).map(|(x, y)| x * y).sum::<C64>() * 0.5;
                // Linear coefficient Uᵀ(dl + W T).
                let mut vecd = wt.clone();
                for &(v, x) in &dl {
                    vecd[v] += x;
                }
                let lin: Vec<C64> = (0..nv)
                    .map(|j| (0..nv).map(|i| uv[i][j] * vecd[i]).sum())
                    .collect();
                // Quadratic coefficient Uᵀ W U.
                let wu = sparse_mul(&dw, uv, nv);
                let mut q = vec![vec![ZERO; nv]; nv];
                if !dw.is_empty() {
                    for i in 0..nv {
                        for k in 0..nv {
                            let uik = uv[k][i];
                            if uik == ZERO {
                                continue;
                            }
                            for j in 0..nv {
                                q[i][j] += uik * wu[k][j];
                            }
                        }
                    }
                }
                gc.push(vec![-c]);
                gl.push(lin.into_iter().map(|x| -x).collect());
                gq.push(
                    q.into_iter()
                        .map(|r| r.into_iter().map(|x| -x).collect())
                        .collect(),
                );
            }
            g_const.push(gc);
            g_lin.push(gl);
            g_quad.push(gq);
        }
        let apply_d = |l: usize, x: &Vec<Vec<C64>>| {
            let d = &dmat[l];
            let cols = x.first().map_or(0, |r| r.len());
            let mut out = vec![vec![ZERO; cols]; n];
            for a in 0..n {
                for b in 0..n {
                    if d[a][b] != ZERO {
                        for (o, xv) in out[a].iter_mut().zip(&x[b]) {
                            *o += d[a][b] * xv;
                        }
                    }
                }
            }
            out
        };
        let (s_vals, used_s) = picard(
            &self.grid,
            Some(&identity(n)),
            None,
            &apply_d,
            &combine_mat,
            &|x| max_abs_mat(x),
            &add_mat,
            self.tol,
        )?;
        let (lc, _) = picard(
            &self.grid,
            None,
            Some(&g_const),
            &apply_d,
            &combine_mat,
            &|x| max_abs_mat(x),
            &add_mat,
            self.tol,
        )?;
        let (ll, _) = picard(
            &self.grid,
            None,
            Some(&g_lin),
            &apply_d,
            &combine_mat,
            &|x| max_abs_mat(x),
            &add_mat,
            self.tol,
        )?;
        let has_quad = !self.s_zz.is_empty();
        let l_quad = if has_quad {
            // Quadratic piece: the a-index is the outer one, handle per (i, ·) slice.
            let apply_q = |l: usize, x: &Vec<Vec<Vec<C64>>>| {
                let d = &dmat[l];
                let mut out = vec![vec![vec![ZERO; nv]; nv]; n];
                for a in 0..n {
                    for b in 0..n {
                        if d[a][b] != ZERO {
                            for (orow, xrow) in out[a].iter_mut().zip(&x[b]) {
                                for (o, xv) in orow.iter_mut().zip(xrow) {
                                    *o += d[a][b] * xv;
                                }
                            }
                        }
                    }
                }
                out
            };
            let combine3 = |w: &[f64], xs: &[Vec<Vec<Vec<C64>>>]| {
                let mut out = vec![vec![vec![ZERO; nv]; nv]; n];
                for (wl, x) in w.iter().zip(xs) {
                    for a in 0..n {
                        for i in 0..nv {
                            for j in 0..nv {
                                let v = x[a][i][j];
                                if v != ZERO {
                                    out[a][i][j] += v * *wl;
                                }
                            }
                        }
                    }
                }
                out
            };
            let size3 =
                |x: &Vec<Vec<Vec<C64>>>| x.iter().map(|m| max_abs_mat(m)).fold(0.0, f64::max);
            let add3 = |a: &mut Vec<Vec<Vec<C64>>>, b: &Vec<Vec<Vec<C64>>>| {
                for (x, y) in a.iter_mut().zip(b) {
                    add_mat(x, y);
                }
            };
            let (lq, _) = picard(
                &self.grid,
                None,
                Some(&g_quad),
                &apply_q,
                &combine3,
                &size3,
                &add3,
                self.tol,
            )?;
            lq[m].clone()
        } else {
            vec![vec![vec![ZERO; nv]; nv]; n]
        };
        Ok(FlowComponents {
            theta: path[m].clone(),
            t_vec: t_vals[m].iter().map(|r| r[0]).collect(),
            u: u_vals[m].clone(),
            s_mat: s_vals[m].clone(),
            l_const: lc[m].iter().map(|r| r[0]).collect(),
            l_lin: ll[m].clone(),
            l_quad,
            series_terms: used_u.max(used_t).max(used_s),
        })
    }

    pub fn apply(&self, x: &Point) -> Result<Point, FlowError> {
        Ok(self.components(&x.theta)?.apply(x))
    }
}

/// `H ∘ Φ^t` by the Lie series `Σ tʲ/j! adʲ_S H` with `ad_S G = {S, G}`.
/// Weighted degrees never increase under a jet generator, so only the
/// θ-mode cap truncates.
pub fn compose_hamiltonian(
    h: &PolyHamiltonian,
    phi: &FlowMap,
) -> Result<PolyHamiltonian, FlowError> {
    lie_series(h, &phi.generator, phi.t, phi.tol)
}

pub fn lie_series(
    h: &PolyHamiltonian,
    s: &PolyHamiltonian,
    t: f64,
    tol: f64,
) -> Result<PolyHamiltonian, FlowError> {
    let mut out = h.clone();
    let mut term = h.clone();
    let scale = h.l1().max(1.0);
    for j in 1..=MAX_TERMS {
        term = s.bracket(&term)?.scale(C64::new(t / j as f64, 0.0));
        let mag = term.l1();
        out.add_assign_scaled(&term, C64::new(1.0, 0.0));
        if mag < tol * scale {
            return Ok(out);
        }
    }
    Err(FlowError::NoConvergence {
        terms: MAX_TERMS,
        last: term.l1(),
    })
}

fn dense_mul(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![ZERO; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            let aik = a[i][k];
            if aik == ZERO {
                continue;
            }
            for j in 0..m {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn transpose(a: &[Vec<C64>]) -> Vec<Vec<C64>> {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

/// `max ‖DΦᵀ Ω DΦ − Ω‖` over real points, `Ω` the inverse Poisson tensor
/// in real coordinates `(θ, r, p, q)`.
pub fn check_symplectic(phi: &FlowMap, points: &[Point]) -> Result<f64, FlowError> {
    let n = phi.layout().n;
    let nv = phi.layout().nvar;
    let d = 2 * n + nv;
    let h = 1e-5;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // Complex = C · real on each site pair.
    let mut c = vec![vec![ZERO; d]; d];
    let mut cinv = vec![vec![ZERO; d]; d];
    for i in 0..2 * n {
        c[i][i] = C64::new(1.0, 0.0);
        cinv[i][i] = C64::new(1.0, 0.0);
    }
    for p in 0..nv / 2 {
        let (x, e) = (2 * n + 2 * p, 2 * n + 2 * p + 1);
        c[x][x] = C64::new(s, 0.0);
        c[x][e] = I * s;
        c[e][x] = C64::new(s, 0.0);
        c[e][e] = -I * s;
        cinv[x][x] = C64::new(s, 0.0);
        cinv[x][e] = C64::new(s, 0.0);
        cinv[e][x] = -I * s;
        cinv[e][e] = I * s;
    }
    let mut omega = vec![vec![ZERO; d]; d];
    for a in 0..n {
        omega[a][n + a] = C64::new(1.0, 0.0);
        omega[n + a][a] = C64::new(-1.0, 0.0);
    }
    for p in 0..nv / 2 {
        let (x, e) = (2 * n + 2 * p, 2 * n + 2 * p + 1);
        // −J with J = [[0, −1], [1, 0]].
        omega[x][e] = C64::new(1.0, 0.0);
        omega[e][x] = C64::new(-1.0, 0.0);
    }
    let mut worst = 0.0f64;
    for x in points {
        let comp = phi.components(&x.theta)?;
        let mut jac = vec![vec![ZERO; d]; d];
        for a in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.theta[a] += h;
            xm.theta[a] -= h;
            let (yp, ym) = (phi.apply(&xp)?, phi.apply(&xm)?);
            let (vp, vm) = (pack(&yp), pack(&ym));
            for i in 0..d {
                jac[i][a] = (vp[i] - vm[i]) / (2.0 * h);
            }
        }
        for a in 0..n {
            for b in 0..n {
                jac[n + a][n + b] = comp.s_mat[a][b];
            }
            for j in 0..nv {
                let mut v = comp.l_lin[a][j];
                for i in 0..nv {
                    v += 0.5 * (comp.l_quad[a][j][i] + comp.l_quad[a][i][j]) * x.z[i];
                }
                jac[n + a][2 * n + j] = v;
            }
        }
        for i in 0..nv {
            for j in 0..nv {
                jac[2 * n + i][2 * n + j] = comp.u[i][j];
            }
        }
        let real = dense_mul(&dense_mul(&cinv, &jac), &c);
        let lhs = dense_mul(&dense_mul(&transpose(&real), &omega), &real);
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((lhs[i][j] - omega[i][j]).norm());
            }
        }
    }
    Ok(worst)
}

/// Worst slack of the displacement bounds `|θ(t) − θ⁰| ≤ μ⁻²⟦S⟧` and
/// `‖ζ(t) − ζ⁰‖_α ≤ (1 + μ⁻²‖ζ⁰‖_α)⟦S⟧` over `points`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementCheck {
    /// Largest `|θ(t) − θ⁰| / (μ⁻²⟦S⟧)`.
    pub theta_ratio: f64,
    /// Largest `‖ζ(t) − ζ⁰‖_α / ((1 + μ⁻²‖ζ⁰‖_α)⟦S⟧)`.
    pub zeta_ratio: f64,
}

impl DisplacementCheck {
    pub fn holds(&self) -> bool {
        self.theta_ratio <= 1.0 && self.zeta_ratio <= 1.0
    }
}

pub fn displacement_check(
    phi: &FlowMap,
    points: &[Point],
    lat: &SiteLattice,
    s_norm: f64,
    mu: f64,
    alpha: f64,
) -> Result<DisplacementCheck, FlowError> {
    let n = phi.layout().n;
    let mut out = DisplacementCheck {
        theta_ratio: 0.0,
        zeta_ratio: 0.0,
    };
    let ratio = |d: f64, b: f64| if d == 0.0 { 0.0 } else { d / b };
    for x in points {
        let y = phi.apply(x)?;
        let dth = (0..n)
            .map(|a| (y.theta[a] - x.theta[a]).norm())
            .fold(0.0, f64::max);
        out.theta_ratio = out.theta_ratio.max(ratio(dth, s_norm / (mu * mu)));
        let mut d = x.clone();
        for (i, v) in d.z.iter_mut().enumerate() {
            *v = y.z[i] - x.z[i];
        }
        let z0 = norm_alpha(lat, &x.seq(), alpha);
        let dz = norm_alpha(lat, &d.seq(), alpha);
        out.zeta_ratio = out
            .zeta_ratio
            .max(ratio(dz, (1.0 + z0 / (mu * mu)) * s_norm));
    }
    Ok(out)
}

/// Identity components, for callers that need a neutral element.
pub fn identity_components(theta0: &[C64], n: usize, nv: usize) -> FlowComponents {
    FlowComponents {
        theta: theta0.to_vec(),
        t_vec: vec![ZERO; nv],
        u: identity(nv),
        s_mat: identity(n),
        l_const: vec![ZERO; n],
        l_lin: vec![vec![ZERO; nv]; n],
        l_quad: vec![vec![vec![ZERO; nv]; nv]; n],
        series_terms: 0,
    }
}
