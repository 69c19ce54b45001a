//! Seeded random instances shared by the integration tests.
#![allow(dead_code)]

use kam_engine::spaces::{Block, BlockMatrix, SiteLattice, WeightedSeq};
use rand::Rng;

/// Weight profile of a random instance: `⟨s⟩^{-β}` times an optional
/// `⟨s⟩^{-1}` or `(1 + ||s| − |s′||)^{-1}` factor.
#[derive(Clone, Copy, Debug)]
pub enum Class {
    Beta,
    BetaPlus,
}

fn amplitude<R: Rng>(rng: &mut R, same_sign: bool) -> f64 {
    let u: f64 = rng.random();
    if same_sign || rng.random::<bool>() {
        u
    } else {
        -u
    }
}

/// Random block matrix in `M_β` or `M_{β+}` with unit-scale norm. Dense
/// with probability ½, otherwise about a quarter of the blocks are set.
pub fn random_matrix<R: Rng>(
    rng: &mut R,
    lat: &SiteLattice,
    beta: f64,
    class: Class,
) -> BlockMatrix {
    let m = lat.len();
    let dense = rng.random::<bool>();
    let same_sign = rng.random::<bool>();
    let mut a = BlockMatrix::zeros(m, false);
    for i in 0..m {
        for j in 0..m {
            if !dense && rng.random::<f64>() > 0.25 {
                continue;
            }
            let mut w = (lat.weight(i) * lat.weight(j)).powf(-beta);
            if let Class::BetaPlus = class {
                w /= lat.separation(i, j);
            }
            let mut e = [[0.0; 2]; 2];
            for row in &mut e {
                for x in row.iter_mut() {
                    *x = w * amplitude(rng, same_sign);
                }
            }
            a.set(i, j, Block::real(e));
        }
    }
    a
}

/// Random sequence in `L_β` (weights `⟨s⟩^{-β}`) or `L_{β+}` (`⟨s⟩^{-β-1}`).
pub fn random_seq<R: Rng>(rng: &mut R, lat: &SiteLattice, beta: f64, class: Class) -> WeightedSeq {
    let same_sign = rng.random::<bool>();
    let p = match class {
        Class::Beta => beta,
        Class::BetaPlus => beta + 1.0,
    };
    let pairs: Vec<[f64; 2]> = (0..lat.len())
        .map(|i| {
            let w = lat.weight(i).powf(-p);
            [w * amplitude(rng, same_sign), w * amplitude(rng, same_sign)]
        })
        .collect();
    WeightedSeq::from_real(&pairs)
}

use kam_engine::hamiltonian::{mode_from, Layout, Mono, Point, PolyHamiltonian};
use kam_engine::spaces::C64;

fn coeff<R: Rng>(rng: &mut R, size: f64) -> C64 {
    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * size
}

fn random_mode<R: Rng>(rng: &mut R, n: usize, kmax: i32) -> Vec<i32> {
    let mut k = vec![0; n];
    let mut room = kmax;
    for x in &mut k {
        let v = rng.random_range(-room..=room);
        *x = v;
        room -= v.abs();
    }
    k
}

/// Random polynomial with `|k|₁ ≤ kmax`, `r`-degree ≤ `rdeg`, `ζ`-degree ≤ `zdeg`.
pub fn random_poly<R: Rng>(
    rng: &mut R,
    lay: &Layout,
    terms: usize,
    kmax: i32,
    rdeg: u8,
    zdeg: usize,
    size: f64,
) -> PolyHamiltonian {
    let mut f = PolyHamiltonian::zero(lay);
    for _ in 0..terms {
        let k = mode_from(&random_mode(rng, lay.n, kmax));
        let mut r = vec![0u8; lay.n];
        let mut left = rng.random_range(0..=rdeg);
        while left > 0 {
            r[rng.random_range(0..lay.n)] += 1;
            left -= 1;
        }
        let d = rng.random_range(0..=zdeg);
        let vars: Vec<usize> = (0..d).map(|_| rng.random_range(0..lay.nvar)).collect();
        f.add_term(Mono::from_parts(&r, &vars), k, coeff(rng, size));
    }
    f
}

/// Random jet: every monomial has `r`-degree ≤ 1, `ζ`-degree ≤ 2 and no `rζ` mixing.
pub fn random_jet<R: Rng>(rng: &mut R, lay: &Layout, kmax: i32, size: f64) -> PolyHamiltonian {
    let mut f = PolyHamiltonian::zero(lay);
    for k in kam_engine::hamiltonian::modes_up_to(lay.n, kmax as u32) {
        f.add_term(Mono::ONE, k, coeff(rng, size));
        for a in 0..lay.n {
            let mut r = vec![0u8; lay.n];
            r[a] = 1;
            f.add_term(Mono::from_parts(&r, &[]), k, coeff(rng, size));
        }
        for v in 0..lay.nvar {
            f.add_term(Mono::from_parts(&[], &[v]), k, coeff(rng, size));
            for w in v..lay.nvar {
                if rng.random::<f64>() < 0.3 {
                    f.add_term(Mono::from_parts(&[], &[v, w]), k, coeff(rng, size));
                }
            }
        }
    }
    f.realify()
}

/// Real point: real angles and actions, `η = ξ̄`.
pub fn real_point<R: Rng>(rng: &mut R, lay: &Layout, r_size: f64, z_size: f64) -> Point {
    let mut x = Point::origin(lay.n, lay.nvar);
    x.theta = (0..lay.n)
        .map(|_| C64::new(rng.random::<f64>() * std::f64::consts::TAU, 0.0))
        .collect();
    x.r = (0..lay.n)
        .map(|_| C64::new((rng.random::<f64>() - 0.5) * r_size, 0.0))
        .collect();
    for i in 0..lay.nvar / 2 {
        let xi = coeff(rng, z_size);
        x.z[2 * i] = xi;
        x.z[2 * i + 1] = xi.conj();
    }
    x
}

/// Complex point near the real torus.
pub fn complex_point<R: Rng>(
    rng: &mut R,
    lay: &Layout,
    shift: f64,
    r_size: f64,
    z_size: f64,
) -> Point {
    let mut x = real_point(rng, lay, r_size, z_size);
    for t in &mut x.theta {
        t.im = (rng.random::<f64>() - 0.5) * 2.0 * shift;
    }
    for v in &mut x.z {
        *v = coeff(rng, z_size);
    }
    x
}
