//! Truncated weighted sequence spaces and 2×2-block matrices.
//!
//! Sites live on a finite lattice `L_S = {s ∉ A : |s| ≤ S_max}`. A sequence
//! carries one pair per site, either real `(p_s, q_s)` or complex
//! `(ξ_s, η_s)`. Matrices are sparse maps from site pairs to 2×2 blocks.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::SpaceError;

pub type C64 = Complex64;

/// `⟨s⟩ = max(|s|, 1)`.
pub fn bracket_weight(s: i64) -> f64 {
    (s.unsigned_abs().max(1)) as f64
}

/// Tolerance under which two normal frequencies are merged into one block.
pub const BLOCK_TOL: f64 = 1e-12;

/// Tangential and normal sites with the partition of normal sites into
/// blocks of equal frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteLattice {
    pub tangential: Vec<i64>,
    pub sites: Vec<i64>,
    pub blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl SiteLattice {
    /// Builds the lattice and groups sites whose `freq` values agree to
    /// [`BLOCK_TOL`]. Fails if a block would exceed `max_block` sites.
    pub fn new(
        tangential: &[i64],
        s_max: i64,
        freq: impl Fn(i64) -> f64,
        max_block: usize,
    ) -> Result<Self, SpaceError> {
        let mut tangential = tangential.to_vec();
        tangential.sort_unstable();
        tangential.dedup();
        let sites: Vec<i64> = (-s_max..=s_max)
            .filter(|s| !tangential.contains(s))
            .collect();
        let lambdas: Vec<f64> = sites.iter().map(|&s| freq(s)).collect();
        let mut block_of = vec![usize::MAX; sites.len()];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for i in 0..sites.len() {
            if block_of[i] != usize::MAX {
                continue;
            }
            let members: Vec<usize> = (i..sites.len())
                .filter(|&j| {
                    block_of[j] == usize::MAX && (lambdas[j] - lambdas[i]).abs() <= BLOCK_TOL
                })
                .collect();
            if members.len() > max_block {
                return Err(SpaceError::BlockTooLarge {
                    site: sites[i],
                    size: members.len(),
                    max: max_block,
                });
            }
            for &j in &members {
                block_of[j] = blocks.len();
            }
            blocks.push(members);
        }
        Ok(Self {
            tangential,
            sites,
            blocks,
            block_of,
        })
    }

    /// Lattice with every site in its own block.
    pub fn singletons(tangential: &[i64], s_max: i64) -> Self {
        Self::new(tangential, s_max, |s| s as f64, 1).expect("distinct frequencies")
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> i64 {
        self.sites[i]
    }

    pub fn index_of(&self, s: i64) -> Option<usize> {
        self.sites.iter().position(|&x| x == s)
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.block_of[i]
    }

    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.block_of[i] == self.block_of[j]
    }

    pub fn weight(&self, i: usize) -> f64 {
        bracket_weight(self.sites[i])
    }

    /// `1 + ||s| − |s′||`.
    pub fn separation(&self, i: usize, j: usize) -> f64 {
        1.0 + (self.sites[i].abs() - self.sites[j].abs()).abs() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    Real,
    Complex,
}

/// A truncated sequence with one pair per lattice site.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSeq {
    pub entries: Vec<[C64; 2]>,
    pub convention: Convention,
}

impl WeightedSeq {
    pub fn zeros(len: usize, convention: Convention) -> Self {
        Self {
            entries: vec![[C64::new(0.0, 0.0); 2]; len],
            convention,
        }
    }

    pub fn from_real(pairs: &[[f64; 2]]) -> Self {
        Self {
            entries: pairs
                .iter()
                .map(|p| [C64::new(p[0], 0.0), C64::new(p[1], 0.0)])
                .collect(),
            convention: Convention::Real,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Euclidean norm of the pair at position `i`.
    pub fn pair_norm(&self, i: usize) -> f64 {
        let [a, b] = self.entries[i];
        (a.norm_sqr() + b.norm_sqr()).sqrt()
    }

    /// True when the sequence is a real point of its convention.
    pub fn is_real_point(&self, tol: f64) -> bool {
        self.entries.iter().all(|[a, b]| match self.convention {
            Convention::Real => a.im.abs() <= tol && b.im.abs() <= tol,
            Convention::Complex => (b - a.conj()).norm() <= tol,
        })
    }

    /// `(p, q) ↦ (ξ, η) = ((p + iq)/√2, (p − iq)/√2)`.
    pub fn to_complex(&self) -> Self {
        if self.convention == Convention::Complex {
            return self.clone();
        }
        let i = C64::new(0.0, 1.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            entries: self
                .entries
                .iter()
                .map(|[p, q]| [(p + i * q) * r, (p - i * q) * r])
                .collect(),
            convention: Convention::Complex,
        }
    }

    /// Inverse of [`WeightedSeq::to_complex`].
    pub fn to_real(&self) -> Self {
        if self.convention == Convention::Real {
            return self.clone();
        }
        let i = C64::new(0.0, 1.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            entries: self
                .entries
                .iter()
                .map(|[x, e]| [(x + e) * r, (x - e) * (-i) * r])
                .collect(),
            convention: Convention::Real,
        }
    }
}

/// `‖ζ‖_α = sqrt(Σ |ζ_s|² ⟨s⟩^{2α})`.
pub fn norm_alpha(lat: &SiteLattice, z: &WeightedSeq, alpha: f64) -> f64 {
    (0..z.len())
        .map(|i| z.pair_norm(i).powi(2) * lat.weight(i).powf(2.0 * alpha))
        .sum::<f64>()
        .sqrt()
}

/// `sup |ζ_s| ⟨s⟩^β`, or with exponent `β + 1` when `plus`.
pub fn norm_beta(lat: &SiteLattice, z: &WeightedSeq, beta: f64, plus: bool) -> f64 {
    let e = if plus { beta + 1.0 } else { beta };
    (0..z.len())
        .map(|i| z.pair_norm(i) * lat.weight(i).powf(e))
        .fold(0.0, f64::max)
}

/// A 2×2 block, rows and columns indexed by the pair components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block(pub [[C64; 2]; 2]);

impl Block {
    pub const ZERO: Block = Block([[C64::new(0.0, 0.0); 2]; 2]);

    pub fn identity() -> Self {
        Self::real([[1.0, 0.0], [0.0, 1.0]])
    }

    /// The rotation generator `[[0, −1], [1, 0]]`.
    pub fn sigma2() -> Self {
        Self::real([[0.0, -1.0], [1.0, 0.0]])
    }

    pub fn real(m: [[f64; 2]; 2]) -> Self {
        Block([
            [C64::new(m[0][0], 0.0), C64::new(m[0][1], 0.0)],
            [C64::new(m[1][0], 0.0), C64::new(m[1][1], 0.0)],
        ])
    }

    /// `a I + b σ2`.
    pub fn rotation(a: C64, b: C64) -> Self {
        Block([[a, -b], [b, a]])
    }

    pub fn transpose(&self) -> Self {
        let m = self.0;
        Block([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn scale(&self, c: C64) -> Self {
        let m = self.0;
        Block([[m[0][0] * c, m[0][1] * c], [m[1][0] * c, m[1][1] * c]])
    }

    pub fn add(&self, o: &Block) -> Self {
        let (a, b) = (self.0, o.0);
        Block([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn mul(&self, o: &Block) -> Self {
        let (a, b) = (self.0, o.0);
        let mut c = [[C64::new(0.0, 0.0); 2]; 2];
        for (i, row) in c.iter_mut().enumerate() {
            for (j, cij) in row.iter_mut().enumerate() {
                *cij = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Block(c)
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        let m = self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// Max absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_pi_projected(&self, tol: f64) -> bool {
        let m = self.0;
        (m[0][0] - m[1][1]).norm() <= tol && (m[0][1] + m[1][0]).norm() <= tol
    }
}

/// Orthogonal projection onto `span{I, σ2}`:
/// `((m11 + m22)/2) I + ((m21 − m12)/2) σ2`.
pub fn pi_project(m: &Block) -> Block {
    let b = m.0;
    Block::rotation((b[0][0] + b[1][1]) * 0.5, (b[1][0] - b[0][1]) * 0.5)
}

/// Sparse block matrix over lattice positions.
///
/// With `symmetric` set only blocks with `i ≤ j` are stored and the lower
/// half is read back as the transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    dim: usize,
    blocks: BTreeMap<(usize, usize), Block>,
    pub symmetric: bool,
    pub normal_form: bool,
}

impl BlockMatrix {
    pub fn zeros(dim: usize, symmetric: bool) -> Self {
        Self {
            dim,
            blocks: BTreeMap::new(),
            symmetric,
            normal_form: false,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, true);
        for i in 0..dim {
            m.set(i, i, Block::identity());
        }
        m.normal_form = true;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Block {
        if self.symmetric && i > j {
            return self
                .blocks
                .get(&(j, i))
                .map(|b| b.transpose())
                .unwrap_or(Block::ZERO);
        }
        self.blocks.get(&(i, j)).copied().unwrap_or(Block::ZERO)
    }

    /// Stores a block; in symmetric storage the transposed partner is implied.
    pub fn set(&mut self, i: usize, j: usize, b: Block) {
        if self.symmetric && i > j {
            self.blocks.insert((j, i), b.transpose());
        } else {
            self.blocks.insert((i, j), b);
        }
    }

    /// All nonzero blocks, including implied lower halves.
    pub fn entries(&self) -> Vec<((usize, usize), Block)> {
        let mut out = Vec::with_capacity(self.blocks.len() * 2);
        for (&(i, j), b) in &self.blocks {
            out.push(((i, j), *b));
            if self.symmetric && i != j {
                out.push(((j, i), b.transpose()));
            }
        }
        out
    }

    pub fn stored_len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.entries().iter().all(|&((i, j), b)| {
            let t = self.get(j, i).transpose();
            (0..2).all(|r| (0..2).all(|c| (b.0[r][c] - t.0[r][c]).norm() <= tol))
        })
    }

    pub fn is_pi_projected(&self, tol: f64) -> bool {
        self.blocks.values().all(|b| b.is_pi_projected(tol))
    }

    /// True when no block couples two different frequency blocks.
    pub fn is_block_diagonal(&self, lat: &SiteLattice, tol: f64) -> bool {
        self.blocks
            .iter()
            .all(|(&(i, j), b)| lat.same_block(i, j) || b.max_abs() <= tol)
    }

    pub fn add(&self, o: &BlockMatrix) -> Result<BlockMatrix, SpaceError> {
        if self.dim != o.dim {
            return Err(SpaceError::Dimension {
                left: self.dim,
                right: o.dim,
            });
        }
        let symmetric = self.symmetric && o.symmetric;
        let mut out = BlockMatrix::zeros(self.dim, symmetric);
        for ((i, j), b) in self.entries().into_iter().chain(o.entries()) {
            if symmetric && i > j {
                continue;
            }
            let cur = out.get(i, j);
            out.set(i, j, cur.add(&b));
        }
        out.normal_form = self.normal_form && o.normal_form;
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> BlockMatrix {
        let mut out = self.clone();
        for b in out.blocks.values_mut() {
            *b = b.scale(C64::new(c, 0.0));
        }
        out
    }
}

/// `|A|_β = sup ⟨s⟩^β ⟨s′⟩^β ‖A_s^{s′}‖_∞`, with the extra factor
/// `1 + ||s| − |s′||` when `plus`.
pub fn mat_norm(lat: &SiteLattice, a: &BlockMatrix, beta: f64, plus: bool) -> f64 {
    a.entries()
        .iter()
        .map(|&((i, j), b)| {
            let w = (lat.weight(i) * lat.weight(j)).powf(beta);
            let sep = if plus { lat.separation(i, j) } else { 1.0 };
            w * sep * b.max_abs()
        })
        .fold(0.0, f64::max)
}

pub fn mat_mul(a: &BlockMatrix, b: &BlockMatrix) -> Result<BlockMatrix, SpaceError> {
    if a.dim != b.dim {
        return Err(SpaceError::Dimension {
            left: a.dim,
            right: b.dim,
        });
    }
    let mut rows: BTreeMap<usize, Vec<(usize, Block)>> = BTreeMap::new();
    for ((k, j), blk) in b.entries() {
        rows.entry(k).or_default().push((j, blk));
    }
    let mut out = BlockMatrix::zeros(a.dim, false);
    for ((i, k), ab) in a.entries() {
        if let Some(row) = rows.get(&k) {
            for &(j, bb) in row {
                let cur = out.get(i, j);
                out.set(i, j, cur.add(&ab.mul(&bb)));
            }
        }
    }
    Ok(out)
}

pub fn mat_vec(a: &BlockMatrix, z: &WeightedSeq) -> Result<WeightedSeq, SpaceError> {
    if a.dim != z.len() {
        return Err(SpaceError::Dimension {
            left: a.dim,
            right: z.len(),
        });
    }
    let mut out = WeightedSeq::zeros(z.len(), z.convention);
    for ((i, j), b) in a.entries() {
        let v = b.apply(z.entries[j]);
        out.entries[i][0] += v[0];
        out.entries[i][1] += v[1];
    }
    Ok(out)
}

/// `(X ⊗ Y)_s^{s′} = X_s Y_{s′}ᵀ`.
pub fn outer(x: &WeightedSeq, y: &WeightedSeq) -> Result<BlockMatrix, SpaceError> {
    if x.len() != y.len() {
        return Err(SpaceError::Dimension {
            left: x.len(),
            right: y.len(),
        });
    }
    let mut out = BlockMatrix::zeros(x.len(), false);
    for i in 0..x.len() {
        if x.pair_norm(i) == 0.0 {
            continue;
        }
        for j in 0..y.len() {
            if y.pair_norm(j) == 0.0 {
                continue;
            }
            let (a, b) = (x.entries[i], y.entries[j]);
            out.set(
                i,
                j,
                Block([[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]]),
            );
        }
    }
    Ok(out)
}

/// Constants bounding the block-product and matrix-vector inequalities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConstants {
    /// `2 sup_s Σ_k ⟨k⟩^{-2β} (1 + ||k| − |s||)^{-1}`.
    pub product: f64,
    /// `2 Σ_k ⟨k⟩^{-2β-1}`.
    pub decay: f64,
    /// `2 sup_s Σ_k ⟨s⟩ ⟨k⟩^{-2β-1} (1 + ||k| − |s||)^{-1}`.
    pub plus_plus: f64,
}

impl NormConstants {
    /// Largest of the three, usable for every item of the inequality suite.
    pub fn max(&self) -> f64 {
        self.product.max(self.decay).max(self.plus_plus)
    }
}

/// Evaluates the series constants over the full integer lattice.
///
/// Sums over `|k| ≤ k_cut` are exact; the tails are bounded by integrals
/// and added, so the result dominates every finite truncation. The
/// supremum over `s` is taken over `|s| ≤ s_cut`.
pub fn norm_constants(beta: f64, s_cut: i64, k_cut: i64) -> NormConstants {
    assert!(beta > 0.0 && k_cut > s_cut.max(1) * 2);
    let w = |k: i64| bracket_weight(k);
    let mut product: f64 = 0.0;
    let mut plus_plus: f64 = 0.0;
    // Tail Σ_{|k|>K} k^{-p}/(k − s) ≤ 2 ∫_K^∞ x^{-p}/(x − s) dx ≤ 2 (K/(K−s)) K^{-p}/p.
    let kf = k_cut as f64;
    for s in 0..=s_cut {
        let sw = w(s);
        let mut a = 0.0;
        let mut b = 0.0;
        for k in -k_cut..=k_cut {
            let sep = 1.0 + (k.abs() - s).abs() as f64;
            a += w(k).powf(-2.0 * beta) / sep;
            b += sw * w(k).powf(-2.0 * beta - 1.0) / sep;
        }
        let factor = kf / (kf - s as f64);
        a += 2.0 * factor * kf.powf(-2.0 * beta) / (2.0 * beta);
        b += 2.0 * sw * factor * kf.powf(-2.0 * beta - 1.0) / (2.0 * beta + 1.0);
        product = product.max(a);
        plus_plus = plus_plus.max(b);
    }
    let mut d: f64 = (-k_cut..=k_cut).map(|k| w(k).powf(-2.0 * beta - 1.0)).sum();
    d += 2.0 * kf.powf(-2.0 * beta) / (2.0 * beta);
    NormConstants {
        product: 2.0 * product,
        decay: 2.0 * d,
        plus_plus: 2.0 * plus_plus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat() -> SiteLattice {
        SiteLattice::singletons(&[], 8)
    }

    fn single(lat: &SiteLattice, s: i64, v: [f64; 2]) -> WeightedSeq {
        let mut pairs = vec![[0.0, 0.0]; lat.len()];
        pairs[lat.index_of(s).unwrap()] = v;
        WeightedSeq::from_real(&pairs)
    }

    #[test]
    fn alpha_norm_examples() {
        let l = lat();
        assert_eq!(
            norm_alpha(&l, &WeightedSeq::zeros(l.len(), Convention::Real), 1.0),
            0.0
        );
        assert!((norm_alpha(&l, &single(&l, 2, [1.0, 0.0]), 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn beta_norm_examples() {
        let l = lat();
        let z = single(&l, 3, [0.0, 1.0]);
        assert!((norm_beta(&l, &z, 0.5, false) - 3f64.sqrt()).abs() < 1e-14);
        assert!((norm_beta(&l, &z, 0.5, true) - 3f64.powf(1.5)).abs() < 1e-13);
        assert_eq!(
            norm_beta(
                &l,
                &WeightedSeq::zeros(l.len(), Convention::Real),
                0.5,
                true
            ),
            0.0
        );
    }

    #[test]
    fn matrix_norm_examples() {
        let l = lat();
        let mut a = BlockMatrix::zeros(l.len(), true);
        assert_eq!(mat_norm(&l, &a, 0.5, false), 0.0);
        a.set(
            l.index_of(1).unwrap(),
            l.index_of(2).unwrap(),
            Block::identity(),
        );
        assert!((mat_norm(&l, &a, 0.5, false) - 2f64.sqrt()).abs() < 1e-14);
        assert!((mat_norm(&l, &a, 0.5, true) - 2.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn projector_examples() {
        assert_eq!(pi_project(&Block::identity()), Block::identity());
        assert_eq!(pi_project(&Block::sigma2()), Block::sigma2());
        let half = pi_project(&Block::real([[1.0, 0.0], [0.0, 0.0]]));
        assert_eq!(half, Block::identity().scale(C64::new(0.5, 0.0)));
    }

    #[test]
    fn identity_and_zero_products() {
        let l = lat();
        let z = single(&l, -4, [0.3, -1.2]);
        let id = BlockMatrix::identity(l.len());
        assert_eq!(mat_vec(&id, &z).unwrap(), z);
        let zero = BlockMatrix::zeros(l.len(), true);
        assert_eq!(mat_mul(&id, &zero).unwrap().stored_len(), 0);
        assert!(mat_vec(&BlockMatrix::zeros(3, false), &z).is_err());
    }

    #[test]
    fn symmetric_storage_reads_transpose() {
        let mut a = BlockMatrix::zeros(4, true);
        let b = Block::real([[1.0, 2.0], [3.0, 4.0]]);
        a.set(2, 1, b);
        assert_eq!(a.get(1, 2), b.transpose());
        assert_eq!(a.get(2, 1), b);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn complex_round_trip() {
        let z = WeightedSeq::from_real(&[[1.0, 0.0], [0.25, -3.0]]);
        let c = z.to_complex();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.entries[0][0] - C64::new(r, 0.0)).norm() < 1e-15);
        assert!((c.entries[0][1] - C64::new(r, 0.0)).norm() < 1e-15);
        assert!(c.is_real_point(1e-14));
        let back = c.to_real();
        for (a, b) in back.entries.iter().zip(&z.entries) {
            assert!((a[0] - b[0]).norm() < 1e-14 && (a[1] - b[1]).norm() < 1e-14);
        }
    }

    #[test]
    fn blocks_group_equal_frequencies() {
        let l = SiteLattice::new(&[1, 2], 4, |s| ((s * s) as f64 + 0.5).sqrt(), 2).unwrap();
        assert_eq!(l.sites, vec![-4, -3, -2, -1, 0, 3, 4]);
        let i3 = l.index_of(3).unwrap();
        let m3 = l.index_of(-3).unwrap();
        assert!(l.same_block(i3, m3));
        assert!(!l.same_block(l.index_of(-1).unwrap(), l.index_of(0).unwrap()));
        assert!(SiteLattice::new(&[], 3, |_| 1.0, 2).is_err());
    }

    #[test]
    fn series_constants_are_stable_in_cutoff() {
        let a = norm_constants(0.5, 64, 4096);
        let b = norm_constants(0.5, 64, 16384);
        assert!(b.product <= a.product + 1e-9);
        assert!((a.product - b.product).abs() < 1e-2 * a.product);
        assert!(a.decay.is_finite() && a.plus_plus.is_finite());
    }
}
