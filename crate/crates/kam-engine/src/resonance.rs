//! Parameter samples, frequency hypotheses and small-divisor exclusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{DivisorKind, ResonanceError};
use crate::hamiltonian::{hermitian_eigen, mode_dot, mode_l1, modes_up_to, Mode, NormalFormHam};
use crate::spaces::{bracket_weight, SiteLattice};

/// Box `∏ [lo_a, hi_a]` sampled on a cell-centred grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    pub alive: Vec<bool>,
}

impl ParamDomain {
    /// Grid of `counts[a]` cells per axis; with a seed each point is
    /// jittered uniformly inside its cell.
    pub fn grid(lo: &[f64], hi: &[f64], counts: &[usize], jitter: Option<u64>) -> Self {
        let mut rng = jitter.map(ChaCha8Rng::seed_from_u64);
        let mut samples: Vec<Vec<f64>> = vec![Vec::new()];
        for a in 0..lo.len() {
            let h = (hi[a] - lo[a]) / counts[a] as f64;
            let mut next = Vec::with_capacity(samples.len() * counts[a]);
            for s in &samples {
                for i in 0..counts[a] {
                    let mut v = s.clone();
                    v.push(lo[a] + (i as f64 + 0.5) * h);
                    next.push(v);
                }
            }
            samples = next;
        }
        if let Some(rng) = rng.as_mut() {
            for s in &mut samples {
                for a in 0..lo.len() {
                    let h = (hi[a] - lo[a]) / counts[a] as f64;
                    s[a] += (rng.random::<f64>() - 0.5) * h;
                }
            }
        }
        let alive = vec![true; samples.len()];
        Self {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            counts: counts.to_vec(),
            samples,
            alive,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn measure_fraction(&self) -> f64 {
        self.alive_count() as f64 / self.len().max(1) as f64
    }

    pub fn centre(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Index of the alive sample nearest to `p`.
    pub fn nearest_alive(&self, p: &[f64]) -> Option<usize> {
        let d = |s: &[f64]| s.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        (0..self.len())
            .filter(|&i| self.alive[i])
            .min_by(|&i, &j| d(&self.samples[i]).total_cmp(&d(&self.samples[j])))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct A1Report {
    pub c0_margin: f64,
    pub c1_margin: f64,
    pub pass: bool,
}

/// `min λ_s/⟨s⟩` and `min_{|s|≠|s′|} |λ_s − λ_{s′}| / ||s| − |s′||`.
pub fn check_a1(lat: &SiteLattice, lambdas: &[f64], c0: f64, c1: f64) -> A1Report {
    let m = lat.len();
    let c0_margin = (0..m)
        .map(|i| lambdas[i] / lat.weight(i))
        .fold(f64::INFINITY, f64::min);
    let mut c1_margin = f64::INFINITY;
    for i in 0..m {
        for j in 0..m {
            let gap = (lat.site(i).abs() - lat.site(j).abs()).abs();
            if gap != 0 {
                c1_margin = c1_margin.min((lambdas[i] - lambdas[j]).abs() / gap as f64);
            }
        }
    }
    A1Report {
        c0_margin,
        c1_margin,
        pass: c0_margin >= c0 && c1_margin >= c1,
    }
}

/// One normal frequency level: an eigenvalue of a block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub site: i64,
    pub value: f64,
    pub block: usize,
}

/// Tangential and normal frequencies at one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumAt {
    pub omega: Vec<f64>,
    pub levels: Vec<Level>,
}

impl SpectrumAt {
    /// Levels from the eigenvalues of each block of `A`.
    pub fn of(h: &NormalFormHam, lat: &SiteLattice) -> Self {
        let mut levels = Vec::with_capacity(lat.len());
        for (b, (members, q)) in lat.blocks.iter().zip(h.q_blocks(lat)).enumerate() {
            let (vals, _) = hermitian_eigen(&q);
            for (idx, v) in vals.into_iter().enumerate() {
                levels.push(Level {
                    site: lat.site(members[idx]),
                    value: v,
                    block: b,
                });
            }
        }
        Self {
            omega: h.omega.clone(),
            levels,
        }
    }

    /// Shifts `self` by `current − reference`, level by level.
    pub fn drifted(&self, reference: &SpectrumAt, current: &SpectrumAt) -> Self {
        let omega = self
            .omega
            .iter()
            .zip(&reference.omega)
            .zip(&current.omega)
            .map(|((w, r), c)| w + c - r)
            .collect();
        let levels = self
            .levels
            .iter()
            .zip(&reference.levels)
            .zip(&current.levels)
            .map(|((l, r), c)| Level {
                value: l.value + c.value - r.value,
                ..*l
            })
            .collect();
        Self { omega, levels }
    }
}

/// Worst `value / weight` per divisor family at one sample, with the
/// offending `(k, s, s′)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyMargin {
    pub kind: DivisorKind,
    pub margin: f64,
    pub k: Vec<i32>,
    pub s: Option<i64>,
    pub s2: Option<i64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub margins: [FamilyMargin; 4],
}

impl HypothesisReport {
    /// First family failing its threshold.
    pub fn violation(&self, kappa: f64, kappa_tilde: f64) -> Option<&FamilyMargin> {
        self.margins.iter().find(|m| {
            let thr = if m.kind == DivisorKind::Difference {
                kappa_tilde
            } else {
                kappa
            };
            m.margin < thr
        })
    }

    /// Smallest margin relative to its threshold.
    pub fn worst_ratio(&self, kappa: f64, kappa_tilde: f64) -> f64 {
        self.margins
            .iter()
            .map(|m| {
                let thr = if m.kind == DivisorKind::Difference {
                    kappa_tilde
                } else {
                    kappa
                };
                if thr > 0.0 {
                    m.margin / thr
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn blank(kind: DivisorKind) -> FamilyMargin {
    FamilyMargin {
        kind,
        margin: f64::INFINITY,
        k: Vec::new(),
        s: None,
        s2: None,
    }
}

fn update(m: &mut FamilyMargin, v: f64, k: &Mode, n: usize, s: Option<i64>, s2: Option<i64>) {
    if v < m.margin {
        m.margin = v;
        m.k = k[..n].iter().map(|&x| x as i32).collect();
        m.s = s;
        m.s2 = s2;
    }
}

/// Divisor margins for `|k|₁ ≤ N`, using the same families and weights as
/// the homological solver: `|k·ω|` (k ≠ 0), `|k·ω ± α|/⟨s⟩`,
/// `|k·ω ± (α + α′)|/(⟨s⟩ + ⟨s′⟩)` and
/// `|k·ω − α + α′|/(1 + ||s| − |s′||)` except `k = 0` inside a block.
pub fn divisor_margins(spec: &SpectrumAt, modes: &[Mode]) -> HypothesisReport {
    let n = spec.omega.len();
    let mut ang = blank(DivisorKind::Angle);
    let mut single = blank(DivisorKind::Single);
    let mut sum = blank(DivisorKind::Sum);
    let mut diff = blank(DivisorKind::Difference);
    let lv = &spec.levels;
    let w: Vec<f64> = lv.iter().map(|l| bracket_weight(l.site)).collect();
    for k in modes {
        let kw = mode_dot(k, &spec.omega);
        let zero = mode_l1(k) == 0;
        if !zero {
            update(&mut ang, kw.abs(), k, n, None, None);
        }
        for (i, l) in lv.iter().enumerate() {
            let v = (kw - l.value).abs().min((kw + l.value).abs()) / w[i];
            update(&mut single, v, k, n, Some(l.site), Some(l.site));
        }
        for (i, a) in lv.iter().enumerate() {
            for (j, b) in lv.iter().enumerate() {
                if j >= i {
                    let v = (kw.abs() - a.value - b.value).abs() / (w[i] + w[j]);
                    update(&mut sum, v, k, n, Some(a.site), Some(b.site));
                }
                if zero && a.block == b.block {
                    continue;
                }
                let sep = 1.0 + (a.site.abs() - b.site.abs()).abs() as f64;
                let v = (kw - a.value + b.value).abs() / sep;
                update(&mut diff, v, k, n, Some(a.site), Some(b.site));
            }
        }
    }
    HypothesisReport {
        margins: [ang, single, sum, diff],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    pub rho: Vec<f64>,
    pub alive: bool,
    pub worst_ratio: f64,
    pub offending: Option<FamilyMargin>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exclusion {
    pub excluded_fraction: f64,
    pub newly_dead: usize,
    pub records: Vec<SampleRecord>,
}

/// Marks dead every alive sample violating a divisor condition with
/// `|k|₁ ≤ N`. Returns the fraction of all samples now dead.
pub fn melnikov_exclude(
    domain: &mut ParamDomain,
    spectrum: &dyn Fn(&[f64]) -> SpectrumAt,
    kappa: f64,
    kappa_tilde: f64,
    n_cut: u32,
    delta: Option<f64>,
) -> Result<Exclusion, ResonanceError> {
    if let Some(d) = delta {
        if kappa >= d {
            return Err(ResonanceError::KappaTooLarge { kappa, delta: d });
        }
    }
    let mut newly_dead = 0;
    let mut records = Vec::with_capacity(domain.len());
    let mut modes_cache: Option<(usize, Vec<Mode>)> = None;
    for i in 0..domain.len() {
        let rho = domain.samples[i].clone();
        if !domain.alive[i] {
            records.push(SampleRecord {
                index: i,
                rho,
                alive: false,
                worst_ratio: f64::NAN,
                offending: None,
            });
            continue;
        }
        let spec = spectrum(&rho);
        let n = spec.omega.len();
        if modes_cache.as_ref().map(|c| c.0) != Some(n) {
            modes_cache = Some((n, modes_up_to(n, n_cut)));
        }
        let modes = &modes_cache.as_ref().expect("cached").1;
        let rep = divisor_margins(&spec, modes);
        let bad = rep.violation(kappa, kappa_tilde).cloned();
        if bad.is_some() {
            domain.alive[i] = false;
            newly_dead += 1;
        }
        records.push(SampleRecord {
            index: i,
            rho,
            alive: domain.alive[i],
            worst_ratio: rep.worst_ratio(kappa, kappa_tilde),
            offending: bad,
        });
    }
    Ok(Exclusion {
        excluded_fraction: 1.0 - domain.measure_fraction(),
        newly_dead,
        records,
    })
}

/// `z_k = k/|k|`.
pub fn transversality_direction(k: &[i32]) -> Result<Vec<f64>, ResonanceError> {
    let norm = k.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ResonanceError::ZeroMode);
    }
    Ok(k.iter().map(|&x| x as f64 / norm).collect())
}

/// `⟨∂_ρ(k·ω), z⟩` for a Jacobian `∂ω_a/∂ρ_b`.
pub fn directional_derivative(k: &[i32], jac: &[Vec<f64>], z: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, &ka) in k.iter().enumerate() {
        for (b, &zb) in z.iter().enumerate() {
            s += ka as f64 * jac[a][b] * zb;
        }
    }
    s
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Exclusion table with columns `index, rho…, alive, worst_margin,
/// k, s, s2, type`.
pub fn write_exclusion<W: std::io::Write>(
    records: &[SampleRecord],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let dim = records.first().map_or(0, |r| r.rho.len());
    let mut header = vec!["index".to_string()];
    header.extend((0..dim).map(|a| format!("rho{a}")));
    header.extend(["alive", "worst_margin", "k", "s", "s2", "type"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string()];
        row.extend(r.rho.iter().map(|x| x.to_string()));
        row.push(r.alive.to_string());
        row.push(format!("{:e}", r.worst_ratio));
        match &r.offending {
            Some(m) => {
                row.push(
                    m.k.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(" "),
                );
                row.push(m.s.map_or(String::new(), |v| v.to_string()));
                row.push(m.s2.map_or(String::new(), |v| v.to_string()));
                row.push(m.kind.to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
