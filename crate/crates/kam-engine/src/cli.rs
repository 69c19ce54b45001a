//! Config ingestion, run orchestration and report emission.
//!
//! A run config is TOML with the sections `[wave]`, `[schedule]`,
//! `[domain]` and `[checks]` plus top-level `seed`, `out` and `formats`.
//! Every section is optional and falls back to the desk defaults.

use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::flow::{check_symplectic, displacement_check};
use crate::hamiltonian::{jet_norm, modes_up_to, SamplePlan};
use crate::homological::{kappa_tilde_default, solve_nonlinear, Margins, Thresholds};
use crate::kam::{
    run, schedule, write_convergence, KamConfig, KamResult, KamState, SpectrumModel, StepRecord,
};
use crate::resonance::{
    check_a1, divisor_margins, melnikov_exclude, write_exclusion, A1Report, Exclusion, ParamDomain,
    SpectrumAt,
};
use crate::wave::{
    build_hamiltonian, pde_residual, reconstruct_solution, unperturbed, verify_regularity,
    RegularityReport, ResidualReport, TorusSolution, WaveConfig, WaveSystem,
};

/// Iteration settings; see [`KamConfig`] for their roles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSettings {
    pub k_max: usize,
    pub jet_tol: f64,
    pub quad_nodes: usize,
    pub n_cap: u32,
    pub kappa_max: f64,
    pub kappa_tilde: Option<f64>,
    pub delta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub floor: f64,
    pub drift_budget: f64,
    pub flow_tol: f64,
    pub sample_points: usize,
    pub sample_shifts: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        let k = KamConfig::default();
        Self {
            k_max: k.k_max,
            jet_tol: k.jet_tol,
            quad_nodes: k.quad_nodes,
            n_cap: k.n_cap,
            kappa_max: k.kappa_max,
            kappa_tilde: k.kappa_tilde,
            delta: k.delta,
            sigma: k.sigma,
            mu: k.mu,
            floor: k.floor,
            drift_budget: k.drift_budget,
            flow_tol: k.flow_tol,
            sample_points: k.plan.points,
            sample_shifts: k.plan.shifts,
            alpha: k.plan.alpha,
            beta: k.beta,
        }
    }
}

impl ScheduleSettings {
    pub fn to_kam(&self, plan_seed: u64) -> KamConfig {
        KamConfig {
            sigma: self.sigma,
            mu: self.mu,
            k_max: self.k_max,
            jet_tol: self.jet_tol,
            quad_nodes: self.quad_nodes,
            n_cap: self.n_cap,
            kappa_max: self.kappa_max,
            kappa_tilde: self.kappa_tilde,
            delta: self.delta,
            beta: self.beta,
            plan: SamplePlan {
                seed: plan_seed,
                points: self.sample_points,
                shifts: self.sample_shifts,
                alpha: self.alpha,
                beta: self.beta,
            },
            floor: self.floor,
            drift_budget: self.drift_budget,
            flow_tol: self.flow_tol,
        }
    }
}

/// Parameter box sampling and the initial Melnikov scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSettings {
    /// Cells per axis; empty means 8 per axis.
    pub counts: Vec<usize>,
    pub jitter: bool,
    pub n_cut: u32,
    pub kappa: f64,
    /// `None` takes the schedule's `κ̃`, or the default law if that is unset.
    pub kappa_tilde: Option<f64>,
    /// Working parameter; `None` is the box centre.
    pub working: Option<Vec<f64>>,
}

impl Default for DomainSettings {
    fn default() -> Self {
        Self {
            counts: Vec::new(),
            jitter: false,
            n_cut: 6,
            kappa: 1e-4,
            kappa_tilde: None,
            working: None,
        }
    }
}

/// Tolerances of the pass/fail checks written to the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub c0: f64,
    pub c1: f64,
    pub contraction: f64,
    pub symplectic_tol: f64,
    pub flow_points: usize,
    pub drift_factor: f64,
    pub residual_exponent: f64,
    pub distance_exponent: f64,
    pub phi_exponent: f64,
    pub torus_grid: usize,
    pub time_samples: usize,
    pub time_step: f64,
    pub regularity_angles: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            c0: 0.5,
            c1: 0.1,
            contraction: 1.4,
            symplectic_tol: 1e-8,
            flow_points: 10,
            drift_factor: 10.0,
            residual_exponent: 1.5,
            distance_exponent: 0.8,
            phi_exponent: 0.8,
            torus_grid: 16,
            time_samples: 16,
            time_step: 0.61,
            regularity_angles: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub wave: WaveConfig,
    pub schedule: ScheduleSettings,
    pub domain: DomainSettings,
    pub checks: CheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("kam-out"),
            formats: vec![Format::Json, Format::Csv],
            wave: WaveConfig::default(),
            schedule: ScheduleSettings::default(),
            domain: DomainSettings::default(),
            checks: CheckSettings::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k_max: Option<usize>,
    pub out: Option<PathBuf>,
}

fn field(name: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        field: name.to_string(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path, over: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.apply(over);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, over: &Overrides) {
        if let Some(s) = over.seed {
            self.seed = s;
        }
        if let Some(k) = over.k_max {
            self.schedule.k_max = k;
        }
        if let Some(o) = &over.out {
            self.out = o.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.wave.validate()?;
        let s = &self.schedule;
        let n = self.wave.n();
        if !(s.sigma > 0.0) {
            return Err(field("schedule.sigma", "must be positive"));
        }
        if !(s.mu > 0.0 && s.mu < 1.0) {
            return Err(field("schedule.mu", "must lie in (0, 1)"));
        }
        if s.quad_nodes == 0 {
            return Err(field("schedule.quad_nodes", "needs at least one node"));
        }
        if s.sample_points == 0 {
            return Err(field("schedule.sample_points", "needs at least one point"));
        }
        if !(s.delta > 0.0) {
            return Err(field("schedule.delta", "must be positive"));
        }
        if !(s.flow_tol > 0.0) {
            return Err(field("schedule.flow_tol", "must be positive"));
        }
        let d = &self.domain;
        if !d.counts.is_empty() && (d.counts.len() != n || d.counts.contains(&0)) {
            return Err(field(
                "domain.counts",
                format!("expected {n} positive entries"),
            ));
        }
        if !(d.kappa > 0.0 && d.kappa < s.delta) {
            return Err(field(
                "domain.kappa",
                format!("must lie in (0, δ = {})", s.delta),
            ));
        }
        if let Some(w) = &d.working {
            if w.len() != n {
                return Err(field("domain.working", format!("expected {n} entries")));
            }
        }
        let c = &self.checks;
        if c.torus_grid < 2 {
            return Err(field(
                "checks.torus_grid",
                "needs at least 2 points per axis",
            ));
        }
        if c.flow_points == 0 {
            return Err(field("checks.flow_points", "needs at least one point"));
        }
        Ok(())
    }

    /// Machine-emitted TOML that parses back to the same config.
    pub fn echo(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| field("<echo>", e.to_string()))
    }

    pub fn run_id(&self) -> Result<String, CliError> {
        let mut h = FxHasher::default();
        h.write(self.echo()?.as_bytes());
        h.write_u64(self.seed);
        Ok(format!("{:016x}", h.finish()))
    }

    fn counts(&self) -> Vec<usize> {
        if self.domain.counts.is_empty() {
            vec![8; self.wave.n()]
        } else {
            self.domain.counts.clone()
        }
    }

    fn working_rho(&self) -> Vec<f64> {
        self.domain
            .working
            .clone()
            .unwrap_or_else(|| self.wave.rho_centre())
    }

    fn scan_kappa_tilde(&self, kappa: f64) -> f64 {
        self.domain
            .kappa_tilde
            .or(self.schedule.kappa_tilde)
            .unwrap_or_else(|| kappa_tilde_default(kappa, self.schedule.delta, self.schedule.beta))
    }
}

/// The one generator behind every random choice in a run.
struct Seeds {
    plan: u64,
    jitter: u64,
    angles: Vec<Vec<f64>>,
}

fn seeds(cfg: &RunConfig) -> Seeds {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = rng.random();
    let jitter = rng.random();
    let angles = (0..cfg.checks.regularity_angles)
        .map(|_| {
            (0..cfg.wave.n())
                .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                .collect()
        })
        .collect();
    Seeds {
        plan,
        jitter,
        angles,
    }
}

/// A named bound with its measured value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub relation: &'static str,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: "<=",
            tolerance,
            pass: measured <= tolerance,
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: ">=",
            tolerance,
            pass: measured >= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExclusionSummary {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub n_cut: u32,
    pub samples: usize,
    pub alive: usize,
    pub excluded_fraction: f64,
    /// Whether the sample nearest the working parameter survived.
    pub working_alive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub naive_sup: f64,
    pub sup: f64,
    pub distance: f64,
    pub imag_defect: f64,
    pub grid: usize,
    pub terms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub config: RunConfig,
    pub rho: Vec<f64>,
    pub omega: Vec<f64>,
    pub regularity: RegularityReport,
    pub a1: A1Report,
    pub divisor_worst_ratio: f64,
    pub exclusion: ExclusionSummary,
    pub convergence: Vec<StepRecord>,
    pub omega_tilde: Vec<f64>,
    pub omega_drift: f64,
    pub a_drift: f64,
    pub f_inf_jet_norm: f64,
    pub residual: ResidualSummary,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

/// Everything a run produces, before it is written out.
pub struct RunOutcome {
    pub report: RunReport,
    pub system: WaveSystem,
    pub kam: KamResult,
    pub exclusion: Exclusion,
    pub naive: TorusSolution,
    pub torus: TorusSolution,
    pub naive_residual: ResidualReport,
    pub torus_residual: ResidualReport,
}

fn spectrum_model(wave: &WaveConfig) -> SpectrumModel {
    let w = wave.clone();
    Arc::new(move |p: &[f64]| unperturbed(&w, p).ok().map(|(_, _, h)| h))
}

/// Melnikov scan of the unperturbed family over a fresh sample grid.
pub fn exclusion_scan(
    cfg: &RunConfig,
    kappa: f64,
    n_cut: u32,
    jitter: Option<u64>,
) -> Result<Exclusion, CliError> {
    let wave = &cfg.wave;
    let mut domain = ParamDomain::grid(&wave.rho_lo, &wave.rho_hi, &cfg.counts(), jitter);
    let (_, lat, h) = unperturbed(wave, &cfg.working_rho())?;
    let fallback = SpectrumAt::of(&h, &lat);
    let spectrum = |p: &[f64]| match unperturbed(wave, p) {
        Ok((_, l, h)) => SpectrumAt::of(&h, &l),
        // An ill-posed parameter counts as resonant.
        Err(_) => SpectrumAt {
            omega: vec![0.0; fallback.omega.len()],
            levels: fallback.levels.clone(),
        },
    };
    let kt = cfg.scan_kappa_tilde(kappa);
    Ok(melnikov_exclude(
        &mut domain,
        &spectrum,
        kappa,
        kt,
        n_cut,
        Some(cfg.schedule.delta),
    )?)
}

/// build → hypothesis checks → exclusion → KAM run → reconstruction →
/// residual, with every bound collected as a [`Check`].
pub fn execute(cfg: &RunConfig, verbose: bool) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let log = |msg: String| {
        if verbose {
            eprintln!("{msg}");
        }
    };
    let seeds = seeds(cfg);
    let kc = cfg.schedule.to_kam(seeds.plan);
    let wave = &cfg.wave;
    let n = wave.n();
    let eps = wave.epsilon;
    let c = &cfg.checks;
    let mut checks = Vec::new();

    let rho = cfg.working_rho();
    let sys = build_hamiltonian(wave, &rho)?;
    log(format!(
        "built system: {} sites, {} terms in f",
        sys.lattice.len(),
        sys.f.len()
    ));

    let regularity = verify_regularity(&sys, wave, &seeds.angles, kc.plan.alpha);
    let lambdas: Vec<f64> = sys.freq.lambdas.iter().map(|x| x.1).collect();
    let a1 = check_a1(&sys.lattice, &lambdas, c.c0, c.c1);
    checks.push(Check::at_least("a1_c0", a1.c0_margin, c.c0));
    checks.push(Check::at_least("a1_c1", a1.c1_margin, c.c1));
    let d = &cfg.domain;
    let kt = cfg.scan_kappa_tilde(d.kappa);
    let divisor_worst_ratio = divisor_margins(
        &SpectrumAt::of(&sys.h, &sys.lattice),
        &modes_up_to(n, d.n_cut),
    )
    .worst_ratio(d.kappa, kt);

    let exclusion = exclusion_scan(cfg, d.kappa, d.n_cut, d.jitter.then_some(seeds.jitter))?;
    let alive: Vec<bool> = exclusion.records.iter().map(|r| r.alive).collect();
    let mut domain = ParamDomain::grid(
        &wave.rho_lo,
        &wave.rho_hi,
        &cfg.counts(),
        d.jitter.then_some(seeds.jitter),
    );
    domain.alive = alive;
    let dist = |j: usize| {
        domain.samples[j]
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    };
    let working_alive = (0..domain.len())
        .min_by(|&i, &j| dist(i).total_cmp(&dist(j)))
        .is_some_and(|j| domain.alive[j]);
    let summary = ExclusionSummary {
        kappa: d.kappa,
        kappa_tilde: kt,
        n_cut: d.n_cut,
        samples: domain.len(),
        alive: domain.alive_count(),
        excluded_fraction: exclusion.excluded_fraction,
        working_alive,
    };
    log(format!(
        "exclusion: {:.4} of {} samples removed",
        summary.excluded_fraction, summary.samples
    ));

    let state = KamState::new(
        sys.h.clone(),
        sys.f.clone(),
        sys.lattice.clone(),
        rho.clone(),
        domain,
        Some(spectrum_model(wave)),
        &kc,
    )?;
    let kam = run(state, &kc)?;
    for r in &kam.table {
        log(format!(
            "step {}: ε {:.3e} → {:.3e} in {:.1} s",
            r.k, r.eps, r.eps_next, r.wall_time
        ));
        if r.eps > kc.floor {
            checks.push(Check::at_least(
                format!("contraction_{}", r.k),
                r.contraction,
                c.contraction,
            ));
        }
        if r.eps > 0.0 {
            checks.push(Check::at_most(
                format!("phi_distance_{}", r.k),
                r.phi_dist,
                r.eps.powf(c.phi_exponent),
            ));
        }
    }
    for (k, phi) in kam.transforms.iter().enumerate() {
        let mu = kam.table[k].mu;
        let pts: Vec<_> = kc
            .plan
            .base_points(&sys.lattice, n, mu)
            .into_iter()
            .take(c.flow_points)
            .collect();
        checks.push(Check::at_most(
            format!("symplectic_{k}"),
            check_symplectic(phi, &pts)?,
            c.symplectic_tol,
        ));
        let s_norm = jet_norm(
            &phi.generator,
            &sys.lattice,
            kam.table[k].sigma,
            mu,
            &kc.plan,
        )?;
        let disp = displacement_check(phi, &pts, &sys.lattice, s_norm, mu, kc.plan.alpha)?;
        checks.push(Check::at_most(
            format!("flow_theta_bound_{k}"),
            disp.theta_ratio,
            1.0,
        ));
        checks.push(Check::at_most(
            format!("flow_zeta_bound_{k}"),
            disp.zeta_ratio,
            1.0,
        ));
    }
    checks.push(Check::at_most(
        "omega_drift",
        kam.omega_drift,
        c.drift_factor * eps,
    ));
    checks.push(Check::at_most("a_drift", kam.a_drift, c.drift_factor * eps));

    let run_id = cfg.run_id()?;
    let naive = reconstruct_solution(
        &[],
        &sys.h.omega,
        &sys,
        wave,
        c.torus_grid,
        kc.plan.alpha,
        "naive",
    )?;
    let torus = reconstruct_solution(
        &kam.transforms,
        &kam.omega_tilde,
        &sys,
        wave,
        c.torus_grid,
        kc.plan.alpha,
        &run_id,
    )?;
    let times: Vec<f64> = (0..c.time_samples)
        .map(|j| c.time_step * j as f64)
        .collect();
    let theta0 = vec![0.0; n];
    let naive_residual = pde_residual(&naive, &sys, wave, &theta0, &times);
    let torus_residual = pde_residual(&torus, &sys, wave, &theta0, &times);
    log(format!(
        "residual: naive {:.3e}, after KAM {:.3e}",
        naive_residual.sup, torus_residual.sup
    ));
    checks.push(Check::at_most(
        "pde_residual",
        torus_residual.sup,
        eps.powf(c.residual_exponent),
    ));
    checks.push(Check::at_most(
        "torus_distance",
        torus.distance,
        eps.powf(c.distance_exponent),
    ));

    let all_pass = checks.iter().all(|c| c.pass);
    let report = RunReport {
        run_id,
        seed: cfg.seed,
        config: cfg.clone(),
        rho,
        omega: sys.h.omega.clone(),
        regularity,
        a1,
        divisor_worst_ratio,
        exclusion: summary,
        convergence: kam.table.clone(),
        omega_tilde: kam.omega_tilde.clone(),
        omega_drift: kam.omega_drift,
        a_drift: kam.a_drift,
        f_inf_jet_norm: kam.f_inf_jet_norm,
        residual: ResidualSummary {
            naive_sup: naive_residual.sup,
            sup: torus_residual.sup,
            distance: torus.distance,
            imag_defect: torus.imag_defect,
            grid: torus.grid,
            terms: torus.u_hat.len(),
        },
        checks,
        all_pass,
    };
    Ok(RunOutcome {
        report,
        system: sys,
        kam,
        exclusion,
        naive,
        torus,
        naive_residual,
        torus_residual,
    })
}

/// Residual table: `t, l2, sup_x, naive_l2, naive_sup_x`.
pub fn write_residual<W: Write>(
    torus: &ResidualReport,
    naive: &ResidualReport,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "l2", "sup_x", "naive_l2", "naive_sup_x"])?;
    for i in 0..torus.t.len() {
        w.write_record([
            format!("{}", torus.t[i]),
            format!("{:e}", torus.l2[i]),
            format!("{:e}", torus.sup_x[i]),
            format!("{:e}", naive.l2[i]),
            format!("{:e}", naive.sup_x[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Torus coefficients: `k0 … k{n−1}, m, re, im`.
pub fn write_torus<W: Write>(sol: &TorusSolution, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..sol.omega_prime.len())
        .map(|a| format!("k{a}"))
        .collect();
    header.extend(["m", "re", "im"].map(String::from));
    w.write_record(&header)?;
    for ((k, m), v) in &sol.u_hat {
        let mut row: Vec<String> = k.iter().map(|x| x.to_string()).collect();
        row.push(m.to_string());
        row.push(format!("{:e}", v.re));
        row.push(format!("{:e}", v.im));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<fs::File, CliError> {
    let path = dir.join(name);
    fs::File::create(&path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the report and tables selected by `formats` into `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let cfg = &outcome.report.config;
    let io = |source| CliError::Io {
        path: dir.display().to_string(),
        source,
    };
    create(dir, "config.toml")?
        .write_all(cfg.echo()?.as_bytes())
        .map_err(io)?;
    if cfg.formats.contains(&Format::Json) {
        let mut f = create(dir, "report.json")?;
        serde_json::to_writer_pretty(&mut f, &outcome.report)?;
        f.write_all(b"\n").map_err(io)?;
    }
    if cfg.formats.contains(&Format::Csv) {
        write_convergence(&outcome.kam.table, create(dir, "convergence.csv")?)?;
        write_exclusion(&outcome.exclusion.records, create(dir, "exclusion.csv")?)?;
        write_residual(
            &outcome.torus_residual,
            &outcome.naive_residual,
            create(dir, "residual.csv")?,
        )?;
        write_torus(&outcome.torus, create(dir, "torus.csv")?)?;
    }
    Ok(())
}

/// Loads, runs and writes one config.
pub fn run_single(path: &Path, over: &Overrides, verbose: bool) -> Result<RunReport, CliError> {
    let cfg = RunConfig::load(path, over)?;
    let outcome = execute(&cfg, verbose)?;
    write_outputs(&outcome, &cfg.out)?;
    Ok(outcome.report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Kappa,
    Rho,
    N,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Kappa => "kappa",
            Axis::Rho => "rho",
            Axis::N => "N",
        }
    }
}

/// Parses `AXIS=v1,v2,…`; an empty list is allowed.
pub fn parse_sweep(spec: &str) -> Result<(Axis, Vec<f64>), CliError> {
    let (name, list) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Axis(spec.to_string()))?;
    let axis = match name.trim() {
        "kappa" => Axis::Kappa,
        "rho" => Axis::Rho,
        "N" | "n" => Axis::N,
        other => return Err(CliError::Axis(other.to_string())),
    };
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| field(&format!("sweep.{}", axis.name()), format!("`{s}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if axis == Axis::N && values.iter().any(|v| !(v.fract() == 0.0 && *v >= 1.0)) {
        return Err(field("sweep.N", "values must be positive integers"));
    }
    Ok((axis, values))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: Axis,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sweep_header(axis: Axis) -> Vec<String> {
    let cols: &[&str] = match axis {
        Axis::Kappa => &[
            "kappa",
            "kappa_tilde",
            "n_cut",
            "samples",
            "excluded_fraction",
        ],
        Axis::N => &["N", "remainder", "eps", "residual"],
        Axis::Rho => &[
            "rho",
            "eps0",
            "eps_final",
            "omega_drift",
            "a_drift",
            "pde_residual",
            "distance",
            "all_pass",
        ],
    };
    cols.iter().map(|s| s.to_string()).collect()
}

/// One study along `axis` at `v`.
fn sweep_row(cfg: &RunConfig, axis: Axis, v: f64) -> Result<Vec<f64>, CliError> {
    match axis {
        Axis::Kappa => {
            let d = &cfg.domain;
            let jitter = d.jitter.then(|| seeds(cfg).jitter);
            let ex = exclusion_scan(cfg, v, d.n_cut, jitter)?;
            Ok(vec![
                v,
                cfg.scan_kappa_tilde(v),
                d.n_cut as f64,
                ex.records.len() as f64,
                ex.excluded_fraction,
            ])
        }
        Axis::N => {
            let (eps, r, res) = remainder_at(cfg, v as u32)?;
            Ok(vec![v, r, eps, res])
        }
        Axis::Rho => {
            let mut c = cfg.clone();
            c.domain.working = Some(vec![v; cfg.wave.n()]);
            let o = execute(&c, false)?;
            let r = &o.report;
            let eps0 = r.convergence.first().map_or(0.0, |s| s.eps);
            Ok(vec![
                v,
                eps0,
                r.f_inf_jet_norm,
                r.omega_drift,
                r.a_drift,
                r.residual.sup,
                r.residual.distance,
                if r.all_pass { 1.0 } else { 0.0 },
            ])
        }
    }
}

/// `⟦R⟧` after one nonlinear homological solve at Fourier cut `n_cut`,
/// measured on the shrunk domain. Returns `(⟦f^T⟧, ⟦R⟧, residual)`.
pub fn remainder_at(cfg: &RunConfig, n_cut: u32) -> Result<(f64, f64, f64), CliError> {
    let kc = cfg.schedule.to_kam(seeds(cfg).plan);
    let sys = build_hamiltonian(&cfg.wave, &cfg.working_rho())?;
    let eps = jet_norm(&sys.f.jet(), &sys.lattice, kc.sigma, kc.mu, &kc.plan)?;
    let sched = schedule(0, eps, kc.sigma, kc.mu)?;
    let kappa = sched.kappa.min(kc.kappa_max);
    let kappa_tilde = kc
        .kappa_tilde
        .unwrap_or_else(|| kappa_tilde_default(kappa, kc.delta, kc.beta));
    let thr = Thresholds {
        kappa,
        kappa_tilde,
        n_cut,
    };
    let margins = Margins {
        sigma: kc.sigma,
        sigma_to: sched.sigma_next,
        mu: kc.mu,
        mu_to: sched.mu_next,
    };
    let sol = solve_nonlinear(&sys.h, &sys.lattice, &sys.f, thr, margins)?;
    let r = jet_norm(
        &sol.r.poly,
        &sys.lattice,
        sched.sigma_next,
        sched.mu_next,
        &kc.plan,
    )?;
    Ok((eps, r, sol.residual))
}

/// Runs the study at every value, spread over the available cores; rows
/// keep the order of `values`.
pub fn run_sweep(cfg: &RunConfig, axis: Axis, values: &[f64]) -> Result<SweepTable, CliError> {
    cfg.validate()?;
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(values.len().max(1));
    let chunk = values.len().div_ceil(threads).max(1);
    let rows: Vec<Result<Vec<f64>, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = values
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&v| sweep_row(cfg, axis, v))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    Ok(SweepTable {
        axis,
        header: sweep_header(axis),
        rows: rows.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Writes `sweep_<axis>.csv` into `dir` and returns its path.
pub fn write_sweep(table: &SweepTable, dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let name = format!("sweep_{}.csv", table.axis.name());
    table.write(create(dir, &name)?)?;
    Ok(dir.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.wave.s_max = 5;
        cfg.wave.m_x = 32;
        cfg.wave.k_theta = 4;
        cfg.schedule.k_max = 1;
        cfg.schedule.sample_points = 8;
        cfg.domain.counts = vec![3, 3];
        cfg.checks.torus_grid = 8;
        cfg.checks.time_samples = 4;
        cfg
    }

    #[test]
    fn defaults_echo_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.echo().unwrap(), "echo").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::parse("seed = 9\n[wave]\nepsilon = 1e-7\n", "inline").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.wave.epsilon, 1e-7);
        assert_eq!(cfg.wave.tangential, vec![1, 2]);
        assert_eq!(cfg.schedule, ScheduleSettings::default());
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunConfig::parse("[schedule]\nkmax = 3\n", "inline").unwrap_err();
        assert!(err.to_string().contains("kmax"), "{err}");
    }

    #[test]
    fn non_positive_site_is_reported() {
        let mut cfg = RunConfig::default();
        cfg.wave.potential.insert(3, -10.0);
        let err = cfg.validate().unwrap_err();
        assert!(
            matches!(
                err,
                CliError::Wave(crate::error::WaveError::NonPositive { a: 3, .. })
            ),
            "{err}"
        );
    }

    #[test]
    fn bad_schedule_is_named() {
        let mut cfg = RunConfig::default();
        cfg.schedule.mu = 2.0;
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("schedule.mu"));
    }

    #[test]
    fn sweep_spec_parsing() {
        assert_eq!(
            parse_sweep("kappa=1e-4,2e-4").unwrap(),
            (Axis::Kappa, vec![1e-4, 2e-4])
        );
        assert_eq!(parse_sweep("N=").unwrap(), (Axis::N, vec![]));
        assert!(matches!(parse_sweep("tau=1"), Err(CliError::Axis(_))));
        assert!(parse_sweep("N=2.5").is_err());
    }

    #[test]
    fn empty_sweep_is_empty_table() {
        let t = run_sweep(&small(), Axis::Kappa, &[]).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.header[0], "kappa");
    }

    #[test]
    fn kappa_sweep_is_monotone() {
        let t = run_sweep(&small(), Axis::Kappa, &[1e-4, 1e-3, 1e-2]).unwrap();
        let f = t.column("excluded_fraction").unwrap();
        assert!(f.windows(2).all(|w| w[0] <= w[1]), "{f:?}");
    }

    #[test]
    fn zero_nonlinearity_is_identity_and_passes() {
        let mut cfg = small();
        cfg.wave.nonlinearity.clear();
        let o = execute(&cfg, false).unwrap();
        assert!(o.kam.transforms.iter().all(|p| p.generator.is_empty()));
        assert!(o.report.residual.sup <= 1e-10);
        assert!(o.report.all_pass, "{:?}", o.report.checks);
    }
}
