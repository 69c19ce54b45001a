use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("block of site {site} has {size} members, limit is {max}")]
    BlockTooLarge { site: i64, size: usize, max: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("empty sample plan")]
    EmptySamplePlan,
    #[error("layout mismatch between operands")]
    LayoutMismatch,
    #[error("too many tangential sites: {0} (at most {max})", max = crate::hamiltonian::MAX_TANGENTIAL)]
    TooManyAngles(usize),
    #[error("too many normal variables: {0}")]
    TooManyVariables(usize),
    #[error("degree cap {0} exceeds the supported maximum")]
    CapTooLarge(usize),
    #[error("normal-form correction violates |N|_β ≤ δ/8: {norm} > {bound}")]
    HypothesisB { norm: f64, bound: f64 },
    #[error("frequency λ at site {site} is {lambda}, below c0⟨s⟩ = {bound}")]
    FrequencyBound { site: i64, lambda: f64, bound: f64 },
    #[error("normal-form matrix is not Hermitian (defect {0})")]
    NotHermitian(f64),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("smallness condition fails: jet norm {norm} > ½ην² = {bound}")]
    TooLarge { norm: f64, bound: f64 },
    #[error("series did not converge within {terms} terms (last term {last})")]
    NoConvergence { terms: usize, last: f64 },
    #[error("time {0} outside [0, 1]")]
    BadTime(f64),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// Which small-divisor family failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DivisorKind {
    Angle,
    Single,
    Sum,
    Difference,
}

impl std::fmt::Display for DivisorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DivisorKind::Angle => "angle",
            DivisorKind::Single => "single",
            DivisorKind::Sum => "sum",
            DivisorKind::Difference => "difference",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomologicalError {
    #[error("resonance: {kind} divisor {value:.3e} below {threshold:.3e} at k={k:?}, sites ({s:?}, {s2:?})")]
    Resonance {
        kind: DivisorKind,
        k: Vec<i32>,
        s: Option<i64>,
        s2: Option<i64>,
        value: f64,
        threshold: f64,
    },
    #[error("input has a nonzero mean in the angle equation")]
    NonzeroMean,
    #[error("residual check failed: {0:.3e}")]
    Residual(f64),
    #[error("margin ladder exhausted: {0}")]
    Ladder(String),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error("k = 0 has no transversality direction")]
    ZeroMode,
    #[error("κ = {kappa} must be below δ = {delta}")]
    KappaTooLarge { kappa: f64, delta: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KamError {
    #[error("schedule needs ε in (0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("degenerate schedule: N = {0} at ε = {1}")]
    Degenerate(u64, f64),
    #[error("every parameter sample was excluded")]
    Exhausted,
    #[error("no contraction at step {step}: ε went from {prev:.3e} to {next:.3e}")]
    NoContraction { step: usize, prev: f64, next: f64 },
    #[error("frequency drift {drift:.3e} exceeds budget {budget:.3e}")]
    Drift { drift: f64, budget: f64 },
    #[error(transparent)]
    Homological(#[from] HomologicalError),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("a² + V̂(a) = {value} is not positive at a = {a}")]
    NonPositive { a: i64, value: f64 },
    #[error("λ_{s} = λ_{s2} for sites that are not opposite")]
    Degenerate { s: i64, s2: i64 },
    #[error("action I_{a} = {value} must be positive")]
    Action { a: i64, value: f64 },
    #[error("degree caps too small for nonlinearity of degree {0}")]
    Caps(usize),
    #[error("grid of {have} points cannot resolve modes up to {need}")]
    Grid { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Kam(#[from] KamError),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("unknown sweep axis `{0}` (expected kappa, rho or N)")]
    Axis(String),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Kam(#[from] KamError),
    #[error(transparent)]
    Homological(#[from] HomologicalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
