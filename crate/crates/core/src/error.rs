use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("hopping amplitude non-positive at site {site}: t = {t}")]
    NonPositiveHopping { site: usize, t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is diagonalizable (plus or minus identity), no Jordan block")]
    Diagonalizable,

    #[error("band touching at E = {energy} (|dTr/dE| = {slope:e})")]
    BandTouching { energy: f64, slope: f64 },

    #[error("trivial perturbation: E(x_sigma^2) = {m2:e} is not distinguishable from zero")]
    TrivialPerturbation { m2: f64 },

    #[error("rescaling out of range: entry {entry:e} exceeds 1e12")]
    RescalingOutOfRange { entry: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("classification indeterminate: {0}")]
    Indeterminate(String),

    #[error("wrong anomaly type: {0}")]
    WrongAnomalyType(String),

    #[error("hyperbolic transform needs more than {0} iterations")]
    NeedsIteration(usize),

    #[error("zero of order > 6 is not supported")]
    OrderUnsupported,

    #[error("no C^1 solution: l_r = {l_r} < min(l_p, l_q) = {min}")]
    NoC1Solution { l_r: u32, min: u32 },

    #[error("requested solution has a non-integrable singularity: {0}")]
    NonIntegrable(String),

    #[error("coefficient p is negative somewhere (min p = {0:e})")]
    NotNonnegative(f64),

    #[error("not a second order anomaly")]
    NotSecondOrder,

    #[error("no normalizable groundstate: {0}")]
    NoNormalizableGroundstate(String),

    #[error("degenerate stable groundstate: Dirac peaks at {0:?}")]
    DegenerateGroundstate(Vec<f64>),

    #[error("branch audit failed: IDS = {0} outside [0, 1]")]
    BranchAudit(f64),

    #[error("regime constraint violated: {0}")]
    Regime(String),

    #[error("Monte Carlo error too large: {0}")]
    Statistics(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
