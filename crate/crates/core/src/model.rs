//! Random Jacobi operators with an `L`-periodic background and a centered
//! perturbation of strength `lambda`.
//!
//! Site `n = L*m + l` (0-based `l`) of the chain carries the hopping
//! `t(n) = hop[l] + lambda * t~_l(sigma_m)` and potential
//! `v(n) = pot[l] + lambda * v~_l(sigma_m)`, where `sigma_m` is the disorder
//! drawn for cell `m`. The operator acts as
//! `(H psi)(n) = t(n+1) psi(n+1) + v(n) psi(n) + t(n) psi(n-1)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicBackground {
    hop: Vec<f64>,
    pot: Vec<f64>,
}

impl PeriodicBackground {
    pub fn new(hop: Vec<f64>, pot: Vec<f64>) -> Result<Self> {
        if hop.is_empty() {
            return Err(Error::InvalidModel("period L must be at least 1".into()));
        }
        if hop.len() != pot.len() {
            return Err(Error::InvalidModel(format!(
                "hop has {} entries but pot has {}",
                hop.len(),
                pot.len()
            )));
        }
        if let Some((l, &t)) = hop.iter().enumerate().find(|(_, t)| !(**t > 0.0)) {
            return Err(Error::NonPositiveHopping { site: l, t });
        }
        Ok(Self { hop, pot })
    }

    /// Free discrete Laplacian, `L = 1`, `t = 1`, `v = 0`.
    pub fn laplacian() -> Self {
        Self { hop: vec![1.0], pot: vec![0.0] }
    }

    pub fn period(&self) -> usize {
        self.hop.len()
    }

    pub fn hop(&self) -> &[f64] {
        &self.hop
    }

    pub fn pot(&self) -> &[f64] {
        &self.pot
    }
}

/// Law of each component of `sigma` in `[-1, 1]^{2L}`; components are i.i.d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderLaw {
    /// Uniform on `[-1, 1]`.
    Uniform,
    /// `+1` or `-1` with probability one half.
    Bernoulli,
    /// `sigma = 0` almost surely.
    Degenerate,
}

impl DisorderLaw {
    pub fn variance(&self) -> f64 {
        match self {
            DisorderLaw::Uniform => 1.0 / 3.0,
            DisorderLaw::Bernoulli => 1.0,
            DisorderLaw::Degenerate => 0.0,
        }
    }

    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DisorderLaw::Uniform => 2.0 * rng.random::<f64>() - 1.0,
            DisorderLaw::Bernoulli => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            DisorderLaw::Degenerate => 0.0,
        }
    }
}

/// Map `sigma -> t~_l(sigma)` or `sigma -> v~_l(sigma)`.
#[derive(Clone)]
pub enum AmplitudeMap {
    /// Coefficient times the component of `sigma` belonging to this site.
    Linear(f64),
    /// Arbitrary bounded, centered function of the whole cell disorder.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for AmplitudeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmplitudeMap::Linear(c) => write!(f, "Linear({c})"),
            AmplitudeMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl AmplitudeMap {
    #[inline]
    fn eval(&self, sigma: &[f64], component: usize) -> f64 {
        match self {
            AmplitudeMap::Linear(c) => c * sigma[component],
            AmplitudeMap::Custom(f) => f(sigma),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisorderSpec {
    hop_amp: Vec<AmplitudeMap>,
    pot_amp: Vec<AmplitudeMap>,
    law: DisorderLaw,
}

impl DisorderSpec {
    pub fn new(hop_amp: Vec<AmplitudeMap>, pot_amp: Vec<AmplitudeMap>, law: DisorderLaw) -> Result<Self> {
        if hop_amp.len() != pot_amp.len() || hop_amp.is_empty() {
            return Err(Error::InvalidModel(format!(
                "amplitude lists must have equal positive length (hop {}, pot {})",
                hop_amp.len(),
                pot_amp.len()
            )));
        }
        Ok(Self { hop_amp, pot_amp, law })
    }

    /// Linear amplitudes with the given coefficients.
    pub fn linear(hop: &[f64], pot: &[f64], law: DisorderLaw) -> Result<Self> {
        Self::new(
            hop.iter().map(|&c| AmplitudeMap::Linear(c)).collect(),
            pot.iter().map(|&c| AmplitudeMap::Linear(c)).collect(),
            law,
        )
    }

    /// Uniform potential disorder of unit amplitude on every site, no hopping disorder.
    pub fn anderson(period: usize) -> Self {
        Self::linear(&vec![0.0; period], &vec![1.0; period], DisorderLaw::Uniform)
            .expect("period >= 1")
    }

    pub fn period(&self) -> usize {
        self.hop_amp.len()
    }

    /// Dimension `2L` of `sigma`.
    pub fn dim(&self) -> usize {
        2 * self.period()
    }

    pub fn law(&self) -> DisorderLaw {
        self.law
    }

    pub fn hop_amp(&self) -> &[AmplitudeMap] {
        &self.hop_amp
    }

    pub fn pot_amp(&self) -> &[AmplitudeMap] {
        &self.pot_amp
    }

    pub fn is_linear(&self) -> bool {
        self.hop_amp
            .iter()
            .chain(self.pot_amp.iter())
            .all(|m| matches!(m, AmplitudeMap::Linear(_)))
    }

    /// `t~_l(sigma)`.
    #[inline]
    pub fn hop_tilde(&self, l: usize, sigma: &[f64]) -> f64 {
        self.hop_amp[l].eval(sigma, l)
    }

    /// `v~_l(sigma)`.
    #[inline]
    pub fn pot_tilde(&self, l: usize, sigma: &[f64]) -> f64 {
        self.pot_amp[l].eval(sigma, self.period() + l)
    }

    /// Largest `|t~_l|` over the support, when known in closed form.
    fn hop_bound(&self, l: usize) -> Option<f64> {
        match (&self.hop_amp[l], self.law) {
            (_, DisorderLaw::Degenerate) => Some(0.0),
            (AmplitudeMap::Linear(c), _) => Some(c.abs()),
            (AmplitudeMap::Custom(_), _) => None,
        }
    }

    /// Fill `sigma` (length `2L`) with one draw.
    #[inline]
    pub fn draw<R: Rng>(&self, rng: &mut R, sigma: &mut [f64]) {
        for s in sigma.iter_mut() {
            *s = self.law.sample(rng);
        }
    }
}

/// Independent random stream for replica `index` under master `seed`.
pub fn disorder_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Flat storage of `m` disorder draws of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSamples {
    dim: usize,
    data: Vec<f64>,
}

impl DisorderSamples {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// `m` draws from stream 0 of `seed`.
pub fn sample_disorder(spec: &DisorderSpec, seed: u64, m: usize) -> Result<DisorderSamples> {
    sample_disorder_stream(spec, seed, 0, m)
}

/// `m` draws from stream `index` of `seed`.
pub fn sample_disorder_stream(spec: &DisorderSpec, seed: u64, index: u64, m: usize) -> Result<DisorderSamples> {
    if m == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    let dim = spec.dim();
    let mut rng = disorder_stream(seed, index);
    let mut data = vec![0.0; dim * m];
    for chunk in data.chunks_exact_mut(dim) {
        spec.draw(&mut rng, chunk);
    }
    Ok(DisorderSamples { dim, data })
}

#[derive(Debug, Clone)]
pub struct ModelInstance {
    background: PeriodicBackground,
    disorder: DisorderSpec,
    lambda: f64,
}

impl ModelInstance {
    pub fn new(background: PeriodicBackground, disorder: DisorderSpec, lambda: f64) -> Result<Self> {
        if background.period() != disorder.period() {
            return Err(Error::InvalidModel(format!(
                "background period {} differs from disorder period {}",
                background.period(),
                disorder.period()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidModel(format!("coupling must be finite and >= 0, got {lambda}")));
        }
        let model = Self { background, disorder, lambda };
        for l in 0..model.period() {
            if let Some(bound) = model.disorder.hop_bound(l) {
                let t_min = model.background.hop[l] - lambda * bound;
                if !(t_min > 0.0) {
                    return Err(Error::NonPositiveHopping { site: l, t: t_min });
                }
            }
        }
        Ok(model)
    }

    /// Anderson model: free Laplacian plus `lambda * sigma`, `sigma` uniform on `[-1, 1]`.
    pub fn anderson(lambda: f64) -> Self {
        Self::new(PeriodicBackground::laplacian(), DisorderSpec::anderson(1), lambda)
            .expect("anderson model is valid for any lambda >= 0")
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.background.clone(), self.disorder.clone(), lambda)
    }

    pub fn period(&self) -> usize {
        self.background.period()
    }

    pub fn background(&self) -> &PeriodicBackground {
        &self.background
    }

    pub fn disorder(&self) -> &DisorderSpec {
        &self.disorder
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Hopping and potential `(t, v)` of site `l` (0-based) in a cell with disorder `sigma`.
#[inline]
pub fn site_coefficients(model: &ModelInstance, sigma: &[f64], l: usize) -> Result<(f64, f64)> {
    if l >= model.period() {
        return Err(Error::Precondition(format!("site index {l} outside 0..{}", model.period())));
    }
    let lambda = model.lambda;
    let t = model.background.hop[l] + lambda * model.disorder.hop_tilde(l, sigma);
    let v = model.background.pot[l] + lambda * model.disorder.pot_tilde(l, sigma);
    if !(t > 0.0) {
        return Err(Error::NonPositiveHopping { site: l, t });
    }
    Ok((t, v))
}

const STURM_PIVOT_GUARD: f64 = 1e-300;

/// Number of eigenvalues strictly below `energy` of a symmetric tridiagonal
/// matrix (`diag`, `off[i]` couples `i` and `i+1`), by the Sturm sign count.
/// An eigenvalue exactly at `energy` is not counted.
pub fn sturm_count(diag: &[f64], off: &[f64], energy: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for (i, &d) in diag.iter().enumerate() {
        let coupling = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = (d - energy) - if i == 0 { 0.0 } else { coupling / q };
        if q == 0.0 {
            q = STURM_PIVOT_GUARD;
        } else if q.abs() < STURM_PIVOT_GUARD {
            q = STURM_PIVOT_GUARD.copysign(q);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvalue count below `energy` of the Dirichlet truncation of `H` to
/// sites `0..n_sites`, with cell disorder taken from `omega` (one draw per cell).
pub fn finite_volume_count(
    model: &ModelInstance,
    omega: &DisorderSamples,
    n_sites: usize,
    energy: f64,
) -> Result<usize> {
    if n_sites < 2 {
        return Err(Error::Precondition("n_sites must be at least 2".into()));
    }
    let period = model.period();
    let cells = n_sites.div_ceil(period);
    if omega.len() < cells {
        return Err(Error::Precondition(format!(
            "disorder sequence has {} cells, {} needed",
            omega.len(),
            cells
        )));
    }
    let mut diag = Vec::with_capacity(n_sites);
    let mut hop = Vec::with_capacity(n_sites);
    for n in 0..n_sites {
        let (t, v) = site_coefficients(model, omega.get(n / period), n % period)?;
        diag.push(v);
        hop.push(t);
    }
    // off-diagonal between n-1 and n is t(n)
    let count = sturm_count(&diag, &hop[1..], energy);
    Ok(count.min(n_sites))
}

/// JSON form of a model:
/// `{"L":1,"hop":[1],"pot":[0],"disorder":{"kind":"uniform","pot_amp":[1],"hop_amp":[0]},"lambda":0.1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(rename = "L")]
    pub period: usize,
    pub hop: Vec<f64>,
    pub pot: Vec<f64>,
    pub disorder: DisorderConfig,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderConfig {
    pub kind: DisorderLaw,
    pub pot_amp: Vec<f64>,
    pub hop_amp: Vec<f64>,
}

impl ModelConfig {
    pub fn anderson(lambda: f64) -> Self {
        Self {
            period: 1,
            hop: vec![1.0],
            pot: vec![0.0],
            disorder: DisorderConfig { kind: DisorderLaw::Uniform, pot_amp: vec![1.0], hop_amp: vec![0.0] },
            lambda,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn build(&self) -> Result<ModelInstance> {
        if self.hop.len() != self.period {
            return Err(Error::InvalidModel(format!("L = {} but hop has {} entries", self.period, self.hop.len())));
        }
        let background = PeriodicBackground::new(self.hop.clone(), self.pot.clone())?;
        let disorder = DisorderSpec::linear(&self.disorder.hop_amp, &self.disorder.pot_amp, self.disorder.kind)?;
        ModelInstance::new(background, disorder, self.lambda)
    }
}
