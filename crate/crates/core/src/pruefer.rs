//! Pruefer phase dynamics and Monte Carlo estimates of the Lyapunov
//! exponent, rotation number, IDS, Birkhoff sums and phase histograms.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::Mat2;
use crate::model::{disorder_stream, DisorderSpec, ModelInstance, PeriodicBackground};
use crate::stats::{replicas_disagree, BatchAccumulator, Estimate};

/// Which representative of the phase shift `phi` to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Node-crossing lift of a single Jacobi site matrix (lower-left entry
    /// positive): the angle is followed continuously from its representative
    /// in `[-pi/2, pi/2)`. The shift lies in `[0, pi)` whenever the site
    /// matrix is elliptic, and is the lift that counts eigenvalues otherwise.
    Forward,
    /// Representative nearest zero, in `(-pi/2, pi/2]`.
    Nearest,
}

#[inline]
fn mod_pi(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

#[inline]
fn centered(theta: f64) -> f64 {
    if theta >= FRAC_PI_2 {
        theta - PI
    } else {
        theta
    }
}

/// Projective action: `(theta', phi, log |T e_theta|)`.
pub fn act(t: &Mat2, theta: f64, branch: Branch) -> (f64, f64, f64) {
    let tc = centered(mod_pi(theta));
    let (s, c) = tc.sin_cos();
    let [u, v] = t.apply([c, s]);
    let log_norm = 0.5 * (u * u + v * v).ln();
    let f = v.atan2(u);
    let next = mod_pi(f);
    let phi = match branch {
        Branch::Forward => f - tc,
        Branch::Nearest => {
            let d = (next - mod_pi(theta)).rem_euclid(PI);
            if d > FRAC_PI_2 {
                d - PI
            } else {
                d
            }
        }
    };
    (next, phi, log_norm)
}

/// Pruefer angle with its lift and accumulated log-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub theta: f64,
    pub lift: f64,
    pub log_norm_sum: f64,
    pub steps: u64,
}

impl PhaseState {
    pub fn new(theta: f64) -> Self {
        let theta = mod_pi(theta);
        Self { theta, lift: theta, log_norm_sum: 0.0, steps: 0 }
    }

    pub fn apply(&mut self, t: &Mat2, branch: Branch) {
        let (next, phi, ln) = act(t, self.theta, branch);
        self.theta = next;
        self.lift += phi;
        self.log_norm_sum += ln;
        self.steps += 1;
    }
}

/// A bounded observable `f(theta)` whose Birkhoff average is recorded.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Observable {
    pub fn new(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.to_string(), f: Arc::new(f) }
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.name)
    }
}

/// Random cocycle acting on unit vectors of the plane.
pub trait Cocycle: Sync {
    /// Dimension of one disorder draw.
    fn dim(&self) -> usize;
    /// Number of lattice sites per step (used for per-site normalization).
    fn sites(&self) -> usize;
    fn draw(&self, rng: &mut ChaCha8Rng, sigma: &mut [f64]);
    /// Apply one step to the representative `w` (unit vector, `w[0] >= 0`
    /// for Jacobi cocycles). Returns `(log growth, lift increment)`.
    fn advance(&self, sigma: &[f64], w: &mut [f64; 2]) -> Result<(f64, f64)>;
}

/// Unit cell of a Jacobi operator at a fixed energy.
pub struct JacobiCocycle<'a> {
    background: &'a PeriodicBackground,
    disorder: &'a DisorderSpec,
    lambda: f64,
    energy: f64,
}

impl<'a> JacobiCocycle<'a> {
    pub fn new(model: &'a ModelInstance, energy: f64) -> Self {
        Self { background: model.background(), disorder: model.disorder(), lambda: model.lambda(), energy }
    }
}

impl Cocycle for JacobiCocycle<'_> {
    fn dim(&self) -> usize {
        self.disorder.dim()
    }

    fn sites(&self) -> usize {
        self.background.period()
    }

    #[inline]
    fn draw(&self, rng: &mut ChaCha8Rng, sigma: &mut [f64]) {
        self.disorder.draw(rng, sigma);
    }

    #[inline]
    fn advance(&self, sigma: &[f64], w: &mut [f64; 2]) -> Result<(f64, f64)> {
        let start = w[1].atan2(w[0]);
        let mut norm_prod = 1.0;
        let mut crossings = 0u32;
        let (hop, pot) = (self.background.hop(), self.background.pot());
        for l in 0..hop.len() {
            let t = hop[l] + self.lambda * self.disorder.hop_tilde(l, sigma);
            let v = pot[l] + self.lambda * self.disorder.pot_tilde(l, sigma);
            if !(t > 0.0) {
                return Err(Error::NonPositiveHopping { site: l, t });
            }
            // [[(E-v)/t, -t], [1/t, 0]] applied to w
            let mut a = ((self.energy - v) * w[0]) / t - t * w[1];
            let mut b = w[0] / t;
            // image angle in [0, pi]; fold back to [-pi/2, pi/2)
            if a < 0.0 || (a == 0.0 && b > 0.0) {
                a = -a;
                b = -b;
                crossings += 1;
            }
            let n = (a * a + b * b).sqrt();
            norm_prod *= n;
            w[0] = a / n;
            w[1] = b / n;
        }
        let end = w[1].atan2(w[0]);
        Ok((norm_prod.ln(), end - start + PI * f64::from(crossings)))
    }
}

/// i.i.d. random matrices `sigma -> T(sigma)`, lifted with the nearest branch.
pub struct MatrixCocycle<F> {
    pub disorder: DisorderSpec,
    pub matrix: F,
}

impl<F: Fn(&[f64]) -> Mat2 + Sync> Cocycle for MatrixCocycle<F> {
    fn dim(&self) -> usize {
        self.disorder.dim()
    }

    fn sites(&self) -> usize {
        1
    }

    fn draw(&self, rng: &mut ChaCha8Rng, sigma: &mut [f64]) {
        self.disorder.draw(rng, sigma);
    }

    fn advance(&self, sigma: &[f64], w: &mut [f64; 2]) -> Result<(f64, f64)> {
        let t = (self.matrix)(sigma);
        let theta = mod_pi(w[1].atan2(w[0]));
        let [a, b] = t.apply(*w);
        let n = (a * a + b * b).sqrt();
        let (mut a, mut b) = (a / n, b / n);
        if a < 0.0 || (a == 0.0 && b > 0.0) {
            a = -a;
            b = -b;
        }
        *w = [a, b];
        let next = mod_pi(b.atan2(a));
        let mut d = (next - theta).rem_euclid(PI);
        if d > FRAC_PI_2 {
            d -= PI;
        }
        Ok((n.ln(), d))
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Total measured steps over all replicas.
    pub n_steps: u64,
    /// Discarded steps at the start of every replica.
    pub burn_in: u64,
    pub replicas: usize,
    pub seed: u64,
    /// Record the phase histogram with this many uniform bins on `[0, pi)`.
    pub n_bins: Option<usize>,
    pub observables: Vec<Observable>,
    /// Observe the phase in the frame `G` (angle of `G w`) instead of the raw frame.
    pub frame: Option<Mat2>,
}

impl SimConfig {
    pub fn new(n_steps: u64, replicas: usize, seed: u64) -> Self {
        Self {
            n_steps,
            burn_in: default_burn_in(n_steps),
            replicas,
            seed,
            n_bins: None,
            observables: Vec::new(),
            frame: None,
        }
    }

    pub fn with_frame(mut self, frame: Mat2) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn with_histogram(mut self, n_bins: usize) -> Self {
        self.n_bins = Some(n_bins);
        self
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn observe(mut self, obs: Observable) -> Self {
        self.observables.push(obs);
        self
    }
}

/// `max(10^4, n_steps / 100)`.
pub fn default_burn_in(n_steps: u64) -> u64 {
    (n_steps / 100).max(10_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        PI / self.counts.len() as f64
    }

    /// `(bin_lo, bin_hi, count)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, u64)> {
        let w = self.bin_width();
        self.counts.iter().enumerate().map(|(i, &c)| (i as f64 * w, (i + 1) as f64 * w, c)).collect()
    }

    /// Fraction of the mass within `radius` of `center` on the circle of length `pi`,
    /// counting bins by their midpoints.
    pub fn mass_near(&self, center: f64, radius: f64) -> f64 {
        let w = self.bin_width();
        let total = self.total() as f64;
        let inside: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let mid = (*i as f64 + 0.5) * w;
                let d = (mid - center).rem_euclid(PI);
                d.min(PI - d) <= radius
            })
            .map(|(_, c)| *c)
            .sum();
        inside as f64 / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    /// Lyapunov exponent per site.
    pub gamma_hat: Estimate,
    /// Rotation per site in units of `pi`, node-crossing lift.
    pub r_hat: Estimate,
    /// Rotation per step in units of `pi`, nearest-branch lift in the observation frame.
    pub r_frame: Estimate,
    /// Real and imaginary parts of the Birkhoff average of `exp(2i theta)`.
    pub exp2: (Estimate, Estimate),
    /// Real and imaginary parts of the Birkhoff average of `exp(4i theta)`.
    pub exp4: (Estimate, Estimate),
    pub histogram: Option<Histogram>,
    pub birkhoff: Vec<(String, Estimate)>,
    pub replicas: usize,
    pub steps_per_replica: u64,
    pub sites_per_step: usize,
    pub non_ergodic: bool,
    pub warnings: Vec<String>,
}

impl TrajectoryStats {
    /// Birkhoff average of a registered observable.
    pub fn birkhoff(&self, name: &str) -> Option<Estimate> {
        self.birkhoff.iter().find(|(n, _)| n == name).map(|(_, e)| *e)
    }

    /// IDS from the node-crossing rotation number.
    pub fn ids(&self) -> Result<Estimate> {
        // a finite lift is off by at most one half-turn per trajectory
        let slack = 2.0 / (self.steps_per_replica.max(1) as f64 * self.sites_per_step as f64);
        Ok(Estimate { mean: ids(self.r_hat.mean, slack)?, stderr: self.r_hat.stderr })
    }
}

/// `IDS = 1 - R` with `R` the per-site node-crossing rotation in units of `pi`,
/// clamped to `[0, 1]` when it overshoots by at most `slack`.
pub fn ids(r_hat: f64, slack: f64) -> Result<f64> {
    let n = 1.0 - r_hat;
    let slack = slack.max(1e-9);
    if !(n >= -slack && n <= 1.0 + slack) {
        return Err(Error::BranchAudit(n));
    }
    Ok(n.clamp(0.0, 1.0))
}

const N_BATCHES: u64 = 16;

struct ReplicaOut {
    gamma: BatchAccumulator,
    rot: BatchAccumulator,
    rot_frame: BatchAccumulator,
    e2: (f64, f64),
    e4: (f64, f64),
    obs: Vec<f64>,
    hist: Vec<u64>,
}

#[inline]
fn frame_angle_data(frame: Option<&Mat2>, w: &[f64; 2]) -> (f64, f64, f64) {
    let g = match frame {
        Some(m) => m.apply(*w),
        None => *w,
    };
    let r2 = g[0] * g[0] + g[1] * g[1];
    // exp(2 i theta) = (g0 + i g1)^2 / |g|^2
    let c2 = (g[0] * g[0] - g[1] * g[1]) / r2;
    let s2 = 2.0 * g[0] * g[1] / r2;
    (c2, s2, mod_pi(g[1].atan2(g[0])))
}

fn run_replica<C: Cocycle>(cocycle: &C, cfg: &SimConfig, index: usize, steps: u64) -> Result<ReplicaOut> {
    let mut rng = disorder_stream(cfg.seed, index as u64);
    let theta0 = PI * rng.random::<f64>();
    let tc = centered(theta0);
    let mut w = [tc.cos(), tc.sin()];
    let mut sigma = vec![0.0; cocycle.dim()];
    for _ in 0..cfg.burn_in {
        cocycle.draw(&mut rng, &mut sigma);
        cocycle.advance(&sigma, &mut w)?;
    }
    let frame = cfg.frame.as_ref();
    let n_bins = cfg.n_bins.unwrap_or(0);
    let mut out = ReplicaOut {
        gamma: BatchAccumulator::new(steps, N_BATCHES),
        rot: BatchAccumulator::new(steps, N_BATCHES),
        rot_frame: BatchAccumulator::new(steps, N_BATCHES),
        e2: (0.0, 0.0),
        e4: (0.0, 0.0),
        obs: vec![0.0; cfg.observables.len()],
        hist: vec![0; n_bins],
    };
    let (mut c2, mut s2, mut theta) = frame_angle_data(frame, &w);
    for _ in 0..steps {
        out.e2.0 += c2;
        out.e2.1 += s2;
        out.e4.0 += c2 * c2 - s2 * s2;
        out.e4.1 += 2.0 * c2 * s2;
        for (acc, o) in out.obs.iter_mut().zip(&cfg.observables) {
            *acc += (o.f)(theta);
        }
        if n_bins > 0 {
            let b = ((theta / PI) * n_bins as f64) as usize;
            out.hist[b.min(n_bins - 1)] += 1;
        }
        cocycle.draw(&mut rng, &mut sigma);
        let (ln, lift) = cocycle.advance(&sigma, &mut w)?;
        out.gamma.push(ln);
        out.rot.push(lift);
        let (nc2, ns2, ntheta) = frame_angle_data(frame, &w);
        let mut d = (ntheta - theta).rem_euclid(PI);
        if d > FRAC_PI_2 {
            d -= PI;
        }
        out.rot_frame.push(d);
        (c2, s2, theta) = (nc2, ns2, ntheta);
    }
    Ok(out)
}

/// Run `cfg.replicas` independent trajectories of `cocycle` and aggregate.
pub fn simulate<C: Cocycle>(cocycle: &C, cfg: &SimConfig) -> Result<TrajectoryStats> {
    if cfg.replicas < 8 {
        return Err(Error::Precondition(format!("need at least 8 replicas, got {}", cfg.replicas)));
    }
    if cfg.n_steps < 10 * cfg.burn_in {
        return Err(Error::Precondition(format!(
            "n_steps = {} must be at least 10 * burn_in = {}",
            cfg.n_steps,
            10 * cfg.burn_in
        )));
    }
    if cfg.n_bins == Some(0) {
        return Err(Error::Precondition("histogram needs at least one bin".into()));
    }
    let steps = cfg.n_steps / cfg.replicas as u64;
    let outs: Vec<ReplicaOut> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| run_replica(cocycle, cfg, i, steps))
        .collect::<Result<Vec<_>>>()?;

    let sites = cocycle.sites() as f64;
    let nf = steps as f64;
    let gamma_means: Vec<f64> = outs.iter().map(|o| o.gamma.mean() / sites).collect();
    let rot_means: Vec<f64> = outs.iter().map(|o| o.rot.mean() / (PI * sites)).collect();
    let rot_frame_means: Vec<f64> = outs.iter().map(|o| o.rot_frame.mean() / PI).collect();
    let per = |f: &dyn Fn(&ReplicaOut) -> f64| -> Estimate {
        Estimate::from_replicas(&outs.iter().map(|o| f(o) / nf).collect::<Vec<_>>())
    };
    let exp2 = (per(&|o| o.e2.0), per(&|o| o.e2.1));
    let exp4 = (per(&|o| o.e4.0), per(&|o| o.e4.1));
    let birkhoff = cfg
        .observables
        .iter()
        .enumerate()
        .map(|(k, o)| (o.name.clone(), per(&|r: &ReplicaOut| r.obs[k])))
        .collect();
    let histogram = cfg.n_bins.map(|n| {
        let mut counts = vec![0u64; n];
        for o in &outs {
            for (c, h) in counts.iter_mut().zip(&o.hist) {
                *c += h;
            }
        }
        Histogram { counts }
    });

    let mut warnings = Vec::new();
    let gamma_within: Vec<f64> = outs.iter().map(|o| o.gamma.batch_stderr() / sites).collect();
    let rot_within: Vec<f64> = outs.iter().map(|o| o.rot.batch_stderr() / (PI * sites)).collect();
    let mut non_ergodic = false;
    if replicas_disagree(&gamma_means, &gamma_within, 6.0) {
        non_ergodic = true;
        warnings.push("non-ergodic warning: replica Lyapunov means disagree by more than 6 pooled standard errors".into());
    }
    if replicas_disagree(&rot_means, &rot_within, 6.0) {
        non_ergodic = true;
        warnings.push("non-ergodic warning: replica rotation means disagree by more than 6 pooled standard errors".into());
    }

    Ok(TrajectoryStats {
        gamma_hat: Estimate::from_replicas(&gamma_means),
        r_hat: Estimate::from_replicas(&rot_means),
        r_frame: Estimate::from_replicas(&rot_frame_means),
        exp2,
        exp4,
        histogram,
        birkhoff,
        replicas: cfg.replicas,
        steps_per_replica: steps,
        sites_per_step: cocycle.sites(),
        non_ergodic,
        warnings,
    })
}

/// Simulate the Jacobi operator `model` at `energy`.
pub fn simulate_model(model: &ModelInstance, energy: f64, cfg: &SimConfig) -> Result<TrajectoryStats> {
    simulate(&JacobiCocycle::new(model, energy), cfg)
}

/// Birkhoff average `(1/N) sum f(theta_n)` of a recorded phase path with a
/// batch-means standard error (16 batches).
pub fn birkhoff(path: &[f64], f: impl Fn(f64) -> f64) -> Estimate {
    let mut acc = BatchAccumulator::new(path.len() as u64, N_BATCHES);
    for &t in path {
        acc.push(f(t));
    }
    let stderr = if path.len() as u64 >= N_BATCHES { acc.batch_stderr() } else { f64::NAN };
    Estimate { mean: acc.mean(), stderr }
}
