//! Fokker-Planck drift/diffusion polynomials and their groundstate.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::anomaly::{self, p_poly, AnomalyExpansion, Order};
use crate::error::{Error, Result};
use crate::quadrature::{adaptive, gl16, gl8_nodes, log_add_exp};
use crate::singular_ode::{self, solve_at, taylor_jet_at, taylor_value, zero_order, OdeProblem, Polynomial, Side, Smooth};

/// `c0 + c2 cos 2t + s2 sin 2t + c4 cos 4t + s4 sin 4t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigPoly4 {
    pub c0: f64,
    pub c2: f64,
    pub s2: f64,
    pub c4: f64,
    pub s4: f64,
}

impl TrigPoly4 {
    pub const ZERO: TrigPoly4 = TrigPoly4 { c0: 0.0, c2: 0.0, s2: 0.0, c4: 0.0, s4: 0.0 };

    pub const fn new(c0: f64, c2: f64, s2: f64, c4: f64, s4: f64) -> Self {
        Self { c0, c2, s2, c4, s4 }
    }

    pub fn constant(c0: f64) -> Self {
        Self { c0, ..Self::ZERO }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let (s2t, c2t) = (2.0 * theta).sin_cos();
        let (s4t, c4t) = (4.0 * theta).sin_cos();
        self.c0 + self.c2 * c2t + self.s2 * s2t + self.c4 * c4t + self.s4 * s4t
    }

    pub fn derivative(&self) -> Self {
        Self::new(0.0, 2.0 * self.s2, -2.0 * self.c2, 4.0 * self.s4, -4.0 * self.c4)
    }

    /// `n`-th derivative evaluated at `theta`.
    pub fn derivative_at(&self, n: usize, theta: f64) -> f64 {
        let mut p = *self;
        for _ in 0..n {
            p = p.derivative();
        }
        p.eval(theta)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.c0 * s, self.c2 * s, self.s2 * s, self.c4 * s, self.s4 * s)
    }

    pub fn is_degree2(&self) -> bool {
        self.c4 == 0.0 && self.s4 == 0.0
    }

    /// Product of two polynomials of degree at most 2 (in `2t`).
    pub fn mul2(&self, o: &TrigPoly4) -> Self {
        assert!(self.is_degree2() && o.is_degree2(), "product would exceed degree 4");
        let (a0, a2, b2) = (self.c0, self.c2, self.s2);
        let (d0, d2, e2) = (o.c0, o.c2, o.s2);
        Self::new(
            a0 * d0 + 0.5 * (a2 * d2 + b2 * e2),
            a0 * d2 + a2 * d0,
            a0 * e2 + b2 * d0,
            0.5 * (a2 * d2 - b2 * e2),
            0.5 * (a2 * e2 + b2 * d2),
        )
    }

    pub fn max_abs_coeff(&self) -> f64 {
        [self.c0, self.c2, self.s2, self.c4, self.s4].iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

impl std::ops::Add for TrigPoly4 {
    type Output = TrigPoly4;
    fn add(self, o: TrigPoly4) -> TrigPoly4 {
        TrigPoly4::new(self.c0 + o.c0, self.c2 + o.c2, self.s2 + o.s2, self.c4 + o.c4, self.s4 + o.s4)
    }
}

impl std::ops::Sub for TrigPoly4 {
    type Output = TrigPoly4;
    fn sub(self, o: TrigPoly4) -> TrigPoly4 {
        self + o.scale(-1.0)
    }
}

impl std::ops::Neg for TrigPoly4 {
    type Output = TrigPoly4;
    fn neg(self) -> TrigPoly4 {
        self.scale(-1.0)
    }
}

/// Drift/diffusion pair of a second order anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Diffusion `E(p_1^2)`.
    pub p: TrigPoly4,
    /// Drift `2 E(p_K) + E(p_1 dp_1)`.
    pub q: TrigPoly4,
    /// `p` vanishes identically.
    pub degenerate: bool,
}

impl Coefficients {
    /// `q~ = p' - q`.
    pub fn q_tilde(&self) -> TrigPoly4 {
        q_tilde(&self.p, &self.q)
    }
}

pub fn q_tilde(p: &TrigPoly4, q: &TrigPoly4) -> TrigPoly4 {
    p.derivative() - *q
}

pub fn coefficients(expansion: &AnomalyExpansion) -> Result<Coefficients> {
    let class = anomaly::classify(expansion)?;
    if class.order != Order::Second {
        return Err(Error::NotSecondOrder);
    }
    let t1 = &expansion.terms[0];
    let tk = &expansion.terms[class.k_index];
    let mut p = TrigPoly4::ZERO;
    let mut drift = TrigPoly4::ZERO;
    for m in std::iter::once(&t1.mean).chain(&t1.fluct) {
        let f = p_poly(m);
        p = p + f.mul2(&f);
        drift = drift + f.mul2(&f.derivative());
    }
    let q = p_poly(&tk.mean).scale(2.0) + drift;
    Ok(Coefficients { p, q, degenerate: p.max_abs_coeff() == 0.0 })
}

/// Parabolic band-edge pair `p = m2 cos^4`, `q = ex - 1 + (ex + 1) cos 2t - 2 m2 cos^3 sin`.
pub fn parabolic_coefficients(eps_x: f64, m2: f64) -> Coefficients {
    let p = TrigPoly4::new(0.375, 0.5, 0.0, 0.125, 0.0).scale(m2);
    let q = TrigPoly4::new(eps_x - 1.0, eps_x + 1.0, -0.5 * m2, 0.0, -0.25 * m2);
    Coefficients { p, q, degenerate: m2 == 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInfo {
    pub theta: f64,
    pub order: usize,
    /// `q~` and `q~'` at the zero.
    pub qt0: f64,
    pub qt1: f64,
}

impl ZeroInfo {
    fn qt_vanishes(&self) -> bool {
        self.qt0 == 0.0
    }

    /// `w~ -> +inf` when approaching the zero from the right.
    fn repels_right(&self) -> bool {
        self.qt0 < 0.0 || (self.qt_vanishes() && self.qt1 < 0.0)
    }

    fn repels_left(&self) -> bool {
        self.qt0 > 0.0 || (self.qt_vanishes() && self.qt1 < 0.0)
    }

    /// Common zero of `p` and `q` at which the Dirac peak is stable.
    fn absorbing(&self) -> bool {
        self.qt_vanishes() && self.qt1 >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tag")]
pub enum GroundstateCase {
    /// `p > 0`.
    Regular,
    /// Single zero of `p` (order 2 or 4) with `q~ != 0`.
    OneZero { order: usize },
    /// Two zeros with `q~` of the same sign.
    TwoZerosSameSign,
    /// `C = 0`, density `exp(-w~)` on one arc between zeros of `p`.
    Split { support: (f64, f64) },
    /// Single zero with `q~ = 0`, `q~' < 0`: `C = 0`, density `exp(-w~)` on the whole circle.
    Homogeneous { order: usize },
    /// Order-2 zero with `p' = q = 0`, `p'' >= q'`: only the zero density.
    SituationI { theta: f64 },
    /// Order-4 zero with `q~ = 0`, `q~' >= 0`: Dirac peak.
    SituationII { theta: f64 },
    /// No continuous non-negative periodic solution.
    NoContinuous,
    /// Several candidate groundstates.
    Degenerate { peaks: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundstateClass {
    pub case: GroundstateCase,
    pub zeros: Vec<ZeroInfo>,
    /// Point where the density may fail to be differentiable.
    pub non_smooth_at: Option<f64>,
}

const CHECK_GRID: usize = 10_000;

/// Zeros of a non-negative `p` on `[0, pi)` with their orders.
pub fn zeros_of(p: &TrigPoly4) -> Result<Vec<(f64, usize)>> {
    let n = CHECK_GRID;
    let h = PI / n as f64;
    let vals: Vec<f64> = (0..n).map(|i| p.eval(i as f64 * h)).collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = vals.iter().copied().fold(0.0f64, f64::max);
    if min < -1e-10 * scale.max(1.0) {
        return Err(Error::NotNonnegative(min));
    }
    if scale == 0.0 {
        return Err(Error::NoNormalizableGroundstate("p vanishes identically".into()));
    }
    let newton = |k: usize, start: f64| -> Option<f64> {
        let mut t = start;
        for _ in 0..100 {
            let d = p.derivative_at(k + 1, t);
            if d == 0.0 {
                return None;
            }
            let step = p.derivative_at(k, t) / d;
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        ((t - start).abs() <= 3.0 * h).then_some(t)
    };
    let small = |t: f64, upto: usize| (0..upto).all(|j| p.derivative_at(j, t).abs() <= 1e-9 * scale * 4f64.powi(j as i32));
    let mut zeros: Vec<(f64, usize)> = Vec::new();
    for i in 0..n {
        let (prev, next) = (vals[(i + n - 1) % n], vals[(i + 1) % n]);
        if !(vals[i] <= prev && vals[i] < next && vals[i] <= 1e-4 * scale) {
            continue;
        }
        let start = i as f64 * h;
        let theta = match (newton(3, start), newton(1, start)) {
            (Some(t4), _) if small(t4, 3) => t4,
            (_, Some(t2)) if small(t2, 1) => t2,
            _ => continue,
        };
        let theta = theta.rem_euclid(PI);
        let order = zero_order(p, theta)?;
        if order == 0 {
            continue;
        }
        if zeros.iter().all(|(z, _)| {
            let d = (z - theta).rem_euclid(PI);
            d.min(PI - d) > 1e-6
        }) {
            zeros.push((theta, order));
        }
    }
    zeros.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(zeros)
}

pub fn classify_groundstate(p: &TrigPoly4, q: &TrigPoly4) -> Result<GroundstateClass> {
    let qt = q_tilde(p, q);
    let qscale = qt.max_abs_coeff().max(p.max_abs_coeff());
    let zeros: Vec<ZeroInfo> = zeros_of(p)?
        .into_iter()
        .map(|(theta, order)| {
            let mut qt0 = qt.eval(theta);
            if qt0.abs() <= 1e-9 * qscale {
                qt0 = 0.0;
            }
            let mut qt1 = qt.derivative_at(1, theta);
            if qt1.abs() <= 1e-9 * qscale {
                qt1 = 0.0;
            }
            ZeroInfo { theta, order, qt0, qt1 }
        })
        .collect();
    let non_smooth_at = zeros.iter().find(|z| z.order == 2 && z.qt_vanishes() && z.qt1 < 0.0).map(|z| z.theta);
    let case = if zeros.is_empty() {
        GroundstateCase::Regular
    } else {
        let absorbing: Vec<&ZeroInfo> = zeros.iter().filter(|z| z.absorbing()).collect();
        match absorbing.as_slice() {
            [a, b, ..] => GroundstateCase::Degenerate { peaks: vec![a.theta, b.theta] },
            [z] if z.order == 2 => GroundstateCase::SituationI { theta: z.theta },
            [z] => GroundstateCase::SituationII { theta: z.theta },
            [] if zeros.iter().all(|z| !z.qt_vanishes()) && zeros.iter().all(|z| z.qt0.signum() == zeros[0].qt0.signum()) => {
                if zeros.len() == 1 {
                    GroundstateCase::OneZero { order: zeros[0].order }
                } else {
                    GroundstateCase::TwoZerosSameSign
                }
            }
            [] => {
                let n = zeros.len();
                let arcs: Vec<(f64, f64)> = (0..n)
                    .filter(|&i| zeros[i].repels_right() && zeros[(i + 1) % n].repels_left())
                    .map(|i| {
                        let end = zeros[(i + 1) % n].theta;
                        (zeros[i].theta, if end > zeros[i].theta { end } else { end + PI })
                    })
                    .collect();
                match arcs.as_slice() {
                    [] => GroundstateCase::NoContinuous,
                    [arc] if n == 1 => {
                        let _ = arc;
                        GroundstateCase::Homogeneous { order: zeros[0].order }
                    }
                    [arc] => GroundstateCase::Split { support: *arc },
                    many => GroundstateCase::Degenerate { peaks: many.iter().map(|a| a.0).collect() },
                }
            }
        }
    };
    Ok(GroundstateClass { case, zeros, non_smooth_at })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundstateKind {
    Density,
    Dirac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Groundstate {
    pub kind: GroundstateKind,
    /// Uniform grid `i pi / n` (density kind).
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta_hat: Option<f64>,
    /// Integration constant of `(p d + q~) rho = C` for the normalized density.
    pub c: f64,
    pub class: GroundstateClass,
}

impl Groundstate {
    pub fn grid_step(&self) -> f64 {
        PI / self.theta.len().max(1) as f64
    }

    /// Periodic trapezoid integral of `rho`.
    pub fn mass(&self) -> f64 {
        match self.kind {
            GroundstateKind::Density => self.rho.iter().sum::<f64>() * self.grid_step(),
            GroundstateKind::Dirac => 1.0,
        }
    }

    /// Value at the grid point nearest to `theta`.
    pub fn value_at(&self, theta: f64) -> f64 {
        let n = self.theta.len();
        let i = ((theta.rem_euclid(PI) / self.grid_step()).round() as usize) % n;
        self.rho[i]
    }
}

pub const DEFAULT_GRID: usize = 4096;

fn integrate_ratio(num: &TrigPoly4, den: &TrigPoly4, a: f64, b: f64) -> Result<f64> {
    let f = |x: f64| num.eval(x) / den.eval(x);
    let rough = gl16(f, a, b);
    adaptive(&f, a, b, 1e-12 * rough.abs().max(1.0))
}

/// Offset of `theta` from `start` along the positive direction, in `[0, pi)`.
fn forward(start: f64, theta: f64) -> f64 {
    (theta - start).rem_euclid(PI)
}

pub fn groundstate(p: &TrigPoly4, q: &TrigPoly4, n_grid: usize) -> Result<Groundstate> {
    if n_grid < 16 {
        return Err(Error::Precondition("groundstate grid needs at least 16 points".into()));
    }
    let class = classify_groundstate(p, q)?;
    let qt = q_tilde(p, q);
    let h = PI / n_grid as f64;
    let theta: Vec<f64> = (0..n_grid).map(|i| i as f64 * h).collect();
    let (rho, c) = match &class.case {
        GroundstateCase::Regular => regular_density(p, &qt, &theta)?,
        GroundstateCase::OneZero { .. } | GroundstateCase::TwoZerosSameSign => marching_density(p, &qt, &class.zeros, &theta)?,
        GroundstateCase::Split { support } => (arc_density(p, &qt, support.0, support.1 - support.0, &theta)?, 0.0),
        GroundstateCase::Homogeneous { .. } => (arc_density(p, &qt, class.zeros[0].theta, PI, &theta)?, 0.0),
        GroundstateCase::SituationII { theta: t } => {
            return Ok(Groundstate {
                kind: GroundstateKind::Dirac,
                theta: Vec::new(),
                rho: Vec::new(),
                theta_hat: Some(*t),
                c: 0.0,
                class,
            })
        }
        GroundstateCase::SituationI { theta: t } => {
            return Err(Error::NoNormalizableGroundstate(format!(
                "order-2 zero at {t} with p' = q = 0 and p'' >= q': only the zero solution"
            )))
        }
        GroundstateCase::NoContinuous => {
            return Err(Error::NoNormalizableGroundstate("no continuous periodic solution".into()))
        }
        GroundstateCase::Degenerate { peaks } => return Err(Error::DegenerateGroundstate(peaks.clone())),
    };
    let mass = rho.iter().sum::<f64>() * h;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Quadrature(format!("density mass {mass}")));
    }
    Ok(Groundstate {
        kind: GroundstateKind::Density,
        rho: rho.iter().map(|r| r / mass).collect(),
        theta,
        theta_hat: None,
        c: c / mass,
        class,
    })
}

/// `rho ~ e^{-w~} ((W~(pi) - W~) + e^{w~(pi)} W~)` with all factors kept as logs.
fn regular_density(p: &TrigPoly4, qt: &TrigPoly4, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = theta.len();
    let h = PI / n as f64;
    let mut w = vec![0.0; n + 1];
    let mut cell_log = vec![0.0; n];
    for i in 0..n {
        let a = i as f64 * h;
        w[i + 1] = w[i] + integrate_ratio(qt, p, a, a + h)?;
        let terms: Vec<(f64, f64)> = gl8_nodes(a, a + h)
            .map(|(s, wt)| (w[i] + gl16(|x| qt.eval(x) / p.eval(x), a, s), wt / p.eval(s)))
            .collect();
        let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        cell_log[i] = m + terms.iter().map(|(e, wt)| wt * (e - m).exp()).sum::<f64>().ln();
    }
    let mut log_w = vec![f64::NEG_INFINITY; n + 1];
    for i in 0..n {
        log_w[i + 1] = log_add_exp(log_w[i], cell_log[i]);
    }
    let mut log_rev = vec![f64::NEG_INFINITY; n + 1];
    for i in (0..n).rev() {
        log_rev[i] = log_add_exp(log_rev[i + 1], cell_log[i]);
    }
    let w_pi = w[n];
    let log_rho: Vec<f64> = (0..n).map(|i| -w[i] + log_add_exp(log_rev[i], w_pi + log_w[i])).collect();
    let shift = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rho: Vec<f64> = log_rho.iter().map(|l| (l - shift).exp()).collect();
    // rho = e^{shift} * rho_grid and C = e^{-shift} (e^{w~(pi)} - 1) in these units
    let c = w_pi.exp_m1().signum() * (w_pi.exp_m1().abs().ln() - shift).exp();
    Ok((rho, c))
}

/// `exp(-w~)` on the open arc `(start, start + len)`, zero elsewhere.
fn arc_density(p: &TrigPoly4, qt: &TrigPoly4, start: f64, len: f64, theta: &[f64]) -> Result<Vec<f64>> {
    let mut inside: Vec<(usize, f64)> = theta
        .iter()
        .enumerate()
        .map(|(i, t)| (i, forward(start, *t)))
        .filter(|&(_, s)| s > 0.0 && s < len)
        .collect();
    inside.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut rho = vec![0.0; theta.len()];
    if inside.is_empty() {
        return Err(Error::Quadrature("support arc contains no grid point".into()));
    }
    let mid = inside.len() / 2;
    let mut w = vec![0.0; inside.len()];
    for k in mid + 1..inside.len() {
        w[k] = w[k - 1] + integrate_ratio(qt, p, start + inside[k - 1].1, start + inside[k].1)?;
    }
    for k in (0..mid).rev() {
        w[k] = w[k + 1] - integrate_ratio(qt, p, start + inside[k].1, start + inside[k + 1].1)?;
    }
    let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
    for (k, (i, _)) in inside.iter().enumerate() {
        rho[*i] = (-(w[k] - wmin)).exp();
    }
    Ok(rho)
}

/// `f(z + dir x)` scaled by `sign`, as a function of the offset `x`.
struct Oriented {
    f: TrigPoly4,
    z: f64,
    dir: f64,
    sign: f64,
}

impl Smooth for Oriented {
    fn derivative(&self, n: usize, x: f64) -> f64 {
        self.sign * self.dir.powi(n as i32) * self.f.derivative_at(n, self.z + self.dir * x)
    }
}

/// Solution of `(p d + q~) rho = C` with `C != 0`, marched from each zero into
/// the arc where it is the unique smooth solution.
fn marching_density(p: &TrigPoly4, qt: &TrigPoly4, zeros: &[ZeroInfo], theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let c = zeros[0].qt0.signum();
    let dir = c;
    let n = zeros.len();
    let mut rho = vec![f64::NAN; theta.len()];
    let constant = TrigPoly4::constant(c);
    for (k, z) in zeros.iter().enumerate() {
        // the next zero in the marching direction
        let other = if dir > 0.0 { zeros[(k + 1) % n] } else { zeros[(k + n - 1) % n] };
        let mut span = (dir * (other.theta - z.theta)).rem_euclid(PI);
        if span == 0.0 {
            span = PI;
        }
        let behind = if n == 1 { PI } else { PI - span };
        let end_guard = 1e-3 * span;
        let pp: Arc<dyn Smooth> = Arc::new(Oriented { f: *p, z: z.theta, dir, sign: 1.0 });
        let qq: Arc<dyn Smooth> = Arc::new(Oriented { f: *qt, z: z.theta, dir, sign: dir });
        let rr: Arc<dyn Smooth> = Arc::new(Polynomial(vec![dir * c]));
        let problem = OdeProblem::new(pp, qq, rr, (-0.05 * span.min(behind), span - end_guard), Some(0.0))?;
        let label = singular_ode::classify(&problem)?;
        if label.free_right != 0 {
            return Err(Error::Quadrature(format!("marching side of zero {} is not unique (case {:?})", z.theta, label.case)));
        }
        let guard = problem.guard();
        let start_jet = taylor_jet_at(p, qt, &constant, z.theta)?;
        let end_jet = taylor_jet_at(p, qt, &constant, other.theta)?;
        let mut march_pts: Vec<(usize, f64)> = Vec::new();
        for (i, t) in theta.iter().enumerate() {
            let s = (dir * (t - z.theta)).rem_euclid(PI);
            if s >= span {
                continue;
            }
            if s < guard {
                rho[i] = taylor_value(&start_jet, dir * s);
            } else if s > span - end_guard {
                rho[i] = taylor_value(&end_jet, -dir * (span - s));
            } else {
                march_pts.push((i, s));
            }
        }
        march_pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let xs: Vec<f64> = march_pts.iter().map(|m| m.1).collect();
        let sol = solve_at(&problem, Side::Right, &[], &xs)?;
        if sol.x.len() != xs.len() {
            return Err(Error::Quadrature("grid point lost inside the guard band".into()));
        }
        for ((i, _), y) in march_pts.iter().zip(&sol.y) {
            rho[*i] = *y;
        }
    }
    if let Some(i) = rho.iter().position(|r| !r.is_finite()) {
        return Err(Error::Quadrature(format!("density not filled at theta = {}", theta[i])));
    }
    Ok((rho, c))
}

/// `int f rho` (density) or `f(theta_hat)` (Dirac).
pub fn expectation(rho: &Groundstate, f: impl Fn(f64) -> f64) -> f64 {
    match rho.kind {
        GroundstateKind::Density => rho.theta.iter().zip(&rho.rho).map(|(t, r)| f(*t) * r).sum::<f64>() * rho.grid_step(),
        GroundstateKind::Dirac => f(rho.theta_hat.expect("dirac groundstate has a peak")),
    }
}

/// `max_phi |int (p phi'' + q phi') rho|` over `cos 2k t`, `sin 2k t`, `k = 1..8`.
pub fn weak_form_residual(coeffs: &Coefficients, rho: &Groundstate) -> f64 {
    let mut worst = 0.0f64;
    for k in 1..=8 {
        let w = 2.0 * k as f64;
        let tests: [(Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>); 2] = [
            (Box::new(move |t: f64| -w * (w * t).sin()), Box::new(move |t: f64| -w * w * (w * t).cos())),
            (Box::new(move |t: f64| w * (w * t).cos()), Box::new(move |t: f64| -w * w * (w * t).sin())),
        ];
        for (d1, d2) in tests.iter() {
            let r = expectation(rho, |t| coeffs.p.eval(t) * d2(t) + coeffs.q.eval(t) * d1(t));
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// `max |p rho' + q~ rho - C|` over grid points farther than `exclude` from the zeros
/// of `p`, with `rho'` from periodic 5-point differences.
pub fn ode_residual(coeffs: &Coefficients, rho: &Groundstate, exclude: f64) -> f64 {
    if rho.kind == GroundstateKind::Dirac {
        return 0.0;
    }
    let qt = coeffs.q_tilde();
    let n = rho.rho.len();
    let h = rho.grid_step();
    let r = |i: isize| rho.rho[i.rem_euclid(n as isize) as usize];
    let mut worst = 0.0f64;
    for i in 0..n {
        let t = rho.theta[i];
        if rho.class.zeros.iter().any(|z| {
            let d = (t - z.theta).rem_euclid(PI);
            d.min(PI - d) < exclude
        }) {
            continue;
        }
        let ii = i as isize;
        let d = (r(ii - 2) - 8.0 * r(ii - 1) + 8.0 * r(ii + 1) - r(ii + 2)) / (12.0 * h);
        worst = worst.max((coeffs.p.eval(t) * d + qt.eval(t) * rho.rho[i] - rho.c).abs());
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicTheory {
    /// IDS coefficient for positive frame orientation, per step.
    pub a: f64,
    /// Lyapunov coefficient per step.
    pub b: f64,
    /// Rotation coefficient in the canonical frame, units of `pi` per step.
    pub rotation: f64,
    pub groundstate: Groundstate,
}

/// Coefficients of `lambda^{2/3}` in the Lyapunov exponent and the IDS shift at a
/// parabolic band edge, from the groundstate of the parabolic pair.
pub fn parabolic_theory(eps_x: f64, m2: f64) -> Result<ParabolicTheory> {
    if !(m2 > 0.0) {
        return Err(Error::Precondition(format!("m2 = {m2} must be positive")));
    }
    let coeffs = parabolic_coefficients(eps_x, m2);
    let rho = groundstate(&coeffs.p, &coeffs.q, DEFAULT_GRID)?;
    let mean = |f: &dyn Fn(f64) -> f64| expectation(&rho, f);
    let c2 = mean(&|t| (2.0 * t).cos());
    let s2 = mean(&|t| (2.0 * t).sin());
    let c4 = mean(&|t| (4.0 * t).cos());
    let s4 = mean(&|t| (4.0 * t).sin());
    let b = 0.5 * (1.0 + eps_x) * s2 + m2 / 8.0 * (1.0 + 2.0 * c2 + c4);
    let rotation = (eps_x - 1.0 + (eps_x + 1.0) * c2 - m2 / 4.0 * (2.0 * s2 + s4)) / (2.0 * PI);
    Ok(ParabolicTheory { a: -rotation, b, rotation, groundstate: rho })
}
