//! Anomaly expansions `T = +-exp(sum_k lambda^{eta_k} P_k(sigma))`, their
//! classification, the elliptic and hyperbolic basis changes and the
//! perturbative Lyapunov/rotation coefficients.
//!
//! A random traceless matrix is stored through its first two moments as
//! `P(sigma) = mean + sum_j fluct[j] * xi_j` with `xi_j` centered,
//! uncorrelated and of unit variance, the `xi_j` being shared by all terms.
//! Everything computed here is linear or quadratic in the `P_k`, so this
//! representation is exact for it.

use std::sync::Arc;

use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::TrigPoly4;
use crate::mat2::Mat2;
use crate::model::{disorder_stream, DisorderSpec, PeriodicBackground};
use crate::transfer::{background_transfer, cell_transfer_at, EdgeData, Jet};

pub type Exponent = Ratio<i64>;

pub fn exponent(num: i64, den: i64) -> Exponent {
    Ratio::new(num, den)
}

pub fn exponent_f64(e: Exponent) -> f64 {
    *e.numer() as f64 / *e.denom() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub exponent: Exponent,
    pub mean: Mat2,
    pub fluct: Vec<Mat2>,
    /// Monte Carlo standard errors of the mean entries `(a, b, c)`; `None` when exact.
    pub mean_stderr: Option<[f64; 3]>,
    /// Known to be centered by construction.
    pub centered: bool,
}

impl Term {
    pub fn exact(exponent: Exponent, mean: Mat2, fluct: Vec<Mat2>) -> Self {
        Self { exponent, mean, fluct, mean_stderr: None, centered: false }
    }

    pub fn constant(exponent: Exponent, mean: Mat2) -> Self {
        Self::exact(exponent, mean, Vec::new())
    }

    pub fn centered(exponent: Exponent, fluct: Vec<Mat2>) -> Self {
        Self { exponent, mean: Mat2::ZERO, fluct, mean_stderr: None, centered: true }
    }

    fn zero(exponent: Exponent) -> Self {
        Self::centered(exponent, Vec::new())
    }

    fn map(&self, f: impl Fn(&Mat2) -> Mat2) -> Self {
        Self {
            exponent: self.exponent,
            mean: f(&self.mean),
            fluct: self.fluct.iter().map(&f).collect(),
            mean_stderr: self.mean_stderr,
            centered: self.centered,
        }
    }

    fn scale_norm(&self) -> f64 {
        self.fluct.iter().fold(self.mean.max_abs(), |m, f| m.max(f.max_abs()))
    }

    /// `E(c^2)` of the lower-left entry.
    pub fn c_second_moment(&self) -> f64 {
        self.mean.c * self.mean.c + self.fluct.iter().map(|f| f.c * f.c).sum::<f64>()
    }

    /// Realization for the noise values `xi`.
    pub fn sample(&self, xi: &[f64]) -> Mat2 {
        self.fluct.iter().zip(xi).fold(self.mean, |acc, (f, x)| acc + f.scale(*x))
    }
}

/// Step of the basis change from the raw cell frame to the frame of an expansion.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameStep {
    Fixed(Mat2),
    /// `N_{lambda,delta} = diag(lambda^delta, 1)`.
    Rescale(Exponent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyExpansion {
    /// Overall sign of the transfer matrix.
    pub sign: f64,
    /// Terms ordered by strictly increasing exponent.
    pub terms: Vec<Term>,
    /// Basis changes taking raw cell vectors to this frame, applied in order.
    pub frame: Vec<FrameStep>,
    /// Exponents at or above this value are not fully represented.
    pub valid_below: Option<Exponent>,
}

fn traceless(m: &Mat2) -> bool {
    m.trace().abs() <= 1e-12 * m.max_abs().max(1.0)
}

impl AnomalyExpansion {
    /// Sorts terms, merges equal exponents and inserts a zero term at `2 eta_1`.
    pub fn new(sign: f64, terms: Vec<Term>) -> Result<Self> {
        let mut e = Self { sign, terms: Vec::new(), frame: Vec::new(), valid_below: None };
        for t in terms {
            if t.exponent <= Ratio::from_integer(0) {
                return Err(Error::Precondition(format!("exponent {} must be positive", t.exponent)));
            }
            if !traceless(&t.mean) || !t.fluct.iter().all(traceless) {
                return Err(Error::Precondition(format!("term at exponent {} is not traceless", t.exponent)));
            }
            e.push(t);
        }
        if e.terms.is_empty() {
            return Err(Error::Precondition("expansion has no terms".into()));
        }
        let k = e.terms[0].exponent * 2;
        if !e.terms.iter().any(|t| t.exponent == k) {
            e.push(Term::zero(k));
        }
        Ok(e)
    }

    fn push(&mut self, t: Term) {
        match self.terms.binary_search_by(|x| x.exponent.cmp(&t.exponent)) {
            Ok(i) => {
                let old = &mut self.terms[i];
                old.mean = old.mean + t.mean;
                let n = old.fluct.len().max(t.fluct.len());
                old.fluct.resize(n, Mat2::ZERO);
                for (o, f) in old.fluct.iter_mut().zip(&t.fluct) {
                    *o = *o + *f;
                }
                old.mean_stderr = match (old.mean_stderr, t.mean_stderr) {
                    (None, None) => None,
                    (a, b) => {
                        let a = a.unwrap_or([0.0; 3]);
                        let b = b.unwrap_or([0.0; 3]);
                        Some([a[0].hypot(b[0]), a[1].hypot(b[1]), a[2].hypot(b[2])])
                    }
                };
                old.centered = old.centered && t.centered;
            }
            Err(i) => self.terms.insert(i, t),
        }
    }

    pub fn eta1(&self) -> Exponent {
        self.terms[0].exponent
    }

    /// Index `K` with `eta_K = 2 eta_1`.
    pub fn k_index(&self) -> usize {
        let k = self.eta1() * 2;
        self.terms.iter().position(|t| t.exponent == k).expect("constructor inserts the 2 eta_1 term")
    }

    pub fn n_noise(&self) -> usize {
        self.terms.iter().map(|t| t.fluct.len()).max().unwrap_or(0)
    }

    fn scale_norm(&self) -> f64 {
        self.terms.iter().fold(0.0f64, |m, t| m.max(t.scale_norm())).max(1e-300)
    }

    /// Frame matrix at coupling `lambda`.
    pub fn frame_matrix(&self, lambda: f64) -> Mat2 {
        self.frame.iter().fold(Mat2::IDENTITY, |acc, step| match step {
            FrameStep::Fixed(m) => *m * acc,
            FrameStep::Rescale(d) => Mat2::diag(lambda.powf(exponent_f64(*d)), 1.0) * acc,
        })
    }

    /// Conjugate every term by the fixed matrix `m`.
    pub fn conjugate(&self, m: &Mat2) -> Self {
        let mi = m.inverse();
        let mut out = self.clone();
        out.terms = self.terms.iter().map(|t| t.map(|p| *m * *p * mi)).collect();
        out.frame.push(FrameStep::Fixed(*m));
        out
    }

    /// Conjugate by `N_{lambda,delta}`: `a` keeps its exponent, `b` moves to
    /// `eta + delta` and `c` to `eta - delta`.
    pub fn rescale(&self, delta: Exponent) -> Result<Self> {
        let mut pieces = Vec::new();
        for t in &self.terms {
            let part = |f: &dyn Fn(&Mat2) -> Mat2, e: Exponent, se: Option<f64>| Term {
                exponent: e,
                mean: f(&t.mean),
                fluct: t.fluct.iter().map(f).collect(),
                mean_stderr: se.map(|s| [0.0, 0.0, s]).or(t.mean_stderr.map(|_| [0.0; 3])),
                centered: t.centered,
            };
            let a = |m: &Mat2| Mat2::new(m.a, 0.0, 0.0, -m.a);
            let b = |m: &Mat2| Mat2::new(0.0, m.b, 0.0, 0.0);
            let c = |m: &Mat2| Mat2::new(0.0, 0.0, m.c, 0.0);
            let se = t.mean_stderr;
            let mut ta = part(&a, t.exponent, None);
            ta.mean_stderr = se.map(|s| [s[0], 0.0, 0.0]);
            let mut tb = part(&b, t.exponent + delta, None);
            tb.mean_stderr = se.map(|s| [0.0, s[1], 0.0]);
            let mut tc = part(&c, t.exponent - delta, None);
            tc.mean_stderr = se.map(|s| [0.0, 0.0, s[2]]);
            if tc.exponent <= Ratio::from_integer(0) && (tc.mean.c != 0.0 || tc.fluct.iter().any(|f| f.c != 0.0)) {
                return Err(Error::Precondition(format!(
                    "rescaling by {delta} makes a lower-left entry non-vanishing at lambda = 0"
                )));
            }
            pieces.extend([ta, tb, tc]);
        }
        let pieces: Vec<Term> = pieces
            .into_iter()
            .filter(|t| t.exponent > Ratio::from_integer(0))
            .filter(|t| t.mean.max_abs() > 0.0 || t.fluct.iter().any(|f| f.max_abs() > 0.0) || t.mean_stderr.is_some())
            .collect();
        let mut out = Self::new(self.sign, pieces)?;
        out.frame = self.frame.clone();
        out.frame.push(FrameStep::Rescale(delta));
        out.valid_below = self.valid_below.map(|v| v - delta);
        Ok(out)
    }

    /// `sign * exp(sum lambda^{eta_k} P_k(xi))`.
    pub fn matrix(&self, lambda: f64, xi: &[f64]) -> Mat2 {
        let gen = self
            .terms
            .iter()
            .fold(Mat2::ZERO, |acc, t| acc + t.sample(xi).scale(lambda.powf(exponent_f64(t.exponent))));
        gen.exp().scale(self.sign)
    }

    /// Estimate the moments of `sigma -> P_k(sigma)` by sampling `disorder`.
    pub fn sampled(
        sign: f64,
        terms: Vec<(Exponent, Arc<dyn Fn(&[f64]) -> Mat2 + Send + Sync>, bool)>,
        disorder: &DisorderSpec,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if mc_samples < 100_000 {
            return Err(Error::Precondition(format!("mc_samples = {mc_samples} below 10^5")));
        }
        let k = terms.len();
        let dim = 3 * k;
        let mut rng = disorder_stream(seed, 0);
        let mut sigma = vec![0.0; disorder.dim()];
        let mut mean = vec![0.0; dim];
        let mut cov = vec![0.0; dim * dim];
        let mut x = vec![0.0; dim];
        for n in 0..mc_samples {
            disorder.draw(&mut rng, &mut sigma);
            for (i, (_, f, _)) in terms.iter().enumerate() {
                let m = f(&sigma);
                if !traceless(&m) {
                    return Err(Error::Precondition("sampled term is not traceless".into()));
                }
                x[3 * i] = m.a;
                x[3 * i + 1] = m.b;
                x[3 * i + 2] = m.c;
            }
            // Welford update of mean and co-moment
            let w = 1.0 / (n + 1) as f64;
            let delta: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
            for (m, d) in mean.iter_mut().zip(&delta) {
                *m += d * w;
            }
            for i in 0..dim {
                let di = x[i] - mean[i];
                for j in 0..dim {
                    cov[i * dim + j] += delta[j] * di;
                }
            }
        }
        let nf = mc_samples as f64;
        for c in cov.iter_mut() {
            *c /= nf - 1.0;
        }
        let (vals, vecs) = symmetric_eigen(&cov, dim);
        let top = vals.iter().fold(0.0f64, |m, v| m.max(*v));
        let modes: Vec<usize> = (0..dim).filter(|&j| vals[j] > 1e-14 * top.max(1e-300)).collect();
        let mut out = Vec::with_capacity(k);
        for (i, (e, _, centered)) in terms.iter().enumerate() {
            let fluct = modes
                .iter()
                .map(|&j| {
                    let s = vals[j].sqrt();
                    let v = |r: usize| vecs[r * dim + j] * s;
                    Mat2::new(v(3 * i), v(3 * i + 1), v(3 * i + 2), -v(3 * i))
                })
                .collect();
            let se = |r: usize| (cov[r * dim + r] / nf).sqrt();
            out.push(Term {
                exponent: *e,
                mean: if *centered { Mat2::ZERO } else { Mat2::new(mean[3 * i], mean[3 * i + 1], mean[3 * i + 2], -mean[3 * i]) },
                fluct,
                mean_stderr: Some([se(3 * i), se(3 * i + 1), se(3 * i + 2)]),
                centered: *centered,
            });
        }
        Self::new(sign, out)
    }
}

/// Eigen-decomposition of a small symmetric matrix (cyclic Jacobi).
/// Returns eigenvalues and the row-major matrix whose columns are eigenvectors.
fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyType {
    Elliptic,
    Hyperbolic,
    Parabolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub order: Order,
    /// Index of the first uncentered term below `2 eta_1` (first order only).
    pub kind: Option<usize>,
    pub kind_exponent: Option<String>,
    pub anomaly_type: Option<AnomalyType>,
    /// `det E(P_kind)` (first order only).
    pub det: Option<f64>,
    pub k_index: usize,
    pub exponents: Vec<String>,
}

fn mean_is_zero(t: &Term, scale: f64) -> Result<bool> {
    if t.centered {
        return Ok(true);
    }
    let m = [t.mean.a, t.mean.b, t.mean.c];
    match t.mean_stderr {
        None => Ok(m.iter().all(|x| x.abs() <= 1e-12 * scale)),
        Some(se) => {
            if m.iter().zip(&se).any(|(x, s)| x.abs() > 4.0 * s) {
                Ok(false)
            } else if m.iter().all(|x| *x == 0.0) {
                Ok(true)
            } else {
                Err(Error::Indeterminate(format!(
                    "mean of term at exponent {} is within 4 standard errors of zero",
                    t.exponent
                )))
            }
        }
    }
}

pub fn classify(expansion: &AnomalyExpansion) -> Result<Classification> {
    let scale = expansion.scale_norm();
    let k = expansion.k_index();
    let exponents = expansion.terms.iter().map(|t| t.exponent.to_string()).collect();
    for (i, t) in expansion.terms[..k].iter().enumerate() {
        if mean_is_zero(t, scale)? {
            continue;
        }
        let p = t.mean;
        let det = p.det();
        let tol = 1e-12 * p.max_abs().powi(2).max(1e-300);
        let det_se = t.mean_stderr.map(|s| {
            ((2.0 * p.a * s[0]).powi(2) + (p.c * s[1]).powi(2) + (p.b * s[2]).powi(2)).sqrt()
        });
        let anomaly_type = match det_se {
            Some(se) if det.abs() <= 4.0 * se => {
                return Err(Error::Indeterminate(format!("det E(P) = {det:e} within 4 standard errors of zero")))
            }
            _ if det.abs() <= tol => AnomalyType::Parabolic,
            _ if det > 0.0 => AnomalyType::Elliptic,
            _ => AnomalyType::Hyperbolic,
        };
        return Ok(Classification {
            order: Order::First,
            kind: Some(i),
            kind_exponent: Some(t.exponent.to_string()),
            anomaly_type: Some(anomaly_type),
            det: Some(det),
            k_index: k,
            exponents,
        });
    }
    Ok(Classification { order: Order::Second, kind: None, kind_exponent: None, anomaly_type: None, det: None, k_index: k, exponents })
}

fn expect_first(expansion: &AnomalyExpansion, want: AnomalyType) -> Result<(usize, Mat2)> {
    let c = classify(expansion)?;
    match (c.order, c.anomaly_type, c.kind) {
        (Order::First, Some(t), Some(k)) if t == want => Ok((k, expansion.terms[k].mean)),
        _ => Err(Error::WrongAnomalyType(format!(
            "expected a first order {want:?} anomaly, got {:?} {:?}",
            c.order, c.anomaly_type
        ))),
    }
}

/// Det-1 `M` with `M E(P_kind) M^{-1} = [[0, -mu], [mu, 0]]`; returns `(M, mu)`.
pub fn elliptic_basis(expansion: &AnomalyExpansion) -> Result<(Mat2, f64)> {
    let (_, p) = expect_first(expansion, AnomalyType::Elliptic)?;
    elliptic_basis_of(&p)
}

/// Basis change of `elliptic_basis` for a single traceless matrix with positive determinant.
pub fn elliptic_basis_of(p: &Mat2) -> Result<(Mat2, f64)> {
    let det = p.det();
    if !(det > 0.0) {
        return Err(Error::WrongAnomalyType(format!("det = {det} is not positive")));
    }
    let mu = p.c.signum() * det.sqrt();
    let k = p.scale(1.0 / mu);
    // columns e1 and K e1 span a det-positive basis in which K is the unit rotation
    let norm = (p.c.abs() / det.sqrt()).sqrt();
    let m_inv = Mat2::new(1.0, k.b, 0.0, k.c).scale(1.0 / norm);
    let m_inv = Mat2::new(m_inv.a, k.a / norm, m_inv.c, k.c / norm);
    Ok((m_inv.inverse(), mu))
}

/// Det-1 `M` with `M P M^{-1} = diag(-mu, mu)`, `mu > 0`, for traceless `P` with `det P < 0`.
pub fn hyperbolic_basis_of(p: &Mat2) -> Result<(Mat2, f64)> {
    let det = p.det();
    if !(det < 0.0) {
        return Err(Error::WrongAnomalyType(format!("det = {det} is not negative")));
    }
    let mu = (-det).sqrt();
    let eigvec = |lam: f64| -> [f64; 2] {
        // (P - lam) v = 0 from the dominant row
        let r1 = [p.a - lam, p.b];
        let r2 = [p.c, p.d - lam];
        let r = if r1[0].hypot(r1[1]) >= r2[0].hypot(r2[1]) { r1 } else { r2 };
        let v = [-r[1], r[0]];
        let n = v[0].hypot(v[1]);
        [v[0] / n, v[1] / n]
    };
    let v1 = eigvec(-mu);
    let mut v2 = eigvec(mu);
    let d = v1[0] * v2[1] - v1[1] * v2[0];
    v2 = [v2[0] / d, v2[1] / d];
    let m_inv = Mat2::new(v1[0], v2[0], v1[1], v2[1]);
    Ok((m_inv.inverse(), mu))
}

const MAX_HYPERBOLIC_LEVELS: usize = 4;

/// Transform a hyperbolic first order anomaly into a second order one by a
/// diagonalizing basis change followed by `N_{lambda,delta}`.
pub fn hyperbolic_to_second_order(expansion: &AnomalyExpansion) -> Result<AnomalyExpansion> {
    let mut current = expansion.clone();
    for _ in 0..MAX_HYPERBOLIC_LEVELS {
        let (kind, p) = expect_first(&current, AnomalyType::Hyperbolic)?;
        let eta_k = current.terms[kind].exponent;
        let (m, _) = hyperbolic_basis_of(&p)?;
        let conj = current.conjugate(&m);
        let scale = conj.scale_norm();
        let tol = 1e-24 * scale * scale;
        let chi = conj
            .terms
            .iter()
            .find(|t| t.c_second_moment() > tol)
            .map(|t| t.exponent)
            .ok_or(Error::TrivialPerturbation { m2: 0.0 })?;
        let half = eta_k / 2;
        let bad_c = conj.terms.iter().find(|t| {
            t.exponent < half + chi && !t.centered && t.mean.c.abs() > t.mean_stderr.map_or(1e-12 * scale, |s| 4.0 * s[2])
        });
        let delta = match bad_c {
            None => chi - half,
            Some(t) => t.exponent - eta_k,
        };
        if delta <= Ratio::from_integer(0) {
            return Err(Error::Precondition(format!("hyperbolic transform gives delta = {delta} <= 0")));
        }
        let next = conj.rescale(delta)?;
        match classify(&next)? {
            Classification { order: Order::Second, .. } => return Ok(next),
            Classification { anomaly_type: Some(AnomalyType::Hyperbolic), .. } => current = next,
            c => {
                return Err(Error::WrongAnomalyType(format!(
                    "hyperbolic transform produced a {:?} {:?} anomaly",
                    c.order, c.anomaly_type
                )))
            }
        }
    }
    Err(Error::NeedsIteration(MAX_HYPERBOLIC_LEVELS))
}

fn v() -> [Complex64; 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [Complex64::new(s, 0.0), Complex64::new(0.0, -s)]
}

/// `<x| M |y>` with the conjugate-linear first slot.
fn braket(x: &[Complex64; 2], m: &Mat2, y: &[Complex64; 2]) -> Complex64 {
    let my = [y[0] * m.a + y[1] * m.b, y[0] * m.c + y[1] * m.d];
    x[0].conj() * my[0] + x[1].conj() * my[1]
}

fn vbar() -> [Complex64; 2] {
    let v = v();
    [v[0].conj(), v[1].conj()]
}

pub fn alpha(p: &Mat2) -> Complex64 {
    braket(&v(), p, &v())
}

pub fn beta(p: &Mat2) -> Complex64 {
    braket(&vbar(), p, &v())
}

/// `<vbar| P^T P |v>`.
pub fn gamma_coef(p: &Mat2) -> Complex64 {
    braket(&vbar(), &(p.transpose() * *p), &v())
}

/// Mixed coefficient `1/2 <vbar| (P1 + P1^T) P2 + (P2 + P2^T) P1 |v>`.
pub fn delta_coef(p1: &Mat2, p2: &Mat2) -> Complex64 {
    let m = (*p1 + p1.transpose()) * *p2 + (*p2 + p2.transpose()) * *p1;
    braket(&vbar(), &m, &v()).scale(0.5)
}

/// `c cos^2 - b sin^2 - a sin 2t`.
pub fn p_poly(p: &Mat2) -> TrigPoly4 {
    TrigPoly4::new(0.5 * (p.c - p.b), 0.5 * (p.c + p.b), -p.a, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCoeffs {
    pub alpha: Complex64,
    pub beta: Complex64,
    /// Complex in general; real for matrices with vanishing diagonal or upper-right entry.
    pub gamma: Complex64,
    pub p_poly: TrigPoly4,
}

pub fn moment_coeffs(p: &Mat2) -> Result<MomentCoeffs> {
    if !traceless(p) {
        return Err(Error::Precondition(format!("Tr P = {} is not zero", p.trace())));
    }
    Ok(MomentCoeffs { alpha: alpha(p), beta: beta(p), gamma: gamma_coef(p), p_poly: p_poly(p) })
}

/// `E f(P_i, P_j)` for a bilinear `f` under the shared-noise representation.
fn pair_mean<T: std::ops::Add<Output = T>>(ti: &Term, tj: &Term, f: impl Fn(&Mat2, &Mat2) -> T) -> T {
    ti.fluct.iter().zip(&tj.fluct).fold(f(&ti.mean, &tj.mean), |acc, (a, b)| acc + f(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbative {
    /// Predicted Lyapunov exponent per step.
    pub gamma: f64,
    /// Predicted rotation per step in units of `pi`.
    pub rotation: f64,
    /// Formal error exponents of the two predictions.
    pub gamma_error_order: f64,
    pub rotation_error_order: f64,
}

/// Lyapunov exponent and rotation number from the second order expansion
/// of the log-norm and the phase shift, given the Birkhoff averages
/// `i2 = I(exp(2 i theta))` and `i4 = I(exp(4 i theta))`.
pub fn perturbative_values(expansion: &AnomalyExpansion, i2: Complex64, i4: Complex64, lambda: f64) -> Perturbative {
    let eta1 = expansion.eta1();
    let eta2 = expansion.terms.get(1).map(|t| t.exponent).unwrap_or(eta1 * 2);
    let mut g_cut = eta1 * 3;
    let mut r_cut = eta1 + eta2;
    if let Some(v) = expansion.valid_below {
        g_cut = g_cut.min(v);
        r_cut = r_cut.min(v);
    }
    let pw = |e: Exponent| lambda.powf(exponent_f64(e));
    let terms = &expansion.terms;
    let mut gamma = Complex64::new(0.0, 0.0);
    let mut rot = Complex64::new(0.0, 0.0);
    for (k, t) in terms.iter().enumerate() {
        let e1 = t.exponent;
        let e_beta = beta(&t.mean);
        let e_alpha = alpha(&t.mean);
        if e1 < g_cut {
            gamma += e_beta * i2 * pw(e1);
        }
        if e1 < r_cut {
            rot += (e_alpha - e_beta * i2) * pw(e1);
        }
        let e2 = e1 * 2;
        if e2 < g_cut {
            let b2 = pair_mean(t, t, |a, b| beta(a) * beta(b).conj());
            let g = pair_mean(t, t, |a, b| braket(&vbar(), &(a.transpose() * *b), &v()));
            let bb = pair_mean(t, t, |a, b| beta(a) * beta(b));
            gamma += (b2 + g * i2 - bb * i4) * (0.5 * pw(e2));
        }
        if e2 < r_cut {
            let ab = pair_mean(t, t, |a, b| alpha(a) * beta(b));
            let bb = pair_mean(t, t, |a, b| beta(a) * beta(b));
            rot += (ab * i2 * -2.0 + bb * i4) * (0.5 * pw(e2));
        }
        for t2 in &terms[k + 1..] {
            let e = e1 + t2.exponent;
            if e < g_cut {
                let bc = pair_mean(t, t2, |a, b| beta(a) * beta(b).conj());
                let d = pair_mean(t, t2, delta_coef);
                let bb = pair_mean(t, t2, |a, b| beta(a) * beta(b));
                gamma += (bc + d * i2 - bb * i4) * pw(e);
            }
        }
    }
    Perturbative {
        gamma: gamma.re,
        rotation: rot.im / std::f64::consts::PI,
        gamma_error_order: exponent_f64(g_cut),
        rotation_error_order: exponent_f64(r_cut),
    }
}

/// `Y -> X` with `dexp_J(X) = U Y` at the Jordan block `J = [[0,1],[0,0]]`, `U = exp J`.
fn log_derivative(y: &Mat2) -> Mat2 {
    let j = Mat2::new(0.0, 1.0, 0.0, 0.0);
    let u_inv = Mat2::new(1.0, -1.0, 0.0, 1.0);
    let z = u_inv * *y;
    let ad = |x: &Mat2| j * *x - *x * j;
    let z1 = ad(&z);
    let z2 = ad(&z1);
    let x = z + z1.scale(0.5) + z2.scale(1.0 / 12.0);
    // the trace vanishes for unimodular families; drop its roundoff
    x - Mat2::IDENTITY.scale(0.5 * x.trace())
}

/// Rescaling exponent `delta = min(eta/2, 2/3)` of the band-edge normal form.
pub fn band_edge_delta(eta: Exponent) -> Exponent {
    (eta / 2).min(exponent(2, 3))
}

/// First order part of `log(edge_sign * G T^{E_b + eps lambda^eta}_{lambda,sigma} G^{-1})`
/// in the canonical frame `G`, rescaled by `N_{lambda,delta}`.
pub fn band_edge_expansion(
    background: &PeriodicBackground,
    disorder: &DisorderSpec,
    edge: &EdgeData,
    eta: Exponent,
    eps: f64,
) -> Result<AnomalyExpansion> {
    if eta <= Ratio::from_integer(0) {
        return Err(Error::Precondition(format!("eta = {eta} must be positive")));
    }
    let g = edge.canonical_frame();
    let gi = g.inverse();
    let sgn = f64::from(edge.edge_sign);
    let to_log = |d: &Mat2| log_derivative(&(g * *d * gi).scale(sgn));
    let x_e = to_log(&background_transfer(background, edge.e_b).d);

    let dim = disorder.dim();
    let one = Ratio::from_integer(1);
    let mut terms = vec![Term::constant(Ratio::from_integer(0), Mat2::new(0.0, 1.0, 0.0, 0.0))];
    if eps != 0.0 {
        terms.push(Term::constant(eta, x_e.scale(eps)));
    }
    if disorder.is_linear() {
        let sd = disorder.law().variance().sqrt();
        let mut unit = vec![0.0; dim];
        let mut fluct = Vec::with_capacity(dim);
        for i in 0..dim {
            unit[i] = 1.0;
            let d = cell_transfer_at(background, disorder, &unit, edge.e_b, 0.0, Jet::Coupling)?.d;
            unit[i] = 0.0;
            fluct.push(to_log(&d).scale(sd));
        }
        terms.push(Term::centered(one, fluct));
    } else {
        let bg = background.clone();
        let dis = disorder.clone();
        let e_b = edge.e_b;
        let f: Arc<dyn Fn(&[f64]) -> Mat2 + Send + Sync> = Arc::new(move |s: &[f64]| {
            let d = cell_transfer_at(&bg, &dis, s, e_b, 0.0, Jet::Coupling).map(|j| j.d).unwrap_or(Mat2::ZERO);
            log_derivative(&(g * d * gi).scale(sgn))
        });
        let sampled = AnomalyExpansion::sampled(sgn, vec![(one, f, true)], disorder, 100_000, 0x0a11_0ca1)?;
        terms.push(sampled.terms.into_iter().find(|t| t.exponent == one).expect("sampled term"));
    }

    let delta = band_edge_delta(eta);
    // exponent 0 carries the Jordan block; rescaling moves it to delta
    let mut pieces = Vec::new();
    for t in terms {
        let split = [
            (t.exponent, Mat2::new(1.0, 0.0, 0.0, 0.0)),
            (t.exponent + delta, Mat2::new(0.0, 1.0, 0.0, 0.0)),
            (t.exponent - delta, Mat2::new(0.0, 0.0, 1.0, 0.0)),
        ];
        for (e, mask) in split {
            let pick = |m: &Mat2| {
                Mat2::new(m.a * mask.a, m.b * mask.b, m.c * mask.c, m.d * mask.a)
            };
            let piece = Term {
                exponent: e,
                mean: pick(&t.mean),
                fluct: t.fluct.iter().map(pick).collect(),
                mean_stderr: t.mean_stderr,
                centered: t.centered,
            };
            let nonzero = piece.mean.max_abs() > 0.0 || piece.fluct.iter().any(|f| f.max_abs() > 0.0);
            if nonzero {
                if e <= Ratio::from_integer(0) {
                    return Err(Error::Precondition(format!(
                        "eta = {eta} too small: energy shift dominates the rescaled normal form"
                    )));
                }
                pieces.push(piece);
            }
        }
    }
    let mut out = AnomalyExpansion::new(sgn, pieces)?;
    out.frame = vec![FrameStep::Fixed(g), FrameStep::Rescale(delta)];
    let two = Ratio::from_integer(2);
    let mut valid = two - delta;
    if eps != 0.0 {
        valid = valid.min(eta * 2 - delta).min(one + eta - delta);
    }
    out.valid_below = Some(valid);
    Ok(out)
}

/// Regime of a band-edge normal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Elliptic,
    Parabolic,
    Hyperbolic,
}

/// Band-edge anomaly brought to the form on which the phase dynamics is analyzed:
/// rotated for elliptic, transformed to second order for hyperbolic, as is for parabolic.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub regime: Regime,
    pub raw: AnomalyExpansion,
    pub expansion: AnomalyExpansion,
    pub classification: Classification,
    /// `mu` of the elliptic or hyperbolic basis change.
    pub mu: Option<f64>,
}

impl NormalForm {
    pub fn frame(&self, lambda: f64) -> Mat2 {
        self.expansion.frame_matrix(lambda)
    }
}

pub fn band_edge_normal_form(
    background: &PeriodicBackground,
    disorder: &DisorderSpec,
    edge: &EdgeData,
    eta: Exponent,
    eps: f64,
) -> Result<NormalForm> {
    let raw = band_edge_expansion(background, disorder, edge, eta, eps)?;
    let classification = classify(&raw)?;
    match (classification.order, classification.anomaly_type) {
        (Order::Second, _) => Ok(NormalForm {
            regime: Regime::Parabolic,
            expansion: raw.clone(),
            raw,
            classification,
            mu: None,
        }),
        (Order::First, Some(AnomalyType::Elliptic)) => {
            let (m, mu) = elliptic_basis(&raw)?;
            Ok(NormalForm { regime: Regime::Elliptic, expansion: raw.conjugate(&m), raw, classification, mu: Some(mu) })
        }
        (Order::First, Some(AnomalyType::Hyperbolic)) => {
            let k = classification.kind.expect("first order has a kind");
            let (_, mu) = hyperbolic_basis_of(&raw.terms[k].mean)?;
            let expansion = hyperbolic_to_second_order(&raw)?;
            Ok(NormalForm { regime: Regime::Hyperbolic, expansion, raw, classification, mu: Some(mu) })
        }
        _ => Err(Error::WrongAnomalyType(
            "first order parabolic band-edge anomaly (eta < 4/3 with eps = 0) has no implemented transform".into(),
        )),
    }
}
