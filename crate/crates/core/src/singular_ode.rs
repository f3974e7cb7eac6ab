//! First order linear ODE `p y' + q y = r` with one interior singular point,
//! where `p` vanishes to higher order than `q`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::TrigPoly4;

pub const MAX_ORDER: usize = 6;
const ZERO_TOL: f64 = 1e-9;

/// Function with derivative evaluators up to order `MAX_ORDER`.
pub trait Smooth: Send + Sync {
    fn derivative(&self, n: usize, x: f64) -> f64;

    fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }
}

impl Smooth for TrigPoly4 {
    fn derivative(&self, n: usize, x: f64) -> f64 {
        self.derivative_at(n, x)
    }
}

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Smooth for Polynomial {
    fn derivative(&self, n: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.0.iter().enumerate().skip(n).rev() {
            let falling: f64 = ((k - n + 1)..=k).map(|j| j as f64).product();
            acc = acc * x + c * falling;
        }
        acc
    }
}

/// Closure `(n, x) -> f^{(n)}(x)`.
pub struct FnJet<F>(pub F);

impl<F: Fn(usize, f64) -> f64 + Send + Sync> Smooth for FnJet<F> {
    fn derivative(&self, n: usize, x: f64) -> f64 {
        (self.0)(n, x)
    }
}

fn derivatives(f: &dyn Smooth, x: f64) -> [f64; MAX_ORDER + 1] {
    std::array::from_fn(|k| f.derivative(k, x))
}

fn first_significant(d: &[f64; MAX_ORDER + 1]) -> Option<usize> {
    let scale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    d.iter().position(|v| v.abs() > ZERO_TOL * scale)
}

/// Order of the zero of `f` at `x` (0 if `f(x) != 0`).
pub fn zero_order(f: &dyn Smooth, x: f64) -> Result<usize> {
    first_significant(&derivatives(f, x)).ok_or(Error::OrderUnsupported)
}

fn taylor(f: &dyn Smooth, x: f64) -> [f64; MAX_ORDER + 1] {
    let mut fact = 1.0;
    std::array::from_fn(|k| {
        if k > 0 {
            fact *= k as f64;
        }
        f.derivative(k, x) / fact
    })
}

/// Taylor coefficients of `num / den` at a zero of `den` of order `shift`.
fn series_ratio(num: &[f64; MAX_ORDER + 1], den: &[f64; MAX_ORDER + 1], shift: usize) -> Vec<f64> {
    let n = MAX_ORDER + 1 - shift;
    let nh: Vec<f64> = (0..n).map(|k| num[k + shift]).collect();
    let dh: Vec<f64> = (0..n).map(|k| den[k + shift]).collect();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let s: f64 = (1..=k).map(|j| dh[j] * out[k - j]).sum();
        out[k] = (nh[k] - s) / dh[0];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case: Case,
    /// Free parameters left and right of the singular point. Case (i) has a
    /// single parameter for the whole interval, counted on the left.
    pub free_left: usize,
    pub free_right: usize,
    pub l: i64,
    /// `d^l (p/q) (x_hat)` for `l >= 1`.
    pub discriminant: Option<f64>,
    /// `lim r/q` at the singular point when finite.
    pub boundary_value: Option<f64>,
    /// Case (iii): solutions are `C^n` for `n` strictly below this value.
    pub regularity_bound: Option<f64>,
}

impl CaseLabel {
    pub fn free_params(&self) -> usize {
        self.free_left + self.free_right
    }

    fn is_singular(&self) -> bool {
        self.case != Case::I
    }
}

#[derive(Clone)]
pub struct OdeProblem {
    pub p: Arc<dyn Smooth>,
    pub q: Arc<dyn Smooth>,
    pub r: Arc<dyn Smooth>,
    pub a: f64,
    pub b: f64,
    pub x_hat: Option<f64>,
    pub l_p: usize,
    pub l_q: usize,
    /// `None` when `r` vanishes beyond order `MAX_ORDER` (e.g. `r = 0`).
    pub l_r: Option<usize>,
}

impl std::fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeProblem")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("x_hat", &self.x_hat)
            .field("l_p", &self.l_p)
            .field("l_q", &self.l_q)
            .field("l_r", &self.l_r)
            .finish()
    }
}

impl OdeProblem {
    pub fn new(
        p: Arc<dyn Smooth>,
        q: Arc<dyn Smooth>,
        r: Arc<dyn Smooth>,
        interval: (f64, f64),
        x_hat: Option<f64>,
    ) -> Result<Self> {
        let (a, b) = interval;
        if !(a < b) {
            return Err(Error::Domain(format!("empty interval ({a}, {b})")));
        }
        let (l_p, l_q, l_r) = match x_hat {
            Some(x) => {
                if !(a < x && x < b) {
                    return Err(Error::Domain(format!("singular point {x} outside ({a}, {b})")));
                }
                (zero_order(p.as_ref(), x)?, zero_order(q.as_ref(), x)?, first_significant(&derivatives(r.as_ref(), x)))
            }
            None => (0, 0, Some(0)),
        };
        let prob = Self { p, q, r, a, b, x_hat, l_p, l_q, l_r };
        prob.check_no_other_zeros()?;
        Ok(prob)
    }

    fn check_no_other_zeros(&self) -> Result<()> {
        let n = 2000;
        let len = self.b - self.a;
        // zeros of q away from x_hat are harmless since p does not vanish there
        let checked: &[(&str, &Arc<dyn Smooth>, usize)] = &[("p", &self.p, self.l_p)];
        for &(name, f, order) in checked {
            let mut last_sign: Option<(f64, bool)> = None;
            for i in 0..=n {
                let x = self.a + len * i as f64 / n as f64;
                let side = self.x_hat.is_some_and(|xh| x > xh);
                if self.x_hat.is_some_and(|xh| (x - xh).abs() < 1e-6 * len) {
                    continue;
                }
                let v = f.value(x);
                if v == 0.0 && (order == 0 || self.x_hat.is_none()) {
                    return Err(Error::Domain(format!("{name} vanishes at {x}")));
                }
                let s = v.signum();
                if let Some((ls, lside)) = last_sign {
                    if lside == side && ls != s && v != 0.0 {
                        return Err(Error::Domain(format!("{name} changes sign near {x} away from the singular point")));
                    }
                }
                if v != 0.0 {
                    last_sign = Some((s, side));
                }
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Width of the band around the singular point excluded from the grid.
    pub fn guard(&self) -> f64 {
        1e-3 * self.length()
    }

    /// `-q/p` and `r/p` at `x`, nudged off exact zeros of `p`.
    fn coeffs(&self, x: f64) -> (f64, f64) {
        let p = self.p.value(x);
        if p != 0.0 {
            return (-self.q.value(x) / p, self.r.value(x) / p);
        }
        let e = 1e-9 * self.length();
        let (a1, b1) = self.coeffs(x - e);
        let (a2, b2) = self.coeffs(x + e);
        (0.5 * (a1 + a2), 0.5 * (b1 + b2))
    }
}

pub fn classify(problem: &OdeProblem) -> Result<CaseLabel> {
    let Some(xh) = problem.x_hat else {
        return Ok(CaseLabel {
            case: Case::I,
            free_left: 1,
            free_right: 0,
            l: 0,
            discriminant: None,
            boundary_value: None,
            regularity_bound: None,
        });
    };
    let (l_p, l_q) = (problem.l_p, problem.l_q);
    let min = l_p.min(l_q);
    if let Some(l_r) = problem.l_r {
        if l_r < min {
            return Err(Error::NoC1Solution { l_r: l_r as u32, min: min as u32 });
        }
    }
    let pt = taylor(problem.p.as_ref(), xh);
    let qt = taylor(problem.q.as_ref(), xh);
    let rt = taylor(problem.r.as_ref(), xh);
    let l = l_p as i64 - l_q as i64;
    let boundary_value = if problem.l_r.is_none_or(|lr| lr >= l_q) { Some(rt[l_q] / qt[l_q]) } else { None };
    if l <= 0 {
        return Ok(CaseLabel {
            case: Case::I,
            free_left: 1,
            free_right: 0,
            l,
            discriminant: None,
            boundary_value,
            regularity_bound: None,
        });
    }
    let ratio = series_ratio(&pt, &qt, l_q);
    let lu = l as usize;
    let fact: f64 = (1..=lu).map(|k| k as f64).product();
    let disc = ratio[lu] * fact;
    let positive = disc > 0.0;
    let (case, free_left, free_right) = match (lu, lu % 2, positive) {
        (1, _, true) => (Case::II, 0, 0),
        (1, _, false) => (Case::III, 1, 1),
        (_, 0, true) => (Case::IV, 1, 0),
        (_, 0, false) => (Case::V, 0, 1),
        (_, _, true) => (Case::VI, 0, 0),
        (_, _, false) => (Case::VII, 1, 1),
    };
    Ok(CaseLabel {
        case,
        free_left,
        free_right,
        l,
        discriminant: Some(disc),
        boundary_value,
        regularity_bound: (case == Case::III).then(|| 1.0 / disc.abs()),
    })
}

/// `(y(x_hat), y'(x_hat), y''(x_hat))` of the smooth solution from the
/// recursion `q_n = n P' + 1`, `P = p/q`, `R = r/q`.
pub fn guard_taylor(problem: &OdeProblem) -> Result<[f64; 3]> {
    let xh = problem.x_hat.ok_or_else(|| Error::Precondition("no singular point".into()))?;
    taylor_jet_at(problem.p.as_ref(), problem.q.as_ref(), problem.r.as_ref(), xh)
}

/// `guard_taylor` for coefficient functions given directly.
pub fn taylor_jet_at(p: &dyn Smooth, q: &dyn Smooth, r: &dyn Smooth, xh: f64) -> Result<[f64; 3]> {
    let lq = zero_order(q, xh)?;
    if lq + 2 > MAX_ORDER {
        return Err(Error::OrderUnsupported);
    }
    let pt = taylor(p, xh);
    let qt = taylor(q, xh);
    let rt = taylor(r, xh);
    if first_significant(&derivatives(r, xh)).is_some_and(|lr| lr < lq) {
        return Err(Error::Precondition("r/q has no finite limit".into()));
    }
    let pp = series_ratio(&pt, &qt, lq);
    let rr = series_ratio(&rt, &qt, lq);
    let y0 = rr[0];
    let y1 = rr[1] / (pp[1] + 1.0);
    let y2 = (2.0 * rr[2] - 2.0 * pp[2] * y1) / (2.0 * pp[1] + 1.0);
    Ok([y0, y1, y2])
}

pub fn taylor_value(jet: &[f64; 3], s: f64) -> f64 {
    jet[0] + s * (jet[1] + 0.5 * s * jet[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub boundary_value: Option<f64>,
    pub guard: f64,
    pub label: CaseLabel,
}

// Radau IIA, three stages
struct Radau {
    c: [f64; 3],
    a: [[f64; 3]; 3],
}

fn radau() -> Radau {
    let s6 = 6f64.sqrt();
    Radau {
        c: [(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0],
        a: [
            [(88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0],
            [(296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0],
            [(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0],
        ],
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        v.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - s) / m[row][row];
    }
    x
}

/// Integrate `y' = alpha y + beta` from `(x0, y0)` through the monotone `targets`.
/// While `resolve_budget` of accumulated `|alpha| dx` remains, steps resolve the
/// homogeneous solution; afterwards only the coefficients' scale limits the step.
/// With `through`, `-q/p` stays bounded at the zeros of `p` and the steps ignore them.
fn march(problem: &OdeProblem, x0: f64, y0: f64, targets: &[f64], mut resolve_budget: f64, through: bool) -> Result<Vec<f64>> {
    let rk = radau();
    let len = problem.length();
    let mut x = x0;
    let mut y = y0;
    let mut out = Vec::with_capacity(targets.len());
    let mut steps = 0usize;
    for &t in targets {
        while x != t {
            let dir = (t - x).signum();
            let mut h = (t - x).abs().min(len / 500.0);
            if !through {
                if let Some(xh) = problem.x_hat {
                    h = h.min(0.05 * (x - xh).abs().max(1e-300));
                }
                let p = problem.p.value(x);
                let dp = problem.p.derivative(1, x);
                if dp != 0.0 {
                    h = h.min(0.05 * (p / dp).abs());
                }
            }
            let (alpha, _) = problem.coeffs(x);
            if resolve_budget > 0.0 && alpha != 0.0 {
                h = h.min(0.05 / alpha.abs());
            }
            if (t - x).abs() <= h * 1.000001 {
                h = (t - x).abs();
            }
            let hs = dir * h;
            let mut al = [0.0; 3];
            let mut be = [0.0; 3];
            for i in 0..3 {
                let (a, b) = problem.coeffs(x + rk.c[i] * hs);
                al[i] = a;
                be[i] = b;
            }
            let mut m = [[0.0; 3]; 3];
            let mut v = [y; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = f64::from(u8::from(i == j)) - hs * rk.a[i][j] * al[j];
                    v[i] += hs * rk.a[i][j] * be[j];
                }
            }
            let stages = solve3(m, v);
            y = stages[2];
            if !y.is_finite() {
                return Err(Error::Quadrature(format!("non-finite solution at x = {}", x + hs)));
            }
            resolve_budget -= alpha.abs() * h;
            x = if h == (t - x).abs() { t } else { x + hs };
            steps += 1;
            if steps > 5_000_000 {
                return Err(Error::Quadrature("step budget exhausted".into()));
            }
        }
        out.push(y);
    }
    Ok(out)
}

const RESOLVE_BUDGET: f64 = 40.0;

/// Solve on a uniform grid of `n_grid` points of `[a, b]`.
pub fn solve(problem: &OdeProblem, side: Side, params: &[f64], n_grid: usize) -> Result<OdeSolution> {
    if n_grid < 2 {
        return Err(Error::Precondition("grid needs at least 2 points".into()));
    }
    let len = problem.length();
    let grid: Vec<f64> = (0..n_grid).map(|i| problem.a + len * i as f64 / (n_grid - 1) as f64).collect();
    solve_at(problem, side, params, &grid)
}

/// Solve at the given increasing points; points inside the guard band or on
/// the excluded side are dropped. Parameters are the solution values at the
/// far endpoints (`a` for the left side, `b` for the right side), left first.
pub fn solve_at(problem: &OdeProblem, side: Side, params: &[f64], points: &[f64]) -> Result<OdeSolution> {
    let label = classify(problem)?;
    let guard = problem.guard();
    let want_left = matches!(side, Side::Left | Side::Both);
    let want_right = matches!(side, Side::Right | Side::Both);

    if !label.is_singular() {
        if params.len() != 1 {
            return Err(Error::Precondition(format!("regular problem needs 1 parameter, got {}", params.len())));
        }
        let pts: Vec<f64> = points
            .iter()
            .copied()
            .filter(|&x| {
                problem.x_hat.is_none_or(|xh| (x <= xh && want_left) || (x >= xh && want_right))
            })
            .collect();
        let y = march(problem, problem.a, params[0], &pts, f64::INFINITY, true)?;
        return Ok(OdeSolution { x: pts, y, boundary_value: label.boundary_value, guard: 0.0, label });
    }

    let xh = problem.x_hat.expect("singular case has x_hat");
    let need = usize::from(want_left) * label.free_left + usize::from(want_right) * label.free_right;
    if params.len() > need {
        return Err(Error::NonIntegrable(format!(
            "case {:?} admits {need} parameter(s) on the requested side(s); other solutions are at least |x - x_hat|^-1 singular",
            label.case
        )));
    }
    if params.len() < need {
        return Err(Error::Precondition(format!("case {:?} needs {need} parameter(s), got {}", label.case, params.len())));
    }
    let mut params = params.iter().copied();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    if want_left {
        let pts: Vec<f64> = points.iter().copied().filter(|&x| x <= xh - guard).collect();
        let vals = if label.free_left == 1 {
            march(problem, problem.a, params.next().expect("counted"), &pts, RESOLVE_BUDGET, false)?
        } else {
            let jet = guard_taylor(problem)?;
            let rev: Vec<f64> = pts.iter().rev().copied().collect();
            let mut v = march(problem, xh - guard, taylor_value(&jet, -guard), &rev, 0.0, false)?;
            v.reverse();
            v
        };
        xs.extend(pts);
        ys.extend(vals);
    }
    if want_right {
        let pts: Vec<f64> = points.iter().copied().filter(|&x| x >= xh + guard).collect();
        let vals = if label.free_right == 1 {
            let rev: Vec<f64> = pts.iter().rev().copied().collect();
            let mut v = march(problem, problem.b, params.next().expect("counted"), &rev, RESOLVE_BUDGET, false)?;
            v.reverse();
            v
        } else {
            let jet = guard_taylor(problem)?;
            march(problem, xh + guard, taylor_value(&jet, guard), &pts, 0.0, false)?
        };
        xs.extend(pts);
        ys.extend(vals);
    }
    Ok(OdeSolution { x: xs, y: ys, boundary_value: label.boundary_value, guard, label })
}
