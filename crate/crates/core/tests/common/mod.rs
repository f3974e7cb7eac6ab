//! Manufactured singular first order problems `p y' + q y = r` with known solutions.
#![allow(dead_code)]

pub mod families;

use std::sync::Arc;

use bandedge_core::singular_ode::{solve, solve_at, Case, FnJet, OdeProblem, OdeSolution, Polynomial, Side, Smooth};

pub type Jet = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

pub struct Manufactured {
    pub name: &'static str,
    pub problem: OdeProblem,
    pub case: Case,
    pub free: (usize, usize),
    /// Smooth particular solution and its derivatives.
    pub y: Jet,
    /// Homogeneous solutions on the left and right of `x_hat`, used with the free parameters.
    pub h_left: Option<fn(f64) -> f64>,
    pub h_right: Option<fn(f64) -> f64>,
}

pub fn poly(c: &[f64]) -> Arc<dyn Smooth> {
    Arc::new(Polynomial(c.to_vec()))
}

fn jet(f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Jet {
    Arc::new(f)
}

fn exp_jet() -> Jet {
    jet(|_, x| x.exp())
}

fn cos_jet() -> Jet {
    jet(|n, x| (x + n as f64 * std::f64::consts::FRAC_PI_2).cos())
}

fn const_jet(c: f64) -> Jet {
    jet(move |n, _| if n == 0 { c } else { 0.0 })
}

/// `r = p y' + q y` with all derivatives by the Leibniz rule.
fn rhs(p: &Arc<dyn Smooth>, q: &Arc<dyn Smooth>, y: &Jet) -> Arc<dyn Smooth> {
    let (p, q, y) = (p.clone(), q.clone(), y.clone());
    Arc::new(FnJet(move |n: usize, x: f64| {
        let mut acc = 0.0;
        let mut binom = 1.0;
        for k in 0..=n {
            acc += binom * (p.derivative(k, x) * y(n - k + 1, x) + q.derivative(k, x) * y(n - k, x));
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
        acc
    }))
}

fn build(
    name: &'static str,
    p: &[f64],
    q: &[f64],
    y: Jet,
    case: Case,
    free: (usize, usize),
    h_left: Option<fn(f64) -> f64>,
    h_right: Option<fn(f64) -> f64>,
    x_hat: Option<f64>,
) -> Manufactured {
    let (p, q) = (poly(p), poly(q));
    let r = rhs(&p, &q, &y);
    let problem = OdeProblem::new(p, q, r, (-1.0, 1.0), x_hat).expect("manufactured problem is admissible");
    Manufactured { name, problem, case, free, y, h_left, h_right }
}

/// Twelve problems spanning the seven cases.
pub fn library() -> Vec<Manufactured> {
    vec![
        build("regular, y' + x y", &[1.0], &[0.0, 1.0], const_jet(1.0), Case::I, (1, 0), Some(|x| (-x * x / 2.0).exp()), None, None),
        build("equal orders, x y' + x y", &[0.0, 1.0], &[0.0, 1.0], cos_jet(), Case::I, (1, 0), Some(|x| (-x).exp()), None, Some(0.0)),
        build("x y' + y = 1", &[0.0, 1.0], &[1.0], const_jet(1.0), Case::II, (0, 0), None, None, Some(0.0)),
        build("x^2 y' + x y, cos", &[0.0, 0.0, 1.0], &[0.0, 1.0], cos_jet(), Case::II, (0, 0), None, None, Some(0.0)),
        build("-x y' + y = 1", &[0.0, -1.0], &[1.0], const_jet(1.0), Case::III, (1, 1), Some(|x| x.abs()), Some(|x| x.abs()), Some(0.0)),
        build("-2x y' + y, exp", &[0.0, -2.0], &[1.0], exp_jet(), Case::III, (1, 1), Some(|x| x.abs().sqrt()), Some(|x| x.abs().sqrt()), Some(0.0)),
        build("x^2 y' + y = 0", &[0.0, 0.0, 1.0], &[1.0], const_jet(0.0), Case::IV, (1, 0), Some(|x| (1.0 / x).exp()), None, Some(0.0)),
        build("x^2 y' + y, cos", &[0.0, 0.0, 1.0], &[1.0], cos_jet(), Case::IV, (1, 0), Some(|x| (1.0 / x).exp()), None, Some(0.0)),
        build("-x^2 y' + y = 1", &[0.0, 0.0, -1.0], &[1.0], const_jet(1.0), Case::V, (0, 1), None, Some(|x| (-1.0 / x).exp()), Some(0.0)),
        build("-x^2 y' + (2 + x) y, cos", &[0.0, 0.0, -1.0], &[2.0, 1.0], cos_jet(), Case::V, (0, 1), None, Some(|x| x.abs() * (-2.0 / x).exp()), Some(0.0)),
        build("x^3 y' + y, exp", &[0.0, 0.0, 0.0, 1.0], &[1.0], exp_jet(), Case::VI, (0, 0), None, None, Some(0.0)),
        build("-x^3 y' + y, exp", &[0.0, 0.0, 0.0, -1.0], &[1.0], exp_jet(), Case::VII, (1, 1), Some(|x| (-0.5 / (x * x)).exp()), Some(|x| (-0.5 / (x * x)).exp()), Some(0.0)),
    ]
}

pub const C_LEFT: f64 = 0.8;
pub const C_RIGHT: f64 = -0.6;

impl Manufactured {
    /// Closed-form solution with the test constants on the parameter sides.
    pub fn exact(&self, x: f64) -> f64 {
        let y = (self.y)(0, x);
        let left = self.case == Case::I || self.problem.x_hat.is_none_or(|xh| x < xh);
        match (left, self.h_left, self.h_right) {
            (true, Some(h), _) if self.free.0 == 1 => y + C_LEFT * h(x),
            (false, _, Some(h)) if self.free.1 == 1 => y + C_RIGHT * h(x),
            _ => y,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.free.0 == 1 {
            out.push(self.exact(self.problem.a));
        }
        if self.free.1 == 1 {
            out.push(self.exact(self.problem.b));
        }
        out
    }

    pub fn solve(&self, n_grid: usize) -> OdeSolution {
        solve(&self.problem, Side::Both, &self.params(), n_grid).unwrap_or_else(|e| panic!("{}: {e}", self.name))
    }
}

/// `max |p y' + q y - r| / (1 + |r|)` with five-point derivatives on clusters
/// around 201 centers; the cluster spacing shrinks near `x_hat` so that the
/// stencil resolves solutions like `|x|^(1/2)`.
pub fn residual(m: &Manufactured) -> f64 {
    let pb = &m.problem;
    let guard = pb.guard();
    let xh = pb.x_hat;
    let mut centers = Vec::new();
    let mut points = Vec::new();
    for i in 0..201 {
        let x = pb.a + pb.length() * i as f64 / 200.0;
        let d = xh.map_or(f64::INFINITY, |xh| (x - xh).abs());
        let h = (1e-3 * pb.length()).min(0.01 * d);
        if x - 2.0 * h < pb.a || x + 2.0 * h > pb.b || (d.is_finite() && d - 2.0 * h < guard) {
            continue;
        }
        centers.push((x, h));
        points.extend((-2..=2).map(|k| x + k as f64 * h));
    }
    let sol = solve_at(pb, Side::Both, &m.params(), &points).unwrap_or_else(|e| panic!("{}: {e}", m.name));
    assert_eq!(sol.x.len(), points.len(), "{}: cluster points dropped", m.name);
    let mut worst = 0.0f64;
    for (k, (x, h)) in centers.iter().enumerate() {
        let y = &sol.y[5 * k..5 * k + 5];
        let d = (y[0] - 8.0 * y[1] + 8.0 * y[3] - y[4]) / (12.0 * h);
        let r = pb.r.value(*x);
        worst = worst.max((pb.p.value(*x) * d + pb.q.value(*x) * y[2] - r).abs() / (1.0 + r.abs()));
    }
    worst
}
