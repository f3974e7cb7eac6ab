//! Transfer matrices over a unit cell, band edges of the periodic
//! background, Jordan normal form at an edge and the rescaled normal forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::{JetMat2, Mat2};
use crate::model::{disorder_stream, AmplitudeMap, DisorderLaw, DisorderSpec, ModelInstance, PeriodicBackground};

/// `[[(E - v)/t, -t], [1/t, 0]]`.
#[inline]
pub fn site_transfer(energy: f64, t: f64, v: f64) -> Result<Mat2> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("hopping must be positive, got {t}")));
    }
    Ok(Mat2::new((energy - v) / t, -t, 1.0 / t, 0.0))
}

/// Which scalar the jet of `cell_transfer` differentiates by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jet {
    None,
    Energy,
    Coupling,
}

#[inline]
fn site_coeffs_at(
    background: &PeriodicBackground,
    disorder: &DisorderSpec,
    sigma: &[f64],
    l: usize,
    lambda: f64,
) -> Result<(f64, f64, f64, f64)> {
    let tt = disorder.hop_tilde(l, sigma);
    let vt = disorder.pot_tilde(l, sigma);
    let t = background.hop()[l] + lambda * tt;
    let v = background.pot()[l] + lambda * vt;
    if !(t > 0.0) {
        return Err(Error::NonPositiveHopping { site: l, t });
    }
    Ok((t, v, tt, vt))
}

/// Cell transfer matrix at coupling `lambda`, ignoring the model's own coupling.
pub fn cell_transfer_at(
    background: &PeriodicBackground,
    disorder: &DisorderSpec,
    sigma: &[f64],
    energy: f64,
    lambda: f64,
    jet: Jet,
) -> Result<JetMat2> {
    let mut acc = JetMat2::identity();
    for l in 0..background.period() {
        let (t, v, tt, vt) = site_coeffs_at(background, disorder, sigma, l, lambda)?;
        let value = Mat2::new((energy - v) / t, -t, 1.0 / t, 0.0);
        let d = match jet {
            Jet::None => Mat2::ZERO,
            Jet::Energy => Mat2::new(1.0 / t, 0.0, 0.0, 0.0),
            Jet::Coupling => {
                let t2 = t * t;
                Mat2::new((-vt * t - (energy - v) * tt) / t2, -tt, -tt / t2, 0.0)
            }
        };
        // site l acts after sites 0..l
        acc = JetMat2 { value, d } * acc;
    }
    Ok(acc)
}

/// Ordered product of the site matrices of one cell, optionally with a derivative.
pub fn cell_transfer(model: &ModelInstance, sigma: &[f64], energy: f64, jet: Jet) -> Result<JetMat2> {
    cell_transfer_at(model.background(), model.disorder(), sigma, energy, model.lambda(), jet)
}

/// Unperturbed cell matrix with its energy derivative.
pub fn background_transfer(background: &PeriodicBackground, energy: f64) -> JetMat2 {
    let mut acc = JetMat2::identity();
    for l in 0..background.period() {
        let t = background.hop()[l];
        let v = background.pot()[l];
        let m = JetMat2 { value: Mat2::new((energy - v) / t, -t, 1.0 / t, 0.0), d: Mat2::new(1.0 / t, 0.0, 0.0, 0.0) };
        acc = m * acc;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEdges {
    /// `(E_b, sign of the trace)`.
    pub edges: Vec<(f64, i8)>,
    /// Energies where `|Tr| = 2` with vanishing slope; excluded from `edges`.
    pub touchings: Vec<f64>,
    pub warnings: Vec<String>,
}

const EDGE_TOL: f64 = 1e-12;
const TOUCH_SLOPE: f64 = 1e-10;

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        if hi - lo <= EDGE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of `|Tr T_0^E| - 2` in `[e_lo, e_hi]` by sign scan and bisection.
pub fn band_edges(background: &PeriodicBackground, interval: (f64, f64), grid: usize) -> Result<BandEdges> {
    let (e_lo, e_hi) = interval;
    if grid < 100 {
        return Err(Error::Precondition(format!("grid must be at least 100, got {grid}")));
    }
    if !(e_hi > e_lo) {
        return Err(Error::Precondition(format!("empty interval [{e_lo}, {e_hi}]")));
    }
    let tr = |e: f64| background_transfer(background, e).value.trace();
    let dtr = |e: f64| background_transfer(background, e).d.trace();
    let pitch = (e_hi - e_lo) / grid as f64;
    let energies: Vec<f64> = (0..=grid).map(|i| e_lo + pitch * i as f64).collect();

    let mut roots: Vec<f64> = Vec::new();
    // transversal crossings of Tr = +2 and Tr = -2
    for target in [2.0, -2.0] {
        let g = |e: f64| tr(e) - target;
        for w in energies.windows(2) {
            let (a, b) = (g(w[0]), g(w[1]));
            if a == 0.0 {
                roots.push(w[0]);
            } else if a * b < 0.0 {
                roots.push(bisect(g, w[0], w[1]));
            }
        }
        if g(e_hi) == 0.0 {
            roots.push(e_hi);
        }
    }
    // tangential contacts: critical points of Tr where |Tr| = 2
    let mut touchings = Vec::new();
    for w in energies.windows(2) {
        let (a, b) = (dtr(w[0]), dtr(w[1]));
        if a * b < 0.0 || a == 0.0 {
            let e = if a == 0.0 { w[0] } else { bisect(dtr, w[0], w[1]) };
            if (tr(e).abs() - 2.0).abs() < 1e-8 {
                touchings.push(e);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut edges = Vec::new();
    for e in roots {
        let slope = dtr(e);
        if slope.abs() < TOUCH_SLOPE || touchings.iter().any(|t| (t - e).abs() < 1e-6) {
            if !touchings.iter().any(|t| (t - e).abs() < 1e-6) {
                touchings.push(e);
            }
            continue;
        }
        let sign = if tr(e) > 0.0 { 1 } else { -1 };
        edges.push((e, sign));
    }
    touchings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    touchings.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut warnings = Vec::new();
    let all: Vec<f64> = {
        let mut v: Vec<f64> = edges.iter().map(|e| e.0).chain(touchings.iter().copied()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    for w in all.windows(2) {
        if w[1] - w[0] < pitch {
            warnings.push(format!(
                "roots {} and {} closer than grid pitch {pitch}; refine the grid",
                w[0], w[1]
            ));
        }
    }
    Ok(BandEdges { edges, touchings, warnings })
}

/// Det-1 matrix `N` with `N T N^{-1} = +-[[1, s], [0, 1]]`; returns `(N, s)`.
pub fn jordan_basis(t: &Mat2) -> Result<(Mat2, i8)> {
    let tr = t.trace();
    let sign = if tr >= 0.0 { 1.0 } else { -1.0 };
    if (tr - 2.0 * sign).abs() > 1e-8 {
        return Err(Error::Precondition(format!("|Tr T| = {} differs from 2", tr.abs())));
    }
    let nil = t.scale(sign) - Mat2::IDENTITY;
    let scale = t.max_abs().max(1.0);
    if nil.max_abs() <= 1e-12 * scale {
        return Err(Error::Diagonalizable);
    }
    // kernel vector of the nilpotent part, from its dominant row
    let (p, q, r, d) = (nil.a, nil.b, nil.c, nil.d);
    let mut k = if p * p + q * q >= r * r + d * d { [q, -p] } else { [-d, r] };
    let norm = (k[0] * k[0] + k[1] * k[1]).sqrt();
    k = [k[0] / norm, k[1] / norm];
    if k[0] < -1e-14 || (k[0].abs() <= 1e-14 && k[1] < 0.0) {
        k = [-k[0], -k[1]];
    }
    let u = if k[0].abs() >= k[1].abs() { [0.0, 1.0] } else { [1.0, 0.0] };
    let det0 = k[0] * u[1] - k[1] * u[0];
    let nu = nil.apply(u);
    let mu = (nu[0] * k[0] + nu[1] * k[1]) / (k[0] * k[0] + k[1] * k[1]);
    let a = (mu / det0).abs().sqrt();
    let b = 1.0 / (a * det0);
    let n_inv = Mat2::new(a * k[0], b * u[0], a * k[1], b * u[1]);
    let s = if mu / det0 > 0.0 { 1 } else { -1 };
    Ok((n_inv.inverse(), s))
}

/// Band-edge data of the background at `E_b` together with the disorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeData {
    pub e_b: f64,
    pub edge_sign: i8,
    pub jordan_sign: i8,
    pub n: Mat2,
    /// `d/dE Tr T_0^E` at `E_b`.
    pub x: f64,
    /// `E(x_sigma^2)`.
    pub x_sigma_m2: f64,
    /// Monte Carlo standard error of `x_sigma_m2`; zero when computed in closed form.
    pub x_sigma_m2_stderr: f64,
    /// `x_sigma = sum_i grad[i] sigma_i` when the amplitudes are linear.
    pub x_sigma_grad: Option<Vec<f64>>,
    /// `+1` if energies above `E_b` are inside the band.
    pub inward: i8,
    /// Period `L` of the background.
    pub period: usize,
}

impl EdgeData {
    /// Lower-left entry of the energy derivative in the canonical frame,
    /// `edge_sign * x`. The product `eps * c_energy()` is negative inside the band.
    pub fn c_energy(&self) -> f64 {
        f64::from(self.edge_sign) * self.x
    }

    /// Canonical det-(+-1) frame `G` with `G T_0^{E_b} G^{-1} = edge_sign [[1, 1], [0, 1]]`.
    pub fn canonical_frame(&self) -> Mat2 {
        if self.jordan_sign < 0 {
            Mat2::diag(1.0, -1.0) * self.n
        } else {
            self.n
        }
    }

    /// `eps * x` in the canonical frame; the sign convention of all band-edge formulas.
    pub fn eps_x(&self, eps: f64) -> f64 {
        eps * self.c_energy()
    }

    /// True if `E_b + eps * h` lies in the band for small `h > 0`.
    pub fn is_inside(&self, eps: f64) -> bool {
        eps * f64::from(self.inward) > 0.0
    }
}

/// `x_sigma(sigma) = d/dlambda Tr T_{lambda,sigma}^{E_b}` at `lambda = 0`.
pub fn x_sigma(background: &PeriodicBackground, disorder: &DisorderSpec, e_b: f64, sigma: &[f64]) -> Result<f64> {
    Ok(cell_transfer_at(background, disorder, sigma, e_b, 0.0, Jet::Coupling)?.d.trace())
}

const M2_SAMPLES: usize = 1_000_000;

/// Assemble `EdgeData` at a band edge `e_b`.
pub fn edge_data(background: &PeriodicBackground, disorder: &DisorderSpec, e_b: f64) -> Result<EdgeData> {
    if background.period() != disorder.period() {
        return Err(Error::InvalidModel("background and disorder periods differ".into()));
    }
    let t0 = background_transfer(background, e_b);
    let tr = t0.value.trace();
    if (tr.abs() - 2.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!("|Tr T| = {} at E_b = {e_b} is not 2", tr.abs())));
    }
    let x = t0.d.trace();
    if x.abs() < 1e-10 {
        return Err(Error::BandTouching { energy: e_b, slope: x.abs() });
    }
    let (n, jordan_sign) = jordan_basis(&t0.value)?;
    let edge_sign: i8 = if tr > 0.0 { 1 } else { -1 };

    let dim = disorder.dim();
    let (m2, m2_err, grad) = if disorder.is_linear() {
        let mut grad = vec![0.0; dim];
        let mut unit = vec![0.0; dim];
        for i in 0..dim {
            unit[i] = 1.0;
            grad[i] = x_sigma(background, disorder, e_b, &unit)?;
            unit[i] = 0.0;
        }
        let var = disorder.law().variance();
        let m2 = grad.iter().map(|g| g * g).sum::<f64>() * var;
        (m2, 0.0, Some(grad))
    } else if disorder.law() == DisorderLaw::Degenerate {
        let zero = vec![0.0; dim];
        let xs = x_sigma(background, disorder, e_b, &zero)?;
        (xs * xs, 0.0, None)
    } else {
        let mut rng = disorder_stream(0x5eed_e0d6, 0);
        let mut sigma = vec![0.0; dim];
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..M2_SAMPLES {
            disorder.draw(&mut rng, &mut sigma);
            let xs = x_sigma(background, disorder, e_b, &sigma)?;
            s1 += xs * xs;
            s2 += xs.powi(4);
        }
        let n = M2_SAMPLES as f64;
        let mean = s1 / n;
        let var = (s2 / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt(), None)
    };
    let trivial = if m2_err > 0.0 { m2 < 4.0 * m2_err } else { m2 <= 1e-14 * (1.0 + x * x) };
    if trivial {
        return Err(Error::TrivialPerturbation { m2 });
    }

    let h = 1e-6;
    let inside_above = background_transfer(background, e_b + h).value.trace().abs() < 2.0;
    let inward = if inside_above { 1 } else { -1 };

    Ok(EdgeData {
        e_b,
        edge_sign,
        jordan_sign,
        n,
        x,
        x_sigma_m2: m2,
        x_sigma_m2_stderr: m2_err,
        x_sigma_grad: grad,
        inward,
        period: background.period(),
    })
}

/// Convenience: `edge_data` for a model instance.
pub fn model_edge_data(model: &ModelInstance, e_b: f64) -> Result<EdgeData> {
    edge_data(model.background(), model.disorder(), e_b)
}

/// `N_{lambda,delta} = diag(lambda^delta, 1)`.
pub fn rescaling(lambda: f64, delta: f64) -> Mat2 {
    Mat2::diag(lambda.powf(delta), 1.0)
}

pub(crate) const RESCALE_LIMIT: f64 = 1e12;

/// `N_{l,d} N T^{E_b + eps l^eta}_{l,sigma} N^{-1} N_{l,d}^{-1}`.
pub fn rescaled_transfer(
    edge: &EdgeData,
    model: &ModelInstance,
    sigma: &[f64],
    lambda: f64,
    eta: f64,
    eps: f64,
    delta: f64,
) -> Result<Mat2> {
    if !(lambda > 0.0) || !(eta > 0.0) {
        return Err(Error::Precondition(format!("need lambda > 0 and eta > 0, got {lambda}, {eta}")));
    }
    if !(delta > 0.0 && delta < 1.0f64.min(eta)) {
        return Err(Error::Precondition(format!("delta = {delta} outside (0, min(1, eta))")));
    }
    let energy = edge.e_b + eps * lambda.powf(eta);
    let t = cell_transfer_at(model.background(), model.disorder(), sigma, energy, lambda, Jet::None)?.value;
    let frame = rescaling(lambda, delta) * edge.n;
    let m = frame.conjugate(&t);
    let big = m.max_abs();
    if !big.is_finite() || big > RESCALE_LIMIT {
        return Err(Error::RescalingOutOfRange { entry: big });
    }
    Ok(m)
}

/// Anderson unit amplitude check used by tests and the CLI.
pub fn is_identity_amplitude(map: &AmplitudeMap) -> bool {
    matches!(map, AmplitudeMap::Linear(c) if *c == 1.0)
}
