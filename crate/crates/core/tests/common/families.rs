//! Random band-edge families and a closed-form matrix logarithm.

use bandedge_core::anomaly::{band_edge_expansion, exponent_f64, Exponent};
use bandedge_core::model::{DisorderLaw, DisorderSpec, PeriodicBackground};
use bandedge_core::transfer::{band_edges, cell_transfer_at, EdgeData, Jet};
use bandedge_core::Mat2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Principal logarithm of a unimodular matrix near `+-1`, in closed form:
/// `log A = f (A - t)` with `t = Tr A / 2` and `f = theta / sinh theta`, `cosh theta = t`.
pub fn log_unimodular(m: &Mat2) -> Mat2 {
    let t = 0.5 * m.trace();
    let x = t - 1.0;
    let f = if x.abs() < 1e-3 {
        1.0 - x / 3.0 + 2.0 * x * x / 15.0 - 4.0 * x * x * x / 105.0
    } else if t > 1.0 {
        let th = t.acosh();
        th / th.sinh()
    } else {
        let th = t.acos();
        th / th.sin()
    };
    (*m - Mat2::IDENTITY.scale(t)).scale(f)
}

/// Random periodic backgrounds with their non-touching band edges.
pub fn random_families(n: usize, seed: u64) -> Vec<(PeriodicBackground, DisorderSpec, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let l = rng.random_range(1..=4);
        let hop: Vec<f64> = (0..l).map(|_| rng.random_range(0.5..1.5)).collect();
        let pot: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bg = PeriodicBackground::new(hop, pot).unwrap();
        let hop_amp: Vec<f64> = (0..l).map(|_| rng.random_range(-0.5..0.5)).collect();
        let pot_amp: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let law = if rng.random::<bool>() { DisorderLaw::Uniform } else { DisorderLaw::Bernoulli };
        let dis = DisorderSpec::linear(&hop_amp, &pot_amp, law).unwrap();
        let edges = band_edges(&bg, (-6.0, 6.0), 20_000).unwrap();
        if !edges.warnings.is_empty() {
            continue;
        }
        let pick = rng.random_range(0..edges.edges.len());
        out.push((bg, dis, edges.edges[pick].0));
    }
    out
}

pub fn draw(dis: &DisorderSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut s = vec![0.0; dis.dim()];
    dis.draw(rng, &mut s);
    s
}

/// `max |log(sign G_l T G_l^{-1}) - sum lambda^eta_k P_k(xi)|` over a few disorder draws.
pub fn log_residual(bg: &PeriodicBackground, dis: &DisorderSpec, edge: &EdgeData, eta: Exponent, eps: f64, lambda: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let e = band_edge_expansion(bg, dis, edge, eta, eps).unwrap();
    let frame = e.frame_matrix(lambda);
    let sd = dis.law().variance().sqrt();
    let energy = edge.e_b + eps * lambda.powf(exponent_f64(eta));
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let sigma = draw(dis, rng);
        let t = cell_transfer_at(bg, dis, &sigma, energy, lambda, Jet::None).unwrap().value;
        let m = frame.conjugate(&t).scale(e.sign);
        let xi: Vec<f64> = sigma.iter().map(|s| s / sd).collect();
        let gen = e.terms.iter().fold(Mat2::ZERO, |acc, term| acc + term.sample(&xi).scale(lambda.powf(exponent_f64(term.exponent))));
        worst = worst.max(log_unimodular(&m).dist(&gen));
    }
    (worst, lambda.powf(exponent_f64(e.valid_below.unwrap())))
}
