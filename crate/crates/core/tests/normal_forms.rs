mod common;

use bandedge_core::anomaly::exponent;
use bandedge_core::model::{DisorderSpec, ModelInstance, PeriodicBackground};
use bandedge_core::transfer::{background_transfer, edge_data, jordan_basis};
use bandedge_core::Mat2;
use common::families::{log_residual, log_unimodular, random_families};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn jordan_basis_on_random_band_edges() {
    let fams = random_families(100, 17);
    for (bg, _, e_b) in &fams {
        let t = background_transfer(bg, *e_b).value;
        assert!(background_transfer(bg, *e_b).d.trace().abs() > 1e-6);
        let (n, s) = jordan_basis(&t).unwrap();
        let sign = t.trace().signum();
        let want = Mat2::new(1.0, f64::from(s), 0.0, 1.0).scale(sign);
        let got = n.conjugate(&t);
        assert!((n.det() - 1.0).abs() < 1e-12);
        assert!(got.dist(&want) <= 1e-10, "L = {} E_b = {e_b}: residual {:e}", bg.period(), got.dist(&want));
    }
}

#[test]
fn log_oracle_inverts_exp() {
    for m in [Mat2::new(0.01, 0.3, -0.2, -0.01), Mat2::new(0.0, 1e-3, 2e-4, 0.0), Mat2::new(0.5, 0.1, 0.7, -0.5)] {
        assert!(log_unimodular(&m.exp()).dist(&m) < 1e-12);
    }
}

#[test]
fn rescaled_transfer_matches_first_order_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lambda = 1e-4;
    for (bg, dis, e_b) in random_families(20, 23) {
        let edge = edge_data(&bg, &dis, e_b).unwrap();
        for (eta, eps) in [(exponent(1, 1), -1.0), (exponent(1, 1), 1.0), (exponent(4, 3), 0.0), (exponent(4, 3), 0.7)] {
            let (res, bound) = log_residual(&bg, &dis, &edge, eta, eps, lambda, &mut rng);
            // second order terms carry the size of the family
            let scale = edge.x.abs().max(edge.x_sigma_m2).max(1.0);
            assert!(res <= 10.0 * scale * bound, "L = {} E_b = {e_b} eta = {eta} eps = {eps}: {res:e} > 10 * {bound:e}", bg.period());
        }
    }
}

#[test]
fn anderson_rescaled_residual_scales_with_next_order() {
    let bg = PeriodicBackground::laplacian();
    let dis = DisorderSpec::anderson(1);
    let edge = edge_data(&bg, &dis, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (r1, b1) = log_residual(&bg, &dis, &edge, exponent(4, 3), 1.0, 1e-3, &mut rng);
    let (r2, b2) = log_residual(&bg, &dis, &edge, exponent(4, 3), 1.0, 1e-5, &mut rng);
    assert!(r1 <= 10.0 * b1 && r2 <= 10.0 * b2);
    // the leading error shrinks with the predicted power (4/3) up to draw-to-draw scatter
    let slope = (r1 / r2).log10() / 2.0;
    assert!(slope > 1.0, "observed order {slope}");
    let _ = ModelInstance::anderson(0.0);
}

