//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p bandedge-validation --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::process::ExitCode;
use std::time::Instant;

use bandedge_core::anomaly::{band_edge_normal_form, exponent, Exponent, Regime};
use bandedge_core::fokker_planck::{self, groundstate, parabolic_coefficients, weak_form_residual, DEFAULT_GRID};
use bandedge_core::harness::{self, free_ids_at_edge, measure, run_scaling, theory_prediction, McSpec, RegimeSpec, ScalingReport};
use bandedge_core::model::{finite_volume_count, sample_disorder, DisorderSpec, ModelInstance, PeriodicBackground};
use bandedge_core::pruefer::{simulate_model, SimConfig};
use bandedge_core::singular_ode::{self, Case};
use bandedge_core::transfer::{background_transfer, edge_data, jordan_basis, model_edge_data, EdgeData};
use bandedge_core::Mat2;
use bandedge_validation::{within_abs, within_rel, CheckResult, Outcome, Suite};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;
const REPLICAS: usize = 8;

fn anderson() -> (ModelInstance, EdgeData) {
    let model = ModelInstance::anderson(0.0);
    let edge = model_edge_data(&model, 2.0).expect("Anderson edge at 2");
    (model, edge)
}

fn spec(regime: Regime, eta: Exponent, eps: f64, lambdas: Vec<f64>, n_steps: u64) -> RegimeSpec {
    RegimeSpec { regime, eta, eps, lambdas, mc: McSpec { n_steps, burn_in: None, replicas: REPLICAS, seed: SEED } }
}

/// `0.1 2^{-k/2}`, k = 0..6: contains 0.1, 0.05, 0.025, 0.0125.
fn lambda_grid() -> Vec<f64> {
    (0..7).map(|k| 0.1 * 0.5f64.powf(0.5 * k as f64)).collect()
}

fn report_rows(o: &mut Outcome, r: &ScalingReport) {
    for row in &r.rows {
        o.note(format!(
            "lambda {:.5}: gamma {:.4e} +- {:.1e}, ids - N0 {:.4e} +- {:.1e}{}",
            row.lambda,
            row.gamma.mean,
            row.gamma.stderr,
            row.delta_ids.mean,
            row.delta_ids.stderr,
            row.failure.as_deref().map(|f| format!(" [{f}]")).unwrap_or_default()
        ));
    }
    for n in &r.notes {
        o.note(n.clone());
    }
}

fn verdicts(o: &mut Outcome, r: &ScalingReport, names: &[&str]) {
    for name in names {
        match r.verdict(name) {
            Some(v) if v.pass.is_some() => {
                let tol = if v.relative { format!("{}%", v.tolerance * 100.0) } else { format!("+- {}", v.tolerance) };
                o.check(v.pass == Some(true), format!("{name} = {:.4} vs {:.4} ({tol})", v.measured, v.target));
            }
            Some(v) => o.note(format!("{name} = {:.4} (report only, reference {:.4})", v.measured, v.target)),
            None => {
                o.check(false, format!("{name}: no verdict"));
            }
        }
    }
}

fn thouless(o: &mut Outcome) -> CheckResult {
    let lambda = 0.1;
    let model = ModelInstance::anderson(lambda);
    let start = Instant::now();
    let stats = simulate_model(&model, 1.0, &SimConfig::new(10_000_000, REPLICAS, SEED))?;
    let secs = start.elapsed().as_secs_f64();
    let want = lambda * lambda / 18.0;
    o.note(format!("Thouless formula gives {:.4e}", harness::thouless(lambda, 1.0, 1.0 / 3.0)));
    o.check(
        within_rel(stats.gamma_hat.mean, want, 0.1),
        format!("gamma {:.4e} +- {:.1e} vs lambda^2/18 = {want:.4e} (10%)", stats.gamma_hat.mean, stats.gamma_hat.stderr),
    );
    o.check(secs <= 60.0, format!("10^7 steps in {secs:.1} s (<= 60 s)"));
    Ok(())
}

fn elliptic(o: &mut Outcome) -> CheckResult {
    let (model, edge) = anderson();
    let r = run_scaling(&spec(Regime::Elliptic, exponent(1, 1), -1.0, lambda_grid(), 10_000_000), &model, &edge)?;
    report_rows(o, &r);
    o.note(format!("N0(E_b) = {}", r.n0));
    verdicts(o, &r, &["beta", "B", "alpha", "A"]);
    o.check(within_abs(r.theory.b.unwrap_or(f64::NAN), 1.0 / 24.0, 1e-12), "predicted B = 1/24");
    o.check(within_abs(r.theory.a.unwrap_or(f64::NAN), -1.0 / PI, 1e-12), "predicted A = -1/pi");
    Ok(())
}

fn hyperbolic(o: &mut Outcome) -> CheckResult {
    let (model, edge) = anderson();
    let r = run_scaling(&spec(Regime::Hyperbolic, exponent(1, 1), 1.0, lambda_grid(), 10_000_000), &model, &edge)?;
    report_rows(o, &r);
    verdicts(o, &r, &["beta", "B"]);
    o.check(within_abs(r.theory.b.unwrap_or(f64::NAN), 1.0, 1e-12), "predicted B = 1");
    // IDS: upper bound only, no verdict
    match r.verdict("alpha") {
        Some(v) => o.note(format!("IDS deficit slope {:.3} (bound: > {:.2})", v.measured, v.target)),
        None => {
            let worst = r.rows.iter().map(|row| row.delta_ids.mean.abs()).fold(0.0, f64::max);
            o.note(format!("IDS deficit below resolution on every row (max |ids - N0| = {worst:.1e}), consistent with alpha > 1/2"));
        }
    }
    Ok(())
}

fn parabolic(o: &mut Outcome) -> CheckResult {
    let (model, edge) = anderson();
    let n0 = free_ids_at_edge(model.background(), edge.e_b)?;
    let mut row = 0;
    for eps in [-1.0, 0.0, 1.0] {
        // the shift above the band is ~1e-4 lambda^{2/3} and needs long runs
        let n_steps = if eps > 0.0 { 200_000_000 } else { 10_000_000 };
        let s = spec(Regime::Parabolic, exponent(4, 3), eps, vec![0.01, 0.001], n_steps);
        let claims = s.validate(&edge)?;
        let th = theory_prediction(&s, &edge)?;
        let (a, b) = (th.a.unwrap_or(f64::NAN), th.b.unwrap_or(f64::NAN));
        for lambda in [0.01, 0.001] {
            let r = measure(&model, &edge, &s, n0, lambda, row, claims);
            row += 1;
            let scale = lambda.powf(2.0 / 3.0);
            let tag = format!("eps {eps:+}, lambda {lambda:e}");
            if let Some(f) = &r.failure {
                o.check(false, format!("{tag}: {f}"));
                continue;
            }
            let g = r.gamma.mean / scale;
            o.check(
                within_rel(g, b, 0.1),
                format!("{tag}: gamma lambda^(-2/3) {g:.5} +- {:.1e} vs B {b:.5} (10%)", r.gamma.stderr / scale),
            );
            let d = r.delta_ids.mean / scale;
            o.check(
                within_rel(d, a, 0.15),
                format!("{tag}: (ids - N0) lambda^(-2/3) {d:.4e} +- {:.1e} vs A {a:.4e} (15%)", r.delta_ids.stderr / scale),
            );
        }
    }
    Ok(())
}

fn groundstate_validity(o: &mut Outcome) -> CheckResult {
    let (model, edge) = anderson();
    let m2 = edge.x_sigma_m2;
    for eps in [-1.0, 0.0, 1.0] {
        let ex = edge.eps_x(eps);
        let coeffs = parabolic_coefficients(ex, m2);
        let rho = groundstate(&coeffs.p, &coeffs.q, DEFAULT_GRID)?;
        let tag = format!("eps_x {ex:+}");
        o.check(within_abs(rho.mass(), 1.0, 1e-8), format!("{tag}: mass {:.12}", rho.mass()));
        let min = rho.rho.iter().copied().fold(f64::INFINITY, f64::min);
        o.check(min >= 0.0, format!("{tag}: min rho {min:.3e}"));
        let w = weak_form_residual(&coeffs, &rho);
        o.check(w <= 1e-5, format!("{tag}: weak-form residual {w:.2e} (<= 1e-5)"));
        let bv = rho.value_at(FRAC_PI_2);
        o.check(within_abs(bv, rho.c / 2.0, 1e-6), format!("{tag}: rho(pi/2) = {bv:.9} vs C/2 = {:.9}", rho.c / 2.0));
    }

    let lambda = 1e-3;
    let nf = band_edge_normal_form(model.background(), model.disorder(), &edge, exponent(4, 3), 0.0)?;
    let cfg = SimConfig::new(10_000_000, REPLICAS, SEED + 5).with_frame(nf.frame(lambda)).with_histogram(64);
    let stats = simulate_model(&model.with_lambda(lambda)?, edge.e_b, &cfg)?;
    let hist = stats.histogram.ok_or("no histogram recorded")?;
    let coeffs = parabolic_coefficients(edge.eps_x(0.0), m2);
    let rho = groundstate(&coeffs.p, &coeffs.q, DEFAULT_GRID)?;
    let tv = harness::compare_density(&hist, &rho);
    o.check(tv <= 0.1, format!("phase histogram at lambda = 1e-3 vs rho: TV {tv:.4} (<= 0.1)"));
    Ok(())
}

fn ids_oracle(o: &mut Outcome) -> CheckResult {
    let n = 100_000;
    // interior, both edges, and just outside the upper edge
    let points = [(0.0, 0.3), (1.0, 0.1), (-1.2, 0.5), (-2.0, 0.1), (1.98, 0.1), (2.0, 0.05)];
    for (i, (energy, lambda)) in points.into_iter().enumerate() {
        let model = ModelInstance::anderson(lambda);
        let omega = sample_disorder(model.disorder(), SEED + 100 + i as u64, n)?;
        let count = finite_volume_count(&model, &omega, n, energy)?;
        let oracle = count as f64 / n as f64;
        let stats = simulate_model(&model, energy, &SimConfig::new(2_000_000, REPLICAS, SEED + 200 + i as u64))?;
        let ids = stats.ids()?.mean;
        o.check(
            within_abs(ids, oracle, 3e-3),
            format!("E {energy:+}, lambda {lambda}: ids {ids:.5} vs Sturm {oracle:.5} (diff {:.1e})", (ids - oracle).abs()),
        );
    }
    Ok(())
}

fn ode_suite(o: &mut Outcome) -> CheckResult {
    let lib = common::library();
    o.check(lib.len() == 12, format!("{} manufactured problems", lib.len()));
    let all = [Case::I, Case::II, Case::III, Case::IV, Case::V, Case::VI, Case::VII];
    o.check(all.iter().all(|c| lib.iter().any(|m| m.case == *c)), "cases (i) to (vii) covered");
    let mut worst_res = 0.0f64;
    let mut worst_err = 0.0f64;
    let mut labels_ok = true;
    for m in &lib {
        let lab = singular_ode::classify(&m.problem)?;
        if lab.case != m.case || (lab.free_left, lab.free_right) != m.free {
            labels_ok = false;
            o.note(format!("{}: classified {:?} {:?}", m.name, lab.case, (lab.free_left, lab.free_right)));
        }
        worst_res = worst_res.max(common::residual(m));
        let sol = m.solve(2001);
        for (x, y) in sol.x.iter().zip(&sol.y) {
            let want = m.exact(*x);
            worst_err = worst_err.max((y - want).abs() / want.abs().max(1.0));
        }
    }
    o.check(labels_ok, "classification exact on all problems");
    o.check(worst_res <= 1e-7, format!("max residual {worst_res:.2e} (<= 1e-7)"));
    o.check(worst_err <= 1e-8, format!("max closed-form error {worst_err:.2e} (<= 1e-8)"));
    Ok(())
}

fn normal_forms(o: &mut Outcome) -> CheckResult {
    let mut worst = 0.0f64;
    for (bg, _, e_b) in common::families::random_families(100, 17) {
        let t = background_transfer(&bg, e_b);
        let (n, s) = jordan_basis(&t.value)?;
        let want = Mat2::new(1.0, f64::from(s), 0.0, 1.0).scale(t.value.trace().signum());
        worst = worst.max(n.conjugate(&t.value).dist(&want));
    }
    o.check(worst <= 1e-10, format!("jordan_basis residual {worst:.2e} on 100 families (<= 1e-10)"));

    let lambda = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_scaled, mut worst_raw) = (0.0f64, 0.0f64);
    for (bg, dis, e_b) in common::families::random_families(20, 23) {
        let edge = edge_data(&bg, &dis, e_b)?;
        for (eta, eps) in [(exponent(1, 1), -1.0), (exponent(1, 1), 1.0), (exponent(4, 3), 0.0), (exponent(4, 3), 0.7)] {
            let (res, bound) = common::families::log_residual(&bg, &dis, &edge, eta, eps, lambda, &mut rng);
            let scale = edge.x.abs().max(edge.x_sigma_m2).max(1.0);
            worst_scaled = worst_scaled.max(res / (scale * bound));
            worst_raw = worst_raw.max(res / bound);
        }
    }
    o.check(
        worst_scaled <= 10.0,
        format!("log residual / (max(1, |x|, E x_sigma^2) lambda^next) <= {worst_scaled:.2} at lambda = 1e-4 (<= 10)"),
    );
    o.note(format!("without the family scale the worst ratio is {worst_raw:.2}"));
    let bg = PeriodicBackground::laplacian();
    let dis = DisorderSpec::anderson(1);
    let edge = edge_data(&bg, &dis, 2.0)?;
    for (eta, eps) in [(exponent(1, 1), -1.0), (exponent(1, 1), 1.0), (exponent(4, 3), 0.0)] {
        let (res, bound) = common::families::log_residual(&bg, &dis, &edge, eta, eps, lambda, &mut rng);
        o.check(res <= 10.0 * bound, format!("Anderson eta {eta} eps {eps:+}: residual {res:.2e} vs 10 lambda^next = {:.2e}", 10.0 * bound));
    }
    Ok(())
}

fn invariant_measures(o: &mut Outcome) -> CheckResult {
    let (model, edge) = anderson();
    let lambda = 1e-3;
    let m = model.with_lambda(lambda)?;

    let nf = band_edge_normal_form(model.background(), model.disorder(), &edge, exponent(1, 1), -1.0)?;
    let cfg = SimConfig::new(10_000_000, REPLICAS, SEED + 7).with_frame(nf.frame(lambda));
    let s = simulate_model(&m, edge.e_b - lambda, &cfg)?;
    let i2 = s.exp2.0.mean.hypot(s.exp2.1.mean);
    let i4 = s.exp4.0.mean.hypot(s.exp4.1.mean);
    o.check(i2 <= 0.05, format!("elliptic |I_N(exp 2i theta)| = {i2:.4} (<= 0.05)"));
    o.check(i4 <= 0.05, format!("elliptic |I_N(exp 4i theta)| = {i4:.4} (<= 0.05)"));

    let nf = band_edge_normal_form(model.background(), model.disorder(), &edge, exponent(1, 1), 1.0)?;
    let cfg = SimConfig::new(10_000_000, REPLICAS, SEED + 8).with_frame(nf.frame(lambda)).with_histogram(64);
    let s = simulate_model(&m, edge.e_b + lambda, &cfg)?;
    let mass = s.histogram.ok_or("no histogram recorded")?.mass_near(FRAC_PI_2, 0.2);
    o.check(mass >= 0.9, format!("hyperbolic mass within 0.2 of pi/2 = {mass:.4} (>= 0.9)"));
    if let Ok(c) = fokker_planck::coefficients(&nf.expansion) {
        o.note(format!("second order pair of the transformed anomaly: p = {:?}", c.p));
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut suite = Suite::default();
    suite.run(1, "Thouless check, E = 1, lambda = 0.1", thouless);
    suite.run(2, "elliptic scaling, E_b = 2, eta = 1, eps = -1", elliptic);
    suite.run(3, "hyperbolic scaling, E_b = 2, eta = 1, eps = +1", hyperbolic);
    suite.run(4, "parabolic scaling, eta = 4/3, eps in {-1, 0, +1}", parabolic);
    suite.run(5, "parabolic groundstate validity and phase histogram", groundstate_validity);
    suite.run(6, "IDS against the Sturm count", ids_oracle);
    suite.run(7, "manufactured singular ODE suite", ode_suite);
    suite.run(8, "Jordan basis and normal-form logarithms", normal_forms);
    suite.run(9, "elliptic uniform measure and hyperbolic concentration", invariant_measures);
    suite.finish()
}
