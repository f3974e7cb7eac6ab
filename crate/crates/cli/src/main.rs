use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bandedge_core::anomaly::{band_edge_normal_form, Exponent};
use bandedge_core::fokker_planck::{self, parabolic_theory};
use bandedge_core::harness::{self, RegimeSpec};
use bandedge_core::model::{ModelConfig, ModelInstance};
use bandedge_core::pruefer::{simulate_model, SimConfig};
use bandedge_core::transfer::{band_edges, model_edge_data};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "band-edge-lab", version, about = "Band-edge scaling of random Jacobi matrices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Model JSON; the Anderson model when omitted.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (or directory for `scaling`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Band edges of the periodic background.
    Edges {
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value_t = 20_000)]
        grid: usize,
    },
    /// Classify the band-edge anomaly at `E_b + eps lambda^eta`.
    Classify {
        #[arg(long, allow_hyphen_values = true)]
        edge: f64,
        /// Exponent as `p/q`.
        #[arg(long)]
        eta: Exponent,
        #[arg(long, allow_hyphen_values = true)]
        eps: f64,
    },
    /// Pruefer phase Monte Carlo at one energy.
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        energy: f64,
        /// Overrides the coupling of the model file.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 10_000_000)]
        steps: u64,
        #[arg(long, default_value_t = 16)]
        replicas: usize,
        /// Also write a phase histogram with this many bins.
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Groundstate of the parabolic Fokker-Planck pair; writes `theta,rho`.
    Groundstate {
        #[arg(long, allow_hyphen_values = true)]
        epsx: f64,
        #[arg(long)]
        m2: f64,
        #[arg(long, default_value_t = fokker_planck::DEFAULT_GRID)]
        grid: usize,
    },
    /// Lambda sweep against the predicted scaling; writes report.json and rows.csv.
    Scaling {
        /// Regime spec JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        edge: f64,
    },
    /// Total-variation distance between a phase histogram and the parabolic groundstate.
    DensityCompare {
        /// `bin_lo,bin_hi,count` CSV.
        #[arg(long)]
        histogram: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        epsx: f64,
        #[arg(long)]
        m2: f64,
        /// Fail (exit 2) above this distance.
        #[arg(long)]
        max_tv: Option<f64>,
    },
}

fn load_model(path: Option<&Path>) -> Result<ModelInstance> {
    let cfg = match path {
        Some(p) => ModelConfig::from_json(&harness::read_file(p)?)?,
        None => ModelConfig::anderson(0.0),
    };
    Ok(cfg.build()?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => harness::write_file(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// `Ok(true)` when all verdicts pass.
fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let out = cli.common.out.as_deref();
    match cli.cmd {
        Command::Edges { lo, hi, grid } => {
            let model = load_model(cli.common.model.as_deref())?;
            let edges = band_edges(model.background(), (lo, hi), grid)?;
            let data = edges
                .edges
                .iter()
                .map(|(e, _)| model_edge_data(&model, *e).map_err(anyhow::Error::from))
                .collect::<Result<Vec<_>>>()?;
            let body = json!({ "edges": edges, "edge_data": data });
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&body)?))?;
        }
        Command::Classify { edge, eta, eps } => {
            let model = load_model(cli.common.model.as_deref())?;
            let ed = model_edge_data(&model, edge)?;
            let nf = band_edge_normal_form(model.background(), model.disorder(), &ed, eta, eps)?;
            let body = json!({
                "edge": ed,
                "regime": nf.regime,
                "raw": bandedge_core::anomaly::classify(&nf.raw)?,
                "normal_form": nf.classification,
                "eps_x": ed.eps_x(eps),
            });
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&body)?))?;
        }
        Command::Simulate { energy, lambda, steps, replicas, bins, histogram } => {
            let mut model = load_model(cli.common.model.as_deref())?;
            if let Some(l) = lambda {
                model = model.with_lambda(l)?;
            }
            let mut cfg = SimConfig::new(steps, replicas, cli.common.seed);
            if let Some(b) = bins {
                cfg = cfg.with_histogram(b);
            }
            let stats = simulate_model(&model, energy, &cfg)?;
            let body = json!({
                "energy": energy,
                "lambda": model.lambda(),
                "gamma": stats.gamma_hat,
                "ids": stats.ids()?,
                "rotation": stats.r_hat,
                "non_ergodic": stats.non_ergodic,
                "warnings": stats.warnings,
            });
            if let (Some(h), Some(path)) = (&stats.histogram, histogram.as_deref()) {
                harness::write_file(path, &harness::histogram_csv(h))?;
            }
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&body)?))?;
        }
        Command::Groundstate { epsx, m2, grid } => {
            let coeffs = fokker_planck::parabolic_coefficients(epsx, m2);
            let rho = fokker_planck::groundstate(&coeffs.p, &coeffs.q, grid)?;
            emit(out, &harness::groundstate_csv(&rho))?;
            if out.is_some() {
                let th = parabolic_theory(epsx, m2)?;
                let body = json!({
                    "case": rho.class.case,
                    "c": rho.c,
                    "a": th.a,
                    "b": th.b,
                    "weak_form_residual": fokker_planck::weak_form_residual(&coeffs, &rho),
                });
                println!("{}", serde_json::to_string_pretty(&body)?);
            }
        }
        Command::Scaling { spec, edge } => {
            let model = load_model(cli.common.model.as_deref())?;
            let text = harness::read_file(&spec)?;
            let mut spec: RegimeSpec = serde_json::from_str(&text).context("parsing the regime spec")?;
            if spec.mc.seed == 0 {
                spec.mc.seed = cli.common.seed;
            }
            let ed = model_edge_data(&model, edge)?;
            let report = harness::run_scaling(&spec, &model, &ed)?;
            let dir = out.unwrap_or(Path::new("."));
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            harness::write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
            harness::write_file(&dir.join("rows.csv"), &report.rows_csv())?;
            for v in &report.verdicts {
                let status = match v.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "REPORT",
                };
                println!("{status} {}: measured {:.5} target {:.5}", v.name, v.measured, v.target);
            }
            return Ok(report.passed());
        }
        Command::DensityCompare { histogram, epsx, m2, max_tv } => {
            let h = harness::histogram_from_csv(&harness::read_file(&histogram)?)?;
            let coeffs = fokker_planck::parabolic_coefficients(epsx, m2);
            let rho = fokker_planck::groundstate(&coeffs.p, &coeffs.q, fokker_planck::DEFAULT_GRID)?;
            let tv = harness::compare_density(&h, &rho);
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&json!({ "tv": tv }))?))?;
            if let Some(m) = max_tv {
                if !(m > 0.0) {
                    bail!("--max-tv must be positive");
                }
                return Ok(tv <= m);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
