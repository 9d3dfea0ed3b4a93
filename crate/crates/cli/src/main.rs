use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use marginal_release::factorization::{gamma_f_formula, svd_lower_bound};
use marginal_release::io::{load_dataset, load_workload, LoadedWorkload};
use marginal_release::mechanism::{embed_extended, eta, k_way_sigma, zeta};
use marginal_release::{
    build_factorization, extended_lower_bound, optimize_pstar, predicted_error, release, tightness_certificate,
    DenseCap, Error, QueryKind, SeededSampler,
};
use serde_json::{json, Value};

mod output;

const MAX_ITER: usize = 10_000;

#[derive(Parser, Debug)]
#[command(name = "marginal-release", version, about = "Private release of marginal-style query workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Release noisy answers for a workload over a dataset.
    Release(ReleaseArgs),
    /// Closed-form error of the release without touching data.
    PredictError(PredictArgs),
    /// Weights minimising the largest per-query standard deviation.
    OptimizeWeights(OptimizeArgs),
    /// Build the explicit factorization and check its optimality certificates.
    Verify(VerifyArgs),
    /// Lower bounds on the achievable error.
    LowerBound(LowerBoundArgs),
    /// CSV tables of improvement ratios and the prefix constants.
    PlotData(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Objective {
    WeightedRms,
    MaxVariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct Common {
    /// Workload description (JSON).
    #[arg(long)]
    workload: PathBuf,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the workload weights by the max-variance optimum first.
    #[arg(long, value_enum, default_value = "weighted-rms")]
    objective: Objective,
    /// Stopping tolerance on the optimizer's KKT residual.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args, Debug)]
struct ReleaseArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV with one column per attribute.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    /// Workload description (JSON).
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Largest universe materialised densely; the query cap is twice this.
    #[arg(long, default_value_t = 4096)]
    dense_cap: usize,
    /// Multiply one entry of the normalisation by 1.01 (negative control).
    #[arg(long, hide = true)]
    corrupt_plan: bool,
}

#[derive(Args, Debug)]
struct LowerBoundArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    dense_cap: usize,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[command(subcommand)]
    table: PlotTable,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum PlotTable {
    /// k-way sigma relative to the independent-noise baseline: d,k,m,ratio.
    Ratio {
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5, 6, 7, 8, 9, 10])]
        m: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        d_max: usize,
    },
    /// m,eta,zeta,eta-zeta for m = 2..=m_max.
    Eta {
        #[arg(long, default_value_t = 10_000)]
        m_max: usize,
    },
}

/// Failure with a dedicated exit status.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code, _)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Unestimable(_)) => 3,
        Some(Error::NoConvergence { .. }) => 4,
        Some(
            Error::Parse(_)
            | Error::InvalidMu(_)
            | Error::SizeTooSmall { .. }
            | Error::LengthMismatch { .. }
            | Error::TooManyAttributes { .. }
            | Error::UniverseOverflow
            | Error::AttributeOutOfRange { .. }
            | Error::ValueOutOfRange { .. }
            | Error::DuplicateSet(_)
            | Error::InvalidWeight { .. }
            | Error::AllZeroWeights
            | Error::EmptyWorkload
            | Error::BadArity { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MARGINAL_RELEASE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Release(a) => cmd_release(a),
        Command::PredictError(a) => cmd_predict(a),
        Command::OptimizeWeights(a) => cmd_optimize(a),
        Command::Verify(a) => cmd_verify(a),
        Command::LowerBound(a) => cmd_lower_bound(a),
        Command::PlotData(a) => cmd_plot(a),
    }
}

fn write_out(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialise");
    s.push('\n');
    s
}

fn check_mu(mu: f64) -> anyhow::Result<()> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMu(mu).into())
    }
}

/// Loads the workload and, for the max-variance objective, swaps in `p*`.
fn prepare(common: &Common) -> anyhow::Result<(LoadedWorkload, Option<Vec<f64>>)> {
    let mut loaded = load_workload(&common.workload)?;
    info!(
        "workload: {} sets, kind {}, |U| = {:?}",
        loaded.workload.len(),
        loaded.workload.kind().name(),
        loaded.workload.universe().total_size()
    );
    if common.objective == Objective::WeightedRms {
        return Ok((loaded, None));
    }
    let sol = optimize_pstar(&loaded.workload, common.tol, MAX_ITER)?;
    info!("p* after {} iterations, KKT residual {:e}", sol.iterations, sol.kkt_residual);
    loaded.workload = loaded.workload.with_weights(sol.p_star.clone())?;
    Ok((loaded, Some(sol.p_star)))
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::WeightedRms => "weighted-rms",
        Objective::MaxVariance => "max-variance",
    }
}

fn cmd_release(a: ReleaseArgs) -> anyhow::Result<()> {
    check_mu(a.mu)?;
    let (loaded, p_star) = prepare(&a.common)?;
    let data = load_dataset(&a.dataset, &loaded)?;
    info!("dataset: {} rows", data.n());
    let result = release(&data, &loaded.workload, a.mu, &mut SeededSampler::new(a.seed))?;
    let predicted = predicted_error(&loaded.workload, a.mu)?;
    let text = match a.format {
        Format::Json => to_json(&output::release_json(
            &loaded,
            &result,
            &predicted,
            a.mu,
            objective_name(a.common.objective),
            p_star.as_deref(),
        )),
        Format::Csv => output::release_csv(&loaded, &result),
    };
    write_out(a.common.out.as_deref(), &text)
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    check_mu(a.mu)?;
    let (loaded, p_star) = prepare(&a.common)?;
    let w = &loaded.workload;
    let pred = predicted_error(w, a.mu)?;
    let sets: Vec<Value> = w
        .sets()
        .iter()
        .zip(w.weights())
        .zip(&pred.per_set_sigma)
        .map(|((&s, &p), &sigma)| json!({"attrs": loaded.set_names(s), "weight": p, "sigma": sigma}))
        .collect();
    let mut report = json!({
        "kind": w.kind().name(),
        "mu": a.mu,
        "objective": objective_name(a.common.objective),
        "weighted_rms": pred.weighted_rms,
        "max_sigma": pred.max_sigma,
        "sets": sets,
    });
    // Independent Gaussian noise on every marginal table: sensitivity sqrt(|S|).
    if matches!(w.kind(), QueryKind::Marginal) {
        let baseline = (w.len() as f64).sqrt() / a.mu;
        report["baseline_sigma"] = json!(baseline);
        report["ratio"] = json!(pred.max_sigma / baseline);
    }
    if let Some(p) = p_star {
        report["p_star"] = json!(p);
    }
    write_out(a.common.out.as_deref(), &to_json(&report))
}

fn cmd_optimize(a: OptimizeArgs) -> anyhow::Result<()> {
    let loaded = load_workload(&a.workload)?;
    let w = &loaded.workload;
    let sol = match optimize_pstar(w, a.tol, MAX_ITER) {
        Ok(s) => s,
        Err(Error::NoConvergence { iterations, residual, best }) => {
            let report = json!({"converged": false, "iterations": iterations, "kkt_residual": residual, "best": best});
            write_out(a.out.as_deref(), &to_json(&report))?;
            return Err(Error::NoConvergence { iterations, residual, best }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let tuned = w.with_weights(sol.p_star.clone())?;
    let pred = predicted_error(&tuned, 1.0)?;
    let sets: Vec<Value> = w
        .sets()
        .iter()
        .zip(&sol.p_star)
        .zip(&pred.per_set_sigma)
        .map(|((&s, &p), &sigma)| json!({"attrs": loaded.set_names(s), "weight": p, "sigma": sigma}))
        .collect();
    let report = json!({
        "converged": true,
        "p_star": sol.p_star,
        "objective": sol.objective,
        "max_sigma": pred.max_sigma,
        "kkt_residual": sol.kkt_residual,
        "iterations": sol.iterations,
        "sets": sets,
    });
    write_out(a.out.as_deref(), &to_json(&report))
}

fn cap_of(n: usize) -> DenseCap {
    DenseCap {
        max_universe: n,
        max_queries: 2 * n,
    }
}

fn cmd_verify(a: VerifyArgs) -> anyhow::Result<()> {
    let (loaded, p_star) = prepare(&a.common)?;
    let w = &loaded.workload;
    let cap = cap_of(a.dense_cap);
    let formula = gamma_f_formula(w)?;
    let tol = a.common.tol;
    let mut failures = Vec::new();
    let mut report = json!({
        "kind": w.kind().name(),
        "objective": objective_name(a.common.objective),
        "formula": formula,
        "tolerance": tol,
    });
    match build_factorization(w, cap) {
        Ok(mut fact) => {
            if a.corrupt_plan {
                fact = fact.with_scaled_e(0, 1.01);
            }
            let norms = fact.norms();
            let cert = tightness_certificate(&fact);
            let product = match w.kind() {
                QueryKind::Extended => embed_extended(w.universe()).product_workload(w)?,
                _ => w.clone(),
            };
            let svd = svd_lower_bound(&product, cap)?;
            let total: f64 = fact.tau.iter().sum();
            let scale = total * total + fact.r.ncols() as f64;
            if cert.lpl > tol * scale {
                failures.push(format!("lpl residual {:e}", cert.lpl));
            }
            if cert.rr > tol * scale {
                failures.push(format!("rr residual {:e}", cert.rr));
            }
            if cert.colnorm > tol {
                failures.push(format!("column norm residual {:e}", cert.colnorm));
            }
            if (norms.gamma_f - svd).abs() > 1e-8 * svd {
                failures.push(format!("gamma_F {} exceeds the trace bound {svd}", norms.gamma_f));
            }
            if p_star.is_some() && cert.rownorm > 1e-6 {
                failures.push(format!("row norms not maximal on the support of p*: {:e}", cert.rownorm));
            }
            report["gammaF"] = json!(norms.gamma_f);
            report["gamma2"] = json!(norms.gamma_2);
            report["svd_lower"] = json!(svd);
            report["residuals"] = json!({"lpl": cert.lpl, "rr": cert.rr, "colnorm": cert.colnorm, "rownorm": cert.rownorm});
            report["dense"] = json!({"used": true, "size": [fact.l.nrows(), fact.r.ncols()]});
        }
        Err(Error::DenseTooLarge { rows, cols }) => {
            info!("dense matrices skipped: {rows} x {cols}");
            report["gammaF"] = json!(formula);
            report["dense"] = json!({"used": false, "size": [rows, cols]});
        }
        Err(e) => return Err(e.into()),
    }
    if matches!(w.kind(), QueryKind::Extended) {
        let lb = extended_lower_bound(w, Some(cap)).or_else(|e| match e {
            Error::DenseTooLarge { .. } => extended_lower_bound(w, None),
            e => Err(e),
        })?;
        if let Some(d) = lb.direct {
            if (d - lb.closed_form).abs() > 1e-8 * lb.closed_form {
                failures.push(format!("extended bound: direct {d} vs closed form {}", lb.closed_form));
            }
        }
        if lb.y_op_norm.is_some_and(|y| y > 1.0 + 1e-9) {
            failures.push("extended bound: test matrix has operator norm above one".into());
        }
        report["extended_lower_bound"] = json!({
            "family": "prefix",
            "closed_form": lb.closed_form,
            "direct": lb.direct,
            "y_op_norm": lb.y_op_norm,
        });
    }
    if let Some(p) = p_star {
        report["p_star"] = json!(p);
    }
    report["pass"] = json!(failures.is_empty());
    report["failures"] = json!(failures);
    write_out(a.common.out.as_deref(), &to_json(&report))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Exit(5, format!("certificate failed: {}", failures.join("; "))).into())
    }
}

fn cmd_lower_bound(a: LowerBoundArgs) -> anyhow::Result<()> {
    let loaded = load_workload(&a.workload)?;
    let w = &loaded.workload;
    let cap = cap_of(a.dense_cap);
    let upper = predicted_error(w, 1.0).ok().map(|p| p.weighted_rms);
    let report = match w.kind() {
        QueryKind::Extended => {
            let lb = match extended_lower_bound(w, Some(cap)) {
                Err(Error::DenseTooLarge { .. }) => extended_lower_bound(w, None)?,
                other => other?,
            };
            json!({
                "kind": "extended",
                "family": "prefix",
                "note": "bound derived for prefix queries, reported for the prefix/suffix workload",
                "closed_form": lb.closed_form,
                "direct": lb.direct,
                "y_op_norm": lb.y_op_norm,
                "upper": upper,
            })
        }
        _ => {
            let svd = match svd_lower_bound(w, cap) {
                Ok(v) => Some(v),
                Err(Error::DenseTooLarge { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            json!({
                "kind": w.kind().name(),
                "formula": gamma_f_formula(w)?,
                "svd_lower": svd,
                "upper": upper,
            })
        }
    };
    write_out(a.out.as_deref(), &to_json(&report))
}

fn cmd_plot(a: PlotArgs) -> anyhow::Result<()> {
    let mut text = String::new();
    match a.table {
        PlotTable::Ratio { m, k, d_max } => {
            text.push_str("d,k,m,ratio\n");
            for &mm in &m {
                for &kk in &k {
                    for d in kk.max(1)..=d_max {
                        let sigma = k_way_sigma(d, kk, mm, 1.0).map_err(|e| anyhow!("{e}"))?;
                        let baseline = output::binomial(d, kk).sqrt();
                        text.push_str(&format!("{d},{kk},{mm},{}\n", sigma / baseline));
                    }
                }
            }
        }
        PlotTable::Eta { m_max } => {
            text.push_str("m,eta,zeta,eta_minus_zeta\n");
            for m in 2..=m_max {
                let (e, z) = (eta(m)?, zeta(m)?);
                text.push_str(&format!("{m},{e},{z},{}\n", e - z));
            }
        }
    }
    write_out(a.out.as_deref(), &text)
}
