//! Command-line front end: `estimate` runs a configured functional on a CSV,
//! `gmm` fits a nonlinear moment model, `simulate` runs the validation
//! benchmark, `report` renders a saved report.
//!
//! Exit codes: 0 ok, 2 validation error, 3 numerical flag (unless
//! --allow-flags), 4 I/O error.

mod config;

use autodml_core::data::{load_csv, make_folds};
use autodml_core::error::Error;
use autodml_core::estimator::{
    estimate_with_options, regression_decomposition, transform_att, transform_elasticity,
    EstimateReport, TransformReport,
};
use autodml_core::gmm::{fit_gmm, GmmOptions};
use autodml_core::sim::{run_sparse_linear_variants, SimVariant};
use clap::{Parser, Subcommand};
use config::{
    build_runtime_basis, estimate_config, gmm_config, RawConfig, TransformKind,
};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "autodml",
    about = "Cross-fitted debiased estimation of regression functionals",
    long_about = None,
    after_help = "Config files are flat `key = value` lines with `#` comments.\n\
Dictionary grammar: `const`, bare columns (`z`, `z^2`), `poly(z,4)`,\n\
`prod(a^2,b)`, `full(d; z1, z2)`, `interact(d; const, poly(z,2))`.\n\
Set AUTODML_THREADS to bound the worker count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a configured functional on a CSV dataset.
    Estimate {
        #[arg(short, long)]
        config: PathBuf,
        /// Exit 0 even when a learner reports non-convergence.
        #[arg(long)]
        allow_flags: bool,
    },
    /// Fit a nonlinear moment model with debiased GMM.
    Gmm {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        allow_flags: bool,
    },
    /// Run the validation benchmark suite.
    Simulate {
        /// Design name (sparse-linear).
        #[arg(long)]
        design: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Restrict to one variant row (lasso, generalized, theoretical,
        /// normalization, iteration-cold, iteration-warm, max-iteration,
        /// final). Default: the full cumulative table.
        #[arg(long, alias = "row")]
        variant: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretty-print a saved report file.
    Report { file: PathBuf },
}

#[derive(Serialize)]
struct CombinedReport<'a> {
    estimate: &'a EstimateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    transform: Option<&'a TransformReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    composition: Option<&'a TransformReport>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Csv(_) => 4,
        Error::Numerical(_) | Error::LpInfeasible(_) | Error::LpUnbounded | Error::Singular(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("AUTODML_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn ci(theta: f64, se: f64) -> (f64, f64) {
    (theta - 1.96 * se, theta + 1.96 * se)
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Estimate { config, allow_flags } => {
            let raw = RawConfig::load(&config)?;
            let cfg = estimate_config(&raw)?;
            let data = load_csv(&cfg.data_path, &cfg.schema)?;
            let basis = build_runtime_basis(&cfg.basis_kind, &data)?;
            cfg.functional.validate(&data, basis.as_ref())?;
            let folds = make_folds(&data, cfg.folds_l, cfg.folds_seed)?;

            let (report, transform, composition) = match cfg.transform {
                TransformKind::Decomposition => {
                    let treatment = treatment_of(&cfg.functional)?;
                    let dec = regression_decomposition(
                        &data,
                        &basis,
                        &cfg.outcome,
                        &treatment,
                        &folds,
                        &cfg.riesz,
                        &cfg.regression,
                    )?;
                    (dec.cross_average, Some(dec.response), Some(dec.composition))
                }
                _ => {
                    let report = estimate_with_options(
                        &cfg.functional,
                        &basis,
                        &data,
                        &cfg.outcome,
                        &folds,
                        &cfg.riesz,
                        &cfg.regression,
                        &cfg.estimate_options,
                    )?;
                    let transform = match cfg.transform {
                        TransformKind::None | TransformKind::Decomposition => None,
                        TransformKind::Att => {
                            let treatment = treatment_of(&cfg.functional)?;
                            Some(transform_att(&report, &data, &treatment)?)
                        }
                        TransformKind::Elasticity(kind) => {
                            Some(transform_elasticity(&report, &data, &cfg.outcome, kind)?)
                        }
                    };
                    (report, transform, None)
                }
            };

            println!(
                "{}: theta = {:.6}  se = {:.6}  95% CI [{:.6}, {:.6}]  (n = {}, L = {}{})",
                report.functional,
                report.theta_hat,
                report.std_error,
                ci(report.theta_hat, report.std_error).0,
                ci(report.theta_hat, report.std_error).1,
                report.n_rows,
                report.l,
                if report.clustered { ", clustered" } else { "" },
            );
            for t in transform.iter().chain(composition.iter()) {
                println!(
                    "{}: theta* = {:.6}  se = {:.6}  95% CI [{:.6}, {:.6}]",
                    t.kind,
                    t.theta_star,
                    t.std_error,
                    ci(t.theta_star, t.std_error).0,
                    ci(t.theta_star, t.std_error).1,
                );
            }
            if report.flagged {
                eprintln!("warning: a learner reported non-convergence (see fold diagnostics)");
            }

            if let Some(path) = &cfg.report_path {
                let combined = CombinedReport {
                    estimate: &report,
                    transform: transform.as_ref(),
                    composition: composition.as_ref(),
                };
                let json = serde_json::to_string_pretty(&combined)
                    .map_err(|e| Error::InvalidData(e.to_string()))?;
                write_atomic(path, &json)?;
                println!("report written to {}", path.display());
            }
            if let Some(path) = &cfg.influence_path {
                let mut out = String::from("row,influence\n");
                for (i, v) in report.influence.iter().enumerate() {
                    out.push_str(&format!("{i},{v}\n"));
                }
                write_atomic(path, &out)?;
            }
            if report.flagged && !allow_flags {
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gmm { config, allow_flags } => {
            let raw = RawConfig::load(&config)?;
            let cfg = gmm_config(&raw)?;
            let data = load_csv(&cfg.data_path, &cfg.schema)?;
            let basis = build_runtime_basis(&cfg.basis_kind, &data)?;
            let folds = make_folds(&data, cfg.folds_l, cfg.folds_seed)?;
            let opts = GmmOptions {
                iterate_initial: cfg.iterate_initial,
                ..Default::default()
            };
            let report = fit_gmm(
                &cfg.model,
                &basis,
                &data,
                &folds,
                &cfg.riesz,
                &cfg.regression,
                &opts,
            )?;
            for (k, (&t, &se)) in report.theta_hat.iter().zip(&report.std_errors).enumerate() {
                let (lo, hi) = ci(t, se);
                println!("theta[{k}] = {t:.6}  se = {se:.6}  95% CI [{lo:.6}, {hi:.6}]");
            }
            if let Some(path) = &cfg.report_path {
                let json = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::InvalidData(e.to_string()))?;
                write_atomic(path, &json)?;
                println!("report written to {}", path.display());
            }
            if report.flagged {
                eprintln!("warning: a learner or the optimizer reported non-convergence");
                if !allow_flags {
                    return Ok(ExitCode::from(3));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { design, reps, variant, seed } => {
            if design != "sparse-linear" {
                return Err(Error::InvalidInput(format!(
                    "unknown design: {design} (available: sparse-linear)"
                )));
            }
            let variants: Vec<SimVariant> = match &variant {
                Some(v) => vec![SimVariant::parse(v)?],
                None => SimVariant::ALL.to_vec(),
            };
            let summaries = run_sparse_linear_variants(&variants, reps, seed)?;
            println!(
                "{:<16} {:>6} {:>12} {:>12} {:>10}",
                "variant", "reps", "median MSE", "mean MSE", "holdout R2"
            );
            for s in &summaries {
                println!(
                    "{:<16} {:>6} {:>12.5} {:>12.5} {:>10.3}",
                    s.variant, s.reps, s.median_mse, s.mean_mse, s.mean_holdout_r2
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { file } => {
            let text = std::fs::read_to_string(&file)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::InvalidData(e.to_string()))?;
            let mut stdout = std::io::stdout().lock();
            if let Some(est) = value.get("estimate") {
                render_estimate(&mut stdout, est)?;
                if let Some(t) = value.get("transform").filter(|v| !v.is_null()) {
                    render_transform(&mut stdout, t)?;
                }
                if let Some(t) = value.get("composition").filter(|v| !v.is_null()) {
                    render_transform(&mut stdout, t)?;
                }
            } else if value.get("theta_hat").map(|v| v.is_array()).unwrap_or(false) {
                render_gmm(&mut stdout, &value)?;
            } else {
                render_estimate(&mut stdout, &value)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn treatment_of(f: &autodml_core::functionals::MomentFunctional) -> Result<String, Error> {
    use autodml_core::functionals::MomentFunctional as F;
    match f {
        F::Ate { treatment } | F::CrossAverage { treatment } => Ok(treatment.clone()),
        _ => Err(Error::InvalidInput(
            "the requested transform needs a treatment-based functional (ate or cross_average)"
                .into(),
        )),
    }
}

fn render_estimate(w: &mut impl Write, v: &serde_json::Value) -> Result<(), Error> {
    let get = |k: &str| v.get(k).and_then(|x| x.as_f64());
    let name = v
        .get("functional")
        .and_then(|x| x.as_str())
        .unwrap_or("estimate");
    if let (Some(theta), Some(se)) = (get("theta_hat"), get("std_error")) {
        writeln!(
            w,
            "{name}: theta = {theta:.6}  se = {se:.6}  95% CI [{:.6}, {:.6}]",
            theta - 1.96 * se,
            theta + 1.96 * se
        )?;
    }
    if let Some(folds) = v.get("folds").and_then(|x| x.as_array()) {
        for f in folds {
            writeln!(
                w,
                "  fold {}: n_train = {}, r_L = {}, kkt = {}",
                f.get("fold").and_then(|x| x.as_u64()).unwrap_or(0),
                f.get("n_train").and_then(|x| x.as_u64()).unwrap_or(0),
                f.get("riesz_r_l")
                    .map(|x| x.to_string())
                    .unwrap_or_else(|| "-".into()),
                f.get("riesz_kkt")
                    .map(|x| x.to_string())
                    .unwrap_or_else(|| "-".into()),
            )?;
        }
    }
    Ok(())
}

fn render_transform(w: &mut impl Write, v: &serde_json::Value) -> Result<(), Error> {
    let get = |k: &str| v.get(k).and_then(|x| x.as_f64());
    let name = v.get("kind").and_then(|x| x.as_str()).unwrap_or("transform");
    if let (Some(theta), Some(se)) = (get("theta_star"), get("std_error")) {
        writeln!(
            w,
            "{name}: theta* = {theta:.6}  se = {se:.6}  95% CI [{:.6}, {:.6}]",
            theta - 1.96 * se,
            theta + 1.96 * se
        )?;
    }
    Ok(())
}

fn render_gmm(w: &mut impl Write, v: &serde_json::Value) -> Result<(), Error> {
    let thetas = v
        .get("theta_hat")
        .and_then(|x| x.as_array())
        .cloned()
        .unwrap_or_default();
    let ses = v
        .get("std_errors")
        .and_then(|x| x.as_array())
        .cloned()
        .unwrap_or_default();
    for (k, (t, se)) in thetas.iter().zip(&ses).enumerate() {
        if let (Some(t), Some(se)) = (t.as_f64(), se.as_f64()) {
            writeln!(
                w,
                "theta[{k}] = {t:.6}  se = {se:.6}  95% CI [{:.6}, {:.6}]",
                t - 1.96 * se,
                t + 1.96 * se
            )?;
        }
    }
    Ok(())
}
