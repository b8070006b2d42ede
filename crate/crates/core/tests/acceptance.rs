//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured quantities. Tolerances are pinned here,
//! not configurable.

use autodml_core::data::make_folds;
use autodml_core::dictionary::{Basis, Dictionary, Overrides, TermSpec};
use autodml_core::estimator::{
    estimate, transform_att, transform_elasticity, variance_clustered, variance_iid,
    ElasticityKind, RegressionSpec, RieszSpec,
};
use autodml_core::functionals::{column_means, MomentFunctional};
use autodml_core::gmm::{
    fit_gmm, GmmModel, GmmOptions, LinearFunctionalModel,
};
use autodml_core::linalg::Mat;
use autodml_core::regression::GammaEval;
use autodml_core::riesz::{
    coordinate_descent, fit_dantzig_md, fit_lasso_md, DantzigConfig, LassoMdConfig,
    MomentMatrices,
};
use autodml_core::sim::{
    ate_alpha_oracle, ate_gamma_oracle, derive_seed, generate, oracle_bootstrap,
    oracle_dantzig_small, run_sparse_linear_variants, DesignSpec, SimVariant,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::sync::Arc;

// Pre-registered seed for the whole suite.
const SEED: u64 = 100;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {name}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Criterion 1: sparse linear benchmark, 100 replications at n=100, p=101.
/// Median per-coordinate MSE bands for the fixed and theoretical penalty
/// rows, plus the strict fixed-vs-theoretical ordering.
#[test]
fn criterion_1_benchmark_table() {
    let variants = [SimVariant::LassoFixed, SimVariant::TheoreticalRL];
    let out = run_sparse_linear_variants(&variants, 100, SEED).unwrap();
    let fixed = out[0].median_mse;
    let theoretical = out[1].median_mse;
    let mut failures = Vec::new();
    let in_band = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
    if !in_band(fixed, 0.003, 0.012) {
        failures.push(format!("fixed-penalty median {fixed:.5} outside [0.003, 0.012]"));
    }
    if !in_band(theoretical, 0.0007, 0.0030) {
        failures.push(format!(
            "theoretical-penalty median {theoretical:.5} outside [0.0007, 0.0030]"
        ));
    }
    if !(fixed > theoretical) {
        failures.push(format!(
            "ordering violated: fixed {fixed:.5} <= theoretical {theoretical:.5}"
        ));
    }
    let detail =
        format!("median MSE fixed={fixed:.5}, theoretical={theoretical:.5}, fixed > theoretical");
    verdict("1 benchmark-table", failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{failures:?} ({detail})");
}

/// Criterion 1, final-variant band. At n=100 the ridge-shifted weights raise
/// the active-coordinate thresholds by the factor (1 + 0.2/D) on top of the
/// theoretical level, which puts the production tuner's median structurally
/// at ~1.4x the theoretical row; the [0.0007, 0.0030] band does not
/// accommodate that at this sample size (it does from n ~ 150 up, where the
/// shift is benign and the final row matches the theoretical row). The band
/// is asserted as-is and the measured value reported.
#[test]
fn criterion_1_final_variant_band() {
    let out = run_sparse_linear_variants(&[SimVariant::RidgeShift], 100, SEED).unwrap();
    let final_row = out[0].median_mse;
    let pass = (0.0007..=0.0030).contains(&final_row);
    verdict(
        "1 final-variant-band",
        pass,
        &format!("final-variant median {final_row:.5} vs band [0.0007, 0.0030]"),
    );
    assert!(
        pass,
        "final-variant median {final_row:.5} outside [0.0007, 0.0030] at n=100 (see note above)"
    );
}

/// Criterion 2: first-order certificates on 200 random instances with
/// p <= 200. Lasso fits satisfy the weighted bound with slack <= 1e-6;
/// Dantzig fits stay feasible within 1e-8.
#[test]
fn criterion_2_kkt_certificates() {
    let t0 = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(SEED, 2));
    let mut worst_lasso = 0.0_f64;
    let mut worst_dantzig = 0.0_f64;
    let mut converged = 0usize;
    for trial in 0..200 {
        // Mixed sizes: every fifth instance is large.
        let p = if trial % 5 == 0 {
            rng.random_range(100..=200)
        } else {
            rng.random_range(2..=60)
        };
        let n = p + rng.random_range(5..40);
        let mut b = Mat::zeros(n, p);
        for v in &mut b.data {
            *v = rng.random_range(-1.5..1.5);
        }
        let g = b.gram(n as f64);
        let m_hat: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Per-row moments consistent with m_hat (columns recentered).
        let mut m_rows = Mat::zeros(n, p);
        for v in &mut m_rows.data {
            *v = rng.random_range(-1.0..1.0);
        }
        let means = column_means(&m_rows);
        for i in 0..n {
            for j in 0..p {
                m_rows[(i, j)] += m_hat[j] - means[j];
            }
        }
        let r_l = rng.random_range(0.02..0.5);
        let cfg = LassoMdConfig {
            fixed_r_l: Some(r_l),
            ..Default::default()
        };
        let intercept_first = trial % 3 == 0;
        let mats = MomentMatrices { b: &b, m_rows: &m_rows };
        let fit = fit_lasso_md(n, &m_hat, &g, Some(&mats), intercept_first, &cfg).unwrap();
        if fit.converged {
            converged += 1;
            // Recompute the slack from raw arithmetic.
            let grho = g.mul_vec(&fit.rho);
            for j in 0..p {
                let slack = (m_hat[j] - grho[j]).abs() - fit.thresholds[j];
                worst_lasso = worst_lasso.max(slack);
            }
        }
        let lambda = rng.random_range(0.1..0.6) * m_hat.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let lambda = lambda.max(0.05);
        let dcfg = DantzigConfig { lambda: Some(lambda), lp_tol: 1e-9 };
        let dfit = fit_dantzig_md(n, &m_hat, &g, &dcfg).unwrap();
        let grho = g.mul_vec(&dfit.rho);
        let inf = m_hat
            .iter()
            .zip(&grho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        worst_dantzig = worst_dantzig.max(inf - lambda);
    }
    let elapsed = t0.elapsed();
    let pass = worst_lasso <= 1e-6 && worst_dantzig <= 1e-8 && converged >= 195;
    verdict(
        "2 kkt-certificates",
        pass,
        &format!(
            "worst lasso slack {worst_lasso:.2e}, worst dantzig violation {worst_dantzig:.2e}, \
             {converged}/200 converged, {elapsed:.1?}"
        ),
    );
    assert!(pass);
    assert!(elapsed.as_secs() < 60, "runtime budget exceeded: {elapsed:?}");
}

/// Criterion 3: small-p exactness. Dantzig matches the vertex-enumeration
/// oracle within 1e-6; one-dimensional Lasso matches the closed-form soft
/// threshold within 1e-10.
#[test]
fn criterion_3_small_p_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(SEED, 3));
    let mut worst_gap = 0.0_f64;
    for _ in 0..50 {
        let p = rng.random_range(1..=6);
        let n = 25 + p;
        let mut b = Mat::zeros(n, p);
        for v in &mut b.data {
            *v = rng.random_range(-1.0..1.0);
        }
        let g = b.gram(n as f64);
        let m_hat: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = rng.random_range(0.05..0.5);
        let (rho_oracle, obj_oracle) = oracle_dantzig_small(&m_hat, &g, lambda).unwrap();
        let fit = fit_dantzig_md(
            n,
            &m_hat,
            &g,
            &DantzigConfig { lambda: Some(lambda), lp_tol: 1e-9 },
        )
        .unwrap();
        let obj_lp: f64 = fit.rho.iter().map(|v| v.abs()).sum();
        worst_gap = worst_gap.max((obj_lp - obj_oracle).abs());
        let _ = rho_oracle;
    }
    let mut worst_soft = 0.0_f64;
    for _ in 0..50 {
        let g_val: f64 = rng.random_range(0.2..3.0);
        let m_val: f64 = rng.random_range(-2.0..2.0);
        let t: f64 = rng.random_range(0.0..1.0);
        let g = Mat::from_rows(&[vec![g_val]]);
        let cd = coordinate_descent(&[m_val], &g, &[t], vec![0.0], 1e-14, 200).unwrap();
        let closed = if m_val.abs() <= t {
            0.0
        } else {
            (m_val - t * m_val.signum()) / g_val
        };
        worst_soft = worst_soft.max((cd.rho[0] - closed).abs());
    }
    let pass = worst_gap < 1e-6 && worst_soft < 1e-10;
    verdict(
        "3 small-p-oracles",
        pass,
        &format!("dantzig objective gap {worst_gap:.2e}, soft-threshold gap {worst_soft:.2e}"),
    );
    assert!(pass);
}

/// Criterion 4: double robustness at pipeline level. One nuisance at its
/// closed form, the other misspecified (coefficients scaled 1.5); the mean
/// estimate stays within 3 Monte Carlo standard errors of the truth in both
/// directions.
#[test]
fn criterion_4_double_robustness() {
    let theta0 = 1.0;
    let n = 5000;
    let reps = 200;
    let run = |gamma_scale: f64, alpha_scale: f64| -> (f64, f64) {
        let estimates: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(derive_seed(SEED, 4), rep as u64);
                let spec = DesignSpec::AteLogistic { n, seed, theta: theta0 };
                let gen = generate(&spec).unwrap();
                let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
                let folds = make_folds(&gen.data, 5, derive_seed(seed, 9)).unwrap();
                let report = estimate(
                    &MomentFunctional::Ate { treatment: "d".into() },
                    &basis,
                    &gen.data,
                    "y",
                    &folds,
                    &RieszSpec::Oracle(ate_alpha_oracle(alpha_scale)),
                    &RegressionSpec::Oracle(ate_gamma_oracle(theta0, gamma_scale)),
                )
                .unwrap();
                report.theta_hat
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / reps as f64;
        let var = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / reps as f64;
        (mean, (var / reps as f64).sqrt())
    };
    let t0 = std::time::Instant::now();
    let (mean_gw, se_gw) = run(1.5, 1.0); // gamma wrong, alpha true
    let (mean_aw, se_aw) = run(1.0, 1.5); // alpha wrong, gamma true
    let ok_g = (mean_gw - theta0).abs() <= 3.0 * se_gw;
    let ok_a = (mean_aw - theta0).abs() <= 3.0 * se_aw;
    let detail = format!(
        "gamma-wrong mean {mean_gw:.4} (se {se_gw:.4}), alpha-wrong mean {mean_aw:.4} (se {se_aw:.4}), {:.1?}",
        t0.elapsed()
    );
    verdict("4 double-robustness", ok_g && ok_a, &detail);
    assert!(ok_g && ok_a, "{detail}");
}

/// Criterion 5: confidence-interval coverage of the full pipeline on the
/// logistic treatment design, 500 replications at n=1000, L=5.
#[test]
fn criterion_5_coverage() {
    let theta0 = 1.0;
    let reps = 500;
    let t0 = std::time::Instant::now();
    let covered: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(derive_seed(SEED, 5), rep as u64);
            let spec = DesignSpec::AteLogistic { n: 1000, seed, theta: theta0 };
            let gen = generate(&spec).unwrap();
            let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
            let folds = make_folds(&gen.data, 5, derive_seed(seed, 77)).unwrap();
            let report = estimate(
                &MomentFunctional::Ate { treatment: "d".into() },
                &basis,
                &gen.data,
                "y",
                &folds,
                &RieszSpec::LassoMd(LassoMdConfig::default()),
                &RegressionSpec::LassoMd(LassoMdConfig::default()),
            )
            .unwrap();
            usize::from((report.theta_hat - theta0).abs() <= 1.96 * report.std_error)
        })
        .sum();
    let coverage = covered as f64 / reps as f64;
    let pass = (0.90..=0.98).contains(&coverage);
    verdict(
        "5 coverage",
        pass,
        &format!("95% CI covered {covered}/{reps} = {coverage:.3}, {:.1?}", t0.elapsed()),
    );
    assert!(pass, "coverage {coverage}");
}

/// Criterion 6: balance conditions. On every fold of one run, the realized
/// balance residuals respect the fold's effective per-term thresholds.
#[test]
fn criterion_6_balance_conditions() {
    let spec = DesignSpec::AteLogistic { n: 1000, seed: derive_seed(SEED, 6), theta: 1.0 };
    let gen = generate(&spec).unwrap();
    let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
    let folds = make_folds(&gen.data, 5, derive_seed(SEED, 61)).unwrap();
    let report = estimate(
        &MomentFunctional::Ate { treatment: "d".into() },
        &basis,
        &gen.data,
        "y",
        &folds,
        &RieszSpec::LassoMd(LassoMdConfig::default()),
        &RegressionSpec::LassoMd(LassoMdConfig::default()),
    )
    .unwrap();
    let p = basis.p();
    let q_len = p / 2;
    let d_col = gen.data.column("d").unwrap();
    let mut worst = f64::NEG_INFINITY;
    for fold in 0..folds.l {
        let fit = report.riesz_fits[fold].as_ref().unwrap();
        let train = folds.complement_rows(fold);
        let b = basis.matrix(&gen.data, &train).unwrap();
        let n_train = train.len() as f64;
        for j in 0..q_len {
            // Treated-arm balance: avg q_j (1 - D omega_d) with
            // omega_d = q' rho_treated; and control-arm balance with
            // omega_{1-d} = q' rho_control.
            let mut resid_treat = 0.0;
            let mut resid_ctl = 0.0;
            for (k, &row) in train.iter().enumerate() {
                let qj = b[(k, j)] + b[(k, q_len + j)];
                let omega_d: f64 = (0..q_len)
                    .map(|l| (b[(k, l)] + b[(k, q_len + l)]) * fit.rho[l])
                    .sum();
                let omega_c: f64 = (0..q_len)
                    .map(|l| (b[(k, l)] + b[(k, q_len + l)]) * fit.rho[q_len + l])
                    .sum();
                resid_treat += qj * (1.0 - d_col[row] * omega_d);
                resid_ctl += qj * (1.0 + (1.0 - d_col[row]) * omega_c);
            }
            resid_treat /= n_train;
            resid_ctl /= n_train;
            worst = worst.max(resid_treat.abs() - fit.thresholds[j]);
            worst = worst.max(resid_ctl.abs() - fit.thresholds[q_len + j]);
        }
    }
    let pass = worst <= 1e-6;
    verdict(
        "6 balance-conditions",
        pass,
        &format!("worst residual excess over threshold {worst:.2e}"),
    );
    assert!(pass);
}

/// Criterion 7: delta method versus the nonparametric bootstrap for the
/// treated-effect and own-price elasticity transforms (within 15%), plus the
/// exact singleton-cluster reduction of the clustered variance.
#[test]
fn criterion_7_delta_vs_bootstrap() {
    let t0 = std::time::Instant::now();
    // Treated effect from the cross average, row bootstrap.
    let spec = DesignSpec::AteLogistic { n: 800, seed: derive_seed(SEED, 7), theta: 1.0 };
    let gen = generate(&spec).unwrap();
    let inner = Dictionary::polynomial(&["z1", "z2"], 1).unwrap();
    let att_basis: Arc<dyn Basis> = Arc::new(Dictionary::arm_split("d", &inner).unwrap());
    let att_run = |data: &autodml_core::data::Dataset| -> autodml_core::Result<(f64, f64)> {
        let folds = make_folds(data, 4, 13)?;
        let report = estimate(
            &MomentFunctional::CrossAverage { treatment: "d".into() },
            &att_basis,
            data,
            "y",
            &folds,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
        )?;
        let att = transform_att(&report, data, "d")?;
        Ok((att.theta_star, att.std_error))
    };
    let (_, att_se_delta) = att_run(&gen.data).unwrap();
    let att_se_boot = oracle_bootstrap(
        |d| att_run(d).map(|(t, _)| t),
        &gen.data,
        1000,
        derive_seed(SEED, 71),
    )
    .unwrap();
    let att_rel = (att_se_delta - att_se_boot).abs() / att_se_boot;

    // Own-price elasticity on the panel design, cluster bootstrap.
    let pspec = DesignSpec::PanelSlopes { households: 200, periods: 4, seed: derive_seed(SEED, 72) };
    let pgen = generate(&pspec).unwrap();
    let base = Dictionary::polynomial(&["d"], 1).unwrap();
    let elast_run = |data: &autodml_core::data::Dataset| -> autodml_core::Result<(f64, f64)> {
        let panel: Arc<dyn Basis> =
            Arc::new(autodml_core::dictionary::build_panel_dictionary(data, &base)?);
        let folds = make_folds(data, 4, 29)?;
        let report = estimate(
            &MomentFunctional::AvgDerivative { wrt: "d".into(), weight: None },
            &panel,
            data,
            "y",
            &folds,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::LassoMd(LassoMdConfig::default()),
        )?;
        let el = transform_elasticity(&report, data, "y", ElasticityKind::OwnPrice)?;
        Ok((el.theta_star, el.std_error))
    };
    let (_, el_se_delta) = elast_run(&pgen.data).unwrap();
    let el_se_boot = oracle_bootstrap(
        |d| elast_run(d).map(|(t, _)| t),
        &pgen.data,
        1000,
        derive_seed(SEED, 73),
    )
    .unwrap();
    let el_rel = (el_se_delta - el_se_boot).abs() / el_se_boot;

    // Exact reduction: clustered variance with singleton clusters is the
    // plain variance, bit for bit.
    let folds = make_folds(&gen.data, 4, 13).unwrap();
    let report = estimate(
        &MomentFunctional::CrossAverage { treatment: "d".into() },
        &att_basis,
        &gen.data,
        "y",
        &folds,
        &RieszSpec::LassoMd(LassoMdConfig::default()),
        &RegressionSpec::Ols,
    )
    .unwrap();
    let mut singleton = gen.data.clone();
    singleton
        .replace_column("z5", (0..singleton.n_rows()).map(|i| i as f64).collect())
        .unwrap();
    let singleton = singleton.with_cluster("z5").unwrap();
    let v_cl = variance_clustered(&report.influence, singleton.cluster.as_ref().unwrap());
    let v_iid = variance_iid(&report.influence);
    let bit_exact = v_cl.to_bits() == v_iid.to_bits();

    let pass = att_rel < 0.15 && el_rel < 0.15 && bit_exact;
    verdict(
        "7 delta-vs-bootstrap",
        pass,
        &format!(
            "att se delta {att_se_delta:.4} vs boot {att_se_boot:.4} (rel {att_rel:.3}); \
             elasticity se delta {el_se_delta:.4} vs boot {el_se_boot:.4} (rel {el_rel:.3}); \
             singleton reduction bit-exact: {bit_exact}; {:.1?}",
            t0.elapsed()
        ),
    );
    assert!(pass);
}

/// Criterion 8: the linear moment model reproduces the direct estimator to
/// 1e-10, and binary-choice coverage of the expectation coefficient is
/// nominal over 200 replications at n=4000.
#[test]
fn criterion_8_gmm() {
    let t0 = std::time::Instant::now();
    // Reduction check.
    let spec = DesignSpec::AteLogistic { n: 600, seed: derive_seed(SEED, 8), theta: 1.0 };
    let gen = generate(&spec).unwrap();
    let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
    let folds = make_folds(&gen.data, 4, 3).unwrap();
    let functional = MomentFunctional::Ate { treatment: "d".into() };
    let riesz = RieszSpec::LassoMd(LassoMdConfig::default());
    let regression = RegressionSpec::LassoMd(LassoMdConfig::default());
    let direct = estimate(&functional, &basis, &gen.data, "y", &folds, &riesz, &regression).unwrap();
    let model = LinearFunctionalModel { functional: functional.clone(), outcome: "y".into() };
    let gmm_rep = fit_gmm(&model, &basis, &gen.data, &folds, &riesz, &regression, &GmmOptions::default())
        .unwrap();
    let theta_gap = (gmm_rep.theta_hat[0] - direct.theta_hat).abs();
    let var_gap = (gmm_rep.v_hat[(0, 0)] - direct.variance).abs();
    let reduction_ok = theta_gap < 1e-10 && var_gap < 1e-10 * (1.0 + direct.variance);

    // Binary-choice coverage for the expectation coefficient delta0.
    let (beta, delta0) = ((0.2, 0.8), 0.7);
    let reps = 200;
    let covered: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(derive_seed(SEED, 81), rep as u64);
            let dspec = DesignSpec::BinaryChoiceDesign { n: 4000, seed, beta, delta: delta0 };
            let dgen = generate(&dspec).unwrap();
            let dbasis: Arc<dyn Basis> = Arc::new(dspec.canonical_dictionary().unwrap());
            let dmodel = dspec.binary_choice_model().unwrap();
            let dfolds = make_folds(&dgen.data, 5, derive_seed(seed, 5)).unwrap();
            let report = fit_gmm(
                &dmodel,
                &dbasis,
                &dgen.data,
                &dfolds,
                &RieszSpec::LassoMd(LassoMdConfig::default()),
                &RegressionSpec::Ols,
                &GmmOptions::default(),
            )
            .unwrap();
            let k = dmodel.theta_dim() - 1;
            usize::from((report.theta_hat[k] - delta0).abs() <= 1.96 * report.std_errors[k])
        })
        .sum();
    let coverage = covered as f64 / reps as f64;
    let coverage_ok = (0.90..=0.98).contains(&coverage);
    let pass = reduction_ok && coverage_ok;
    verdict(
        "8 gmm",
        pass,
        &format!(
            "reduction gaps theta {theta_gap:.2e} var {var_gap:.2e}; delta0 coverage {covered}/{reps} = {coverage:.3}; {:.1?}",
            t0.elapsed()
        ),
    );
    assert!(pass);
}

/// Criterion 9: analytic derivatives against central finite differences, for
/// dictionary partials and for the Gateaux moment derivatives of the
/// binary-choice model.
#[test]
fn criterion_9_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(SEED, 9));
    // Dictionary partials on random polynomial dictionaries and rows.
    let cols = ["u", "v", "w"];
    let mut worst_dict = 0.0_f64;
    for _ in 0..500 {
        let vals: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = autodml_core::data::Dataset::from_columns(vec![
            ("u".into(), vec![vals[0]]),
            ("v".into(), vec![vals[1]]),
            ("w".into(), vec![vals[2]]),
        ])
        .unwrap();
        let mut terms = vec![TermSpec::Constant];
        for _ in 0..rng.random_range(1..5) {
            let nfac = rng.random_range(1..3);
            let fac: Vec<(&str, u32)> = (0..nfac)
                .map(|_| (cols[rng.random_range(0..3)], rng.random_range(1..4)))
                .collect();
            let t = TermSpec::product(&fac).unwrap();
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let dict = Dictionary::new(terms).unwrap();
        let p = dict.p();
        let wrt = cols[rng.random_range(0..3)];
        let mut analytic = vec![0.0; p];
        dict.eval_row_partial(&data, 0, wrt, &mut analytic).unwrap();
        let h = 1e-6;
        let base = data.value(wrt, 0).unwrap();
        let ov_hi = Overrides::resolve(&data, &[(wrt, base + h)]).unwrap();
        let ov_lo = Overrides::resolve(&data, &[(wrt, base - h)]).unwrap();
        let mut hi = vec![0.0; p];
        let mut lo = vec![0.0; p];
        dict.eval_row_override(&data, 0, &ov_hi, &mut hi).unwrap();
        dict.eval_row_override(&data, 0, &ov_lo, &mut lo).unwrap();
        for j in 0..p {
            worst_dict = worst_dict.max((analytic[j] - (hi[j] - lo[j]) / (2.0 * h)).abs());
        }
    }

    // Gateaux derivatives of the binary-choice moments.
    let spec = DesignSpec::BinaryChoiceDesign {
        n: 50,
        seed: derive_seed(SEED, 91),
        beta: (0.2, 0.8),
        delta: 0.7,
    };
    let gen = generate(&spec).unwrap();
    let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
    let model = spec.binary_choice_model().unwrap();
    let gamma = gen.truth.gamma.as_ref().unwrap();
    let p = basis.p();
    let r = model.r();
    let tau = 1e-6;
    let mut worst_gateaux = 0.0_f64;
    let mut analytic = vec![0.0; r * p];
    let mut b1 = vec![0.0; p];
    let mut b0 = vec![0.0; p];
    for row in 0..gen.data.n_rows() {
        let theta = vec![
            rng.random_range(-0.5..0.5),
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
        ];
        let feats = model.gamma_features(&gen.data, row, gamma.as_ref()).unwrap();
        model
            .gateaux_row(&gen.data, basis.as_ref(), row, &feats, &theta, &mut analytic)
            .unwrap();
        let ov1 = Overrides::resolve(&gen.data, &[("d", 1.0)]).unwrap();
        let ov0 = Overrides::resolve(&gen.data, &[("d", 0.0)]).unwrap();
        basis.eval_row_override(&gen.data, row, &ov1, &mut b1).unwrap();
        basis.eval_row_override(&gen.data, row, &ov0, &mut b0).unwrap();
        let mut g_hi = vec![0.0; r];
        let mut g_lo = vec![0.0; r];
        for j in 0..p {
            let diff = b1[j] - b0[j];
            let f_hi = [feats[0] + tau * diff];
            let f_lo = [feats[0] - tau * diff];
            model.g_row(&gen.data, row, &f_hi, &theta, &mut g_hi).unwrap();
            model.g_row(&gen.data, row, &f_lo, &theta, &mut g_lo).unwrap();
            for k in 0..r {
                let fd = (g_hi[k] - g_lo[k]) / (2.0 * tau);
                worst_gateaux = worst_gateaux.max((analytic[k * p + j] - fd).abs());
            }
        }
    }
    let pass = worst_dict <= 1e-6 && worst_gateaux <= 1e-6;
    verdict(
        "9 finite-differences",
        pass,
        &format!("worst dictionary gap {worst_dict:.2e}, worst gateaux gap {worst_gateaux:.2e}"),
    );
    assert!(pass);
}

/// Orthogonal-moment sanity used by several criteria: the centered moment at
/// the truth has mean zero within Monte Carlo noise (cheap smoke guard that
/// the suite's designs expose correct truths).
#[test]
fn acceptance_designs_expose_correct_truths() {
    let spec = DesignSpec::AteLogistic { n: 50_000, seed: derive_seed(SEED, 99), theta: 1.0 };
    let gen = generate(&spec).unwrap();
    let gamma = gen.truth.gamma.as_ref().unwrap();
    let alpha = gen.truth.alpha.as_ref().unwrap();
    let n = gen.data.n_rows();
    let vals: Vec<f64> = (0..n)
        .map(|r| {
            let g1 = gamma
                .value_at(&gen.data, r, &autodml_core::regression::EvalPoint::Override {
                    tag: "d1",
                    overrides: &[("d", 1.0)],
                })
                .unwrap();
            let g0 = gamma
                .value_at(&gen.data, r, &autodml_core::regression::EvalPoint::Override {
                    tag: "d0",
                    overrides: &[("d", 0.0)],
                })
                .unwrap();
            let gobs = gamma
                .value_at(&gen.data, r, &autodml_core::regression::EvalPoint::Plain)
                .unwrap();
            let y = gen.data.value("y", r).unwrap();
            (g1 - g0) - 1.0 + alpha(&gen.data, r) * (y - gobs)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let se = (var / n as f64).sqrt();
    let pass = mean.abs() <= 4.0 * se;
    verdict(
        "0 design-truths",
        pass,
        &format!("orthogonal moment mean {mean:.5} (se {se:.5})"),
    );
    assert!(pass);
}
