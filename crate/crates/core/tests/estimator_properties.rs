//! Statistical properties of the cross-fitted estimator on designs with
//! known truths: orthogonality of the corrected moment, double robustness,
//! Monte Carlo sanity, representer-error decay with n, balance conditions,
//! and delta-method/bootstrap agreement for the decomposition.

use autodml_core::data::make_folds;
use autodml_core::dictionary::Basis;
use autodml_core::estimator::{
    estimate, regression_decomposition, RegressionSpec, RieszSpec,
};
use autodml_core::functionals::MomentFunctional;
use autodml_core::linalg::dot;
use autodml_core::regression::{EvalPoint, GammaEval};
use autodml_core::riesz::LassoMdConfig;
use autodml_core::sim::{
    ate_alpha_oracle, ate_gamma_oracle, derive_seed, generate, oracle_bootstrap, DesignSpec,
};
use rayon::prelude::*;
use std::sync::Arc;

const THETA0: f64 = 1.0;

/// Per-row orthogonal moment at the truth with pluggable nuisances.
fn psi_row(
    data: &autodml_core::data::Dataset,
    row: usize,
    gamma: &dyn GammaEval,
    alpha: &dyn Fn(&autodml_core::data::Dataset, usize) -> f64,
) -> f64 {
    let g1 = gamma
        .value_at(data, row, &EvalPoint::Override { tag: "d1", overrides: &[("d", 1.0)] })
        .unwrap();
    let g0 = gamma
        .value_at(data, row, &EvalPoint::Override { tag: "d0", overrides: &[("d", 0.0)] })
        .unwrap();
    let gobs = gamma.value_at(data, row, &EvalPoint::Plain).unwrap();
    let y = data.value("y", row).unwrap();
    (g1 - g0) - THETA0 + alpha(data, row) * (y - gobs)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, (var / n).sqrt())
}

/// Perturbing either nuisance away from the truth moves the population
/// moment only at second order: the finite-difference slope at zero is
/// statistically indistinguishable from zero.
#[test]
fn orthogonality_of_the_corrected_moment() {
    let n = 100_000;
    let gen = generate(&DesignSpec::AteLogistic { n, seed: 314, theta: THETA0 }).unwrap();
    let data = &gen.data;
    let gamma0 = ate_gamma_oracle(THETA0, 1.0);
    let alpha0 = ate_alpha_oracle(1.0);
    let eps = 0.05;

    // Bounded direction for the regression perturbation.
    let delta = |data: &autodml_core::data::Dataset, r: usize, ov: &[(&str, f64)]| -> f64 {
        let d = ov
            .iter()
            .find(|(c, _)| *c == "d")
            .map(|(_, v)| *v)
            .unwrap_or_else(|| data.value("d", r).unwrap());
        let z1 = data.value("z1", r).unwrap();
        z1.cos() + 0.5 * d
    };

    // gamma direction: psi(gamma0 + eps*delta) vs psi(gamma0 - eps*delta).
    let slopes_gamma: Vec<f64> = (0..n)
        .map(|r| {
            let mk = |sign: f64| {
                let g = ate_gamma_oracle(THETA0, 1.0);
                let gv = move |data: &autodml_core::data::Dataset,
                               row: usize,
                               ov: &[(&str, f64)]| {
                    (g.value)(data, row, ov) + sign * eps * delta(data, row, ov)
                };
                gv
            };
            let plus = mk(1.0);
            let minus = mk(-1.0);
            let eval = |gv: &dyn Fn(&autodml_core::data::Dataset, usize, &[(&str, f64)]) -> f64| {
                let g1 = gv(data, r, &[("d", 1.0)]);
                let g0 = gv(data, r, &[("d", 0.0)]);
                let gobs = gv(data, r, &[]);
                let y = data.value("y", r).unwrap();
                (g1 - g0) - THETA0 + alpha0(data, r) * (y - gobs)
            };
            (eval(&plus) - eval(&minus)) / (2.0 * eps)
        })
        .collect();
    let (mean_g, se_g) = mean_and_se(&slopes_gamma);
    assert!(
        mean_g.abs() <= 3.0 * se_g,
        "gamma-direction slope {mean_g} exceeds 3 x {se_g}"
    );

    // alpha direction: slope is delta(x) (y - gamma0(x)).
    let slopes_alpha: Vec<f64> = (0..n)
        .map(|r| {
            let y = data.value("y", r).unwrap();
            let gobs = (gamma0.value)(data, r, &[]);
            delta(data, r, &[]) * (y - gobs)
        })
        .collect();
    let (mean_a, se_a) = mean_and_se(&slopes_alpha);
    assert!(
        mean_a.abs() <= 3.0 * se_a,
        "alpha-direction slope {mean_a} exceeds 3 x {se_a}"
    );
}

/// E[psi(W, theta0, gamma, alpha)] = -E[(alpha-alpha0)(gamma-gamma0)]: with
/// one nuisance at the truth the moment is centered, and with both wrong the
/// product formula matches.
#[test]
fn double_robustness_product_identity() {
    let n = 100_000;
    let gen = generate(&DesignSpec::AteLogistic { n, seed: 2718, theta: THETA0 }).unwrap();
    let data = &gen.data;
    let gamma0 = ate_gamma_oracle(THETA0, 1.0);
    let gamma_bad = ate_gamma_oracle(THETA0, 1.5);
    let alpha0 = ate_alpha_oracle(1.0);
    let alpha_bad = ate_alpha_oracle(1.5);

    // gamma wrong, alpha true.
    let vals: Vec<f64> = (0..n)
        .map(|r| psi_row(data, r, gamma_bad.as_ref(), &|d, rr| alpha0(d, rr)))
        .collect();
    let (mean, se) = mean_and_se(&vals);
    assert!(mean.abs() <= 4.0 * se, "gamma-wrong bias {mean} vs se {se}");

    // alpha wrong, gamma true.
    let vals: Vec<f64> = (0..n)
        .map(|r| psi_row(data, r, gamma0.as_ref(), &|d, rr| alpha_bad(d, rr)))
        .collect();
    let (mean, se) = mean_and_se(&vals);
    assert!(mean.abs() <= 4.0 * se, "alpha-wrong bias {mean} vs se {se}");

    // Both wrong: matches -(alpha-alpha0)(gamma-gamma0) termwise in
    // expectation.
    let resid: Vec<f64> = (0..n)
        .map(|r| {
            let psi = psi_row(data, r, gamma_bad.as_ref(), &|d, rr| alpha_bad(d, rr));
            let prod = -(alpha_bad(data, r) - alpha0(data, r))
                * ((gamma_bad.value)(data, r, &[]) - (gamma0.value)(data, r, &[]));
            psi - prod
        })
        .collect();
    let (mean, se) = mean_and_se(&resid);
    assert!(
        mean.abs() <= 4.0 * se,
        "product identity residual {mean} vs se {se}"
    );
}

/// Full-pipeline Monte Carlo: the cross-fitted estimate is centered at the
/// true effect within Monte Carlo precision.
#[test]
fn ate_monte_carlo_mean_is_centered() {
    let reps = 200;
    let n = 2000;
    let estimates: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(909, rep as u64);
            let spec = DesignSpec::AteLogistic { n, seed, theta: THETA0 };
            let gen = generate(&spec).unwrap();
            let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
            let folds = make_folds(&gen.data, 5, derive_seed(seed, 1)).unwrap();
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
            report.theta_hat
        })
        .collect();
    let (mean, se) = mean_and_se(&estimates);
    assert!(
        (mean - THETA0).abs() <= 3.0 * se,
        "Monte Carlo mean {mean} vs truth {THETA0} (se {se})"
    );
}

/// Representer-error decay: the sample mean squared error of the learned
/// representer shrinks from n=500 to n=4000, by median over 20 seeds.
#[test]
fn riesz_error_decays_with_sample_size() {
    let mse_at = |n: usize, seed: u64| -> f64 {
        let spec = DesignSpec::RieszSparse { n, seed };
        let gen = generate(&spec).unwrap();
        let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
        let rows: Vec<usize> = (0..n).collect();
        let functional = MomentFunctional::AvgDerivative { wrt: "x1".into(), weight: None };
        let b = basis.matrix(&gen.data, &rows).unwrap();
        let m_rows = functional.moment_rows(basis.as_ref(), &gen.data, &rows).unwrap();
        let m_hat = autodml_core::functionals::column_means(&m_rows);
        let g_hat = b.gram(n as f64);
        let mats = autodml_core::riesz::MomentMatrices { b: &b, m_rows: &m_rows };
        let fit = autodml_core::riesz::fit_lasso_md(
            n,
            &m_hat,
            &g_hat,
            Some(&mats),
            basis.constant_first(),
            &LassoMdConfig::default(),
        )
        .unwrap();
        let alpha0 = gen.truth.alpha.as_ref().unwrap();
        let mut err = 0.0;
        for (k, &r) in rows.iter().enumerate() {
            let a_hat = dot(b.row(k), &fit.rho);
            let diff = a_hat - alpha0(&gen.data, r);
            err += diff * diff;
        }
        err / n as f64
    };
    let mut small: Vec<f64> = (0..20).map(|s| mse_at(500, derive_seed(77, s))).collect();
    let mut large: Vec<f64> = (0..20).map(|s| mse_at(4000, derive_seed(77, s))).collect();
    small.sort_by(|a, b| a.partial_cmp(b).unwrap());
    large.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_small = 0.5 * (small[9] + small[10]);
    let med_large = 0.5 * (large[9] + large[10]);
    assert!(
        med_large < med_small,
        "representer MSE should shrink: n=500 median {med_small}, n=4000 median {med_large}"
    );
}

/// The first-order conditions of the arm-split fit balance the dictionary
/// averages: treated-arm weights reproduce overall averages within the
/// effective thresholds.
#[test]
fn ate_balance_conditions_hold_per_fold() {
    let n = 800;
    let spec = DesignSpec::AteLogistic { n, seed: 551, theta: THETA0 };
    let gen = generate(&spec).unwrap();
    let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
    let folds = make_folds(&gen.data, 4, 9).unwrap();
    let report = estimate(
        &MomentFunctional::Ate { treatment: "d".into() },
        &basis,
        &gen.data,
        "y",
        &folds,
        &RieszSpec::LassoMd(LassoMdConfig::default()),
        &RegressionSpec::Ols,
    )
    .unwrap();
    let p = basis.p();
    let q_len = p / 2;
    let d_col = gen.data.column("d").unwrap();
    for fold in 0..folds.l {
        let fit = report.riesz_fits[fold].as_ref().expect("lasso fit");
        let train = folds.complement_rows(fold);
        let b = basis.matrix(&gen.data, &train).unwrap();
        let n_train = train.len() as f64;
        // Treated-arm weights: omega_i = q(z_i)' rho[0..q_len]; the treated
        // block of b holds d*q, so q(z_i) is recovered from the control
        // block's pattern by summing both arms.
        for j in 0..q_len {
            let mut resid = 0.0;
            for (k, &row) in train.iter().enumerate() {
                // q_j(z_i) = treated entry + control entry (exactly one is live).
                let qj = b[(k, j)] + b[(k, q_len + j)];
                let omega: f64 = (0..q_len).map(|l| (b[(k, l)] + b[(k, q_len + l)]) * fit.rho[l]).sum();
                resid += qj * (1.0 - d_col[row] * omega);
            }
            resid /= n_train;
            let threshold = fit.thresholds[j];
            assert!(
                resid.abs() <= threshold + 1e-6,
                "fold {fold} term {j}: balance residual {resid} vs threshold {threshold}"
            );
        }
    }
}

/// The symbolically derived composition-effect variance agrees with a
/// nonparametric bootstrap at desk scale.
#[test]
fn decomposition_variance_matches_bootstrap() {
    let n = 800;
    let spec = DesignSpec::AteLogistic { n, seed: 808, theta: THETA0 };
    let gen = generate(&spec).unwrap();
    let inner = autodml_core::dictionary::Dictionary::polynomial(&["z1", "z2"], 1).unwrap();
    let dict = autodml_core::dictionary::Dictionary::arm_split("d", &inner).unwrap();
    let basis: Arc<dyn Basis> = Arc::new(dict);
    let run = |data: &autodml_core::data::Dataset| -> autodml_core::error::Result<(f64, f64)> {
        let folds = make_folds(data, 4, 21)?;
        let dec = regression_decomposition(
            data,
            &basis,
            "y",
            "d",
            &folds,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
        )?;
        Ok((dec.composition.theta_star, dec.composition.std_error))
    };
    let (_, se_delta) = run(&gen.data).unwrap();
    let se_boot = oracle_bootstrap(
        |d| run(d).map(|(theta, _)| theta),
        &gen.data,
        400,
        artefact_seed(),
    )
    .unwrap();
    let rel = (se_delta - se_boot).abs() / se_boot;
    assert!(
        rel < 0.15,
        "composition SE: delta {se_delta} vs bootstrap {se_boot} (rel {rel:.3})"
    );
}

/// Full panel pipeline against the design's closed-form elasticity.
#[test]
fn panel_elasticity_recovers_truth() {
    use autodml_core::estimator::{transform_elasticity, ElasticityKind};
    use autodml_core::sim::panel_truth;
    let spec = DesignSpec::PanelSlopes { households: 300, periods: 4, seed: 606 };
    let gen = generate(&spec).unwrap();
    let base = autodml_core::dictionary::Dictionary::polynomial(&["d"], 1).unwrap();
    let basis: Arc<dyn Basis> =
        Arc::new(autodml_core::dictionary::build_panel_dictionary(&gen.data, &base).unwrap());
    let folds = make_folds(&gen.data, 5, 33).unwrap();
    let report = estimate(
        &MomentFunctional::AvgDerivative { wrt: "d".into(), weight: None },
        &basis,
        &gen.data,
        "y",
        &folds,
        &RieszSpec::LassoMd(LassoMdConfig::default()),
        &RegressionSpec::LassoMd(LassoMdConfig::default()),
    )
    .unwrap();
    assert!(report.clustered);
    let el = transform_elasticity(&report, &gen.data, "y", ElasticityKind::OwnPrice).unwrap();
    let (theta0, mean_y) = panel_truth();
    let truth_star = theta0 / mean_y - 1.0;
    assert!(
        (el.theta_star - truth_star).abs() <= 3.0 * el.std_error,
        "elasticity {:.4} vs truth {:.4} (se {:.4})",
        el.theta_star,
        truth_star,
        el.std_error
    );
}

fn artefact_seed() -> u64 {
    4242
}

/// The treated-effect transform's component covariance matches the explicit
/// binary-treatment forms entry by entry: Var(DY), Cov(DY,D) = (1-E[D])E[DY],
/// Var(D) = E[D](1-E[D]), and the influence cross moments.
#[test]
fn att_component_covariance_matches_explicit_forms() {
    use autodml_core::estimator::transform_att;
    let spec = DesignSpec::AteLogistic { n: 300, seed: 17, theta: THETA0 };
    let gen = generate(&spec).unwrap();
    let basis: Arc<dyn Basis> = Arc::new(spec.canonical_dictionary().unwrap());
    let folds = make_folds(&gen.data, 3, 2).unwrap();
    let report = estimate(
        &MomentFunctional::CrossAverage { treatment: "d".into() },
        &basis,
        &gen.data,
        "y",
        &folds,
        &RieszSpec::LassoMd(LassoMdConfig::default()),
        &RegressionSpec::Ols,
    )
    .unwrap();
    let att = transform_att(&report, &gen.data, "d").unwrap();

    // Rebuild the variance from the explicit entries.
    let d = gen.data.column("d").unwrap();
    let y = gen.data.column("y").unwrap();
    let n = gen.data.n_rows() as f64;
    let q: f64 = d.iter().sum::<f64>() / n;
    let dy: Vec<f64> = d.iter().zip(y).map(|(&a, &b)| a * b).collect();
    let m_dy: f64 = dy.iter().sum::<f64>() / n;
    let psi = &report.influence;
    let v11: f64 = psi.iter().map(|v| v * v).sum::<f64>() / n;
    let v12: f64 = psi.iter().zip(&dy).map(|(p, v)| p * v).sum::<f64>() / n;
    let v13: f64 = psi.iter().zip(d).map(|(p, v)| p * v).sum::<f64>() / n;
    let v22: f64 = dy.iter().map(|v| v * v).sum::<f64>() / n - m_dy * m_dy;
    let v23: f64 = (1.0 - q) * m_dy;
    let v33: f64 = (1.0 - q) * q;
    let h = &att.jacobian;
    let explicit = h[0] * (h[0] * v11 + h[1] * v12 + h[2] * v13)
        + h[1] * (h[0] * v12 + h[1] * v22 + h[2] * v23)
        + h[2] * (h[0] * v13 + h[1] * v23 + h[2] * v33);
    assert!(
        (att.variance - explicit).abs() <= 1e-10 * (1.0 + explicit.abs()),
        "transform variance {} vs explicit entries {}",
        att.variance,
        explicit
    );
}
