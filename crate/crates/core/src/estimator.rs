//! The cross-fitted debiased estimator: per fold, nuisances are trained on
//! the fold's complement and the orthogonal moment
//! m(W_i, gamma) + alpha(X_i)[Y_i - gamma(X_i)] is averaged over the held-out
//! fold. Includes the influence-function variance, its cluster-robust
//! version, and delta-method transforms (treated effect, decomposition,
//! elasticities).

use crate::data::{ClusterInfo, Dataset, FoldPlan};
use crate::dictionary::Basis;
use crate::error::{Error, Result};
use crate::functionals::{column_means, gram, MomentFunctional};
use crate::linalg::{dot, Mat};
use crate::regression::{
    fit_ols, fit_regression_lasso, EvalPoint, ExternalPredictions, GammaEval, OracleGamma,
    RegressionFit,
};
use crate::riesz::{
    fit_dantzig_md, fit_lasso_md, DantzigConfig, LassoMdConfig, MomentMatrices, RieszFit,
};
use serde::Serialize;
use std::sync::Arc;

/// How the regression nuisance is obtained for each fold.
#[derive(Clone)]
pub enum RegressionSpec {
    LassoMd(LassoMdConfig),
    Ols,
    /// Pre-computed predictions from an externally trained learner.
    External(Arc<ExternalPredictions>),
    /// Fixed function of the data (known-truth designs, tests).
    Oracle(Arc<OracleGamma>),
}

/// How the Riesz representer nuisance is obtained for each fold.
#[derive(Clone)]
pub enum RieszSpec {
    LassoMd(LassoMdConfig),
    Dantzig(DantzigConfig),
    /// Fixed function alpha(data, row).
    Oracle(Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync>),
    /// Forces the correction term to zero (plug-in estimator).
    Zero,
}

/// What to do when a fold's nuisance fits fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldFailurePolicy {
    /// Propagate the error (the default).
    #[default]
    HardError,
    /// Drop the fold's contribution: its rows enter the grand sum as zeros
    /// (the denominator stays n) and its influence values are the negative
    /// grand mean. The report is flagged.
    ExcludeFold,
}

#[derive(Debug, Clone, Default)]
pub struct EstimateOptions {
    pub on_fold_failure: FoldFailurePolicy,
}

/// Per-fold fitting diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FoldDiag {
    pub fold: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub riesz_r_l: Option<f64>,
    pub riesz_kkt: Option<f64>,
    pub riesz_outer_iters: Option<usize>,
    pub riesz_converged: Option<bool>,
    pub riesz_pseudo_inverse_init: Option<bool>,
    pub regression_kkt: Option<f64>,
    pub regression_converged: Option<bool>,
    pub regression_pseudo_inverse: Option<bool>,
    pub dict_sup_bound: Option<f64>,
    /// Set when the fold's fits failed and the fold was excluded.
    pub failure: Option<String>,
}

/// Cross-fitted estimate with influence values and per-fold diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub functional: String,
    pub theta_hat: f64,
    /// Estimated asymptotic variance of sqrt(n_eff) (theta_hat - theta0);
    /// cluster-aggregated when the data carry cluster ids.
    pub variance: f64,
    pub std_error: f64,
    pub n_rows: usize,
    pub n_eff: usize,
    pub l: usize,
    pub seed: u64,
    pub clustered: bool,
    pub flagged: bool,
    pub folds: Vec<FoldDiag>,
    #[serde(skip)]
    pub influence: Vec<f64>,
    #[serde(skip)]
    pub riesz_fits: Vec<Option<RieszFit>>,
}

/// theta-star = h(theta-tilde) transform with delta-method variance.
#[derive(Debug, Clone, Serialize)]
pub struct TransformReport {
    pub kind: String,
    pub theta_star: f64,
    pub variance: f64,
    pub std_error: f64,
    pub components: Vec<(String, f64)>,
    pub jacobian: Vec<f64>,
}

pub fn fit_regression_for_spec(
    spec: &RegressionSpec,
    data: &Dataset,
    rows: &[usize],
    basis: &Arc<dyn Basis>,
    outcome: &str,
) -> Result<Option<RegressionFit>> {
    Ok(match spec {
        RegressionSpec::LassoMd(cfg) => {
            Some(fit_regression_lasso(data, rows, basis, outcome, cfg)?)
        }
        RegressionSpec::Ols => Some(fit_ols(data, rows, basis, outcome)?),
        RegressionSpec::External(_) | RegressionSpec::Oracle(_) => None,
    })
}

pub fn gamma_handle_for_spec<'a>(
    spec: &'a RegressionSpec,
    fit: &'a Option<RegressionFit>,
) -> &'a dyn GammaEval {
    match spec {
        RegressionSpec::LassoMd(_) | RegressionSpec::Ols => {
            fit.as_ref().expect("internal fit present")
        }
        RegressionSpec::External(table) => table.as_ref(),
        RegressionSpec::Oracle(g) => g.as_ref(),
    }
}

/// Plug-in values m(W_i, gamma_hat) per row. Dictionary-linear fits go
/// through the per-term moment matrix (exact linearity); everything else is
/// evaluated pointwise.
fn plugin_values(
    functional: &MomentFunctional,
    spec: &RegressionSpec,
    fit: &Option<RegressionFit>,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    rows: &[usize],
) -> Result<Vec<f64>> {
    if let Some(f) = fit {
        if let Some(coef) = f.coefficients() {
            let m_rows = functional.moment_rows(basis.as_ref(), data, rows)?;
            let mut vals: Vec<f64> = (0..rows.len())
                .map(|k| dot(m_rows.row(k), coef))
                .collect();
            if let MomentFunctional::ResidualOnly { outcome } = functional {
                let y = data.column(outcome)?;
                for (v, &r) in vals.iter_mut().zip(rows) {
                    *v += y[r];
                }
            }
            return Ok(vals);
        }
    }
    functional.moment_of_regression(gamma_handle_for_spec(spec, fit), data, rows)
}

enum AlphaSource {
    Fit(RieszFit),
    Oracle(Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync>),
    Zero,
}

fn fit_riesz(
    spec: &RieszSpec,
    functional: &MomentFunctional,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    train: &[usize],
) -> Result<AlphaSource> {
    match spec {
        RieszSpec::LassoMd(cfg) => {
            functional.check_fitting_subset(data, train)?;
            let b = basis.matrix(data, train)?;
            let m_rows = functional.moment_rows(basis.as_ref(), data, train)?;
            let m_hat = column_means(&m_rows);
            let g_hat = b.gram(train.len() as f64);
            let mats = MomentMatrices { b: &b, m_rows: &m_rows };
            let fit = fit_lasso_md(
                train.len(),
                &m_hat,
                &g_hat,
                Some(&mats),
                basis.constant_first(),
                cfg,
            )?;
            Ok(AlphaSource::Fit(fit))
        }
        RieszSpec::Dantzig(cfg) => {
            let m_hat = functional
                .moment_of_dictionary(basis.as_ref(), data, train)?
                .m;
            let g_hat = gram(basis.as_ref(), data, train)?.g;
            let fit = fit_dantzig_md(train.len(), &m_hat, &g_hat, cfg)?;
            Ok(AlphaSource::Fit(fit))
        }
        RieszSpec::Oracle(f) => Ok(AlphaSource::Oracle(Arc::clone(f))),
        RieszSpec::Zero => Ok(AlphaSource::Zero),
    }
}

/// Cross-fitted debiased estimate of E[m(W, gamma0)].
pub fn estimate(
    functional: &MomentFunctional,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    outcome: &str,
    folds: &FoldPlan,
    riesz_spec: &RieszSpec,
    regression_spec: &RegressionSpec,
) -> Result<EstimateReport> {
    estimate_with_options(
        functional,
        basis,
        data,
        outcome,
        folds,
        riesz_spec,
        regression_spec,
        &EstimateOptions::default(),
    )
}

/// Cross-fitted estimate with an explicit fold-failure policy.
#[allow(clippy::too_many_arguments)]
pub fn estimate_with_options(
    functional: &MomentFunctional,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    outcome: &str,
    folds: &FoldPlan,
    riesz_spec: &RieszSpec,
    regression_spec: &RegressionSpec,
    options: &EstimateOptions,
) -> Result<EstimateReport> {
    functional.validate(data, basis.as_ref())?;
    let n = data.n_rows();
    if folds.assignment.len() != n {
        return Err(Error::InvalidInput("fold plan does not match dataset".into()));
    }
    let y = data.column(outcome)?.to_vec();
    let mut psi_raw = vec![0.0_f64; n];
    let mut fold_diags = Vec::with_capacity(folds.l);
    let mut riesz_fits: Vec<Option<RieszFit>> = Vec::with_capacity(folds.l);
    let mut flagged = false;
    let mut any_fold_ok = false;

    for fold in 0..folds.l {
        let train = folds.complement_rows(fold);
        let eval = folds.fold_rows(fold);
        if train.is_empty() || eval.is_empty() {
            return Err(Error::InvalidInput(format!("fold {fold} is empty")));
        }
        let attempt = (|| -> Result<(Vec<f64>, Option<RegressionFit>, AlphaSource)> {
            let reg_fit =
                fit_regression_for_spec(regression_spec, data, &train, basis, outcome)?;
            let alpha = fit_riesz(riesz_spec, functional, basis, data, &train)?;
            let m_vals =
                plugin_values(functional, regression_spec, &reg_fit, basis, data, &eval)?;
            // gamma_hat at the observed points.
            let gamma_vals: Vec<f64> = match &reg_fit {
                Some(f) if f.coefficients().is_some() => {
                    let b_eval = basis.matrix(data, &eval)?;
                    let coef = f.coefficients().unwrap();
                    (0..eval.len()).map(|k| dot(b_eval.row(k), coef)).collect()
                }
                _ => {
                    let g = gamma_handle_for_spec(regression_spec, &reg_fit);
                    eval.iter()
                        .map(|&r| g.value_at(data, r, &EvalPoint::Plain))
                        .collect::<Result<Vec<f64>>>()?
                }
            };
            let alpha_vals: Vec<f64> = match &alpha {
                AlphaSource::Fit(fit) => {
                    let b_eval = basis.matrix(data, &eval)?;
                    (0..eval.len())
                        .map(|k| dot(b_eval.row(k), &fit.rho))
                        .collect()
                }
                AlphaSource::Oracle(f) => eval.iter().map(|&r| f(data, r)).collect(),
                AlphaSource::Zero => vec![0.0; eval.len()],
            };
            let psi: Vec<f64> = eval
                .iter()
                .enumerate()
                .map(|(k, &r)| m_vals[k] + alpha_vals[k] * (y[r] - gamma_vals[k]))
                .collect();
            Ok((psi, reg_fit, alpha))
        })();

        match attempt {
            Ok((psi, reg_fit, alpha)) => {
                any_fold_ok = true;
                for (k, &r) in eval.iter().enumerate() {
                    psi_raw[r] = psi[k];
                }
                let (riesz_fit, sup) = match alpha {
                    AlphaSource::Fit(fit) => {
                        let sup = basis.sup_bound(data, &train).ok();
                        (Some(fit), sup)
                    }
                    _ => (None, None),
                };
                let reg_diag = reg_fit.as_ref().and_then(|f| f.diagnostics());
                if let Some(fit) = &riesz_fit {
                    flagged |= !fit.converged;
                }
                if let Some(d) = reg_diag {
                    flagged |= !d.converged;
                }
                fold_diags.push(FoldDiag {
                    fold,
                    n_train: train.len(),
                    n_eval: eval.len(),
                    riesz_r_l: riesz_fit.as_ref().map(|f| f.r_l_used),
                    riesz_kkt: riesz_fit.as_ref().map(|f| f.kkt_residual),
                    riesz_outer_iters: riesz_fit.as_ref().map(|f| f.outer_iters),
                    riesz_converged: riesz_fit.as_ref().map(|f| f.converged),
                    riesz_pseudo_inverse_init: riesz_fit.as_ref().map(|f| f.pseudo_inverse_init),
                    regression_kkt: reg_diag.map(|d| d.kkt_residual),
                    regression_converged: reg_diag.map(|d| d.converged),
                    regression_pseudo_inverse: reg_diag.map(|d| d.pseudo_inverse),
                    dict_sup_bound: sup,
                    failure: None,
                });
                riesz_fits.push(riesz_fit);
            }
            Err(err) => match options.on_fold_failure {
                FoldFailurePolicy::HardError => return Err(err),
                FoldFailurePolicy::ExcludeFold => {
                    flagged = true;
                    fold_diags.push(FoldDiag {
                        fold,
                        n_train: train.len(),
                        n_eval: eval.len(),
                        riesz_r_l: None,
                        riesz_kkt: None,
                        riesz_outer_iters: None,
                        riesz_converged: None,
                        riesz_pseudo_inverse_init: None,
                        regression_kkt: None,
                        regression_converged: None,
                        regression_pseudo_inverse: None,
                        dict_sup_bound: None,
                        failure: Some(err.to_string()),
                    });
                    riesz_fits.push(None);
                }
            },
        }
    }
    if !any_fold_ok {
        return Err(Error::Numerical("every fold failed to fit".into()));
    }

    // Grand mean over all rows in row order (not a mean of fold means).
    let theta_hat = psi_raw.iter().sum::<f64>() / n as f64;
    let influence: Vec<f64> = psi_raw.iter().map(|v| v - theta_hat).collect();
    let (variance, clustered) = match &data.cluster {
        Some(cl) => (variance_clustered(&influence, cl), true),
        None => (variance_iid(&influence), false),
    };
    let n_eff = n;
    let std_error = (variance / n_eff as f64).sqrt();
    Ok(EstimateReport {
        functional: functional.name().to_string(),
        theta_hat,
        variance,
        std_error,
        n_rows: n,
        n_eff,
        l: folds.l,
        seed: folds.seed,
        clustered,
        flagged,
        folds: fold_diags,
        influence,
        riesz_fits,
    })
}

/// Sample variance of the influence values (they are centered by
/// construction): (1/n) sum psi_i^2.
pub fn variance_iid(influence: &[f64]) -> f64 {
    influence.iter().map(|&v| v * v).sum::<f64>() / influence.len() as f64
}

/// Cluster-aggregated variance (1/n) sum_c (sum_{i in c} psi_i)^2, which sums
/// all within-cluster cross products. Reduces exactly to `variance_iid` when
/// every cluster is a singleton.
pub fn variance_clustered(influence: &[f64], clusters: &ClusterInfo) -> f64 {
    // Iterate clusters by first row so singleton clusters reproduce the plain
    // row-order sum bit for bit.
    let mut order: Vec<usize> = (0..clusters.members.len()).collect();
    order.sort_by_key(|&c| clusters.members[c][0]);
    let mut total = 0.0;
    for &c in &order {
        let members = &clusters.members[c];
        if members.len() == 1 {
            let v = influence[members[0]];
            total += v * v;
        } else {
            let s: f64 = members.iter().map(|&r| influence[r]).sum();
            total += s * s;
        }
    }
    total / influence.len() as f64
}

/// Cross products of per-row contribution vectors, cluster-aggregated when
/// cluster ids are present: the covariance block used by the delta method.
fn covariance_matrix(contribs: &[Vec<f64>], data: &Dataset) -> Mat {
    let k = contribs.len();
    let n = contribs[0].len();
    let mut v = Mat::zeros(k, k);
    match &data.cluster {
        Some(cl) => {
            for members in &cl.members {
                let mut sums = vec![0.0; k];
                for &r in members {
                    for (s, c) in sums.iter_mut().zip(contribs) {
                        *s += c[r];
                    }
                }
                for a in 0..k {
                    for b in 0..k {
                        v[(a, b)] += sums[a] * sums[b];
                    }
                }
            }
        }
        None => {
            for r in 0..n {
                for a in 0..k {
                    for b in 0..k {
                        v[(a, b)] += contribs[a][r] * contribs[b][r];
                    }
                }
            }
        }
    }
    for x in &mut v.data {
        *x /= n as f64;
    }
    v
}

fn delta_method(h: &[f64], v: &Mat) -> f64 {
    let hv = v.mul_vec(h);
    dot(h, &hv)
}

/// Treated-group response effect from a cross-average estimate:
/// theta-star = (mean(DY) - theta) / mean(D), with delta-method variance in
/// the components (theta, mean of d*y, mean of d).
pub fn transform_att(
    report: &EstimateReport,
    data: &Dataset,
    treatment: &str,
) -> Result<TransformReport> {
    let d = data.column(treatment)?;
    let y_col = report_outcome_column(data)?;
    let n = data.n_rows() as f64;
    let mean_d = d.iter().sum::<f64>() / n;
    if mean_d == 0.0 {
        return Err(Error::InvalidData("no treated units".into()));
    }
    let dy: Vec<f64> = d.iter().zip(y_col).map(|(&di, &yi)| di * yi).collect();
    let mean_dy = dy.iter().sum::<f64>() / n;
    let theta = report.theta_hat;
    let theta_star = (mean_dy - theta) / mean_d;
    let h = vec![
        -1.0 / mean_d,
        1.0 / mean_d,
        (theta - mean_dy) / (mean_d * mean_d),
    ];
    let contribs = vec![
        report.influence.clone(),
        dy.iter().map(|&v| v - mean_dy).collect(),
        d.iter().map(|&v| v - mean_d).collect(),
    ];
    let v = covariance_matrix(&contribs, data);
    let variance = delta_method(&h, &v);
    Ok(TransformReport {
        kind: "att".into(),
        theta_star,
        variance,
        std_error: (variance / n).sqrt(),
        components: vec![
            ("theta".into(), theta),
            ("mean_dy".into(), mean_dy),
            ("mean_d".into(), mean_d),
        ],
        jacobian: h,
    })
}

fn report_outcome_column(data: &Dataset) -> Result<&[f64]> {
    // Transforms need the outcome column; use the declared role when present,
    // else a column literally named "y".
    let name = data
        .roles
        .iter()
        .find(|(_, r)| *r == crate::data::Role::Outcome)
        .map(|(n, _)| n.clone())
        .unwrap_or_else(|| "y".to_string());
    data.column(&name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElasticityKind {
    Income,
    OwnPrice,
    CrossPrice,
}

impl ElasticityKind {
    fn shift(self) -> f64 {
        match self {
            ElasticityKind::Income | ElasticityKind::OwnPrice => 1.0,
            ElasticityKind::CrossPrice => 0.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ElasticityKind::Income => "elasticity_income",
            ElasticityKind::OwnPrice => "elasticity_own_price",
            ElasticityKind::CrossPrice => "elasticity_cross_price",
        }
    }
}

/// Elasticity transform of an average-derivative estimate:
/// theta / mean(Y) minus 1 for income/own-price, no shift for cross-price.
/// Covariance components are cluster-aggregated when clusters are present.
pub fn transform_elasticity(
    report: &EstimateReport,
    data: &Dataset,
    outcome: &str,
    kind: ElasticityKind,
) -> Result<TransformReport> {
    let y = data.column(outcome)?;
    let n = data.n_rows() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    if mean_y.abs() < 1e-300 {
        return Err(Error::InvalidData("zero mean outcome".into()));
    }
    let theta = report.theta_hat;
    let theta_star = theta / mean_y - kind.shift();
    let h = vec![1.0 / mean_y, -theta / (mean_y * mean_y)];
    let contribs = vec![
        report.influence.clone(),
        y.iter().map(|&v| v - mean_y).collect(),
    ];
    let v = covariance_matrix(&contribs, data);
    let variance = delta_method(&h, &v);
    Ok(TransformReport {
        kind: kind.name().into(),
        theta_star,
        variance,
        std_error: (variance / n).sqrt(),
        components: vec![("theta".into(), theta), ("mean_y".into(), mean_y)],
        jacobian: h,
    })
}

/// Both pieces of the two-group mean decomposition, from one cross-average
/// fit: the response effect (mean(DY) - theta)/mean(D) and the composition
/// effect theta/mean(D) - mean((1-D)Y)/mean(1-D). Their sum telescopes to the
/// raw group-mean difference.
pub struct DecompositionReport {
    pub cross_average: EstimateReport,
    pub response: TransformReport,
    pub composition: TransformReport,
}

pub fn regression_decomposition(
    data: &Dataset,
    basis: &Arc<dyn Basis>,
    outcome: &str,
    treatment: &str,
    folds: &FoldPlan,
    riesz_spec: &RieszSpec,
    regression_spec: &RegressionSpec,
) -> Result<DecompositionReport> {
    let functional = MomentFunctional::CrossAverage { treatment: treatment.to_string() };
    let report = estimate(
        &functional,
        basis,
        data,
        outcome,
        folds,
        riesz_spec,
        regression_spec,
    )?;
    let d = data.column(treatment)?;
    let y = data.column(outcome)?;
    let n = data.n_rows() as f64;
    let mean_d = d.iter().sum::<f64>() / n;
    if mean_d == 0.0 || mean_d == 1.0 {
        return Err(Error::InvalidData("decomposition needs both treatment arms".into()));
    }
    let response = transform_att_with_outcome(&report, data, treatment, outcome)?;

    let theta = report.theta_hat;
    let mean_y = y.iter().sum::<f64>() / n;
    let dy: Vec<f64> = d.iter().zip(y).map(|(&di, &yi)| di * yi).collect();
    let mean_dy = dy.iter().sum::<f64>() / n;
    let comp = theta / mean_d - (mean_y - mean_dy) / (1.0 - mean_d);
    // Jacobian of h(theta, E[DY], E[D], E[Y]) =
    //   theta/E[D] - (E[Y]-E[DY])/(1-E[D]).
    let h = vec![
        1.0 / mean_d,
        1.0 / (1.0 - mean_d),
        -theta / (mean_d * mean_d) - (mean_y - mean_dy) / ((1.0 - mean_d) * (1.0 - mean_d)),
        -1.0 / (1.0 - mean_d),
    ];
    let contribs = vec![
        report.influence.clone(),
        dy.iter().map(|&v| v - mean_dy).collect(),
        d.iter().map(|&v| v - mean_d).collect(),
        y.iter().map(|&v| v - mean_y).collect(),
    ];
    let v = covariance_matrix(&contribs, data);
    let variance = delta_method(&h, &v);
    let composition = TransformReport {
        kind: "composition".into(),
        theta_star: comp,
        variance,
        std_error: (variance / n).sqrt(),
        components: vec![
            ("theta".into(), theta),
            ("mean_dy".into(), mean_dy),
            ("mean_d".into(), mean_d),
            ("mean_y".into(), mean_y),
        ],
        jacobian: h,
    };
    Ok(DecompositionReport {
        cross_average: report,
        response,
        composition,
    })
}

fn transform_att_with_outcome(
    report: &EstimateReport,
    data: &Dataset,
    treatment: &str,
    outcome: &str,
) -> Result<TransformReport> {
    let d = data.column(treatment)?;
    let y = data.column(outcome)?;
    let n = data.n_rows() as f64;
    let mean_d = d.iter().sum::<f64>() / n;
    if mean_d == 0.0 {
        return Err(Error::InvalidData("no treated units".into()));
    }
    let dy: Vec<f64> = d.iter().zip(y).map(|(&di, &yi)| di * yi).collect();
    let mean_dy = dy.iter().sum::<f64>() / n;
    let theta = report.theta_hat;
    let theta_star = (mean_dy - theta) / mean_d;
    let h = vec![
        -1.0 / mean_d,
        1.0 / mean_d,
        (theta - mean_dy) / (mean_d * mean_d),
    ];
    let contribs = vec![
        report.influence.clone(),
        dy.iter().map(|&v| v - mean_dy).collect(),
        d.iter().map(|&v| v - mean_d).collect(),
    ];
    let v = covariance_matrix(&contribs, data);
    let variance = delta_method(&h, &v);
    Ok(TransformReport {
        kind: "response".into(),
        theta_star,
        variance,
        std_error: (variance / n).sqrt(),
        components: vec![
            ("theta".into(), theta),
            ("mean_dy".into(), mean_dy),
            ("mean_d".into(), mean_d),
        ],
        jacobian: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use crate::dictionary::Dictionary;

    fn oracle_gamma_zero() -> Arc<OracleGamma> {
        Arc::new(OracleGamma {
            value: Arc::new(|_d, _r, _ov| 0.0),
            partial: None,
        })
    }

    #[test]
    fn plugin_reduction_with_zero_alpha() {
        // ResidualOnly with alpha forced to zero: theta is the cross-fitted
        // mean of m(W, gamma) = mean of (y - gamma).
        let n = 24;
        let y: Vec<f64> = (0..n).map(|i| (i % 5) as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let data = Dataset::from_columns(vec![("y".into(), y.clone()), ("x".into(), x)]).unwrap();
        let basis: Arc<dyn Basis> = Arc::new(Dictionary::polynomial(&["x"], 1).unwrap());
        let folds = make_folds(&data, 3, 1).unwrap();
        let functional = MomentFunctional::ResidualOnly { outcome: "y".into() };
        let report = estimate(
            &functional,
            &basis,
            &data,
            "y",
            &folds,
            &RieszSpec::Zero,
            &RegressionSpec::Oracle(oracle_gamma_zero()),
        )
        .unwrap();
        let expected = y.iter().sum::<f64>() / n as f64;
        assert!((report.theta_hat - expected).abs() < 1e-12);
    }

    #[test]
    fn oracle_nuisances_match_independent_average() {
        // Synthetic treated/control rows with known gamma0 and alpha0; the
        // estimate must equal the orthogonal-moment average computed directly.
        let d = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let z = vec![0.5, -0.2, 1.0, 0.3, -0.7, 0.9, 0.0, 0.4];
        let y = vec![1.2, 0.1, 2.0, 0.5, -0.3, 1.1, 0.2, 0.9];
        let data = Dataset::from_columns(vec![
            ("d".into(), d.clone()),
            ("z".into(), z.clone()),
            ("y".into(), y.clone()),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let folds = make_folds(&data, 2, 9).unwrap();
        // gamma0(d, z) = 0.5 d + z; alpha0(d, z) = 2 d - 1 (a fixed bounded fn).
        let gamma = Arc::new(OracleGamma {
            value: Arc::new(|data: &Dataset, r: usize, ov: &[(&str, f64)]| {
                let get = |name: &str| {
                    ov.iter()
                        .find(|(c, _)| *c == name)
                        .map(|(_, v)| *v)
                        .unwrap_or_else(|| data.value(name, r).unwrap())
                };
                0.5 * get("d") + get("z")
            }),
            partial: None,
        });
        let alpha: Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync> =
            Arc::new(|data: &Dataset, r: usize| 2.0 * data.value("d", r).unwrap() - 1.0);
        let report = estimate(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &folds,
            &RieszSpec::Oracle(alpha),
            &RegressionSpec::Oracle(gamma),
        )
        .unwrap();
        // Independent computation from raw columns.
        let mut acc = 0.0;
        for i in 0..8 {
            let g1 = 0.5 + z[i];
            let g0 = z[i];
            let gobs = 0.5 * d[i] + z[i];
            let a = 2.0 * d[i] - 1.0;
            acc += (g1 - g0) + a * (y[i] - gobs);
        }
        let expected = acc / 8.0;
        assert!((report.theta_hat - expected).abs() < 1e-12);
    }

    #[test]
    fn influence_values_center_to_zero() {
        let d = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let z = vec![0.5, -0.2, 1.0, 0.3, -0.7, 0.9];
        let y = vec![1.2, 0.1, 2.0, 0.5, -0.3, 1.1];
        let data = Dataset::from_columns(vec![
            ("d".into(), d),
            ("z".into(), z),
            ("y".into(), y),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let folds = make_folds(&data, 2, 3).unwrap();
        let report = estimate(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &folds,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
        )
        .unwrap();
        let mean: f64 = report.influence.iter().sum::<f64>() / report.influence.len() as f64;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn fold_relabeling_is_bit_identical() {
        let n = 30;
        let d: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let z: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let y: Vec<f64> = (0..n).map(|i| z[i] + d[i] * 0.5 + ((i % 3) as f64 - 1.0)).collect();
        let data = Dataset::from_columns(vec![
            ("d".into(), d),
            ("z".into(), z),
            ("y".into(), y),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 2).unwrap()).unwrap(),
        );
        let plan = make_folds(&data, 3, 5).unwrap();
        // Relabel folds by a fixed permutation (same partition).
        let perm = [2u32, 0, 1];
        let relabeled = FoldPlan {
            l: plan.l,
            assignment: plan.assignment.iter().map(|&f| perm[f as usize]).collect(),
            seed: plan.seed,
        };
        let run = |p: &FoldPlan| {
            estimate(
                &MomentFunctional::Ate { treatment: "d".into() },
                &basis,
                &data,
                "y",
                p,
                &RieszSpec::LassoMd(LassoMdConfig::default()),
                &RegressionSpec::Ols,
            )
            .unwrap()
        };
        let a = run(&plan);
        let b = run(&relabeled);
        assert_eq!(a.theta_hat.to_bits(), b.theta_hat.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
    }

    #[test]
    fn external_predictions_drive_the_pipeline() {
        use crate::regression::ExternalPredictions;
        let d = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let z = vec![0.5, -0.2, 1.0, 0.3, -0.7, 0.9];
        let y = vec![1.2, 0.1, 2.0, 0.5, -0.3, 1.1];
        let data = Dataset::from_columns(vec![
            ("d".into(), d.clone()),
            ("z".into(), z.clone()),
            ("y".into(), y.clone()),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let folds = make_folds(&data, 2, 4).unwrap();
        // Predictions mimic gamma(d, z) = 0.5 d + z at the three points the
        // treatment functional needs.
        let mut table = ExternalPredictions::default();
        for i in 0..6 {
            table.insert(i, "plain", 0.5 * d[i] + z[i]);
            table.insert(i, "d1", 0.5 + z[i]);
            table.insert(i, "d0", z[i]);
        }
        let report = estimate(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &folds,
            &RieszSpec::Zero,
            &RegressionSpec::External(Arc::new(table)),
        )
        .unwrap();
        // With alpha = 0 the estimate is the plug-in mean of gamma(1,z) - gamma(0,z) = 0.5.
        assert!((report.theta_hat - 0.5).abs() < 1e-12);

        // A table missing a required point errors at estimation time.
        let mut partial = ExternalPredictions::default();
        for i in 0..6 {
            partial.insert(i, "plain", 0.0);
            partial.insert(i, "d1", 0.0);
        }
        let err = estimate(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &folds,
            &RieszSpec::Zero,
            &RegressionSpec::External(Arc::new(partial)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ExternalPredictionMissing { .. }));
    }

    #[test]
    fn clustered_variance_reductions() {
        // Singleton clusters: exact bitwise match with the plain variance.
        let psi = vec![0.5, -1.25, 2.0, 0.25, -1.5];
        let data = Dataset::from_columns(vec![
            ("y".into(), vec![0.0; 5]),
            ("id".into(), (0..5).map(|i| i as f64).collect()),
        ])
        .unwrap()
        .with_cluster("id")
        .unwrap();
        let v_cl = variance_clustered(&psi, data.cluster.as_ref().unwrap());
        let v_iid = variance_iid(&psi);
        assert_eq!(v_cl.to_bits(), v_iid.to_bits());

        // Two identical rows per cluster: exactly twice the deduplicated
        // plain variance.
        let psi_dup = vec![0.5, 0.5, -1.25, -1.25, 2.0, 2.0];
        let data_dup = Dataset::from_columns(vec![
            ("y".into(), vec![0.0; 6]),
            ("id".into(), vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]),
        ])
        .unwrap()
        .with_cluster("id")
        .unwrap();
        let v_dup = variance_clustered(&psi_dup, data_dup.cluster.as_ref().unwrap());
        let v_dedup = variance_iid(&[0.5, -1.25, 2.0]);
        assert!((v_dup - 2.0 * v_dedup).abs() < 1e-14);

        // Zero influence: zero variance.
        assert_eq!(
            variance_clustered(&[0.0; 6], data_dup.cluster.as_ref().unwrap()),
            0.0
        );
    }

    fn dummy_report(theta: f64, influence: Vec<f64>) -> EstimateReport {
        EstimateReport {
            functional: "cross_average".into(),
            theta_hat: theta,
            variance: 0.0,
            std_error: 0.0,
            n_rows: influence.len(),
            n_eff: influence.len(),
            l: 2,
            seed: 0,
            clustered: false,
            flagged: false,
            folds: vec![],
            influence,
            riesz_fits: vec![],
        }
    }

    #[test]
    fn att_transform_arithmetic() {
        // theta = 0, mean DY = 2, mean D = 0.5 -> theta-star = 4.
        let d = vec![1.0, 0.0, 1.0, 0.0];
        let y = vec![4.0, 7.0, 4.0, -1.0];
        let mut data = Dataset::from_columns(vec![
            ("d".into(), d),
            ("y".into(), y),
        ])
        .unwrap();
        data.roles = vec![("y".into(), crate::data::Role::Outcome)];
        let report = dummy_report(0.0, vec![0.0; 4]);
        let t = transform_att(&report, &data, "d").unwrap();
        assert!((t.theta_star - 4.0).abs() < 1e-14);
    }

    #[test]
    fn att_transform_full_treatment() {
        let d = vec![1.0, 1.0, 1.0];
        let y = vec![2.0, 4.0, 6.0];
        let mut data = Dataset::from_columns(vec![
            ("d".into(), d),
            ("y".into(), y),
        ])
        .unwrap();
        data.roles = vec![("y".into(), crate::data::Role::Outcome)];
        let report = dummy_report(1.0, vec![0.0; 3]);
        let t = transform_att(&report, &data, "d").unwrap();
        // mean Y - theta with E[D] = 1.
        assert!((t.theta_star - 3.0).abs() < 1e-14);
        assert!((t.jacobian[2] - (1.0 - 4.0)).abs() < 1e-14);
    }

    #[test]
    fn elasticity_transform_arithmetic() {
        let y = vec![2.0, 4.0];
        let data = Dataset::from_columns(vec![("y".into(), y)]).unwrap();
        // theta = -0.5 * mean(y) = -1.5 -> own-price elasticity -1.5.
        let report = dummy_report(-1.5, vec![0.0; 2]);
        let t = transform_elasticity(&report, &data, "y", ElasticityKind::OwnPrice).unwrap();
        assert!((t.theta_star - (-1.5)).abs() < 1e-14);
        // Cross-price with theta = 0 has no shift.
        let report0 = dummy_report(0.0, vec![0.0; 2]);
        let t0 = transform_elasticity(&report0, &data, "y", ElasticityKind::CrossPrice).unwrap();
        assert_eq!(t0.theta_star, 0.0);
    }

    #[test]
    fn decomposition_telescopes() {
        let n = 40;
        let d: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let z: Vec<f64> = (0..n).map(|i| ((i * 13 % 17) as f64 - 8.0) / 4.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.8 * d[i] + 0.5 * z[i] + ((i * 7 % 5) as f64 - 2.0) / 10.0)
            .collect();
        let data = Dataset::from_columns(vec![
            ("d".into(), d.clone()),
            ("z".into(), z),
            ("y".into(), y.clone()),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let folds = make_folds(&data, 4, 11).unwrap();
        let dec = regression_decomposition(
            &data,
            &basis,
            "y",
            "d",
            &folds,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
        )
        .unwrap();
        let mean_treated: f64 =
            y.iter().zip(&d).filter(|(_, &di)| di == 1.0).map(|(&yi, _)| yi).sum::<f64>()
                / d.iter().filter(|&&di| di == 1.0).count() as f64;
        let mean_control: f64 =
            y.iter().zip(&d).filter(|(_, &di)| di == 0.0).map(|(&yi, _)| yi).sum::<f64>()
                / d.iter().filter(|&&di| di == 0.0).count() as f64;
        let gap = mean_treated - mean_control;
        assert!(
            (dec.response.theta_star + dec.composition.theta_star - gap).abs() < 1e-10,
            "telescoping identity"
        );
    }

    #[test]
    fn decomposition_with_constant_oracle_regression() {
        // gamma0 = c known: composition = c - E[(1-D)Y]/E[1-D].
        let c = 1.5;
        let d = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let y = vec![2.0, 1.0, 3.0, 0.5, 2.5, 1.5];
        let data = Dataset::from_columns(vec![
            ("d".into(), d.clone()),
            ("z".into(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            ("y".into(), y.clone()),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let folds = make_folds(&data, 2, 1).unwrap();
        let gamma = Arc::new(OracleGamma {
            value: Arc::new(move |_d: &Dataset, _r: usize, _ov: &[(&str, f64)]| 1.5),
            partial: None,
        });
        let dec = regression_decomposition(
            &data,
            &basis,
            "y",
            "d",
            &folds,
            &RieszSpec::Zero,
            &RegressionSpec::Oracle(gamma),
        )
        .unwrap();
        // With alpha = 0 and gamma = c: theta = mean(D) * c.
        let mean_d = 0.5;
        let mean_ctl_y = (1.0 + 0.5 + 1.5) / 3.0;
        let expected_comp = (mean_d * c) / mean_d - mean_ctl_y;
        assert!((dec.composition.theta_star - expected_comp).abs() < 1e-12);
    }
}

#[cfg(test)]
mod fold_policy_tests {
    use super::*;
    use crate::data::{make_folds, FoldPlan};
    use crate::dictionary::Dictionary;

    fn lopsided_setup() -> (Dataset, Arc<dyn Basis>, FoldPlan) {
        // All control units live in fold 0, so fold 0's complement has no
        // treatment variation and its fits must fail.
        let d = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let z = vec![0.1, -0.4, 0.7, 0.2, -0.1, 0.5, -0.6, 0.3, 0.0];
        let y = vec![0.5, 0.2, 1.0, 1.5, 1.1, 1.9, 0.8, 1.4, 1.2];
        let data = Dataset::from_columns(vec![
            ("d".into(), d),
            ("z".into(), z),
            ("y".into(), y),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let plan = FoldPlan {
            l: 3,
            assignment: vec![0, 0, 0, 1, 1, 1, 2, 2, 2],
            seed: 0,
        };
        (data, basis, plan)
    }

    #[test]
    fn fold_failure_is_a_hard_error_by_default() {
        let (data, basis, plan) = lopsided_setup();
        let err = estimate(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &plan,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "no variation in treatment");
    }

    #[test]
    fn exclude_policy_drops_the_fold_and_flags_the_report() {
        let (data, basis, plan) = lopsided_setup();
        let opts = EstimateOptions { on_fold_failure: FoldFailurePolicy::ExcludeFold };
        let report = estimate_with_options(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &plan,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
            &opts,
        )
        .unwrap();
        assert!(report.flagged);
        assert!(report.folds[0].failure.is_some());
        assert!(report.folds[1].failure.is_none());
        // Excluded rows contribute zeros to the grand sum; the denominator
        // stays n, and the influence values still center to zero.
        let mean: f64 = report.influence.iter().sum::<f64>() / report.influence.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn all_folds_failing_is_an_error_even_when_excluding() {
        let d = vec![1.0, 1.0, 1.0, 1.0];
        let data = Dataset::from_columns(vec![
            ("d".into(), d),
            ("z".into(), vec![0.0, 0.1, 0.2, 0.3]),
            ("y".into(), vec![1.0, 2.0, 3.0, 4.0]),
        ])
        .unwrap();
        let basis: Arc<dyn Basis> = Arc::new(
            Dictionary::arm_split("d", &Dictionary::polynomial(&["z"], 1).unwrap()).unwrap(),
        );
        let plan = make_folds(&data, 2, 0).unwrap();
        let opts = EstimateOptions { on_fold_failure: FoldFailurePolicy::ExcludeFold };
        assert!(estimate_with_options(
            &MomentFunctional::Ate { treatment: "d".into() },
            &basis,
            &data,
            "y",
            &plan,
            &RieszSpec::LassoMd(LassoMdConfig::default()),
            &RegressionSpec::Ols,
            &opts,
        )
        .is_err());
    }
}
