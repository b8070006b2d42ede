//! Regression learners for E[Y|X]: the Lasso minimum-distance specialization
//! (moments y * b(x)), ordinary least squares, and an external
//! prediction-table contract for learners trained elsewhere.

use crate::data::Dataset;
use crate::dictionary::{Basis, Overrides};
use crate::error::{Error, Result};
use crate::functionals::column_means;
use crate::linalg::{dot, solve_sym_or_pinv};
use crate::riesz::{fit_lasso_md, LassoMdConfig, MomentMatrices, RieszFit};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

/// Where a regression is evaluated. External fits resolve the tag against
/// their prediction table; internal fits evaluate the dictionary.
pub enum EvalPoint<'a> {
    Plain,
    Override {
        tag: &'a str,
        overrides: &'a [(&'a str, f64)],
    },
    Partial {
        wrt: &'a str,
    },
}

/// Anything that can stand in for a fitted regression gamma-hat.
pub trait GammaEval: Send + Sync {
    fn value_at(&self, data: &Dataset, row: usize, point: &EvalPoint<'_>) -> Result<f64>;
}

/// Dictionary-linear regression gamma(x) = b(x)' coef.
#[derive(Clone)]
pub struct LinearGamma {
    pub basis: Arc<dyn Basis>,
    pub coef: Vec<f64>,
}

impl LinearGamma {
    pub fn new(basis: Arc<dyn Basis>, coef: Vec<f64>) -> Self {
        LinearGamma { basis, coef }
    }
}

impl GammaEval for LinearGamma {
    fn value_at(&self, data: &Dataset, row: usize, point: &EvalPoint<'_>) -> Result<f64> {
        let p = self.basis.p();
        let mut buf = vec![0.0; p];
        match point {
            EvalPoint::Plain => self.basis.eval_row(data, row, &mut buf)?,
            EvalPoint::Override { overrides, .. } => {
                let ov = Overrides::resolve(data, overrides)?;
                self.basis.eval_row_override(data, row, &ov, &mut buf)?;
            }
            EvalPoint::Partial { wrt } => self.basis.eval_row_partial(data, row, wrt, &mut buf)?,
        }
        Ok(dot(&buf, &self.coef))
    }
}

/// Closure-backed regression used for known-truth designs and tests.
pub struct OracleGamma {
    pub value: Arc<dyn Fn(&Dataset, usize, &[(&str, f64)]) -> f64 + Send + Sync>,
    pub partial: Option<Arc<dyn Fn(&Dataset, usize, &str) -> f64 + Send + Sync>>,
}

impl GammaEval for OracleGamma {
    fn value_at(&self, data: &Dataset, row: usize, point: &EvalPoint<'_>) -> Result<f64> {
        match point {
            EvalPoint::Plain => Ok((self.value)(data, row, &[])),
            EvalPoint::Override { overrides, .. } => Ok((self.value)(data, row, overrides)),
            EvalPoint::Partial { wrt } => match &self.partial {
                Some(f) => Ok(f(data, row, wrt)),
                None => Err(Error::InvalidInput(
                    "oracle regression has no derivative evaluator".into(),
                )),
            },
        }
    }
}

/// Predictions supplied by an externally trained learner, keyed by
/// (row id, point tag). Derivative requests use the tag `deriv_<column>`.
#[derive(Debug, Clone, Default)]
pub struct ExternalPredictions {
    values: HashMap<(usize, String), f64>,
}

impl ExternalPredictions {
    pub fn insert(&mut self, row: usize, tag: &str, value: f64) {
        self.values.insert((row, tag.to_string()), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn lookup(&self, row: usize, tag: &str) -> Result<f64> {
        self.values
            .get(&(row, tag.to_string()))
            .copied()
            .ok_or_else(|| Error::ExternalPredictionMissing {
                row,
                tag: tag.to_string(),
            })
    }
}

impl GammaEval for ExternalPredictions {
    fn value_at(&self, _data: &Dataset, row: usize, point: &EvalPoint<'_>) -> Result<f64> {
        match point {
            EvalPoint::Plain => self.lookup(row, "plain"),
            EvalPoint::Override { tag, .. } => self.lookup(row, tag),
            EvalPoint::Partial { wrt } => self.lookup(row, &format!("deriv_{wrt}")),
        }
    }
}

/// Load an external prediction table: CSV with columns row_id, point_tag,
/// value.
pub fn load_external_predictions<P: AsRef<Path>>(path: P) -> Result<ExternalPredictions> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let pos = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ri, ti, vi) = (pos("row_id")?, pos("point_tag")?, pos("value")?);
    let mut out = ExternalPredictions::default();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row: usize = record
            .get(ri)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::NonNumericCell { row: k + 1, column: "row_id".into() })?;
        let value: f64 = record
            .get(vi)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::NonNumericCell { row: k + 1, column: "value".into() })?;
        out.insert(row, record.get(ti).unwrap_or(""), value);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionKind {
    LassoMd,
    Ols,
    External,
}

/// Diagnostics of an internal linear fit.
#[derive(Debug, Clone)]
pub struct LinearFitDiag {
    pub r_l_used: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub pseudo_inverse: bool,
    pub outer_iters: usize,
}

/// A fitted regression: dictionary-linear (Lasso minimum distance or OLS) or
/// an external prediction table.
pub enum RegressionFit {
    Linear {
        kind: RegressionKind,
        gamma: LinearGamma,
        diag: LinearFitDiag,
    },
    External(ExternalPredictions),
}

impl RegressionFit {
    pub fn kind(&self) -> RegressionKind {
        match self {
            RegressionFit::Linear { kind, .. } => *kind,
            RegressionFit::External(_) => RegressionKind::External,
        }
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            RegressionFit::Linear { gamma, .. } => Some(&gamma.coef),
            RegressionFit::External(_) => None,
        }
    }

    pub fn diagnostics(&self) -> Option<&LinearFitDiag> {
        match self {
            RegressionFit::Linear { diag, .. } => Some(diag),
            RegressionFit::External(_) => None,
        }
    }
}

impl GammaEval for RegressionFit {
    fn value_at(&self, data: &Dataset, row: usize, point: &EvalPoint<'_>) -> Result<f64> {
        match self {
            RegressionFit::Linear { gamma, .. } => gamma.value_at(data, row, point),
            RegressionFit::External(table) => table.value_at(data, row, point),
        }
    }
}

/// Evaluate a fitted regression at a row (optionally at a counterfactual
/// point or as a partial derivative).
pub fn predict(fit: &RegressionFit, data: &Dataset, row: usize, point: &EvalPoint<'_>) -> Result<f64> {
    fit.value_at(data, row, point)
}

fn sorted_rows(rows: &[usize]) -> Vec<usize> {
    let mut v = rows.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Lasso minimum-distance regression: the Riesz fit specialized to moments
/// y * b(x).
pub fn fit_regression_lasso(
    data: &Dataset,
    rows: &[usize],
    basis: &Arc<dyn Basis>,
    outcome: &str,
    cfg: &LassoMdConfig,
) -> Result<RegressionFit> {
    let rows = sorted_rows(rows);
    let y = data.column(outcome)?;
    let b = basis.matrix(data, &rows)?;
    let mut m_rows = b.clone();
    for (k, &r) in rows.iter().enumerate() {
        let yi = y[r];
        for v in m_rows.row_mut(k) {
            *v *= yi;
        }
    }
    let m_hat = column_means(&m_rows);
    let g_hat = b.gram(rows.len() as f64);
    let mats = MomentMatrices { b: &b, m_rows: &m_rows };
    let fit: RieszFit = fit_lasso_md(
        rows.len(),
        &m_hat,
        &g_hat,
        Some(&mats),
        basis.constant_first(),
        cfg,
    )?;
    Ok(RegressionFit::Linear {
        kind: RegressionKind::LassoMd,
        gamma: LinearGamma::new(Arc::clone(basis), fit.rho),
        diag: LinearFitDiag {
            r_l_used: fit.r_l_used,
            kkt_residual: fit.kkt_residual,
            converged: fit.converged,
            pseudo_inverse: fit.pseudo_inverse_init,
            outer_iters: fit.outer_iters,
        },
    })
}

/// Ordinary least squares on the dictionary; pseudo-inverse (flagged) when
/// the Gram matrix is singular.
pub fn fit_ols(
    data: &Dataset,
    rows: &[usize],
    basis: &Arc<dyn Basis>,
    outcome: &str,
) -> Result<RegressionFit> {
    let rows = sorted_rows(rows);
    let y = data.column(outcome)?;
    let b = basis.matrix(data, &rows)?;
    let n = rows.len() as f64;
    let yv: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let mut m_hat = b.tr_mul_vec(&yv);
    for v in &mut m_hat {
        *v /= n;
    }
    let g_hat = b.gram(n);
    let (coef, used_pinv) = solve_sym_or_pinv(&g_hat, &m_hat);
    let resid: f64 = {
        let grho = g_hat.mul_vec(&coef);
        m_hat
            .iter()
            .zip(&grho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    Ok(RegressionFit::Linear {
        kind: RegressionKind::Ols,
        gamma: LinearGamma::new(Arc::clone(basis), coef),
        diag: LinearFitDiag {
            r_l_used: 0.0,
            kkt_residual: resid,
            converged: true,
            pseudo_inverse: used_pinv,
            outer_iters: 1,
        },
    })
}
