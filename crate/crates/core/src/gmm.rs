//! Debiased GMM for moment functions that may be nonlinear in the
//! regression: double-split Gateaux-derivative moments, per-equation Riesz
//! fits, debiased sample moments, quadratic-form minimization, and the
//! sandwich variance. Includes a binary-choice-under-uncertainty model and
//! the linear-functional reduction.

use crate::data::{Dataset, FoldPlan};
use crate::dictionary::{Basis, Overrides};
use crate::error::{Error, Result};
use crate::estimator::{fit_regression_for_spec, gamma_handle_for_spec, RegressionSpec, RieszSpec};
use crate::functionals::{column_means, MomentFunctional};
use crate::linalg::{dot, solve, sym_eigen, Mat};
use crate::numeric::{normal_cdf, normal_pdf};
use crate::regression::{EvalPoint, GammaEval, RegressionFit};
use crate::riesz::{fit_dantzig_md, fit_lasso_md, LearnerTag, MomentMatrices, RieszFit};
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Arc;

/// Moment model g(w, gamma, theta) with analytic theta-derivatives and
/// Gateaux derivatives in dictionary directions. Regression-dependent
/// quantities are exposed as per-row features so they can be cached across
/// optimizer iterations.
pub trait GmmModel: Send + Sync {
    /// Moment dimension r (>= theta dimension).
    fn r(&self) -> usize;
    fn theta_dim(&self) -> usize;
    /// Box constraints for the parameter search.
    fn theta_box(&self) -> (Vec<f64>, Vec<f64>);
    fn theta_start(&self) -> Vec<f64>;
    /// Outcome column used by the residual correction alpha (y - gamma).
    fn outcome(&self) -> &str;
    fn validate(&self, data: &Dataset, basis: &dyn Basis) -> Result<()>;
    /// Per-row regression features entering g (cached once per fit).
    fn gamma_features(&self, data: &Dataset, row: usize, gamma: &dyn GammaEval)
        -> Result<Vec<f64>>;
    /// g(w, gamma, theta) given cached features; fills r values.
    fn g_row(
        &self,
        data: &Dataset,
        row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()>;
    /// d g / d theta, row-major r x theta_dim.
    fn dg_dtheta_row(
        &self,
        data: &Dataset,
        row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()>;
    /// Diagnostic sup norms (max |H|, max |V|) over the given rows.
    fn sup_norms(&self, _data: &Dataset) -> Result<(f64, f64)> {
        Ok((f64::NAN, f64::NAN))
    }

    /// Gateaux derivative of each moment in each dictionary direction,
    /// row-major r x p.
    fn gateaux_row(
        &self,
        data: &Dataset,
        basis: &dyn Basis,
        row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()>;
}

/// g(w, gamma, theta) = m(w, gamma) - theta: the scalar linear-functional
/// case, which must reproduce the direct cross-fitted estimator.
pub struct LinearFunctionalModel {
    pub functional: MomentFunctional,
    pub outcome: String,
}

impl GmmModel for LinearFunctionalModel {
    fn r(&self) -> usize {
        1
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn theta_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1e12], vec![1e12])
    }

    fn theta_start(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn outcome(&self) -> &str {
        &self.outcome
    }

    fn validate(&self, data: &Dataset, basis: &dyn Basis) -> Result<()> {
        self.functional.validate(data, basis)
    }

    fn gamma_features(
        &self,
        data: &Dataset,
        row: usize,
        gamma: &dyn GammaEval,
    ) -> Result<Vec<f64>> {
        self.functional.moment_of_regression(gamma, data, &[row])
    }

    fn g_row(
        &self,
        _data: &Dataset,
        _row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = feats[0] - theta[0];
        Ok(())
    }

    fn dg_dtheta_row(
        &self,
        _data: &Dataset,
        _row: usize,
        _feats: &[f64],
        _theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = -1.0;
        Ok(())
    }

    fn gateaux_row(
        &self,
        data: &Dataset,
        basis: &dyn Basis,
        row: usize,
        _feats: &[f64],
        _theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let m = self.functional.moment_rows(basis, data, &[row])?;
        out.copy_from_slice(m.row(0));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Link {
    Probit,
    Logit,
}

impl Link {
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Link::Probit => normal_cdf(x),
            Link::Logit => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            Link::Probit => normal_pdf(x),
            Link::Logit => {
                let e = 1.0 / (1.0 + (-x).exp());
                e * (1.0 - e)
            }
        }
    }
}

/// Binary choice under uncertainty: the agent picks d in {0,1} from expected
/// utility v'beta + delta * [gamma(1,z) - gamma(0,z)] against an error with
/// known CDF. Moments are H(v,z) * (d - CDF(index)); theta = (beta, delta).
pub struct BinaryChoice {
    pub link: Link,
    /// Binary action column (also the first regression argument).
    pub choice: String,
    /// Outcome realized after the choice; the regression target.
    pub outcome: String,
    /// Columns of V (an intercept is prepended when `v_intercept`).
    pub regressors: Vec<String>,
    /// Columns of H (an intercept is prepended when `h_intercept`).
    pub instruments: Vec<String>,
    pub v_intercept: bool,
    pub h_intercept: bool,
    pub theta_abs_bound: f64,
}

impl BinaryChoice {
    fn v_len(&self) -> usize {
        self.regressors.len() + usize::from(self.v_intercept)
    }

    fn h_len(&self) -> usize {
        self.instruments.len() + usize::from(self.h_intercept)
    }

    fn v_row(&self, data: &Dataset, row: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        if self.v_intercept {
            out.push(1.0);
        }
        for c in &self.regressors {
            out.push(data.value(c, row)?);
        }
        Ok(())
    }

    fn h_row(&self, data: &Dataset, row: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        if self.h_intercept {
            out.push(1.0);
        }
        for c in &self.instruments {
            out.push(data.value(c, row)?);
        }
        Ok(())
    }

    fn index(&self, v: &[f64], delta_gamma: f64, theta: &[f64]) -> f64 {
        let beta = &theta[..self.v_len()];
        let delta = theta[self.v_len()];
        dot(v, beta) + delta * delta_gamma
    }
}

impl GmmModel for BinaryChoice {
    fn r(&self) -> usize {
        self.h_len()
    }

    fn theta_dim(&self) -> usize {
        self.v_len() + 1
    }

    fn theta_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.theta_dim();
        (vec![-self.theta_abs_bound; d], vec![self.theta_abs_bound; d])
    }

    fn theta_start(&self) -> Vec<f64> {
        vec![0.0; self.theta_dim()]
    }

    fn outcome(&self) -> &str {
        &self.outcome
    }

    fn validate(&self, data: &Dataset, basis: &dyn Basis) -> Result<()> {
        if self.r() < self.theta_dim() {
            return Err(Error::InvalidInput(format!(
                "moment dimension {} below parameter dimension {}",
                self.r(),
                self.theta_dim()
            )));
        }
        data.column(&self.outcome)?;
        for c in self.regressors.iter().chain(&self.instruments) {
            data.column(c)?;
        }
        for col in basis.required_columns() {
            data.column(&col)?;
        }
        for &v in data.column(&self.choice)? {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidData(format!(
                    "choice column {} must be binary",
                    self.choice
                )));
            }
        }
        Ok(())
    }

    fn sup_norms(&self, data: &Dataset) -> Result<(f64, f64)> {
        let mut h = Vec::new();
        let mut v = Vec::new();
        let mut max_h = 0.0_f64;
        let mut max_v = 0.0_f64;
        for row in 0..data.n_rows() {
            self.h_row(data, row, &mut h)?;
            self.v_row(data, row, &mut v)?;
            for &x in &h {
                max_h = max_h.max(x.abs());
            }
            for &x in &v {
                max_v = max_v.max(x.abs());
            }
        }
        Ok((max_h, max_v))
    }

    fn gamma_features(
        &self,
        data: &Dataset,
        row: usize,
        gamma: &dyn GammaEval,
    ) -> Result<Vec<f64>> {
        let choice = self.choice.as_str();
        let g1 = gamma.value_at(
            data,
            row,
            &EvalPoint::Override { tag: "d1", overrides: &[(choice, 1.0)] },
        )?;
        let g0 = gamma.value_at(
            data,
            row,
            &EvalPoint::Override { tag: "d0", overrides: &[(choice, 0.0)] },
        )?;
        Ok(vec![g1 - g0])
    }

    fn g_row(
        &self,
        data: &Dataset,
        row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mut v = Vec::new();
        let mut h = Vec::new();
        self.v_row(data, row, &mut v)?;
        self.h_row(data, row, &mut h)?;
        let d = data.value(&self.choice, row)?;
        let resid = d - self.link.cdf(self.index(&v, feats[0], theta));
        for (o, &hk) in out.iter_mut().zip(&h) {
            *o = hk * resid;
        }
        Ok(())
    }

    fn dg_dtheta_row(
        &self,
        data: &Dataset,
        row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mut v = Vec::new();
        let mut h = Vec::new();
        self.v_row(data, row, &mut v)?;
        self.h_row(data, row, &mut h)?;
        let dens = self.link.pdf(self.index(&v, feats[0], theta));
        let dt = self.theta_dim();
        for (k, &hk) in h.iter().enumerate() {
            let base = k * dt;
            for (j, &vj) in v.iter().enumerate() {
                out[base + j] = -hk * dens * vj;
            }
            out[base + dt - 1] = -hk * dens * feats[0];
        }
        Ok(())
    }

    fn gateaux_row(
        &self,
        data: &Dataset,
        basis: &dyn Basis,
        row: usize,
        feats: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let p = basis.p();
        let mut v = Vec::new();
        let mut h = Vec::new();
        self.v_row(data, row, &mut v)?;
        self.h_row(data, row, &mut h)?;
        let delta = theta[self.v_len()];
        let dens = self.link.pdf(self.index(&v, feats[0], theta));
        let ov1 = Overrides::resolve(data, &[(self.choice.as_str(), 1.0)])?;
        let ov0 = Overrides::resolve(data, &[(self.choice.as_str(), 0.0)])?;
        let mut b1 = vec![0.0; p];
        let mut b0 = vec![0.0; p];
        basis.eval_row_override(data, row, &ov1, &mut b1)?;
        basis.eval_row_override(data, row, &ov0, &mut b0)?;
        for (k, &hk) in h.iter().enumerate() {
            let scale = -hk * dens * delta;
            let base = k * p;
            for j in 0..p {
                out[base + j] = scale * (b1[j] - b0[j]);
            }
        }
        Ok(())
    }
}

/// Options for the debiased GMM fit.
#[derive(Clone)]
pub struct GmmOptions {
    /// Weighting matrix; identity when absent.
    pub weighting: Option<Mat>,
    /// Re-run the Gateaux moments once using the first debiased estimate as
    /// the initial parameter.
    pub iterate_initial: bool,
    pub max_newton_iters: usize,
    pub newton_tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            weighting: None,
            iterate_initial: false,
            max_newton_iters: 200,
            newton_tol: 1e-11,
        }
    }
}

/// Fitted debiased GMM estimate with the sandwich variance.
#[derive(Debug, Clone, Serialize)]
pub struct GmmReport {
    pub theta_hat: Vec<f64>,
    /// Sandwich asymptotic variance of sqrt(n) (theta_hat - theta0).
    pub v_hat: Mat,
    pub std_errors: Vec<f64>,
    pub jacobian: Mat,
    pub psi_outer: Mat,
    pub initial_thetas: Vec<(usize, usize, Vec<f64>)>,
    pub n_rows: usize,
    pub l: usize,
    pub flagged: bool,
    pub grad_norm: f64,
    /// Diagnostic sup norms of the instrument and regressor rows (reported,
    /// never enforced).
    pub max_abs_instrument: f64,
    pub max_abs_regressor: f64,
    #[serde(skip)]
    pub riesz_fits: Vec<Vec<RieszFit>>,
    #[serde(skip)]
    pub influence: Vec<Vec<f64>>,
}

fn identity_or(weighting: &Option<Mat>, r: usize) -> Result<Mat> {
    match weighting {
        Some(m) => {
            if m.rows != r || m.cols != r {
                return Err(Error::InvalidInput("weighting matrix dimension mismatch".into()));
            }
            if m.asymmetry() > 1e-10 {
                return Err(Error::InvalidInput("weighting matrix must be symmetric".into()));
            }
            Ok(m.clone())
        }
        None => Ok(Mat::identity(r)),
    }
}

/// Damped Gauss-Newton minimization of psi(theta)' Upsilon psi(theta) with
/// box projection; golden-section fallback for one-dimensional problems.
fn minimize_quadratic_form(
    psi_fn: &dyn Fn(&[f64], &mut [f64]) -> Result<()>,
    jac_fn: &dyn Fn(&[f64], &mut Mat) -> Result<()>,
    upsilon: &Mat,
    start: Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64, bool)> {
    let r = upsilon.rows;
    let d = start.len();
    let mut theta: Vec<f64> = start
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&t, (&lo, &hi))| t.clamp(lo, hi))
        .collect();
    let mut psi = vec![0.0; r];
    let mut jac = Mat::zeros(r, d);
    let q_of = |psi: &[f64]| -> f64 {
        let upsi = upsilon.mul_vec(psi);
        dot(psi, &upsi)
    };
    psi_fn(&theta, &mut psi)?;
    let mut q = q_of(&psi);
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iters {
        jac_fn(&theta, &mut jac)?;
        let upsi = upsilon.mul_vec(&psi);
        let grad: Vec<f64> = (0..d)
            .map(|j| 2.0 * (0..r).map(|k| jac[(k, j)] * upsi[k]).sum::<f64>())
            .collect();
        grad_norm = grad.iter().fold(0.0_f64, |m, &g| m.max(g.abs()));
        if grad_norm <= tol * (1.0 + q.abs()) {
            converged = true;
            break;
        }
        let uj = upsilon.matmul(&jac);
        let mut hess = Mat::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for k in 0..r {
                    s += jac[(k, a)] * uj[(k, b)];
                }
                hess[(a, b)] = 2.0 * s;
            }
        }
        let mut mu = 0.0;
        let step = loop {
            let mut damped = hess.clone();
            if mu > 0.0 {
                for i in 0..d {
                    damped[(i, i)] += mu;
                }
            }
            match solve(&damped, &grad) {
                Ok(s) => break s,
                Err(_) => {
                    mu = if mu == 0.0 { 1e-8 * (1.0 + hess.max_abs()) } else { mu * 10.0 };
                    if mu > 1e12 * (1.0 + hess.max_abs()) {
                        return Err(Error::Numerical("singular Gauss-Newton system".into()));
                    }
                }
            }
        };
        let mut t = 1.0;
        let mut improved = false;
        let mut cand_psi = vec![0.0; r];
        for _ in 0..60 {
            let cand: Vec<f64> = theta
                .iter()
                .enumerate()
                .map(|(j, &v)| (v - t * step[j]).clamp(lower[j], upper[j]))
                .collect();
            psi_fn(&cand, &mut cand_psi)?;
            let qc = q_of(&cand_psi);
            if qc <= q - 1e-12 * (1.0 + q.abs()) || (qc <= q && t >= 1.0) {
                let move_size = cand
                    .iter()
                    .zip(&theta)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max);
                theta = cand;
                psi.copy_from_slice(&cand_psi);
                q = qc;
                improved = true;
                if move_size < 1e-15 {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !improved || converged {
            break;
        }
    }
    if !converged && d == 1 && lower[0].is_finite() && upper[0].is_finite() {
        let gr = (5.0_f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lower[0], upper[0]);
        let mut buf = vec![0.0; r];
        let eval = |x: f64, buf: &mut [f64]| -> Result<f64> {
            psi_fn(&[x], buf)?;
            Ok(q_of(buf))
        };
        let mut c = b - gr * (b - a);
        let mut dpt = a + gr * (b - a);
        let mut fc = eval(c, &mut buf)?;
        let mut fd = eval(dpt, &mut buf)?;
        for _ in 0..200 {
            if fc < fd {
                b = dpt;
                dpt = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = eval(c, &mut buf)?;
            } else {
                a = c;
                c = dpt;
                fc = fd;
                dpt = a + gr * (b - a);
                fd = eval(dpt, &mut buf)?;
            }
            if (b - a).abs() < 1e-12 * (1.0 + a.abs()) {
                break;
            }
        }
        let x = 0.5 * (a + b);
        psi_fn(&[x], &mut psi)?;
        if q_of(&psi) <= q {
            theta = vec![x];
            converged = true;
        }
    }
    Ok((theta, grad_norm, converged))
}

/// Plug-in GMM estimates on the double complements: for every unordered fold
/// pair, the regression trained off both folds and the parameter minimizing
/// the unweighted quadratic form of the plain sample moments.
pub struct InitialEstimates {
    pub pairs: Vec<(usize, usize)>,
    pub thetas: Vec<Vec<f64>>,
    pub gamma_fits: Vec<Option<RegressionFit>>,
    pub flagged: bool,
}

impl InitialEstimates {
    fn index_of(&self, a: usize, b: usize) -> Result<usize> {
        let key = (a.min(b), a.max(b));
        self.pairs
            .iter()
            .position(|&pr| pr == key)
            .ok_or_else(|| Error::InvalidInput("missing initial-estimator pair".into()))
    }
}

pub fn initial_estimators(
    model: &dyn GmmModel,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    folds: &FoldPlan,
    regression_spec: &RegressionSpec,
    opts: &GmmOptions,
) -> Result<InitialEstimates> {
    if folds.l < 3 {
        return Err(Error::InvalidInput(
            "need L >= 3 folds for the double split".into(),
        ));
    }
    let mut pairs = Vec::new();
    for a in 0..folds.l {
        for b in (a + 1)..folds.l {
            pairs.push((a, b));
        }
    }
    let r = model.r();
    let d = model.theta_dim();
    let (lower, upper) = model.theta_box();
    let mut thetas = Vec::with_capacity(pairs.len());
    let mut gamma_fits = Vec::with_capacity(pairs.len());
    let mut flagged = false;
    for &(a, b) in &pairs {
        let rows = folds.double_complement_rows(a, b);
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!(
                "folds {a} and {b} leave no training data"
            )));
        }
        let fit = fit_regression_for_spec(regression_spec, data, &rows, basis, model.outcome())?;
        let gamma = gamma_handle_for_spec(regression_spec, &fit);
        let feats: Vec<Vec<f64>> = rows
            .iter()
            .map(|&row| model.gamma_features(data, row, gamma))
            .collect::<Result<Vec<_>>>()?;
        let n = rows.len() as f64;
        let psi_fn = |theta: &[f64], out: &mut [f64]| -> Result<()> {
            out.iter_mut().for_each(|v| *v = 0.0);
            let mut buf = vec![0.0; r];
            for (k, &row) in rows.iter().enumerate() {
                model.g_row(data, row, &feats[k], theta, &mut buf)?;
                for (o, &v) in out.iter_mut().zip(&buf) {
                    *o += v / n;
                }
            }
            Ok(())
        };
        let jac_fn = |theta: &[f64], out: &mut Mat| -> Result<()> {
            out.data.iter_mut().for_each(|v| *v = 0.0);
            let mut buf = vec![0.0; r * d];
            for (k, &row) in rows.iter().enumerate() {
                model.dg_dtheta_row(data, row, &feats[k], theta, &mut buf)?;
                for kk in 0..r {
                    for jj in 0..d {
                        out[(kk, jj)] += buf[kk * d + jj] / n;
                    }
                }
            }
            Ok(())
        };
        let upsilon = Mat::identity(r);
        let (theta, _gn, conv) = minimize_quadratic_form(
            &psi_fn,
            &jac_fn,
            &upsilon,
            model.theta_start(),
            &lower,
            &upper,
            opts.max_newton_iters,
            opts.newton_tol,
        )?;
        flagged |= !conv;
        thetas.push(theta);
        gamma_fits.push(fit);
    }
    Ok(InitialEstimates {
        pairs,
        thetas,
        gamma_fits,
        flagged,
    })
}

/// Gateaux-derivative moment vectors for one fold: for every other fold, the
/// derivative of each moment in each dictionary direction is evaluated at
/// that pair's initial estimators and averaged over the fold complement.
/// Returns per-equation (moment vector, per-row moment matrix in ascending
/// complement-row order).
pub fn gateaux_moments(
    model: &dyn GmmModel,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    folds: &FoldPlan,
    fold: usize,
    init: &InitialEstimates,
    theta_override: Option<&[f64]>,
    regression_spec: &RegressionSpec,
) -> Result<(Vec<Vec<f64>>, Vec<Mat>)> {
    let r = model.r();
    let p = basis.p();
    let complement = folds.complement_rows(fold);
    let pos_of: HashMap<usize, usize> = complement
        .iter()
        .enumerate()
        .map(|(k, &row)| (row, k))
        .collect();
    let mut m_rows: Vec<Mat> = (0..r).map(|_| Mat::zeros(complement.len(), p)).collect();
    let mut buf = vec![0.0; r * p];
    for other in 0..folds.l {
        if other == fold {
            continue;
        }
        let idx = init.index_of(fold, other)?;
        let theta_tilde: &[f64] = match theta_override {
            Some(t) => t,
            None => &init.thetas[idx],
        };
        let gamma = gamma_handle_for_spec(regression_spec, &init.gamma_fits[idx]);
        for &row in &folds.fold_rows(other) {
            let feats = model.gamma_features(data, row, gamma)?;
            model.gateaux_row(data, basis.as_ref(), row, &feats, theta_tilde, &mut buf)?;
            let k = pos_of[&row];
            for eq in 0..r {
                m_rows[eq]
                    .row_mut(k)
                    .copy_from_slice(&buf[eq * p..(eq + 1) * p]);
            }
        }
    }
    let m_vecs: Vec<Vec<f64>> = m_rows.iter().map(column_means).collect();
    Ok((m_vecs, m_rows))
}

/// Debiased GMM: double-split Gateaux moments, per-equation Riesz fits,
/// quadratic-form minimization of the corrected sample moments, and the
/// sandwich variance.
pub fn fit_gmm(
    model: &dyn GmmModel,
    basis: &Arc<dyn Basis>,
    data: &Dataset,
    folds: &FoldPlan,
    riesz_spec: &RieszSpec,
    regression_spec: &RegressionSpec,
    opts: &GmmOptions,
) -> Result<GmmReport> {
    model.validate(data, basis.as_ref())?;
    let n = data.n_rows();
    let r = model.r();
    let d = model.theta_dim();
    let upsilon = identity_or(&opts.weighting, r)?;
    let init = initial_estimators(model, basis, data, folds, regression_spec, opts)?;

    let y = data.column(model.outcome())?.to_vec();
    let passes = if opts.iterate_initial { 2 } else { 1 };
    let mut theta_override: Option<Vec<f64>> = None;
    let mut report: Option<GmmReport> = None;
    for _pass in 0..passes {
        let mut flagged = init.flagged;
        let mut corr = vec![vec![0.0; r]; n];
        let mut feats_all: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut riesz_fits_all: Vec<Vec<RieszFit>> = Vec::with_capacity(folds.l);
        for fold in 0..folds.l {
            let train = folds.complement_rows(fold);
            let eval = folds.fold_rows(fold);
            let (m_vecs, m_rows) = gateaux_moments(
                model,
                basis,
                data,
                folds,
                fold,
                &init,
                theta_override.as_deref(),
                regression_spec,
            )?;
            let b_train = basis.matrix(data, &train)?;
            let g_hat = b_train.gram(train.len() as f64);
            let mut fold_fits = Vec::with_capacity(r);
            for eq in 0..r {
                let fit = match riesz_spec {
                    RieszSpec::LassoMd(cfg) => {
                        let mats = MomentMatrices { b: &b_train, m_rows: &m_rows[eq] };
                        fit_lasso_md(
                            train.len(),
                            &m_vecs[eq],
                            &g_hat,
                            Some(&mats),
                            basis.constant_first(),
                            cfg,
                        )?
                    }
                    RieszSpec::Dantzig(cfg) => {
                        fit_dantzig_md(train.len(), &m_vecs[eq], &g_hat, cfg)?
                    }
                    RieszSpec::Zero => RieszFit {
                        rho: vec![0.0; basis.p()],
                        r_l_used: 0.0,
                        d_hat: vec![1.0; basis.p()],
                        thresholds: vec![0.0; basis.p()],
                        outer_iters: 0,
                        kkt_residual: 0.0,
                        converged: true,
                        learner: LearnerTag::LassoMd,
                        pseudo_inverse_init: false,
                        sweeps_last: 0,
                    },
                    RieszSpec::Oracle(_) => {
                        return Err(Error::InvalidInput(
                            "oracle Riesz spec is not supported for GMM fits".into(),
                        ))
                    }
                };
                flagged |= !fit.converged;
                fold_fits.push(fit);
            }
            let reg_fit =
                fit_regression_for_spec(regression_spec, data, &train, basis, model.outcome())?;
            let gamma = gamma_handle_for_spec(regression_spec, &reg_fit);
            let b_eval = basis.matrix(data, &eval)?;
            for (k, &row) in eval.iter().enumerate() {
                let feats = model.gamma_features(data, row, gamma)?;
                let gamma_obs = gamma.value_at(data, row, &EvalPoint::Plain)?;
                let resid = y[row] - gamma_obs;
                for eq in 0..r {
                    corr[row][eq] = dot(b_eval.row(k), &fold_fits[eq].rho) * resid;
                }
                feats_all[row] = feats;
            }
            riesz_fits_all.push(fold_fits);
        }

        // The correction term does not depend on theta; fold it into the
        // sample moments once.
        let corr_mean: Vec<f64> = (0..r)
            .map(|eq| corr.iter().map(|c| c[eq]).sum::<f64>() / n as f64)
            .collect();
        let nf = n as f64;
        let psi_fn = |theta: &[f64], out: &mut [f64]| -> Result<()> {
            out.iter_mut().for_each(|v| *v = 0.0);
            let mut buf = vec![0.0; r];
            for row in 0..n {
                model.g_row(data, row, &feats_all[row], theta, &mut buf)?;
                for (o, &v) in out.iter_mut().zip(&buf) {
                    *o += v / nf;
                }
            }
            for (o, &c) in out.iter_mut().zip(&corr_mean) {
                *o += c;
            }
            Ok(())
        };
        let jac_fn = |theta: &[f64], out: &mut Mat| -> Result<()> {
            out.data.iter_mut().for_each(|v| *v = 0.0);
            let mut buf = vec![0.0; r * d];
            for row in 0..n {
                model.dg_dtheta_row(data, row, &feats_all[row], theta, &mut buf)?;
                for kk in 0..r {
                    for jj in 0..d {
                        out[(kk, jj)] += buf[kk * d + jj] / nf;
                    }
                }
            }
            Ok(())
        };
        let (lower, upper) = model.theta_box();
        let start = {
            let mut s = vec![0.0; d];
            for th in &init.thetas {
                for (a, &b) in s.iter_mut().zip(th) {
                    *a += b / init.thetas.len() as f64;
                }
            }
            s
        };
        let (theta_hat, grad_norm, conv) = minimize_quadratic_form(
            &psi_fn,
            &jac_fn,
            &upsilon,
            start,
            &lower,
            &upper,
            opts.max_newton_iters,
            opts.newton_tol,
        )?;
        flagged |= !conv;

        let mut g_bar = Mat::zeros(r, d);
        jac_fn(&theta_hat, &mut g_bar)?;
        let mut psi_outer = Mat::zeros(r, r);
        let mut influence: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut buf = vec![0.0; r];
        for row in 0..n {
            model.g_row(data, row, &feats_all[row], &theta_hat, &mut buf)?;
            let psi_i: Vec<f64> = buf
                .iter()
                .zip(&corr[row])
                .map(|(&g, &c)| g + c)
                .collect();
            for a in 0..r {
                for b in 0..r {
                    psi_outer[(a, b)] += psi_i[a] * psi_i[b] / nf;
                }
            }
            influence.push(psi_i);
        }
        let v_hat = sandwich_variance(&g_bar, &upsilon, &psi_outer)?;
        let std_errors: Vec<f64> = (0..d).map(|j| (v_hat[(j, j)] / nf).sqrt()).collect();
        let (max_abs_instrument, max_abs_regressor) = model.sup_norms(data)?;
        theta_override = Some(theta_hat.clone());
        report = Some(GmmReport {
            theta_hat,
            v_hat,
            std_errors,
            jacobian: g_bar,
            psi_outer,
            initial_thetas: init
                .pairs
                .iter()
                .zip(&init.thetas)
                .map(|(&(a, b), t)| (a, b, t.clone()))
                .collect(),
            n_rows: n,
            l: folds.l,
            flagged,
            grad_norm,
            max_abs_instrument,
            max_abs_regressor,
            riesz_fits: riesz_fits_all,
            influence,
        });
    }
    Ok(report.expect("at least one pass"))
}

/// (G' U G)^{-1} G' U Psi U G (G' U G)^{-1}, symmetrized.
pub fn sandwich_variance(g: &Mat, upsilon: &Mat, psi: &Mat) -> Result<Mat> {
    let d = g.cols;
    let ug = upsilon.matmul(g);
    let gtug = g.transpose().matmul(&ug);
    let mut inv = Mat::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col =
            solve(&gtug, &e).map_err(|_| Error::Singular("G' Upsilon G is singular".into()))?;
        for i in 0..d {
            inv[(i, j)] = col[i];
        }
    }
    let upu = upsilon.matmul(&psi.matmul(upsilon));
    let middle = g.transpose().matmul(&upu.matmul(g));
    let v = inv.matmul(&middle.matmul(&inv));
    let mut sym = v.clone();
    for i in 0..d {
        for j in 0..d {
            sym[(i, j)] = 0.5 * (v[(i, j)] + v[(j, i)]);
        }
    }
    Ok(sym)
}

/// Smallest eigenvalue of a symmetric matrix (PSD diagnostics).
pub fn min_eigenvalue(m: &Mat) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.first().copied().unwrap_or(0.0)
}
