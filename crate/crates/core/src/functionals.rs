//! Objects of interest theta0 = E[m(W, gamma0)] and their moment machinery:
//! per-term moment vectors M = avg m(W_i, b_j), Gram matrices, and plug-in
//! values m(W_i, gamma_hat) for fitted regressions.

use crate::data::Dataset;
use crate::dictionary::{Basis, Overrides};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::numeric::gauss_legendre_on;
use crate::regression::{EvalPoint, GammaEval};

/// A point mass for policy-effect measures: signed weight plus a full
/// covariate point (every column the dictionary needs must be specified).
#[derive(Debug, Clone)]
pub struct PointMass {
    pub weight: f64,
    pub point: Vec<(String, f64)>,
}

/// Affine transport map applied to one column: x -> scale * x + shift.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub column: String,
    pub scale: f64,
    pub shift: f64,
}

/// The estimand: which linear functional of the regression is averaged.
#[derive(Debug, Clone)]
pub enum MomentFunctional {
    /// E[gamma(1,Z) - gamma(0,Z)] for a binary treatment column.
    Ate { treatment: String },
    /// integral of gamma d(F1 - F0), the measure given as signed point masses.
    PolicyEffect { masses: Vec<PointMass> },
    /// E[gamma(t(X)) - gamma(X)] for affine column maps t.
    Transport { maps: Vec<AffineMap> },
    /// E[omega(X) d gamma / d wrt]; weight defaults to 1.
    AvgDerivative { wrt: String, weight: Option<String> },
    /// Weighted price-path integral bounding average equivalent variation:
    /// E[omega(Z) int_{p_low}^{p_high} (z1/u) gamma(u, Z) exp(-kappa (u - p_low)) du].
    AevBound {
        price: String,
        income: String,
        weight: Option<String>,
        p_low: f64,
        p_high: f64,
        kappa: f64,
        order: usize,
    },
    /// E[D gamma(0, Z)], the cross average behind decompositions and the
    /// treated-effect transform.
    CrossAverage { treatment: String },
    /// E[Y - gamma(X)]: mean regression residual (a calibration diagnostic).
    /// Its moment derivative in a dictionary direction is -b_j(x).
    ResidualOnly { outcome: String },
}

/// Moment vector M over a row subset.
#[derive(Debug, Clone)]
pub struct MomentVector {
    pub m: Vec<f64>,
    pub n_used: usize,
}

/// Gram matrix avg b(X_i) b(X_i)' over a row subset.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub g: Mat,
    pub n_used: usize,
}

fn canonical_rows(rows: &[usize]) -> Vec<usize> {
    let mut v = rows.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn check_binary(data: &Dataset, col: &str) -> Result<()> {
    for &v in data.column(col)? {
        if v != 0.0 && v != 1.0 {
            return Err(Error::InvalidData(format!(
                "treatment column {col} must take values in {{0,1}}, found {v}"
            )));
        }
    }
    Ok(())
}

fn check_variation(data: &Dataset, col: &str, rows: &[usize]) -> Result<()> {
    let c = data.column(col)?;
    let first = c[rows[0]];
    if rows.iter().all(|&r| c[r] == first) {
        return Err(Error::NoTreatmentVariation);
    }
    Ok(())
}

impl MomentFunctional {
    pub fn name(&self) -> &'static str {
        match self {
            MomentFunctional::Ate { .. } => "ate",
            MomentFunctional::PolicyEffect { .. } => "policy_effect",
            MomentFunctional::Transport { .. } => "transport",
            MomentFunctional::AvgDerivative { .. } => "avg_derivative",
            MomentFunctional::AevBound { .. } => "aev_bound",
            MomentFunctional::CrossAverage { .. } => "cross_average",
            MomentFunctional::ResidualOnly { .. } => "residual_only",
        }
    }

    /// Static validation against a dataset (column presence, binary
    /// treatments, parameter sanity). Subset-dependent checks such as
    /// treatment variation happen at moment time.
    pub fn validate(&self, data: &Dataset, basis: &dyn Basis) -> Result<()> {
        for col in basis.required_columns() {
            data.column(&col)?;
        }
        match self {
            MomentFunctional::Ate { treatment } | MomentFunctional::CrossAverage { treatment } => {
                data.column(treatment)?;
                check_binary(data, treatment)?;
                check_variation(data, treatment, &(0..data.n_rows()).collect::<Vec<_>>())
            }
            MomentFunctional::PolicyEffect { masses } => {
                if masses.is_empty() {
                    return Err(Error::InvalidInput("policy effect needs point masses".into()));
                }
                let total: f64 = masses.iter().map(|m| m.weight).sum();
                if total.abs() > 1e-10 {
                    return Err(Error::InvalidInput(format!(
                        "policy-effect mass weights must sum to 0 (difference of two probability measures); got {total}"
                    )));
                }
                let required = basis.required_columns();
                for (i, mass) in masses.iter().enumerate() {
                    for col in &required {
                        if !mass.point.iter().any(|(c, _)| c == col) {
                            return Err(Error::InvalidInput(format!(
                                "policy-effect mass {i} does not set column {col}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            MomentFunctional::Transport { maps } => {
                if maps.is_empty() {
                    return Err(Error::InvalidInput("transport needs at least one map".into()));
                }
                for m in maps {
                    data.column(&m.column)?;
                    if !m.scale.is_finite() || !m.shift.is_finite() {
                        return Err(Error::InvalidInput("transport map must be finite".into()));
                    }
                }
                Ok(())
            }
            MomentFunctional::AvgDerivative { wrt, weight } => {
                data.column(wrt)?;
                if let Some(w) = weight {
                    data.column(w)?;
                }
                Ok(())
            }
            MomentFunctional::AevBound {
                price,
                income,
                weight,
                p_low,
                p_high,
                kappa,
                order,
            } => {
                data.column(price)?;
                data.column(income)?;
                if let Some(w) = weight {
                    data.column(w)?;
                }
                if !(p_low < p_high) {
                    return Err(Error::InvalidInput(format!(
                        "price bounds must satisfy p_low < p_high, got [{p_low}, {p_high}]"
                    )));
                }
                if !kappa.is_finite() {
                    return Err(Error::InvalidInput("kappa must be finite".into()));
                }
                if *order < 2 {
                    return Err(Error::InvalidInput("quadrature order must be >= 2".into()));
                }
                Ok(())
            }
            MomentFunctional::ResidualOnly { outcome } => {
                data.column(outcome)?;
                Ok(())
            }
        }
    }

    /// Per-row moment derivatives in every dictionary direction: row i,
    /// column j holds d/dtau m(W_i, . + tau b_j), which for the linear kinds
    /// is m(W_i, b_j) itself.
    pub fn moment_rows(&self, basis: &dyn Basis, data: &Dataset, rows: &[usize]) -> Result<Mat> {
        let rows = canonical_rows(rows);
        if rows.is_empty() {
            return Err(Error::InvalidInput("moment over empty row subset".into()));
        }
        let p = basis.p();
        match self {
            MomentFunctional::Ate { treatment } => {
                let ov1 = Overrides::resolve(data, &[(treatment, 1.0)])?;
                let ov0 = Overrides::resolve(data, &[(treatment, 0.0)])?;
                let mut b1 = basis.matrix_override(data, &rows, &ov1)?;
                let b0 = basis.matrix_override(data, &rows, &ov0)?;
                for (a, b) in b1.data.iter_mut().zip(&b0.data) {
                    *a -= b;
                }
                Ok(b1)
            }
            MomentFunctional::CrossAverage { treatment } => {
                let ov0 = Overrides::resolve(data, &[(treatment, 0.0)])?;
                let mut b0 = basis.matrix_override(data, &rows, &ov0)?;
                let d = data.column(treatment)?;
                for (k, &r) in rows.iter().enumerate() {
                    let di = d[r];
                    for v in b0.row_mut(k) {
                        *v *= di;
                    }
                }
                Ok(b0)
            }
            MomentFunctional::AvgDerivative { wrt, weight } => {
                let mut m = basis.matrix_partial(data, &rows, wrt)?;
                if let Some(wcol) = weight {
                    let w = data.column(wcol)?;
                    for (k, &r) in rows.iter().enumerate() {
                        let wi = w[r];
                        for v in m.row_mut(k) {
                            *v *= wi;
                        }
                    }
                }
                Ok(m)
            }
            MomentFunctional::Transport { maps } => {
                let b = basis.matrix(data, &rows)?;
                let mut mat = Mat::zeros(rows.len(), p);
                let mut named: Vec<(&str, f64)> = Vec::with_capacity(maps.len());
                let mut buf = vec![0.0; p];
                for (k, &r) in rows.iter().enumerate() {
                    named.clear();
                    for map in maps {
                        let x = data.value(&map.column, r)?;
                        named.push((map.column.as_str(), map.scale * x + map.shift));
                    }
                    let ov = Overrides::resolve(data, &named)?;
                    basis.eval_row_override(data, r, &ov, &mut buf)?;
                    for (j, out) in mat.row_mut(k).iter_mut().enumerate() {
                        *out = buf[j] - b[(k, j)];
                    }
                }
                Ok(mat)
            }
            MomentFunctional::PolicyEffect { masses } => {
                // Data independent: the same signed combination of dictionary
                // values at the mass points fills every row.
                let mut total = vec![0.0; p];
                let mut buf = vec![0.0; p];
                for mass in masses {
                    let named: Vec<(&str, f64)> =
                        mass.point.iter().map(|(c, v)| (c.as_str(), *v)).collect();
                    let ov = Overrides::resolve(data, &named)?;
                    basis.eval_row_override(data, rows[0], &ov, &mut buf)?;
                    for (t, &v) in total.iter_mut().zip(&buf) {
                        *t += mass.weight * v;
                    }
                }
                let mut mat = Mat::zeros(rows.len(), p);
                for k in 0..rows.len() {
                    mat.row_mut(k).copy_from_slice(&total);
                }
                Ok(mat)
            }
            MomentFunctional::AevBound {
                price,
                income,
                weight,
                p_low,
                p_high,
                kappa,
                order,
            } => {
                let (nodes, wq) = gauss_legendre_on(*order, *p_low, *p_high);
                let z1 = data.column(income)?;
                let w = match weight {
                    Some(c) => Some(data.column(c)?),
                    None => None,
                };
                let mut mat = Mat::zeros(rows.len(), p);
                for (node, wk) in nodes.iter().zip(&wq) {
                    let ov = Overrides::resolve(data, &[(price, *node)])?;
                    let bu = basis.matrix_override(data, &rows, &ov)?;
                    let decay = (-kappa * (node - p_low)).exp();
                    for (k, &r) in rows.iter().enumerate() {
                        let omega = w.map(|c| c[r]).unwrap_or(1.0);
                        let scale = omega * (z1[r] / node) * decay * wk;
                        let src = bu.row(k);
                        for (dst, &v) in mat.row_mut(k).iter_mut().zip(src) {
                            *dst += scale * v;
                        }
                    }
                }
                Ok(mat)
            }
            MomentFunctional::ResidualOnly { .. } => {
                // Gateaux derivative of y - gamma(x) in direction b_j.
                let mut b = basis.matrix(data, &rows)?;
                for v in &mut b.data {
                    *v = -*v;
                }
                Ok(b)
            }
        }
    }

    /// A fitting subset must carry treatment variation for the
    /// treatment-based kinds; pure-arm evaluation subsets are fine.
    pub fn check_fitting_subset(&self, data: &Dataset, rows: &[usize]) -> Result<()> {
        match self {
            MomentFunctional::Ate { treatment } | MomentFunctional::CrossAverage { treatment } => {
                check_variation(data, treatment, rows)
            }
            _ => Ok(()),
        }
    }

    /// Column means of `moment_rows`: the estimated cross moments between the
    /// Riesz representer and the dictionary. Errors on a degenerate
    /// (single-arm) treatment subset.
    pub fn moment_of_dictionary(
        &self,
        basis: &dyn Basis,
        data: &Dataset,
        rows: &[usize],
    ) -> Result<MomentVector> {
        let rows_c = canonical_rows(rows);
        self.check_fitting_subset(data, &rows_c)?;
        let mat = self.moment_rows(basis, data, &rows_c)?;
        Ok(MomentVector {
            m: column_means(&mat),
            n_used: rows_c.len(),
        })
    }

    /// Per-row plug-in values m(W_i, gamma_hat).
    pub fn moment_of_regression(
        &self,
        gamma: &dyn GammaEval,
        data: &Dataset,
        rows: &[usize],
    ) -> Result<Vec<f64>> {
        let rows = canonical_rows(rows);
        if rows.is_empty() {
            return Err(Error::InvalidInput("moment over empty row subset".into()));
        }
        match self {
            MomentFunctional::Ate { treatment } => {
                rows.iter()
                    .map(|&r| {
                        let g1 = gamma.value_at(
                            data,
                            r,
                            &EvalPoint::Override { tag: "d1", overrides: &[(treatment, 1.0)] },
                        )?;
                        let g0 = gamma.value_at(
                            data,
                            r,
                            &EvalPoint::Override { tag: "d0", overrides: &[(treatment, 0.0)] },
                        )?;
                        Ok(g1 - g0)
                    })
                    .collect()
            }
            MomentFunctional::CrossAverage { treatment } => {
                let d = data.column(treatment)?;
                rows.iter()
                    .map(|&r| {
                        if d[r] == 0.0 {
                            return Ok(0.0);
                        }
                        let g0 = gamma.value_at(
                            data,
                            r,
                            &EvalPoint::Override { tag: "d0", overrides: &[(treatment, 0.0)] },
                        )?;
                        Ok(d[r] * g0)
                    })
                    .collect()
            }
            MomentFunctional::AvgDerivative { wrt, weight } => {
                let w = match weight {
                    Some(c) => Some(data.column(c)?),
                    None => None,
                };
                rows.iter()
                    .map(|&r| {
                        let der = gamma.value_at(data, r, &EvalPoint::Partial { wrt })?;
                        Ok(w.map(|c| c[r]).unwrap_or(1.0) * der)
                    })
                    .collect()
            }
            MomentFunctional::Transport { maps } => rows
                .iter()
                .map(|&r| {
                    let mut named: Vec<(&str, f64)> = Vec::with_capacity(maps.len());
                    for map in maps {
                        let x = data.value(&map.column, r)?;
                        named.push((map.column.as_str(), map.scale * x + map.shift));
                    }
                    let gt = gamma.value_at(
                        data,
                        r,
                        &EvalPoint::Override { tag: "transport", overrides: &named },
                    )?;
                    let g = gamma.value_at(data, r, &EvalPoint::Plain)?;
                    Ok(gt - g)
                })
                .collect(),
            MomentFunctional::PolicyEffect { masses } => rows
                .iter()
                .map(|&r| {
                    let mut acc = 0.0;
                    for (mi, mass) in masses.iter().enumerate() {
                        let named: Vec<(&str, f64)> =
                            mass.point.iter().map(|(c, v)| (c.as_str(), *v)).collect();
                        let tag = format!("mass_{mi}");
                        let g = gamma.value_at(
                            data,
                            r,
                            &EvalPoint::Override { tag: &tag, overrides: &named },
                        )?;
                        acc += mass.weight * g;
                    }
                    Ok(acc)
                })
                .collect(),
            MomentFunctional::AevBound {
                price,
                income,
                weight,
                p_low,
                p_high,
                kappa,
                order,
            } => {
                let (nodes, wq) = gauss_legendre_on(*order, *p_low, *p_high);
                let z1 = data.column(income)?;
                let w = match weight {
                    Some(c) => Some(data.column(c)?),
                    None => None,
                };
                rows.iter()
                    .map(|&r| {
                        let mut acc = 0.0;
                        for (qi, (node, wk)) in nodes.iter().zip(&wq).enumerate() {
                            let tag = format!("quad_{qi}");
                            let g = gamma.value_at(
                                data,
                                r,
                                &EvalPoint::Override { tag: &tag, overrides: &[(price, *node)] },
                            )?;
                            acc += wk * (z1[r] / node) * (-kappa * (node - p_low)).exp() * g;
                        }
                        Ok(w.map(|c| c[r]).unwrap_or(1.0) * acc)
                    })
                    .collect()
            }
            MomentFunctional::ResidualOnly { outcome } => {
                let y = data.column(outcome)?;
                rows.iter()
                    .map(|&r| Ok(y[r] - gamma.value_at(data, r, &EvalPoint::Plain)?))
                    .collect()
            }
        }
    }
}

/// Gram matrix of the dictionary over a row subset, accumulated in ascending
/// row order (invariant to the order rows are supplied in).
pub fn gram(basis: &dyn Basis, data: &Dataset, rows: &[usize]) -> Result<GramMatrix> {
    let rows = canonical_rows(rows);
    if rows.is_empty() {
        return Err(Error::InvalidInput("gram over empty row subset".into()));
    }
    let b = basis.matrix(data, &rows)?;
    Ok(GramMatrix {
        g: b.gram(rows.len() as f64),
        n_used: rows.len(),
    })
}

pub fn column_means(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for i in 0..m.rows {
        for (o, &v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    let n = m.rows as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}
