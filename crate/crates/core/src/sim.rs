//! Synthetic data generators with known truths, plus the brute-force oracles
//! used to validate the learners: exact small-scale Dantzig solutions by
//! vertex enumeration, a nonparametric (cluster) bootstrap, and the sparse
//! linear regression benchmark with its cumulative tuning variants.

use crate::data::{Dataset, Role};
use crate::dictionary::{Basis, Dictionary, TermSpec};
use crate::error::{Error, Result};
use crate::functionals::MomentFunctional;
use crate::gmm::{BinaryChoice, Link};
use crate::linalg::{dot, solve, Mat};
use crate::numeric::{gauss_hermite_normal, normal_cdf, normal_pdf};
use crate::regression::OracleGamma;
use crate::riesz::{fit_lasso_md, LassoInit, LassoMdConfig, MomentMatrices};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Mix a base seed with a replication index; replications are independent of
/// scheduling order.
pub fn derive_seed(seed: u64, rep: u64) -> u64 {
    // splitmix64 of seed xor golden-ratio-stepped rep
    let mut z = seed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Synthetic designs. Each carries its own true nuisances where closed forms
/// exist.
#[derive(Debug, Clone)]
pub enum DesignSpec {
    /// Sparse linear regression benchmark: y = 1 + x1 + x2 + noise with 98
    /// inert standard-normal regressors (p = 101 with the constant).
    SparseLinear { n: usize, seed: u64 },
    /// Binary treatment with logistic propensity (truncated to [0.05, 0.95])
    /// and a linear-interaction outcome; `theta` is the true average effect.
    AteLogistic { n: usize, seed: u64, theta: f64 },
    /// Average-derivative design whose Riesz representer is exactly sparse:
    /// standard normal regressors make the representer the score x1 itself.
    RieszSparse { n: usize, seed: u64 },
    /// Binary choice under uncertainty with probit errors; the planted
    /// parameter is (beta0, beta1, delta).
    BinaryChoiceDesign { n: usize, seed: u64, beta: (f64, f64), delta: f64 },
    /// Household panel with random slopes correlated with the regressor's
    /// household mean.
    PanelSlopes { households: usize, periods: usize, seed: u64 },
}

/// Closed-form truths exposed by a design.
pub struct Truth {
    pub theta0: Option<f64>,
    pub theta0_vec: Option<Vec<f64>>,
    /// True coefficient vector over the canonical dictionary (when exact).
    pub rho0: Option<Vec<f64>>,
    pub gamma: Option<Arc<OracleGamma>>,
    pub alpha: Option<Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync>>,
    /// Per-equation representer for moment-vector models.
    pub alpha_vec: Option<Arc<dyn Fn(&Dataset, usize, usize) -> f64 + Send + Sync>>,
    /// Closed-form cross moments E[alpha0 b_j] for the canonical dictionary.
    pub closed_form_m: Option<Vec<f64>>,
}

pub struct Generated {
    pub data: Dataset,
    pub truth: Truth,
}

// Fixed coefficients of the treatment-effect design. The propensity slopes
// keep pi well inside the truncation bounds so the inverse-propensity
// representer stays smooth.
const ATE_PROP: [f64; 5] = [0.4, -0.25, 0.125, 0.0, 0.15];
const ATE_MAIN: [f64; 5] = [1.0, 0.5, -0.5, 0.25, 0.0];
const ATE_INTERACT: [f64; 5] = [0.3, -0.2, 0.0, 0.0, 0.0];
const ATE_INTERCEPT: f64 = 0.5;

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ate_propensity(z: &[f64]) -> f64 {
    expit(dot(&ATE_PROP, z)).clamp(0.05, 0.95)
}

fn ate_gamma0(d: f64, z: &[f64], theta: f64, scale: f64) -> f64 {
    scale * (ATE_INTERCEPT + theta * d + dot(&ATE_MAIN, z) + d * dot(&ATE_INTERACT, z))
}

fn row_z(data: &Dataset, row: usize) -> [f64; 5] {
    let mut z = [0.0; 5];
    for (k, zk) in z.iter_mut().enumerate() {
        *zk = data.value(&format!("z{}", k + 1), row).unwrap();
    }
    z
}

impl DesignSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DesignSpec::SparseLinear { .. } => "sparse_linear",
            DesignSpec::AteLogistic { .. } => "ate_logistic",
            DesignSpec::RieszSparse { .. } => "riesz_sparse",
            DesignSpec::BinaryChoiceDesign { .. } => "binary_choice",
            DesignSpec::PanelSlopes { .. } => "panel_slopes",
        }
    }

    /// Dictionary conventionally paired with the design.
    pub fn canonical_dictionary(&self) -> Result<Dictionary> {
        match self {
            DesignSpec::SparseLinear { .. } => {
                let mut terms = vec![TermSpec::Constant];
                for j in 1..=100 {
                    terms.push(TermSpec::monomial(&format!("x{j}"), 1)?);
                }
                Dictionary::new(terms)
            }
            DesignSpec::AteLogistic { .. } => {
                let mut terms = vec![TermSpec::Constant];
                for j in 1..=5 {
                    terms.push(TermSpec::monomial(&format!("z{j}"), 1)?);
                }
                for j in 1..=5 {
                    terms.push(TermSpec::monomial(&format!("z{j}"), 2)?);
                }
                let inner = Dictionary::new(terms)?;
                Dictionary::arm_split("d", &inner)
            }
            DesignSpec::RieszSparse { .. } => Dictionary::new(vec![
                TermSpec::Constant,
                TermSpec::monomial("x1", 1)?,
                TermSpec::monomial("x2", 1)?,
                TermSpec::monomial("x2", 2)?,
                TermSpec::product(&[("x1", 1), ("x2", 1)])?,
            ]),
            DesignSpec::BinaryChoiceDesign { .. } => {
                let inner = Dictionary::polynomial(&["z"], 2)?;
                Dictionary::arm_split("d", &inner)
            }
            DesignSpec::PanelSlopes { .. } => Dictionary::polynomial(&["d"], 1),
        }
    }

    /// Functional conventionally estimated on the design (when linear).
    pub fn functional(&self) -> Option<MomentFunctional> {
        match self {
            DesignSpec::SparseLinear { .. } => None,
            DesignSpec::AteLogistic { .. } => {
                Some(MomentFunctional::Ate { treatment: "d".into() })
            }
            DesignSpec::RieszSparse { .. } => Some(MomentFunctional::AvgDerivative {
                wrt: "x1".into(),
                weight: None,
            }),
            DesignSpec::BinaryChoiceDesign { .. } => None,
            DesignSpec::PanelSlopes { .. } => Some(MomentFunctional::AvgDerivative {
                wrt: "d".into(),
                weight: None,
            }),
        }
    }

    pub fn binary_choice_model(&self) -> Option<BinaryChoice> {
        match self {
            DesignSpec::BinaryChoiceDesign { .. } => Some(BinaryChoice {
                link: Link::Probit,
                choice: "d".into(),
                outcome: "y".into(),
                regressors: vec!["v".into()],
                instruments: vec!["v".into(), "z".into()],
                v_intercept: true,
                h_intercept: true,
                theta_abs_bound: 20.0,
            }),
            _ => None,
        }
    }
}

/// Generate a dataset plus its truth record; reproducible given the seed.
pub fn generate(spec: &DesignSpec) -> Result<Generated> {
    match spec {
        DesignSpec::SparseLinear { n, seed } => generate_sparse_linear(*n, *seed),
        DesignSpec::AteLogistic { n, seed, theta } => generate_ate(*n, *seed, *theta),
        DesignSpec::RieszSparse { n, seed } => generate_riesz_sparse(*n, *seed),
        DesignSpec::BinaryChoiceDesign { n, seed, beta, delta } => {
            generate_binary_choice(*n, *seed, *beta, *delta)
        }
        DesignSpec::PanelSlopes { households, periods, seed } => {
            generate_panel(*households, *periods, *seed)
        }
    }
}

fn generate_sparse_linear(n: usize, seed: u64) -> Result<Generated> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cols: Vec<(String, Vec<f64>)> = Vec::with_capacity(101);
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(100);
    for j in 1..=100 {
        let col: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        cols.push((format!("x{j}"), col.clone()));
        xs.push(col);
    }
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + xs[0][i] + xs[1][i] + normal(&mut rng))
        .collect();
    cols.insert(0, ("y".to_string(), y));
    let mut data = Dataset::from_columns(cols)?;
    data.roles = vec![("y".into(), Role::Outcome)];
    let mut rho0 = vec![0.0; 101];
    rho0[0] = 1.0;
    rho0[1] = 1.0;
    rho0[2] = 1.0;
    let gamma = Arc::new(OracleGamma {
        value: Arc::new(|data: &Dataset, r: usize, ov: &[(&str, f64)]| {
            let get = |name: &str| {
                ov.iter()
                    .find(|(c, _)| *c == name)
                    .map(|(_, v)| *v)
                    .unwrap_or_else(|| data.value(name, r).unwrap())
            };
            1.0 + get("x1") + get("x2")
        }),
        partial: None,
    });
    // For moments y*b(x), the representer is the regression itself.
    let alpha: Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync> =
        Arc::new(|data: &Dataset, r: usize| {
            1.0 + data.value("x1", r).unwrap() + data.value("x2", r).unwrap()
        });
    let mut closed_form_m = vec![0.0; 101];
    closed_form_m[0] = 1.0;
    closed_form_m[1] = 1.0;
    closed_form_m[2] = 1.0;
    Ok(Generated {
        data,
        truth: Truth {
            theta0: None,
            theta0_vec: None,
            rho0: Some(rho0),
            gamma: Some(gamma),
            alpha: Some(alpha),
            alpha_vec: None,
            closed_form_m: Some(closed_form_m),
        },
    })
}

/// True regression of the treatment-effect design, optionally with all
/// coefficients scaled (a controlled misspecification).
pub fn ate_gamma_oracle(theta: f64, scale: f64) -> Arc<OracleGamma> {
    Arc::new(OracleGamma {
        value: Arc::new(move |data: &Dataset, r: usize, ov: &[(&str, f64)]| {
            let mut z = row_z(data, r);
            let mut d = data.value("d", r).unwrap();
            for (c, v) in ov {
                if *c == "d" {
                    d = *v;
                } else if let Some(k) = c.strip_prefix('z').and_then(|t| t.parse::<usize>().ok()) {
                    z[k - 1] = *v;
                }
            }
            ate_gamma0(d, &z, theta, scale)
        }),
        partial: None,
    })
}

/// True Riesz representer of the treatment-effect design; `scale` multiplies
/// the propensity index (a controlled misspecification).
pub fn ate_alpha_oracle(scale: f64) -> Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync> {
    Arc::new(move |data: &Dataset, r: usize| {
        let z = row_z(data, r);
        let pi = expit(scale * dot(&ATE_PROP, &z)).clamp(0.05, 0.95);
        let d = data.value("d", r).unwrap();
        d / pi - (1.0 - d) / (1.0 - pi)
    })
}

fn generate_ate(n: usize, seed: u64, theta: f64) -> Result<Generated> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut z_cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    let mut d_col = Vec::with_capacity(n);
    let mut y_col = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..5).map(|_| normal(&mut rng)).collect();
        let pi = ate_propensity(&z);
        let d = if rng.random::<f64>() < pi { 1.0 } else { 0.0 };
        let y = ate_gamma0(d, &z, theta, 1.0) + normal(&mut rng);
        for (col, &zk) in z_cols.iter_mut().zip(&z) {
            col.push(zk);
        }
        d_col.push(d);
        y_col.push(y);
    }
    let mut cols = vec![("y".to_string(), y_col), ("d".to_string(), d_col)];
    for (k, col) in z_cols.into_iter().enumerate() {
        cols.push((format!("z{}", k + 1), col));
    }
    let mut data = Dataset::from_columns(cols)?;
    data.roles = vec![
        ("y".into(), Role::Outcome),
        ("d".into(), Role::Treatment),
    ];
    Ok(Generated {
        data,
        truth: Truth {
            theta0: Some(theta),
            theta0_vec: None,
            rho0: None,
            gamma: Some(ate_gamma_oracle(theta, 1.0)),
            alpha: Some(ate_alpha_oracle(1.0)),
            alpha_vec: None,
            closed_form_m: None,
        },
    })
}

fn generate_riesz_sparse(n: usize, seed: u64) -> Result<Generated> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let x1: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let x2: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 * x1[i] + x2[i] + 0.5 * normal(&mut rng))
        .collect();
    let mut data = Dataset::from_columns(vec![
        ("y".to_string(), y),
        ("x1".to_string(), x1),
        ("x2".to_string(), x2),
    ])?;
    data.roles = vec![("y".into(), Role::Outcome)];
    // Average derivative wrt x1 under a standard normal: the representer is
    // the score, alpha0(x) = x1, exactly the second canonical term.
    let alpha: Arc<dyn Fn(&Dataset, usize) -> f64 + Send + Sync> =
        Arc::new(|data: &Dataset, r: usize| data.value("x1", r).unwrap());
    // Cross moments E[x1 b_j] for (1, x1, x2, x2^2, x1 x2).
    let closed_form_m = vec![0.0, 1.0, 0.0, 0.0, 0.0];
    let mut rho0 = vec![0.0; 5];
    rho0[1] = 1.0;
    let gamma = Arc::new(OracleGamma {
        value: Arc::new(|data: &Dataset, r: usize, ov: &[(&str, f64)]| {
            let get = |name: &str| {
                ov.iter()
                    .find(|(c, _)| *c == name)
                    .map(|(_, v)| *v)
                    .unwrap_or_else(|| data.value(name, r).unwrap())
            };
            0.5 * get("x1") + get("x2")
        }),
        partial: Some(Arc::new(|_d: &Dataset, _r: usize, wrt: &str| match wrt {
            "x1" => 0.5,
            "x2" => 1.0,
            _ => 0.0,
        })),
    });
    Ok(Generated {
        data,
        truth: Truth {
            theta0: Some(0.5),
            theta0_vec: None,
            rho0: Some(rho0),
            gamma: Some(gamma),
            alpha: Some(alpha),
            alpha_vec: None,
            closed_form_m: Some(closed_form_m),
        },
    })
}

// Binary-choice design coefficients.
const BC_GAMMA: [f64; 4] = [0.5, 0.2, 0.6, 0.5]; // g0 + gd d + gz z + gdz d z

fn bc_gamma0(d: f64, z: f64) -> f64 {
    BC_GAMMA[0] + BC_GAMMA[1] * d + BC_GAMMA[2] * z + BC_GAMMA[3] * d * z
}

fn bc_delta_gamma(z: f64) -> f64 {
    BC_GAMMA[1] + BC_GAMMA[3] * z
}

fn generate_binary_choice(n: usize, seed: u64, beta: (f64, f64), delta: f64) -> Result<Generated> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut v_col = Vec::with_capacity(n);
    let mut z_col = Vec::with_capacity(n);
    let mut d_col = Vec::with_capacity(n);
    let mut y_col = Vec::with_capacity(n);
    for _ in 0..n {
        let v = normal(&mut rng);
        let z = normal(&mut rng);
        let idx = beta.0 + beta.1 * v + delta * bc_delta_gamma(z);
        let eps = normal(&mut rng);
        let d = if idx > eps { 1.0 } else { 0.0 };
        let y = bc_gamma0(d, z) + 0.35 * normal(&mut rng);
        v_col.push(v);
        z_col.push(z);
        d_col.push(d);
        y_col.push(y);
    }
    let mut data = Dataset::from_columns(vec![
        ("y".to_string(), y_col),
        ("d".to_string(), d_col),
        ("v".to_string(), v_col),
        ("z".to_string(), z_col),
    ])?;
    data.roles = vec![
        ("y".into(), Role::Outcome),
        ("d".into(), Role::Treatment),
    ];
    let gamma = Arc::new(OracleGamma {
        value: Arc::new(|data: &Dataset, r: usize, ov: &[(&str, f64)]| {
            let get = |name: &str| {
                ov.iter()
                    .find(|(c, _)| *c == name)
                    .map(|(_, v)| *v)
                    .unwrap_or_else(|| data.value(name, r).unwrap())
            };
            bc_gamma0(get("d"), get("z"))
        }),
        partial: None,
    });
    let (b0, b1) = beta;
    // Per-equation representer via Gauss-Hermite integration over v:
    // alpha_k(d, z) = -delta E[pdf(c) H_k | Z=z] (d/pi - (1-d)/(1-pi)).
    // The V-average conditions on Z alone: for directions zeta(D, Z), the
    // Gateaux derivative averages the hidden regressor unconditionally on the
    // realized choice, and only the inverse-propensity factor carries d.
    let (gh_x, gh_w) = gauss_hermite_normal(60);
    let alpha_vec: Arc<dyn Fn(&Dataset, usize, usize) -> f64 + Send + Sync> =
        Arc::new(move |data: &Dataset, r: usize, eq: usize| {
            let z = data.value("z", r).unwrap();
            let d = data.value("d", r).unwrap();
            let dg = bc_delta_gamma(z);
            let mut pi = 0.0;
            let mut num = 0.0;
            for (&x, &w) in gh_x.iter().zip(&gh_w) {
                let c = b0 + b1 * x + delta * dg;
                let h_k = match eq {
                    0 => 1.0,
                    1 => x,
                    2 => z,
                    _ => unreachable!(),
                };
                pi += w * normal_cdf(c);
                num += w * normal_pdf(c) * h_k;
            }
            let tilt = if d == 1.0 { 1.0 / pi } else { -1.0 / (1.0 - pi) };
            -delta * num * tilt
        });
    Ok(Generated {
        data,
        truth: Truth {
            theta0: None,
            theta0_vec: Some(vec![b0, b1, delta]),
            rho0: None,
            gamma: Some(gamma),
            alpha: None,
            alpha_vec: Some(alpha_vec),
            closed_form_m: None,
        },
    })
}

// Panel design coefficients.
const PANEL_A0: f64 = 1.0;
const PANEL_S0: f64 = -0.4;
const PANEL_LAMBDA_A: f64 = 0.15;
const PANEL_LAMBDA_S: f64 = 0.1;
const PANEL_TAU_C: f64 = 0.7;

/// True average derivative and mean outcome of the panel design.
pub fn panel_truth() -> (f64, f64) {
    let theta0 = PANEL_S0;
    let mean_y = PANEL_A0 + PANEL_LAMBDA_S * PANEL_TAU_C * PANEL_TAU_C;
    (theta0, mean_y)
}

fn generate_panel(households: usize, periods: usize, seed: u64) -> Result<Generated> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = households * periods;
    let mut hh = Vec::with_capacity(n);
    let mut d_col = Vec::with_capacity(n);
    let mut y_col = Vec::with_capacity(n);
    for i in 0..households {
        let c_i = PANEL_TAU_C * normal(&mut rng);
        let d_vals: Vec<f64> = (0..periods).map(|_| c_i + normal(&mut rng)).collect();
        let d_bar = d_vals.iter().sum::<f64>() / periods as f64;
        let a_i = PANEL_A0 + PANEL_LAMBDA_A * d_bar + 0.3 * normal(&mut rng);
        let s_i = PANEL_S0 + PANEL_LAMBDA_S * d_bar + 0.2 * normal(&mut rng);
        for &d in &d_vals {
            hh.push(i as f64);
            d_col.push(d);
            y_col.push(a_i + s_i * d + 0.3 * normal(&mut rng));
        }
    }
    let mut data = Dataset::from_columns(vec![
        ("y".to_string(), y_col),
        ("d".to_string(), d_col),
        ("hh".to_string(), hh),
    ])?
    .with_cluster("hh")?;
    data.roles = vec![
        ("y".into(), Role::Outcome),
        ("hh".into(), Role::Cluster),
    ];
    let (theta0, _) = panel_truth();
    Ok(Generated {
        data,
        truth: Truth {
            theta0: Some(theta0),
            theta0_vec: None,
            rho0: None,
            gamma: None,
            alpha: None,
            alpha_vec: None,
            closed_form_m: None,
        },
    })
}

/// Exact small-p Dantzig solution by vertex enumeration: every vertex of
/// {|M - G rho|_inf <= lambda} cut by coordinate hyperplanes is a candidate;
/// the l1-minimal feasible one is the optimum.
pub fn oracle_dantzig_small(m_hat: &[f64], g_hat: &Mat, lambda: f64) -> Result<(Vec<f64>, f64)> {
    let p = m_hat.len();
    if p > 6 {
        return Err(Error::InvalidInput("vertex enumeration supports p <= 6".into()));
    }
    // Constraint families: G_j rho = M_j - lambda (0..p),
    //                      G_j rho = M_j + lambda (p..2p),
    //                      rho_j = 0              (2p..3p).
    let total = 3 * p;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut combo: Vec<usize> = (0..p).collect();
    loop {
        // Build and solve the active system.
        let mut a = Mat::zeros(p, p);
        let mut b = vec![0.0; p];
        for (row, &c) in combo.iter().enumerate() {
            if c < p {
                for j in 0..p {
                    a[(row, j)] = g_hat[(c, j)];
                }
                b[row] = m_hat[c] - lambda;
            } else if c < 2 * p {
                let cc = c - p;
                for j in 0..p {
                    a[(row, j)] = g_hat[(cc, j)];
                }
                b[row] = m_hat[cc] + lambda;
            } else {
                a[(row, c - 2 * p)] = 1.0;
            }
        }
        if let Ok(rho) = solve(&a, &b) {
            let grho = g_hat.mul_vec(&rho);
            let feas = m_hat
                .iter()
                .zip(&grho)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0_f64, f64::max);
            if feas <= lambda + 1e-9 {
                let obj: f64 = rho.iter().map(|v| v.abs()).sum();
                if best.as_ref().map(|(_, o)| obj < *o).unwrap_or(true) {
                    best = Some((rho, obj));
                }
            }
        }
        // Next combination of p constraint indices out of `total`.
        let mut i = p;
        loop {
            if i == 0 {
                return best.ok_or_else(|| {
                    Error::LpInfeasible("no feasible vertex found".into())
                });
            }
            i -= 1;
            if combo[i] != i + total - p {
                combo[i] += 1;
                for j in (i + 1)..p {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Resample a dataset with replacement: whole clusters when cluster ids are
/// present (drawn clusters get fresh ids), otherwise rows.
pub fn resample(data: &Dataset, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    match &data.cluster {
        Some(cl) => {
            let n_cl = cl.members.len();
            let mut rows = Vec::new();
            let mut new_ids = Vec::new();
            for draw in 0..n_cl {
                let pick = rng.random_range(0..n_cl);
                for &r in &cl.members[pick] {
                    rows.push(r);
                    new_ids.push(draw as f64);
                }
            }
            let mut out = data.select_rows(&rows)?;
            let col = cl.column.clone();
            out.replace_column(&col, new_ids)?;
            out.with_cluster(&col)
        }
        None => {
            let n = data.n_rows();
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            data.select_rows(&rows)
        }
    }
}

/// Nonparametric (cluster) bootstrap standard error of an estimator closure.
pub fn oracle_bootstrap<F>(estimator: F, data: &Dataset, reps: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    let estimates: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let boot = resample(data, derive_seed(seed, rep as u64))?;
            estimator(&boot)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

/// Cumulative tuning variants of the sparse linear benchmark, ordered so each
/// one adds a single technique to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimVariant {
    /// Classic Lasso solver at fixed penalty 0.5.
    LassoFixed,
    /// Same penalty through the minimum-distance route.
    GeneralizedLasso,
    /// Theoretical penalty level.
    TheoreticalRL,
    /// Residual normalization weights (single pass).
    Normalization,
    /// Normalization iterated to convergence, cold starts.
    IterationCold,
    /// Warm starts between iterations.
    IterationWarm,
    /// Outer iterations capped at 10.
    MaxIteration,
    /// Ridge-shifted normalization weights (the production tuner).
    RidgeShift,
}

impl SimVariant {
    pub const ALL: [SimVariant; 8] = [
        SimVariant::LassoFixed,
        SimVariant::GeneralizedLasso,
        SimVariant::TheoreticalRL,
        SimVariant::Normalization,
        SimVariant::IterationCold,
        SimVariant::IterationWarm,
        SimVariant::MaxIteration,
        SimVariant::RidgeShift,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SimVariant::LassoFixed => "lasso",
            SimVariant::GeneralizedLasso => "generalized",
            SimVariant::TheoreticalRL => "theoretical",
            SimVariant::Normalization => "normalization",
            SimVariant::IterationCold => "iteration-cold",
            SimVariant::IterationWarm => "iteration-warm",
            SimVariant::MaxIteration => "max-iteration",
            SimVariant::RidgeShift => "final",
        }
    }

    pub fn parse(s: &str) -> Result<SimVariant> {
        SimVariant::ALL
            .iter()
            .copied()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant: {s}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub reps: usize,
    pub mean_mse: f64,
    pub median_mse: f64,
    pub mean_holdout_r2: f64,
}

/// Classic Lasso coordinate descent on (X, y) with running residuals; an
/// independent route to the same program the minimum-distance fit solves.
fn lasso_shooting(x: &Mat, y: &[f64], thresholds: &[f64], tol: f64, max_sweeps: usize) -> Vec<f64> {
    let n = x.rows;
    let p = x.cols;
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| x[(i, j)] * x[(i, j)]).sum::<f64>() / nf)
        .collect();
    let mut rho = vec![0.0; p];
    let mut resid = y.to_vec();
    for _ in 0..max_sweeps {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let mut cross = 0.0;
            for i in 0..n {
                cross += x[(i, j)] * resid[i];
            }
            let t = thresholds[j];
            let pi = cross / nf + col_sq[j] * rho[j];
            let new = if pi < -t {
                (pi + t) / col_sq[j]
            } else if pi > t {
                (pi - t) / col_sq[j]
            } else {
                0.0
            };
            let delta = new - rho[j];
            if delta != 0.0 {
                for i in 0..n {
                    resid[i] -= delta * x[(i, j)];
                }
                rho[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            break;
        }
    }
    rho
}

fn variant_config(variant: SimVariant) -> (LassoMdConfig, bool) {
    // Returns (config, apply intercept discount). The intercept discount is a
    // property of the solver family (term 0 is the constant), so every
    // variant shares it; the rows differ only in the named technique.
    let base = LassoMdConfig::default();
    match variant {
        SimVariant::LassoFixed | SimVariant::GeneralizedLasso => (
            LassoMdConfig {
                fixed_r_l: Some(0.5),
                normalize: false,
                init: LassoInit::Zeros,
                ..base
            },
            true,
        ),
        SimVariant::TheoreticalRL => (
            LassoMdConfig {
                normalize: false,
                init: LassoInit::Zeros,
                ..base
            },
            true,
        ),
        SimVariant::Normalization => (
            LassoMdConfig {
                max_outer_iters: 1,
                ridge_shift: 0.0,
                ..base
            },
            true,
        ),
        SimVariant::IterationCold => (
            LassoMdConfig {
                max_outer_iters: 100,
                ridge_shift: 0.0,
                warm_start: false,
                ..base
            },
            true,
        ),
        SimVariant::IterationWarm => (
            LassoMdConfig {
                max_outer_iters: 100,
                ridge_shift: 0.0,
                ..base
            },
            true,
        ),
        SimVariant::MaxIteration => (
            LassoMdConfig {
                ridge_shift: 0.0,
                ..base
            },
            true,
        ),
        SimVariant::RidgeShift => (base, true),
    }
}

/// Run the sparse linear benchmark: per replication, fit the requested
/// variant and record the per-coordinate squared coefficient error
/// |rho_hat - rho0|^2 / p and the hold-out R^2.
pub fn run_sparse_linear_variants(
    variants: &[SimVariant],
    reps: usize,
    seed: u64,
) -> Result<Vec<VariantSummary>> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be >= 1".into()));
    }
    let n = 100usize;
    let results: Vec<Vec<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<(f64, f64)>> {
            let rep_seed = derive_seed(seed, rep as u64);
            let spec = DesignSpec::SparseLinear { n, seed: rep_seed };
            let gen = generate(&spec)?;
            let dict = spec.canonical_dictionary()?;
            let rows: Vec<usize> = (0..n).collect();
            let b = dict.matrix(&gen.data, &rows)?;
            let y = gen.data.column("y")?.to_vec();
            let mut m_rows = b.clone();
            for (k, yv) in y.iter().enumerate() {
                for v in m_rows.row_mut(k) {
                    *v *= yv;
                }
            }
            let m_hat = crate::functionals::column_means(&m_rows);
            let g_hat = b.gram(n as f64);
            let rho0 = gen.truth.rho0.as_ref().unwrap();
            // Hold-out sample for R^2.
            let test = generate(&DesignSpec::SparseLinear {
                n: 1000,
                seed: derive_seed(rep_seed, 0xA11CE),
            })?;
            let test_rows: Vec<usize> = (0..1000).collect();
            let bt = dict.matrix(&test.data, &test_rows)?;
            let yt = test.data.column("y")?;
            let var_y = {
                let mean = yt.iter().sum::<f64>() / yt.len() as f64;
                yt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / yt.len() as f64
            };
            let mut out = Vec::with_capacity(variants.len());
            for &variant in variants {
                let rho = match variant {
                    SimVariant::LassoFixed => {
                        let mut th = vec![0.5; b.cols];
                        th[0] = 0.05;
                        lasso_shooting(&b, &y, &th, 1e-8, 2000)
                    }
                    _ => {
                        let (cfg, discount) = variant_config(variant);
                        let mats = MomentMatrices { b: &b, m_rows: &m_rows };
                        fit_lasso_md(n, &m_hat, &g_hat, Some(&mats), discount, &cfg)?.rho
                    }
                };
                let sq: f64 = rho
                    .iter()
                    .zip(rho0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / rho.len() as f64;
                let mut pred_err = 0.0;
                for (k, yv) in yt.iter().enumerate() {
                    let pred = dot(bt.row(k), &rho);
                    pred_err += (yv - pred) * (yv - pred);
                }
                let r2 = 1.0 - pred_err / yt.len() as f64 / var_y;
                out.push((sq, r2));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summaries = Vec::with_capacity(variants.len());
    for (vi, &variant) in variants.iter().enumerate() {
        let mut sqs: Vec<f64> = results.iter().map(|r| r[vi].0).collect();
        let r2s: Vec<f64> = results.iter().map(|r| r[vi].1).collect();
        let mean_mse = sqs.iter().sum::<f64>() / reps as f64;
        sqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_mse = if reps % 2 == 1 {
            sqs[reps / 2]
        } else {
            0.5 * (sqs[reps / 2 - 1] + sqs[reps / 2])
        };
        summaries.push(VariantSummary {
            variant: variant.label().to_string(),
            reps,
            mean_mse,
            median_mse,
            mean_holdout_r2: r2s.iter().sum::<f64>() / reps as f64,
        });
    }
    Ok(summaries)
}
