//! Flat key-value run configuration: `section.key = value` lines, `#`
//! comments. Every key is validated against the known set so typos surface
//! as errors naming the key.

use autodml_core::data::{Role, Schema};
use autodml_core::dictionary::{parse_dictionary_spec, Basis, Dictionary};
use autodml_core::error::{Error, Result};
use autodml_core::estimator::{ElasticityKind, EstimateOptions, FoldFailurePolicy, RegressionSpec, RieszSpec};
use autodml_core::functionals::{AffineMap, MomentFunctional, PointMass};
use autodml_core::gmm::{BinaryChoice, Link};
use autodml_core::regression::load_external_predictions;
use autodml_core::riesz::{DantzigConfig, LassoMdConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub struct RawConfig {
    values: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!(
                    "config line {} is not `key = value`: {raw}",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::InvalidInput(format!("duplicate config key: {key}")));
            }
        }
        Ok(RawConfig {
            values,
            used: std::cell::RefCell::new(Default::default()),
        })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path.as_ref())?;
        RawConfig::parse(&text)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str, why: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidInput(format!("config key {key} is required {why}")))
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("config key {key}: not a number: {v}"))),
        }
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("config key {key}: not an integer: {v}"))),
        }
    }

    fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("config key {key}: not an integer: {v}"))),
        }
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(Error::InvalidInput(format!(
                "config key {key}: expected true/false, got {v}"
            ))),
        }
    }

    fn get_list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Reject keys that were never consulted (catches typos).
    pub fn check_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        for key in self.values.keys() {
            if !used.contains(key) {
                return Err(Error::InvalidInput(format!("unknown config key: {key}")));
            }
        }
        Ok(())
    }
}

pub struct EstimateConfig {
    pub data_path: PathBuf,
    pub schema: Schema,
    pub outcome: String,
    pub basis_kind: BasisKind,
    pub functional: MomentFunctional,
    pub folds_l: usize,
    pub folds_seed: u64,
    pub estimate_options: EstimateOptions,
    pub riesz: RieszSpec,
    pub regression: RegressionSpec,
    pub transform: TransformKind,
    pub report_path: Option<PathBuf>,
    pub influence_path: Option<PathBuf>,
}

pub enum BasisKind {
    Flat(Dictionary),
    /// Correlated-random-effects panel dictionary built from these base
    /// terms; requires a cluster column.
    Panel(Dictionary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    None,
    Att,
    Decomposition,
    Elasticity(ElasticityKind),
}

pub struct GmmRunConfig {
    pub data_path: PathBuf,
    pub schema: Schema,
    pub basis_kind: BasisKind,
    pub model: BinaryChoice,
    pub folds_l: usize,
    pub folds_seed: u64,
    pub riesz: RieszSpec,
    pub regression: RegressionSpec,
    pub iterate_initial: bool,
    pub report_path: Option<PathBuf>,
}

fn build_schema(cfg: &RawConfig) -> Result<(Schema, String)> {
    let mut schema = Schema::new();
    let outcome = cfg.require("data.outcome", "(the outcome column)")?.to_string();
    schema = schema.with(&outcome, Role::Outcome);
    if let Some(t) = cfg.get("data.treatment") {
        schema = schema.with(t, Role::Treatment);
    }
    for c in cfg.get_list("data.covariates") {
        schema = schema.with(&c, Role::Covariate);
    }
    for c in cfg.get_list("data.instruments") {
        schema = schema.with(&c, Role::Instrument);
    }
    if let Some(w) = cfg.get("data.weight") {
        schema = schema.with(w, Role::Weight);
    }
    if let Some(cl) = cfg.get("data.cluster") {
        schema = schema.with(cl, Role::Cluster);
    }
    for c in cfg.get_list("data.aux") {
        schema = schema.with(&c, Role::Aux);
    }
    Ok((schema, outcome))
}

fn build_basis(cfg: &RawConfig) -> Result<BasisKind> {
    let panel = cfg.get_bool("panel")?.unwrap_or(false);
    if panel {
        let base = cfg.require("panel.base", "(base dictionary for the panel)")?;
        Ok(BasisKind::Panel(parse_dictionary_spec(base)?))
    } else {
        let spec = cfg.require("dictionary", "(the basis terms)")?;
        Ok(BasisKind::Flat(parse_dictionary_spec(spec)?))
    }
}

fn build_functional(cfg: &RawConfig) -> Result<MomentFunctional> {
    let name = cfg.require("functional", "(which effect to estimate)")?;
    match name {
        "ate" => {
            let t = cfg
                .get("data.treatment")
                .ok_or_else(|| Error::InvalidInput(
                    "config key data.treatment is required for functional = ate".into(),
                ))?;
            Ok(MomentFunctional::Ate { treatment: t.to_string() })
        }
        "cross_average" => {
            let t = cfg
                .get("data.treatment")
                .ok_or_else(|| Error::InvalidInput(
                    "config key data.treatment is required for functional = cross_average".into(),
                ))?;
            Ok(MomentFunctional::CrossAverage { treatment: t.to_string() })
        }
        "avg_derivative" => {
            let wrt = cfg.require("avg_derivative.wrt", "for functional = avg_derivative")?;
            Ok(MomentFunctional::AvgDerivative {
                wrt: wrt.to_string(),
                weight: cfg.get("avg_derivative.weight").map(|s| s.to_string()),
            })
        }
        "transport" => {
            let cols = cfg.get_list("transport.columns");
            if cols.is_empty() {
                return Err(Error::InvalidInput(
                    "config key transport.columns is required for functional = transport".into(),
                ));
            }
            let scales = cfg.get_list("transport.scales");
            let shifts = cfg.get_list("transport.shifts");
            let mut maps = Vec::new();
            for (i, col) in cols.iter().enumerate() {
                let scale: f64 = scales
                    .get(i)
                    .map(|s| s.parse())
                    .transpose()
                    .map_err(|_| Error::InvalidInput("transport.scales: bad number".into()))?
                    .unwrap_or(1.0);
                let shift: f64 = shifts
                    .get(i)
                    .map(|s| s.parse())
                    .transpose()
                    .map_err(|_| Error::InvalidInput("transport.shifts: bad number".into()))?
                    .unwrap_or(0.0);
                maps.push(AffineMap { column: col.clone(), scale, shift });
            }
            Ok(MomentFunctional::Transport { maps })
        }
        "policy_effect" => {
            let path = cfg.require("policy_effect.file", "for functional = policy_effect")?;
            let masses = load_point_masses(path)?;
            Ok(MomentFunctional::PolicyEffect { masses })
        }
        "aev_bound" => Ok(MomentFunctional::AevBound {
            price: cfg.require("aev.price", "for functional = aev_bound")?.to_string(),
            income: cfg.require("aev.income", "for functional = aev_bound")?.to_string(),
            weight: cfg.get("aev.weight").map(|s| s.to_string()),
            p_low: cfg
                .get_f64("aev.p_low")?
                .ok_or_else(|| Error::InvalidInput("config key aev.p_low is required".into()))?,
            p_high: cfg
                .get_f64("aev.p_high")?
                .ok_or_else(|| Error::InvalidInput("config key aev.p_high is required".into()))?,
            kappa: cfg.get_f64("aev.kappa")?.unwrap_or(0.0),
            order: cfg.get_usize("aev.order")?.unwrap_or(32),
        }),
        "residual_only" => {
            let outcome = cfg.require("data.outcome", "(the outcome column)")?;
            Ok(MomentFunctional::ResidualOnly { outcome: outcome.to_string() })
        }
        other => Err(Error::InvalidInput(format!(
            "config key functional: unknown value {other}"
        ))),
    }
}

/// Point masses from a CSV: a `weight` column plus one column per covariate.
fn load_point_masses<P: AsRef<Path>>(path: P) -> Result<Vec<PointMass>> {
    let schema_probe = std::fs::read_to_string(path.as_ref())?;
    let mut lines = schema_probe.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidData("empty point-mass file".into()))?;
    let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    let wi = cols
        .iter()
        .position(|c| *c == "weight")
        .ok_or_else(|| Error::MissingColumn("weight".into()))?;
    let mut masses = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        let mut weight = 0.0;
        let mut point = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row: row + 1,
                column: cols.get(i).unwrap_or(&"?").to_string(),
            })?;
            if i == wi {
                weight = v;
            } else {
                point.push((cols[i].to_string(), v));
            }
        }
        masses.push(PointMass { weight, point });
    }
    Ok(masses)
}

fn build_lasso_config(cfg: &RawConfig) -> Result<LassoMdConfig> {
    let mut c = LassoMdConfig::default();
    if let Some(v) = cfg.get_f64("riesz.c1")? {
        c.c1 = v;
    }
    if let Some(v) = cfg.get_f64("riesz.c2")? {
        c.c2 = v;
    }
    if let Some(v) = cfg.get_f64("riesz.c3")? {
        c.c3 = v;
    }
    if let Some(v) = cfg.get_f64("riesz.low_dim_fraction")? {
        c.low_dim_fraction = v;
    }
    if let Some(v) = cfg.get_usize("riesz.max_outer_iters")? {
        c.max_outer_iters = v;
    }
    if let Some(v) = cfg.get_f64("riesz.ridge_shift")? {
        c.ridge_shift = v;
    }
    if let Some(v) = cfg.get_f64("riesz.tol")? {
        c.tol = v;
    }
    if let Some(v) = cfg.get_f64("riesz.fixed_r_l")? {
        c.fixed_r_l = Some(v);
    }
    c.validate()?;
    Ok(c)
}

fn build_riesz_spec(cfg: &RawConfig) -> Result<RieszSpec> {
    match cfg.get("riesz.learner").unwrap_or("lasso") {
        "lasso" | "lasso_md" => Ok(RieszSpec::LassoMd(build_lasso_config(cfg)?)),
        "dantzig" | "dantzig_md" => Ok(RieszSpec::Dantzig(DantzigConfig {
            lambda: cfg.get_f64("dantzig.lambda")?,
            lp_tol: cfg.get_f64("dantzig.lp_tol")?.unwrap_or(1e-9),
        })),
        other => Err(Error::InvalidInput(format!(
            "config key riesz.learner: unknown value {other}"
        ))),
    }
}

fn build_regression_spec(cfg: &RawConfig) -> Result<RegressionSpec> {
    match cfg.get("regression.learner").unwrap_or("lasso") {
        "lasso" | "lasso_md" => Ok(RegressionSpec::LassoMd(build_lasso_config(cfg)?)),
        "ols" => Ok(RegressionSpec::Ols),
        "external" => {
            let path = cfg.require("regression.external", "for regression.learner = external")?;
            Ok(RegressionSpec::External(Arc::new(load_external_predictions(path)?)))
        }
        other => Err(Error::InvalidInput(format!(
            "config key regression.learner: unknown value {other}"
        ))),
    }
}

fn build_folds(cfg: &RawConfig) -> Result<(usize, u64)> {
    let l = cfg.get_usize("folds.count")?.unwrap_or(5);
    let seed = cfg.get_u64("folds.seed")?.unwrap_or(0);
    Ok((l, seed))
}

fn build_estimate_options(cfg: &RawConfig) -> Result<EstimateOptions> {
    let on_fold_failure = match cfg.get("folds.on_failure").unwrap_or("error") {
        "error" => FoldFailurePolicy::HardError,
        "exclude" => FoldFailurePolicy::ExcludeFold,
        other => {
            return Err(Error::InvalidInput(format!(
                "config key folds.on_failure: expected error or exclude, got {other}"
            )))
        }
    };
    Ok(EstimateOptions { on_fold_failure })
}

pub fn estimate_config(cfg: &RawConfig) -> Result<EstimateConfig> {
    let data_path = PathBuf::from(cfg.require("data.path", "(the input CSV)")?);
    let (schema, outcome) = build_schema(cfg)?;
    let basis_kind = build_basis(cfg)?;
    let functional = build_functional(cfg)?;
    let (folds_l, folds_seed) = build_folds(cfg)?;
    let estimate_options = build_estimate_options(cfg)?;
    let riesz = build_riesz_spec(cfg)?;
    let regression = build_regression_spec(cfg)?;
    let transform = match cfg.get("transform").unwrap_or("none") {
        "none" => TransformKind::None,
        "att" => TransformKind::Att,
        "decomposition" => TransformKind::Decomposition,
        "elasticity_income" => TransformKind::Elasticity(ElasticityKind::Income),
        "elasticity_own" => TransformKind::Elasticity(ElasticityKind::OwnPrice),
        "elasticity_cross" => TransformKind::Elasticity(ElasticityKind::CrossPrice),
        other => {
            return Err(Error::InvalidInput(format!(
                "config key transform: unknown value {other}"
            )))
        }
    };
    // Transform prerequisites are config-level contracts; catch them before
    // any computation.
    if matches!(transform, TransformKind::Att | TransformKind::Decomposition)
        && cfg.get("data.treatment").is_none()
    {
        return Err(Error::InvalidInput(
            "config key data.treatment is required for the requested transform".into(),
        ));
    }
    let report_path = cfg.get("output.report").map(PathBuf::from);
    let influence_path = cfg.get("output.influence").map(PathBuf::from);
    cfg.check_unknown()?;
    Ok(EstimateConfig {
        data_path,
        schema,
        outcome,
        basis_kind,
        functional,
        folds_l,
        folds_seed,
        estimate_options,
        riesz,
        regression,
        transform,
        report_path,
        influence_path,
    })
}

pub fn gmm_config(cfg: &RawConfig) -> Result<GmmRunConfig> {
    let data_path = PathBuf::from(cfg.require("data.path", "(the input CSV)")?);
    let (schema, outcome) = build_schema(cfg)?;
    let basis_kind = build_basis(cfg)?;
    match cfg.require("gmm.model", "(which moment model)")? {
        "binary_choice" => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "config key gmm.model: unknown value {other}"
            )))
        }
    }
    let link = match cfg.get("binary_choice.link").unwrap_or("probit") {
        "probit" => Link::Probit,
        "logit" => Link::Logit,
        other => {
            return Err(Error::InvalidInput(format!(
                "config key binary_choice.link: unknown value {other}"
            )))
        }
    };
    let choice = cfg
        .require("binary_choice.choice", "for gmm.model = binary_choice")?
        .to_string();
    let model = BinaryChoice {
        link,
        choice,
        outcome,
        regressors: cfg.get_list("binary_choice.regressors"),
        instruments: cfg.get_list("binary_choice.instruments"),
        v_intercept: cfg.get_bool("binary_choice.v_intercept")?.unwrap_or(true),
        h_intercept: cfg.get_bool("binary_choice.h_intercept")?.unwrap_or(true),
        theta_abs_bound: cfg.get_f64("gmm.bound")?.unwrap_or(50.0),
    };
    let (folds_l, folds_seed) = build_folds(cfg)?;
    let riesz = build_riesz_spec(cfg)?;
    let regression = build_regression_spec(cfg)?;
    let iterate_initial = cfg.get_bool("gmm.iterate")?.unwrap_or(false);
    let report_path = cfg.get("output.report").map(PathBuf::from);
    cfg.check_unknown()?;
    Ok(GmmRunConfig {
        data_path,
        schema,
        basis_kind,
        model,
        folds_l,
        folds_seed,
        riesz,
        regression,
        iterate_initial,
        report_path,
    })
}

pub fn build_runtime_basis(
    kind: &BasisKind,
    data: &autodml_core::data::Dataset,
) -> Result<Arc<dyn Basis>> {
    match kind {
        BasisKind::Flat(dict) => Ok(Arc::new(dict.clone())),
        BasisKind::Panel(base) => Ok(Arc::new(autodml_core::dictionary::build_panel_dictionary(
            data, base,
        )?)),
    }
}
