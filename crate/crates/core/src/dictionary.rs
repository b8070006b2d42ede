//! Dictionaries of basis functions b(x): polynomial and interaction terms,
//! treatment-split blocks, analytic partial derivatives, counterfactual
//! evaluation, and the correlated-random-effects panel dictionary.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Which arm of a binary treatment gates a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Multiplies by d.
    Treated,
    /// Multiplies by 1-d.
    Control,
}

/// A single basis term over named columns.
#[derive(Debug, Clone, PartialEq)]
pub enum TermSpec {
    Constant,
    Monomial { col: String, power: u32 },
    /// Product of monomials over distinct columns.
    Product { factors: Vec<(String, u32)> },
    /// Arm-gated term: d * inner or (1-d) * inner.
    TreatmentBlock { treatment: String, arm: Arm, inner: Box<TermSpec> },
}

impl TermSpec {
    pub fn monomial(col: &str, power: u32) -> Result<Self> {
        if power == 0 {
            return Err(Error::InvalidInput(format!(
                "monomial power must be >= 1 (got {col}^0); use a constant term"
            )));
        }
        Ok(TermSpec::Monomial { col: col.to_string(), power })
    }

    /// Build a product, combining repeated columns by summing powers.
    pub fn product(factors: &[(&str, u32)]) -> Result<Self> {
        let mut combined: Vec<(String, u32)> = Vec::new();
        for &(col, pow) in factors {
            if pow == 0 {
                return Err(Error::InvalidInput("product factor power must be >= 1".into()));
            }
            match combined.iter_mut().find(|(c, _)| c == col) {
                Some((_, p)) => *p += pow,
                None => combined.push((col.to_string(), pow)),
            }
        }
        match combined.len() {
            0 => Ok(TermSpec::Constant),
            1 => Ok(TermSpec::Monomial { col: combined[0].0.clone(), power: combined[0].1 }),
            _ => Ok(TermSpec::Product { factors: combined }),
        }
    }

    pub fn gated(treatment: &str, arm: Arm, inner: TermSpec) -> Self {
        TermSpec::TreatmentBlock {
            treatment: treatment.to_string(),
            arm,
            inner: Box::new(inner),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TermSpec::Constant => "1".to_string(),
            TermSpec::Monomial { col, power } => {
                if *power == 1 {
                    col.clone()
                } else {
                    format!("{col}^{power}")
                }
            }
            TermSpec::Product { factors } => factors
                .iter()
                .map(|(c, p)| if *p == 1 { c.clone() } else { format!("{c}^{p}") })
                .collect::<Vec<_>>()
                .join("*"),
            TermSpec::TreatmentBlock { treatment, arm, inner } => match arm {
                Arm::Treated => format!("{treatment}:{}", inner.label()),
                Arm::Control => format!("(1-{treatment}):{}", inner.label()),
            },
        }
    }

    fn columns(&self, out: &mut Vec<String>) {
        match self {
            TermSpec::Constant => {}
            TermSpec::Monomial { col, .. } => out.push(col.clone()),
            TermSpec::Product { factors } => out.extend(factors.iter().map(|(c, _)| c.clone())),
            TermSpec::TreatmentBlock { treatment, inner, .. } => {
                out.push(treatment.clone());
                inner.columns(out);
            }
        }
    }
}

/// Resolved (column-index) form of a term, used on evaluation hot paths.
#[derive(Debug, Clone)]
enum ResolvedTerm {
    Constant,
    Monomial { col: usize, power: u32 },
    Product { factors: Vec<(usize, u32)> },
    Gated { treatment: usize, treated: bool, inner: Box<ResolvedTerm> },
}

impl ResolvedTerm {
    fn eval(&self, get: &dyn Fn(usize) -> f64) -> f64 {
        match self {
            ResolvedTerm::Constant => 1.0,
            ResolvedTerm::Monomial { col, power } => get(*col).powi(*power as i32),
            ResolvedTerm::Product { factors } => factors
                .iter()
                .map(|&(c, p)| get(c).powi(p as i32))
                .product(),
            ResolvedTerm::Gated { treatment, treated, inner } => {
                let d = get(*treatment);
                let gate = if *treated { d } else { 1.0 - d };
                if gate == 0.0 {
                    0.0
                } else {
                    gate * inner.eval(get)
                }
            }
        }
    }

    /// Analytic partial with respect to column `wrt`.
    fn partial(&self, get: &dyn Fn(usize) -> f64, wrt: usize) -> Result<f64> {
        Ok(match self {
            ResolvedTerm::Constant => 0.0,
            ResolvedTerm::Monomial { col, power } => {
                if *col != wrt {
                    0.0
                } else if *power == 1 {
                    1.0
                } else {
                    *power as f64 * get(*col).powi(*power as i32 - 1)
                }
            }
            ResolvedTerm::Product { factors } => {
                if !factors.iter().any(|&(c, _)| c == wrt) {
                    0.0
                } else {
                    let mut acc = 0.0;
                    for (k, &(c, p)) in factors.iter().enumerate() {
                        if c != wrt {
                            continue;
                        }
                        let mut v = p as f64 * get(c).powi(p as i32 - 1);
                        for (j, &(c2, p2)) in factors.iter().enumerate() {
                            if j != k {
                                v *= get(c2).powi(p2 as i32);
                            }
                        }
                        acc += v;
                    }
                    acc
                }
            }
            ResolvedTerm::Gated { treatment, treated, inner } => {
                if *treatment == wrt {
                    return Err(Error::InvalidInput(
                        "treatment-gated term is not differentiable in the treatment column"
                            .into(),
                    ));
                }
                let d = get(*treatment);
                let gate = if *treated { d } else { 1.0 - d };
                if gate == 0.0 {
                    0.0
                } else {
                    gate * inner.partial(get, wrt)?
                }
            }
        })
    }
}

/// Ordered dictionary of basis terms. Term order is coefficient order; labels
/// are unique.
#[derive(Debug, Clone)]
pub struct Dictionary {
    terms: Vec<TermSpec>,
    labels: Vec<String>,
}

impl Dictionary {
    pub fn new(terms: Vec<TermSpec>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("dictionary has no terms".into()));
        }
        let labels: Vec<String> = terms.iter().map(|t| t.label()).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidInput(format!("duplicate dictionary term: {l}")));
            }
        }
        Ok(Dictionary { terms, labels })
    }

    pub fn terms(&self) -> &[TermSpec] {
        &self.terms
    }

    /// Constant term plus powers 1..=degree of each listed column.
    pub fn polynomial(cols: &[&str], degree: u32) -> Result<Self> {
        let mut terms = vec![TermSpec::Constant];
        for &c in cols {
            for p in 1..=degree {
                terms.push(TermSpec::monomial(c, p)?);
            }
        }
        Dictionary::new(terms)
    }

    /// Fully interacted dictionary (1, D, Z, DZ) over the given covariates.
    pub fn fully_interacted(treatment: &str, covariates: &[&str]) -> Result<Self> {
        let mut terms = vec![TermSpec::Constant, TermSpec::monomial(treatment, 1)?];
        for &z in covariates {
            terms.push(TermSpec::monomial(z, 1)?);
        }
        for &z in covariates {
            terms.push(TermSpec::product(&[(treatment, 1), (z, 1)])?);
        }
        Dictionary::new(terms)
    }

    /// Arm-split dictionary [d*q(z), (1-d)*q(z)] from an inner dictionary q.
    pub fn arm_split(treatment: &str, inner: &Dictionary) -> Result<Self> {
        let mut terms = Vec::with_capacity(2 * inner.terms.len());
        for t in &inner.terms {
            terms.push(TermSpec::gated(treatment, Arm::Treated, t.clone()));
        }
        for t in &inner.terms {
            terms.push(TermSpec::gated(treatment, Arm::Control, t.clone()));
        }
        Dictionary::new(terms)
    }

    fn resolve(&self, data: &Dataset) -> Result<Vec<ResolvedTerm>> {
        fn res(t: &TermSpec, data: &Dataset) -> Result<ResolvedTerm> {
            Ok(match t {
                TermSpec::Constant => ResolvedTerm::Constant,
                TermSpec::Monomial { col, power } => ResolvedTerm::Monomial {
                    col: data.column_index(col)?,
                    power: *power,
                },
                TermSpec::Product { factors } => ResolvedTerm::Product {
                    factors: factors
                        .iter()
                        .map(|(c, p)| Ok((data.column_index(c)?, *p)))
                        .collect::<Result<Vec<_>>>()?,
                },
                TermSpec::TreatmentBlock { treatment, arm, inner } => ResolvedTerm::Gated {
                    treatment: data.column_index(treatment)?,
                    treated: *arm == Arm::Treated,
                    inner: Box::new(res(inner, data)?),
                },
            })
        }
        self.terms.iter().map(|t| res(t, data)).collect()
    }
}

/// Override plan with column indices resolved against a dataset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pairs: Vec<(usize, f64)>,
}

impl Overrides {
    pub fn resolve(data: &Dataset, named: &[(&str, f64)]) -> Result<Self> {
        let pairs = named
            .iter()
            .map(|(c, v)| Ok((data.column_index(c)?, *v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Overrides { pairs })
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    fn value(&self, data: &Dataset, col: usize, row: usize) -> f64 {
        for &(c, v) in &self.pairs {
            if c == col {
                return v;
            }
        }
        data.value_at(col, row)
    }
}

/// A p-dimensional evaluable basis over dataset rows. Implemented by the flat
/// `Dictionary` and by `PanelDictionary`.
pub trait Basis: Send + Sync {
    fn p(&self) -> usize;
    fn labels(&self) -> &[String];
    /// True when term 0 is the constant; the intercept penalty discount in
    /// the Lasso tuner applies only in that case.
    fn constant_first(&self) -> bool;
    fn required_columns(&self) -> Vec<String>;

    fn eval_row(&self, data: &Dataset, row: usize, out: &mut [f64]) -> Result<()>;
    fn eval_row_override(
        &self,
        data: &Dataset,
        row: usize,
        ov: &Overrides,
        out: &mut [f64],
    ) -> Result<()>;
    fn eval_row_partial(
        &self,
        data: &Dataset,
        row: usize,
        wrt: &str,
        out: &mut [f64],
    ) -> Result<()>;

    fn matrix(&self, data: &Dataset, rows: &[usize]) -> Result<Mat> {
        let mut m = Mat::zeros(rows.len(), self.p());
        for (k, &r) in rows.iter().enumerate() {
            self.eval_row(data, r, m.row_mut(k))?;
        }
        Ok(m)
    }

    fn matrix_override(&self, data: &Dataset, rows: &[usize], ov: &Overrides) -> Result<Mat> {
        let mut m = Mat::zeros(rows.len(), self.p());
        for (k, &r) in rows.iter().enumerate() {
            self.eval_row_override(data, r, ov, m.row_mut(k))?;
        }
        Ok(m)
    }

    fn matrix_partial(&self, data: &Dataset, rows: &[usize], wrt: &str) -> Result<Mat> {
        let mut m = Mat::zeros(rows.len(), self.p());
        for (k, &r) in rows.iter().enumerate() {
            self.eval_row_partial(data, r, wrt, m.row_mut(k))?;
        }
        Ok(m)
    }

    /// Diagnostic sup-norm max_j sup_rows |b_j|; reported, never enforced.
    fn sup_bound(&self, data: &Dataset, rows: &[usize]) -> Result<f64> {
        let mut buf = vec![0.0; self.p()];
        let mut worst = 0.0_f64;
        for &r in rows {
            self.eval_row(data, r, &mut buf)?;
            for &v in &buf {
                worst = worst.max(v.abs());
            }
        }
        Ok(worst)
    }
}

impl Basis for Dictionary {
    fn p(&self) -> usize {
        self.terms.len()
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn constant_first(&self) -> bool {
        matches!(self.terms.first(), Some(TermSpec::Constant))
    }

    fn required_columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for t in &self.terms {
            t.columns(&mut cols);
        }
        cols.sort();
        cols.dedup();
        cols
    }

    fn eval_row(&self, data: &Dataset, row: usize, out: &mut [f64]) -> Result<()> {
        let resolved = self.resolve(data)?;
        let get = |c: usize| data.value_at(c, row);
        for (o, t) in out.iter_mut().zip(&resolved) {
            *o = t.eval(&get);
        }
        Ok(())
    }

    fn eval_row_override(
        &self,
        data: &Dataset,
        row: usize,
        ov: &Overrides,
        out: &mut [f64],
    ) -> Result<()> {
        let resolved = self.resolve(data)?;
        let get = |c: usize| ov.value(data, c, row);
        for (o, t) in out.iter_mut().zip(&resolved) {
            *o = t.eval(&get);
        }
        Ok(())
    }

    fn eval_row_partial(
        &self,
        data: &Dataset,
        row: usize,
        wrt: &str,
        out: &mut [f64],
    ) -> Result<()> {
        let resolved = self.resolve(data)?;
        let wrt_idx = data.column_index(wrt)?;
        let get = |c: usize| data.value_at(c, row);
        for (o, t) in out.iter_mut().zip(&resolved) {
            *o = t.partial(&get, wrt_idx)?;
        }
        Ok(())
    }

    fn matrix(&self, data: &Dataset, rows: &[usize]) -> Result<Mat> {
        let resolved = self.resolve(data)?;
        let mut m = Mat::zeros(rows.len(), self.p());
        for (k, &r) in rows.iter().enumerate() {
            let get = |c: usize| data.value_at(c, r);
            for (o, t) in m.row_mut(k).iter_mut().zip(&resolved) {
                *o = t.eval(&get);
            }
        }
        Ok(m)
    }

    fn matrix_override(&self, data: &Dataset, rows: &[usize], ov: &Overrides) -> Result<Mat> {
        let resolved = self.resolve(data)?;
        let mut m = Mat::zeros(rows.len(), self.p());
        for (k, &r) in rows.iter().enumerate() {
            let get = |c: usize| ov.value(data, c, r);
            for (o, t) in m.row_mut(k).iter_mut().zip(&resolved) {
                *o = t.eval(&get);
            }
        }
        Ok(m)
    }

    fn matrix_partial(&self, data: &Dataset, rows: &[usize], wrt: &str) -> Result<Mat> {
        let resolved = self.resolve(data)?;
        let wrt_idx = data.column_index(wrt)?;
        let mut m = Mat::zeros(rows.len(), self.p());
        for (k, &r) in rows.iter().enumerate() {
            let get = |c: usize| data.value_at(c, r);
            for (o, t) in m.row_mut(k).iter_mut().zip(&resolved) {
                *o = t.partial(&get, wrt_idx)?;
            }
        }
        Ok(m)
    }
}

/// Correlated-random-effects panel dictionary. A K-dimensional base
/// dictionary over per-period columns induces a p = K + K^2 dictionary: the
/// base terms plus base terms crossed with the centered cluster-level time
/// averages of the base.
pub struct PanelDictionary {
    base: Dictionary,
    k: usize,
    labels: Vec<String>,
    /// Per-cluster centered time average of the base dictionary.
    centered: Vec<Vec<f64>>,
    row_cluster: Vec<usize>,
    n_rows: usize,
}

/// Compute the cluster time averages of the base dictionary, subtract their
/// grand mean (equal weight per cluster), and assemble the induced panel
/// dictionary together with nothing else; per-row evaluations are available
/// through the `Basis` impl.
pub fn build_panel_dictionary(data: &Dataset, base: &Dictionary) -> Result<PanelDictionary> {
    let cluster = data
        .cluster
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("panel dictionary requires a cluster column".into()))?
        .clone();
    let k = base.p();
    let mut buf = vec![0.0; k];
    let mut h_tilde: Vec<Vec<f64>> = Vec::with_capacity(cluster.n_clusters());
    for members in &cluster.members {
        let mut acc = vec![0.0; k];
        for &row in members {
            base.eval_row(data, row, &mut buf)?;
            for (a, &v) in acc.iter_mut().zip(&buf) {
                *a += v;
            }
        }
        let t = members.len() as f64;
        for a in &mut acc {
            *a /= t;
        }
        h_tilde.push(acc);
    }
    let n_cl = h_tilde.len() as f64;
    let mut grand = vec![0.0; k];
    for h in &h_tilde {
        for (g, &v) in grand.iter_mut().zip(h) {
            *g += v;
        }
    }
    for g in &mut grand {
        *g /= n_cl;
    }
    let centered: Vec<Vec<f64>> = h_tilde
        .iter()
        .map(|h| h.iter().zip(&grand).map(|(&a, &b)| a - b).collect())
        .collect();
    let mut labels = base.labels.clone();
    for j in 0..k {
        for l in 0..k {
            labels.push(format!("{}(x)H~{}", base.labels[j], base.labels[l]));
        }
    }
    Ok(PanelDictionary {
        base: base.clone(),
        k,
        labels,
        centered,
        row_cluster: cluster.row_cluster.clone(),
        n_rows: data.n_rows(),
    })
}

impl PanelDictionary {
    pub fn k(&self) -> usize {
        self.k
    }

    fn assemble(&self, base_vals: &[f64], row: usize, out: &mut [f64]) {
        let h = &self.centered[self.row_cluster[row]];
        out[..self.k].copy_from_slice(base_vals);
        let mut idx = self.k;
        for &bj in base_vals {
            for &hl in h {
                out[idx] = bj * hl;
                idx += 1;
            }
        }
    }

    fn check_row(&self, data: &Dataset, row: usize) -> Result<()> {
        if data.n_rows() != self.n_rows || row >= self.n_rows {
            return Err(Error::InvalidInput(
                "panel dictionary used with a dataset it was not built from".into(),
            ));
        }
        Ok(())
    }
}

impl Basis for PanelDictionary {
    fn p(&self) -> usize {
        self.k + self.k * self.k
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn constant_first(&self) -> bool {
        self.base.constant_first()
    }

    fn required_columns(&self) -> Vec<String> {
        self.base.required_columns()
    }

    fn eval_row(&self, data: &Dataset, row: usize, out: &mut [f64]) -> Result<()> {
        self.check_row(data, row)?;
        let mut base_vals = vec![0.0; self.k];
        self.base.eval_row(data, row, &mut base_vals)?;
        self.assemble(&base_vals, row, out);
        Ok(())
    }

    fn eval_row_override(
        &self,
        data: &Dataset,
        row: usize,
        ov: &Overrides,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_row(data, row)?;
        let mut base_vals = vec![0.0; self.k];
        self.base.eval_row_override(data, row, ov, &mut base_vals)?;
        // Cluster averages are treated as fixed attributes of the cluster;
        // only the current-period block responds to the override.
        self.assemble(&base_vals, row, out);
        Ok(())
    }

    /// Derivative convention for the induced dictionary: the current-period
    /// block differentiates analytically and the cross block is held fixed
    /// (zero), matching the average-derivative moments used for panels.
    fn eval_row_partial(
        &self,
        data: &Dataset,
        row: usize,
        wrt: &str,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_row(data, row)?;
        let mut base_vals = vec![0.0; self.k];
        self.base.eval_row_partial(data, row, wrt, &mut base_vals)?;
        out[..self.k].copy_from_slice(&base_vals);
        for o in out[self.k..].iter_mut() {
            *o = 0.0;
        }
        Ok(())
    }
}

/// Parse a dictionary specification string. Grammar (whitespace separates
/// top-level generators):
///
/// ```text
/// const                    constant term
/// z                        bare column: monomial z
/// poly(z,4)                z, z^2, z^3, z^4
/// prod(a^2,b)              single product term a^2 * b
/// full(d; z1, z2)          fully interacted: 1, d, z1, z2, d*z1, d*z2
/// interact(d; <spec>)      arm split: d*t and (1-d)*t for each inner term t
/// ```
pub fn parse_dictionary_spec(spec: &str) -> Result<Dictionary> {
    let terms = parse_generators(spec)?;
    Dictionary::new(terms)
}

fn parse_generators(spec: &str) -> Result<Vec<TermSpec>> {
    let mut terms = Vec::new();
    for gen in split_top_level(spec, &[' ', '\t', ','])? {
        terms.extend(parse_generator(&gen)?);
    }
    Ok(terms)
}

fn parse_generator(gen: &str) -> Result<Vec<TermSpec>> {
    let gen = gen.trim();
    if gen.is_empty() {
        return Ok(vec![]);
    }
    if gen == "const" || gen == "1" {
        return Ok(vec![TermSpec::Constant]);
    }
    if let Some(body) = call_body(gen, "poly") {
        let parts = split_top_level(&body, &[','])?;
        if parts.len() != 2 {
            return Err(Error::InvalidInput(format!("poly expects poly(col,degree): {gen}")));
        }
        let degree: u32 = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad degree in {gen}")))?;
        if degree == 0 {
            return Err(Error::InvalidInput(format!("degree must be >= 1 in {gen}")));
        }
        return (1..=degree)
            .map(|p| TermSpec::monomial(parts[0].trim(), p))
            .collect();
    }
    if let Some(body) = call_body(gen, "prod") {
        let parts = split_top_level(&body, &[','])?;
        let factors = parts
            .iter()
            .map(|f| parse_factor(f))
            .collect::<Result<Vec<_>>>()?;
        let borrowed: Vec<(&str, u32)> = factors.iter().map(|(c, p)| (c.as_str(), *p)).collect();
        return Ok(vec![TermSpec::product(&borrowed)?]);
    }
    if let Some(body) = call_body(gen, "full") {
        let (treat, rest) = split_semicolon(&body, gen)?;
        let cols = split_top_level(&rest, &[','])?;
        let cols: Vec<&str> = cols.iter().map(|c| c.trim()).collect();
        let dict = Dictionary::fully_interacted(treat.trim(), &cols)?;
        return Ok(dict.terms);
    }
    if let Some(body) = call_body(gen, "interact") {
        let (treat, rest) = split_semicolon(&body, gen)?;
        let inner = parse_generators(&rest)?;
        let treat = treat.trim();
        let mut out = Vec::with_capacity(inner.len() * 2);
        for t in &inner {
            out.push(TermSpec::gated(treat, Arm::Treated, t.clone()));
        }
        for t in &inner {
            out.push(TermSpec::gated(treat, Arm::Control, t.clone()));
        }
        return Ok(out);
    }
    // Bare column name, optionally with a power.
    let (col, pow) = parse_factor(gen)?;
    Ok(vec![TermSpec::monomial(&col, pow)?])
}

fn parse_factor(f: &str) -> Result<(String, u32)> {
    let f = f.trim();
    if let Some((col, pow)) = f.split_once('^') {
        let p: u32 = pow
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad power in factor {f}")))?;
        Ok((col.trim().to_string(), p))
    } else {
        if f.is_empty() || f.contains(['(', ')']) {
            return Err(Error::InvalidInput(format!("cannot parse dictionary token: {f}")));
        }
        Ok((f.to_string(), 1))
    }
}

fn call_body(s: &str, name: &str) -> Option<String> {
    let rest = s.strip_prefix(name)?;
    let rest = rest.trim_start();
    let rest = rest.strip_prefix('(')?;
    let rest = rest.strip_suffix(')')?;
    Some(rest.to_string())
}

fn split_semicolon(body: &str, ctx: &str) -> Result<(String, String)> {
    match body.split_once(';') {
        Some((a, b)) => Ok((a.to_string(), b.to_string())),
        None => Err(Error::InvalidInput(format!(
            "expected 'treatment; terms' inside {ctx}"
        ))),
    }
}

fn split_top_level(s: &str, seps: &[char]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::InvalidInput(format!("unbalanced parentheses in {s}")));
                }
                cur.push(ch);
            }
            c if depth == 0 && seps.contains(&c) => {
                if !cur.trim().is_empty() {
                    out.push(cur.trim().to_string());
                }
                cur.clear();
            }
            c => cur.push(c),
        }
    }
    if depth != 0 {
        return Err(Error::InvalidInput(format!("unbalanced parentheses in {s}")));
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    Ok(out)
}
