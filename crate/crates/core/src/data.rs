//! Observation storage, CSV ingestion, and cluster-aware fold partitioning.

use crate::error::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// Role a column plays in an estimation problem. Stored for validation and
/// reporting; numeric access is by column name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Outcome,
    Treatment,
    Covariate,
    Instrument,
    Weight,
    Cluster,
    Aux,
}

/// Column-role mapping used when ingesting a CSV file.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub entries: Vec<(String, Role)>,
}

impl Schema {
    pub fn new() -> Self {
        Schema { entries: Vec::new() }
    }

    pub fn with(mut self, name: &str, role: Role) -> Self {
        self.entries.push((name.to_string(), role));
        self
    }

    pub fn cluster_column(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, r)| *r == Role::Cluster)
            .map(|(n, _)| n.as_str())
    }
}

/// Cluster structure derived from an integer id column. Clusters are indexed
/// in ascending id order; every row belongs to exactly one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub column: String,
    pub ids: Vec<i64>,
    /// Row indices of each cluster, ascending within and across clusters.
    pub members: Vec<Vec<usize>>,
    pub row_cluster: Vec<usize>,
}

impl ClusterInfo {
    fn from_values(column: &str, values: &[f64]) -> Result<Self> {
        let mut ids_of_row = Vec::with_capacity(values.len());
        for (row, &v) in values.iter().enumerate() {
            if !v.is_finite() || v.fract() != 0.0 || v.abs() > 9.0e15 {
                return Err(Error::InvalidData(format!(
                    "cluster id at row {} is not an integer: {v}",
                    row + 1
                )));
            }
            ids_of_row.push(v as i64);
        }
        let mut ids: Vec<i64> = ids_of_row.clone();
        ids.sort_unstable();
        ids.dedup();
        let pos: HashMap<i64, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut members = vec![Vec::new(); ids.len()];
        let mut row_cluster = Vec::with_capacity(values.len());
        for (row, id) in ids_of_row.iter().enumerate() {
            let c = pos[id];
            members[c].push(row);
            row_cluster.push(c);
        }
        Ok(ClusterInfo {
            column: column.to_string(),
            ids,
            members,
            row_cluster,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.ids.len()
    }
}

/// Columnar table of 64-bit reals with stable row order. All columns share
/// the same length and contain no NaN/Inf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    cols: Vec<Vec<f64>>,
    n_rows: usize,
    pub cluster: Option<ClusterInfo>,
    pub roles: Vec<(String, Role)>,
}

impl Dataset {
    /// Build from named columns; rejects ragged, empty, or non-finite data.
    pub fn from_columns(named: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if named.is_empty() {
            return Err(Error::InvalidData("dataset has no columns".into()));
        }
        let n_rows = named[0].1.len();
        if n_rows == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        let mut names = Vec::new();
        let mut cols = Vec::new();
        let mut index = HashMap::new();
        for (name, col) in named {
            if col.len() != n_rows {
                return Err(Error::InvalidData(format!(
                    "column {name} has length {} but expected {n_rows}",
                    col.len()
                )));
            }
            for (row, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite value in column {name} at row {}",
                        row + 1
                    )));
                }
            }
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(Error::InvalidData(format!("duplicate column {name}")));
            }
            names.push(name);
            cols.push(col);
        }
        Ok(Dataset {
            names,
            index,
            cols,
            n_rows,
            cluster: None,
            roles: Vec::new(),
        })
    }

    /// Designate an existing integer column as the cluster id.
    pub fn with_cluster(mut self, column: &str) -> Result<Self> {
        let vals = self.column(column)?.to_vec();
        self.cluster = Some(ClusterInfo::from_values(column, &vals)?);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.index
            .get(name)
            .map(|&i| self.cols[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    #[inline]
    pub fn value_at(&self, col_idx: usize, row: usize) -> f64 {
        self.cols[col_idx][row]
    }

    pub fn value(&self, name: &str, row: usize) -> Result<f64> {
        Ok(self.column(name)?[row])
    }

    /// New dataset holding the given rows (in the given order). Cluster info
    /// is rebuilt from the same column.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let named: Vec<(String, Vec<f64>)> = self
            .names
            .iter()
            .zip(&self.cols)
            .map(|(n, c)| (n.clone(), rows.iter().map(|&r| c[r]).collect()))
            .collect();
        let mut out = Dataset::from_columns(named)?;
        out.roles = self.roles.clone();
        if let Some(cl) = &self.cluster {
            out = out.with_cluster(&cl.column.clone())?;
        }
        Ok(out)
    }

    /// Overwrite one column in place (length must match).
    pub fn replace_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows {
            return Err(Error::InvalidData("column length mismatch".into()));
        }
        let idx = self.column_index(name)?;
        self.cols[idx] = values;
        Ok(())
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", self.names.join(","))?;
        for row in 0..self.n_rows {
            let line: Vec<String> = self.cols.iter().map(|c| format!("{}", c[row])).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Load a CSV file (RFC-4180 style, header required, UTF-8, `.` decimal
/// separator). Every schema column must appear in the header; other columns
/// are ignored. Cells must parse as finite numbers.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut col_pos = Vec::new();
    for (name, _) in &schema.entries {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        col_pos.push(pos);
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); schema.entries.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        for (k, &pos) in col_pos.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row: row_idx + 1,
                column: schema.entries[k].0.clone(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumericCell {
                    row: row_idx + 1,
                    column: schema.entries[k].0.clone(),
                });
            }
            cols[k].push(v);
        }
    }
    if cols.first().map(|c| c.is_empty()).unwrap_or(true) {
        return Err(Error::InvalidData("empty file: no data rows".into()));
    }
    let named: Vec<(String, Vec<f64>)> = schema
        .entries
        .iter()
        .map(|(n, _)| n.clone())
        .zip(cols)
        .collect();
    let mut data = Dataset::from_columns(named)?;
    data.roles = schema.entries.clone();
    if let Some(cl) = schema.cluster_column() {
        let cl = cl.to_string();
        data = data.with_cluster(&cl)?;
    }
    Ok(data)
}

/// Assignment of each row to one of L folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub l: usize,
    pub assignment: Vec<u32>,
    pub seed: u64,
}

impl FoldPlan {
    /// Rows of fold `fold`, ascending.
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows outside fold `fold`, ascending. All training happens here.
    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize != fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows outside both folds, ascending (double-split training sets).
    pub fn double_complement_rows(&self, fold_a: usize, fold_b: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize != fold_a && f as usize != fold_b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Deterministic Fisher-Yates shuffle driven by ChaCha12, a counter-based
/// stream cipher RNG with a fixed cross-platform output sequence. Bounded
/// draws use rejection sampling so the permutation law is exactly uniform.
fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = items.len();
    for i in (1..n).rev() {
        let bound = (i + 1) as u64;
        let limit = u64::MAX - u64::MAX % bound;
        let j = loop {
            let r = rng.next_u64();
            if r < limit {
                break (r % bound) as usize;
            }
        };
        items.swap(i, j);
    }
}

/// Partition rows into L folds of near-equal size. The balancing unit is the
/// cluster when cluster ids are present (all rows of a cluster share a fold),
/// otherwise the row. Units are shuffled by the seeded generator and dealt
/// round-robin, so the plan is a pure function of (data, l, seed).
pub fn make_folds(data: &Dataset, l: usize, seed: u64) -> Result<FoldPlan> {
    if l < 2 {
        return Err(Error::InvalidInput(format!("fold count must be >= 2, got {l}")));
    }
    let n_units = match &data.cluster {
        Some(cl) => cl.n_clusters(),
        None => data.n_rows(),
    };
    if l > n_units {
        return Err(Error::InvalidInput(format!(
            "fold count {l} exceeds number of assignment units {n_units}"
        )));
    }
    let mut units: Vec<usize> = (0..n_units).collect();
    seeded_shuffle(&mut units, seed);
    let mut assignment = vec![0u32; data.n_rows()];
    match &data.cluster {
        Some(cl) => {
            for (pos, &unit) in units.iter().enumerate() {
                let fold = (pos % l) as u32;
                for &row in &cl.members[unit] {
                    assignment[row] = fold;
                }
            }
        }
        None => {
            for (pos, &row) in units.iter().enumerate() {
                assignment[row] = (pos % l) as u32;
            }
        }
    }
    Ok(FoldPlan {
        l,
        assignment,
        seed,
    })
}
