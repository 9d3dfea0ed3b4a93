//! Workload JSON and dataset CSV ingestion.
//!
//! ```json
//! {
//!   "kind": "extended",
//!   "attributes": [
//!     {"name": "age", "size": 8, "kind": "numerical"},
//!     {"name": "sex", "size": 2, "values": ["f", "m"]}
//!   ],
//!   "sets": [{"attrs": ["age", "sex"], "weight": 1.0}]
//! }
//! ```
//!
//! Product workloads give each attribute a `phi` table of length `size`.
//! Instead of `sets`, `"k_way": k` requests every `k`-subset with equal weight.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::domain::{k_subsets, AttrSet, AttributeKind, Dataset, QueryKind, Universe, Workload};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub size: usize,
    #[serde(default = "categorical")]
    pub kind: AttributeKind,
    /// Labels used in the dataset CSV; defaults to `0..size`.
    #[serde(default)]
    pub values: Option<Vec<String>>,
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
}

fn categorical() -> AttributeKind {
    AttributeKind::Categorical
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    pub attrs: Vec<String>,
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Marginal,
    Product,
    Extended,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default = "marginal")]
    pub kind: KindSpec,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub sets: Vec<SetSpec>,
    #[serde(default)]
    pub k_way: Option<usize>,
}

fn marginal() -> KindSpec {
    KindSpec::Marginal
}

/// A parsed workload together with the attribute names and labels needed to
/// read datasets and label outputs.
#[derive(Debug, Clone)]
pub struct LoadedWorkload {
    pub workload: Workload,
    pub names: Vec<String>,
    pub labels: Vec<Option<Vec<String>>>,
}

impl LoadedWorkload {
    pub fn set_names(&self, set: AttrSet) -> Vec<String> {
        set.iter().map(|j| self.names[j].clone()).collect()
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

pub fn parse_workload(text: &str) -> Result<LoadedWorkload> {
    let spec: WorkloadSpec = serde_json::from_str(text).map_err(|e| parse_err(format!("workload: {e}")))?;
    build_workload(spec)
}

pub fn load_workload(path: &Path) -> Result<LoadedWorkload> {
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(format!("{}: {e}", path.display())))?;
    parse_workload(&text)
}

pub fn build_workload(spec: WorkloadSpec) -> Result<LoadedWorkload> {
    let names: Vec<String> = spec.attributes.iter().map(|a| a.name.clone()).collect();
    let mut index = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if index.insert(n.as_str(), i).is_some() {
            return Err(parse_err(format!("duplicate attribute name {n:?}")));
        }
    }
    for a in &spec.attributes {
        if let Some(v) = &a.values {
            if v.len() != a.size {
                return Err(parse_err(format!("attribute {:?}: {} labels for size {}", a.name, v.len(), a.size)));
            }
        }
    }
    let universe = Universe::new(
        spec.attributes.iter().map(|a| a.size).collect(),
        spec.attributes.iter().map(|a| a.kind).collect(),
    )?;
    let (sets, weights) = match (spec.k_way, spec.sets.is_empty()) {
        (Some(_), false) => return Err(parse_err("give either `sets` or `k_way`, not both")),
        (Some(k), true) => {
            let sets = k_subsets(universe.d(), k);
            let n = sets.len();
            (sets, vec![1.0 / n.max(1) as f64; n])
        }
        (None, _) => {
            let mut sets = Vec::new();
            let mut weights = Vec::new();
            for s in &spec.sets {
                let mut idx = Vec::new();
                for name in &s.attrs {
                    let &i = index
                        .get(name.as_str())
                        .ok_or_else(|| parse_err(format!("unknown attribute {name:?}")))?;
                    idx.push(i);
                }
                sets.push(AttrSet::try_from_indices(&idx, universe.d())?);
                weights.push(s.weight);
            }
            (sets, weights)
        }
    };
    let kind = match spec.kind {
        KindSpec::Marginal => QueryKind::Marginal,
        KindSpec::Extended => QueryKind::Extended,
        KindSpec::Product => {
            let phi = spec
                .attributes
                .iter()
                .map(|a| {
                    a.phi
                        .clone()
                        .ok_or_else(|| parse_err(format!("attribute {:?} needs a phi table", a.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            QueryKind::Product(phi)
        }
    };
    let workload = Workload::new(universe, sets, weights, kind)?;
    Ok(LoadedWorkload {
        workload,
        names,
        labels: spec.attributes.into_iter().map(|a| a.values).collect(),
    })
}

/// Reads a CSV with a header row. Every workload attribute must appear as a
/// column; other columns are ignored. Cells hold either a label from the
/// attribute's `values` or an integer index.
pub fn read_dataset<R: Read>(reader: R, loaded: &LoadedWorkload) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(format!("dataset header: {e}")))?.clone();
    let cols = loaded
        .names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| parse_err(format!("dataset has no column {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let lookups: Vec<Option<HashMap<&str, usize>>> = loaded
        .labels
        .iter()
        .map(|l| l.as_ref().map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()))
        .collect();
    let u = loaded.workload.universe();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(format!("dataset: {e}")))?;
        let mut row = Vec::with_capacity(cols.len());
        for (j, &c) in cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v = match lookups[j].as_ref().and_then(|m| m.get(cell)) {
                Some(&v) => v,
                None => cell.parse::<usize>().map_err(|_| {
                    parse_err(format!("row {}: bad value {cell:?} for {:?}", line + 1, loaded.names[j]))
                })?,
            };
            if v >= u.size(j) {
                return Err(parse_err(format!(
                    "row {}: value {v} out of range for {:?} (size {})",
                    line + 1,
                    loaded.names[j],
                    u.size(j)
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Dataset::new(u, rows)
}

pub fn load_dataset(path: &Path, loaded: &LoadedWorkload) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| parse_err(format!("{}: {e}", path.display())))?;
    read_dataset(file, loaded)
}
