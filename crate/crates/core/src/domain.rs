//! Universe, dataset and workload model.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of attributes an [`AttrSet`] can index.
pub const MAX_ATTRIBUTES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Numerical,
}

/// Mixed-radix attribute domain `U = U_1 x ... x U_d`, with `U_i = {0, .., m_i - 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    sizes: Vec<usize>,
    kinds: Vec<AttributeKind>,
}

impl Universe {
    pub fn new(sizes: Vec<usize>, kinds: Vec<AttributeKind>) -> Result<Self> {
        if sizes.len() != kinds.len() {
            return Err(Error::LengthMismatch {
                expected: sizes.len(),
                actual: kinds.len(),
            });
        }
        if sizes.is_empty() {
            return Err(Error::LengthMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if sizes.len() > MAX_ATTRIBUTES {
            return Err(Error::TooManyAttributes {
                max: MAX_ATTRIBUTES,
                actual: sizes.len(),
            });
        }
        if let Some((index, &size)) = sizes.iter().enumerate().find(|(_, &m)| m < 2) {
            return Err(Error::SizeTooSmall { index, size });
        }
        Ok(Self { sizes, kinds })
    }

    /// All-categorical universe.
    pub fn categorical(sizes: Vec<usize>) -> Result<Self> {
        let kinds = vec![AttributeKind::Categorical; sizes.len()];
        Self::new(sizes, kinds)
    }

    pub fn d(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn kinds(&self) -> &[AttributeKind] {
        &self.kinds
    }

    pub fn kind(&self, i: usize) -> AttributeKind {
        self.kinds[i]
    }

    pub fn is_categorical_only(&self) -> bool {
        self.kinds.iter().all(|k| *k == AttributeKind::Categorical)
    }

    /// `|U|`, or `UniverseOverflow` when it does not fit in 64 bits.
    pub fn total_size(&self) -> Result<u64> {
        self.sizes
            .iter()
            .try_fold(1u64, |acc, &m| acc.checked_mul(m as u64))
            .ok_or(Error::UniverseOverflow)
    }

    /// `|U_S|` as an exact count.
    pub fn subset_size(&self, set: AttrSet) -> Result<usize> {
        set.iter()
            .try_fold(1usize, |acc, j| acc.checked_mul(self.sizes[j]))
            .ok_or(Error::UniverseOverflow)
    }

    /// `|U_S|` as a float, for closed-form expressions.
    pub fn subset_size_f64(&self, set: AttrSet) -> f64 {
        set.iter().map(|j| self.sizes[j] as f64).product()
    }

    /// The full attribute set `[d]`.
    pub fn all_attributes(&self) -> AttrSet {
        AttrSet::from_indices(0..self.d())
    }

    /// Attributes flagged numerical.
    pub fn numerical(&self) -> AttrSet {
        AttrSet::from_indices((0..self.d()).filter(|&i| self.kinds[i] == AttributeKind::Numerical))
    }

    /// Attributes flagged categorical.
    pub fn categorical_attrs(&self) -> AttrSet {
        AttrSet::from_indices((0..self.d()).filter(|&i| self.kinds[i] == AttributeKind::Categorical))
    }
}

/// A subset of attribute indices, stored as a bitmask.
///
/// Ordering and display follow the sorted index list, so `{0,2}` and
/// `{2,0}` are the same set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AttrSet(u128);

impl AttrSet {
    pub const EMPTY: AttrSet = AttrSet(0);

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut bits = 0u128;
        for i in indices {
            assert!(i < MAX_ATTRIBUTES, "attribute index {i} exceeds {MAX_ATTRIBUTES}");
            bits |= 1u128 << i;
        }
        AttrSet(bits)
    }

    pub fn try_from_indices(indices: &[usize], d: usize) -> Result<Self> {
        if let Some(&index) = indices.iter().find(|&&i| i >= d) {
            return Err(Error::AttributeOutOfRange { index, d });
        }
        Ok(Self::from_indices(indices.iter().copied()))
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    pub fn from_bits(bits: u128) -> Self {
        AttrSet(bits)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_ATTRIBUTES && self.0 >> i & 1 == 1
    }

    pub fn is_subset_of(self, other: AttrSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: AttrSet) -> AttrSet {
        AttrSet(self.0 | other.0)
    }

    pub fn intersection(self, other: AttrSet) -> AttrSet {
        AttrSet(self.0 & other.0)
    }

    pub fn difference(self, other: AttrSet) -> AttrSet {
        AttrSet(self.0 & !other.0)
    }

    /// Sorted attribute indices.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    pub fn indices(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Every subset of `self`, the empty set included.
    pub fn subsets(self) -> impl Iterator<Item = AttrSet> {
        let full = self.0;
        let mut sub = Some(full);
        std::iter::from_fn(move || {
            let cur = sub?;
            sub = if cur == 0 { None } else { Some((cur - 1) & full) };
            Some(AttrSet(cur))
        })
    }
}

impl Ord for AttrSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.indices().cmp(&other.indices()))
    }
}

impl PartialOrd for AttrSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AttrSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, i) in self.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for AttrSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl fmt::Debug for AttrSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A multiset of points of a universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    rows: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(universe: &Universe, rows: Vec<Vec<usize>>) -> Result<Self> {
        for row in &rows {
            if row.len() != universe.d() {
                return Err(Error::LengthMismatch {
                    expected: universe.d(),
                    actual: row.len(),
                });
            }
            for (index, (&x, &m)) in row.iter().zip(universe.sizes()).enumerate() {
                if x >= m {
                    return Err(Error::ValueOutOfRange {
                        index,
                        value: x as i64,
                        size: m,
                    });
                }
            }
        }
        Ok(Self {
            d: universe.d(),
            rows,
        })
    }

    pub fn empty(universe: &Universe) -> Self {
        Self {
            d: universe.d(),
            rows: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Distinct rows with their multiplicities, in sorted order.
    pub fn histogram(&self) -> Vec<(Vec<usize>, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for row in &self.rows {
            *counts.entry(row.clone()).or_insert(0usize) += 1;
        }
        counts.into_iter().collect()
    }
}

/// Which query family a workload asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryKind {
    /// Counting queries `q_{S,t}(x) = 1{x_S = t}`.
    Marginal,
    /// Product queries `prod_{j in S} phi_j((t_j - x_j) mod m_j)`, one table per attribute.
    Product(Vec<Vec<f64>>),
    /// Marginals on categorical attributes combined with prefix (`x <= t`) and
    /// suffix (`x >= -t`, `t < 0`) predicates on numerical attributes.
    Extended,
}

impl QueryKind {
    pub fn name(&self) -> &'static str {
        match self {
            QueryKind::Marginal => "marginal",
            QueryKind::Product(_) => "product",
            QueryKind::Extended => "extended",
        }
    }
}

/// A collection of distinct attribute subsets with nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    universe: Universe,
    sets: Vec<AttrSet>,
    weights: Vec<f64>,
    kind: QueryKind,
}

impl Workload {
    pub fn new(
        universe: Universe,
        sets: Vec<AttrSet>,
        weights: Vec<f64>,
        kind: QueryKind,
    ) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::EmptyWorkload);
        }
        if sets.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: sets.len(),
                actual: weights.len(),
            });
        }
        let full = universe.all_attributes();
        let mut seen = BTreeSet::new();
        for (&set, &weight) in sets.iter().zip(&weights) {
            if !set.is_subset_of(full) {
                let index = set.difference(full).iter().next().unwrap_or(0);
                return Err(Error::AttributeOutOfRange {
                    index,
                    d: universe.d(),
                });
            }
            if !seen.insert(set) {
                return Err(Error::DuplicateSet(set));
            }
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::InvalidWeight { set, weight });
            }
        }
        if let QueryKind::Product(phi) = &kind {
            if phi.len() != universe.d() {
                return Err(Error::LengthMismatch {
                    expected: universe.d(),
                    actual: phi.len(),
                });
            }
            for (table, &m) in phi.iter().zip(universe.sizes()) {
                if table.len() != m {
                    return Err(Error::ShapeMismatch {
                        expected: m,
                        actual: table.len(),
                    });
                }
                if table.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parse("phi table contains a non-finite value".into()));
                }
            }
        }
        Ok(Self {
            universe,
            sets,
            weights,
            kind,
        })
    }

    /// Marginal workload with the given weights.
    pub fn marginal(universe: Universe, sets: Vec<AttrSet>, weights: Vec<f64>) -> Result<Self> {
        Self::new(universe, sets, weights, QueryKind::Marginal)
    }

    /// All size-`k` subsets of `[d]` with uniform weights `1 / C(d, k)`.
    pub fn all_k_way(universe: Universe, k: usize) -> Result<Self> {
        let d = universe.d();
        if k == 0 || k > d {
            return Err(Error::BadArity {
                d,
                k,
                m: universe.size(0),
            });
        }
        let sets = k_subsets(d, k);
        let w = 1.0 / sets.len() as f64;
        let weights = vec![w; sets.len()];
        Self::marginal(universe, sets, weights)
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn sets(&self) -> &[AttrSet] {
        &self.sets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> &QueryKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn weight_of(&self, set: AttrSet) -> Option<f64> {
        self.sets
            .iter()
            .position(|&s| s == set)
            .map(|i| self.weights[i])
    }

    /// Same sets and kind, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(
            self.universe.clone(),
            self.sets.clone(),
            weights,
            self.kind.clone(),
        )
    }
}

/// All size-`k` subsets of `{0, .., d-1}`, in lexicographic order.
pub fn k_subsets(d: usize, k: usize) -> Vec<AttrSet> {
    fn rec(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<AttrSet>) {
        if cur.len() == k {
            out.push(AttrSet::from_indices(cur.iter().copied()));
            return;
        }
        for i in start..d {
            if d - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, d, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// A family of attribute sets closed under taking subsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubsetClosure {
    members: BTreeSet<AttrSet>,
}

impl SubsetClosure {
    pub fn of_sets<I: IntoIterator<Item = AttrSet>>(sets: I) -> Self {
        let mut members = BTreeSet::new();
        for s in sets {
            if members.contains(&s) {
                continue;
            }
            members.extend(s.subsets());
        }
        Self { members }
    }

    pub fn members(&self) -> &BTreeSet<AttrSet> {
        &self.members
    }

    pub fn contains(&self, set: AttrSet) -> bool {
        self.members.contains(&set)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = AttrSet> + '_ {
        self.members.iter().copied()
    }
}

/// Closure of the workload's sets under taking subsets.
pub fn downward_closure(workload: &Workload) -> SubsetClosure {
    SubsetClosure::of_sets(workload.sets().iter().copied())
}

/// Closure restricted to sets contained in some `S` with `p(S) > 0`.
pub fn weighted_downward_closure(workload: &Workload) -> SubsetClosure {
    SubsetClosure::of_sets(
        workload
            .sets()
            .iter()
            .zip(workload.weights())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&s, _)| s),
    )
}

/// Rescale weights to sum to one.
pub fn normalize_weights(workload: &Workload) -> Result<Workload> {
    let total: f64 = workload.weights().iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let weights = workload.weights().iter().map(|w| w / total).collect();
    workload.with_weights(weights)
}

/// Number of rows `x` with `x_S = t`. `t` lists values for the attributes of
/// `S` in increasing index order.
pub fn marginal_eval(dataset: &Dataset, universe: &Universe, set: AttrSet, t: &[usize]) -> Result<u64> {
    let attrs = set.indices();
    if attrs.len() != t.len() {
        return Err(Error::LengthMismatch {
            expected: attrs.len(),
            actual: t.len(),
        });
    }
    for (&j, &v) in attrs.iter().zip(t) {
        if j >= universe.d() || v >= universe.size(j) {
            return Err(Error::AssignmentOutOfRange { index: j });
        }
    }
    let count = dataset
        .rows()
        .iter()
        .filter(|row| attrs.iter().zip(t).all(|(&j, &v)| row[j] == v))
        .count();
    Ok(count as u64)
}

/// Iterate the cells of a mixed-radix box in row-major order (last axis fastest).
pub fn cells(shape: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = shape.iter().product();
    let mut cur = vec![0usize; shape.len()];
    let mut emitted = 0usize;
    std::iter::from_fn(move || {
        if emitted == total {
            return None;
        }
        let out = cur.clone();
        emitted += 1;
        for axis in (0..shape.len()).rev() {
            cur[axis] += 1;
            if cur[axis] < shape[axis] {
                break;
            }
            cur[axis] = 0;
        }
        Some(out)
    })
}
