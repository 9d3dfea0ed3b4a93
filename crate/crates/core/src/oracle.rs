//! Brute-force reference implementations.
//!
//! Nothing here calls into the transform, budget or mechanism code; every
//! quantity is rebuilt from its definition so that it can serve as ground
//! truth for those modules.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::budget::SeededSampler;
use crate::domain::{cells, AttrSet, AttributeKind, Dataset, QueryKind, Universe, Workload};
use crate::error::{Error, Result};

/// Limits on dense materialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DenseCap {
    pub max_universe: usize,
    pub max_queries: usize,
}

impl Default for DenseCap {
    fn default() -> Self {
        Self {
            max_universe: 4096,
            max_queries: 8192,
        }
    }
}

/// Largest workload accepted by [`grid_search_pstar`].
pub const GRID_MAX_SETS: usize = 3;

/// Dense workload matrix with its row labels and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWorkload {
    /// Rows `(S, t)`, columns `x` in row-major order over the universe.
    pub w: DMatrix<f64>,
    /// Diagonal of `P`: `p(S)` divided by the number of rows of `S`.
    pub p_diag: Vec<f64>,
    pub rows: Vec<(AttrSet, Vec<i64>)>,
}

impl DenseWorkload {
    /// `P^{1/2} W`.
    pub fn weighted(&self) -> DMatrix<f64> {
        let mut m = self.w.clone();
        for (i, &p) in self.p_diag.iter().enumerate() {
            m.row_mut(i).scale_mut(p.sqrt());
        }
        m
    }
}

/// Row targets of a set, in the order the release code uses.
fn row_targets(universe: &Universe, set: AttrSet, extended: bool) -> Vec<Vec<i64>> {
    let attrs = set.indices();
    let doubled = |j: usize| extended && universe.kind(j) == AttributeKind::Numerical;
    let shape: Vec<usize> = attrs
        .iter()
        .map(|&j| if doubled(j) { 2 * universe.size(j) } else { universe.size(j) })
        .collect();
    cells(&shape)
        .map(|c| {
            attrs
                .iter()
                .zip(c)
                .map(|(&j, v)| {
                    let m = universe.size(j);
                    if v < m {
                        v as i64
                    } else {
                        m as i64 - 1 - v as i64
                    }
                })
                .collect()
        })
        .collect()
}

fn check_cap(universe: &Universe, queries: usize, cap: DenseCap) -> Result<usize> {
    let total = universe.total_size()?;
    if total > cap.max_universe as u64 || queries > cap.max_queries {
        return Err(Error::DenseTooLarge {
            rows: queries,
            cols: total.min(usize::MAX as u64) as usize,
        });
    }
    Ok(total as usize)
}

fn build_dense<F>(workload: &Workload, extended: bool, cap: DenseCap, entry: F) -> Result<DenseWorkload>
where
    F: Fn(AttrSet, &[i64], &[usize]) -> f64,
{
    let u = workload.universe();
    let mut rows = Vec::new();
    let mut p_diag = Vec::new();
    let mut n_rows = 0usize;
    for &s in workload.sets() {
        n_rows += s
            .iter()
            .map(|j| if extended && u.kind(j) == AttributeKind::Numerical { 2 * u.size(j) } else { u.size(j) })
            .product::<usize>();
    }
    let n_cols = check_cap(u, n_rows, cap)?;
    for (&s, &p) in workload.sets().iter().zip(workload.weights()) {
        let targets = row_targets(u, s, extended);
        let share = p / targets.len() as f64;
        for t in targets {
            rows.push((s, t));
            p_diag.push(share);
        }
    }
    let points: Vec<Vec<usize>> = cells(u.sizes()).collect();
    let mut w = DMatrix::zeros(rows.len(), n_cols);
    for (r, (s, t)) in rows.iter().enumerate() {
        for (c, x) in points.iter().enumerate() {
            w[(r, c)] = entry(*s, t, x);
        }
    }
    Ok(DenseWorkload { w, p_diag, rows })
}

/// `W_{q,x} = q(x)` for the workload's own query family.
pub fn dense_workload(workload: &Workload, cap: DenseCap) -> Result<DenseWorkload> {
    let u = workload.universe().clone();
    match workload.kind() {
        QueryKind::Marginal => build_dense(workload, false, cap, |s, t, x| {
            s.iter().zip(t).all(|(j, &v)| x[j] as i64 == v) as u8 as f64
        }),
        QueryKind::Product(phi) => build_dense(workload, false, cap, |s, t, x| {
            s.iter()
                .zip(t)
                .map(|(j, &v)| {
                    let m = u.size(j);
                    phi[j][(v as usize + m - x[j]) % m]
                })
                .product()
        }),
        QueryKind::Extended => build_dense(workload, true, cap, |s, t, x| {
            s.iter()
                .zip(t)
                .all(|(j, &v)| {
                    let xj = x[j] as i64;
                    match u.kind(j) {
                        AttributeKind::Categorical => xj == v,
                        AttributeKind::Numerical if v >= 0 => xj <= v,
                        AttributeKind::Numerical => xj >= -v,
                    }
                }) as u8 as f64
        }),
    }
}

/// Prefix-only extended marginals: `x_j <= t_j` on numerical attributes,
/// `x_j = t_j` on categorical ones, `t` ranging over `U_S`.
pub fn dense_prefix_workload(workload: &Workload, cap: DenseCap) -> Result<DenseWorkload> {
    let u = workload.universe().clone();
    build_dense(workload, false, cap, |s, t, x| {
        s.iter()
            .zip(t)
            .all(|(j, &v)| match u.kind(j) {
                AttributeKind::Categorical => x[j] as i64 == v,
                AttributeKind::Numerical => x[j] as i64 <= v,
            }) as u8 as f64
    })
}

/// Histogram `h` of a dataset over the universe, row-major.
pub fn histogram_vector(universe: &Universe, dataset: &Dataset) -> DVector<f64> {
    let sizes = universe.sizes();
    let mut h = DVector::zeros(sizes.iter().product());
    for row in dataset.rows() {
        let idx = row.iter().zip(sizes).fold(0usize, |acc, (&x, &m)| acc * m + x);
        h[idx] += 1.0;
    }
    h
}

/// True answers `W h`, flattened in row order.
pub fn exact_answers(workload: &Workload, dataset: &Dataset, cap: DenseCap) -> Result<Vec<f64>> {
    let dense = dense_workload(workload, cap)?;
    let h = histogram_vector(workload.universe(), dataset);
    Ok((dense.w * h).iter().copied().collect())
}

/// Direct `O(n^2)` evaluation of `sum_a c_a prod_i omega_{m_i}^{a_i t_i}`.
pub fn naive_inverse(coeffs: &[Complex64], shape: &[usize]) -> Result<Vec<Complex64>> {
    let n: usize = shape.iter().product();
    if coeffs.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: coeffs.len(),
        });
    }
    let points: Vec<Vec<usize>> = cells(shape).collect();
    Ok(points
        .iter()
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, c) in points.iter().zip(coeffs) {
                let mut frac = 0.0;
                for ((&ai, &ti), &m) in a.iter().zip(t).zip(shape) {
                    frac += ((ai * ti) % m) as f64 / m as f64;
                }
                acc += c * Complex64::from_polar(1.0, TAU * frac);
            }
            acc
        })
        .collect())
}

/// Naive DFT `sum_z phi(z) exp(-2 pi i a z / m)`.
fn naive_dft(table: &[f64]) -> Vec<Complex64> {
    let m = table.len();
    (0..m)
        .map(|a| {
            table
                .iter()
                .enumerate()
                .map(|(z, &v)| v * Complex64::from_polar(1.0, -TAU * ((a * z) % m) as f64 / m as f64))
                .sum()
        })
        .collect()
}

/// Best grid point `(p, f(p))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub p: Vec<f64>,
    pub value: f64,
}

/// Terms `(count, coefficient per set)` of `f(p) = sum_a sqrt(sum_S p(S) c_{a,S})`,
/// enumerated over every frequency of the (possibly doubled) universe.
fn objective_terms(workload: &Workload) -> Result<Vec<(f64, Vec<f64>)>> {
    let u = workload.universe();
    let (sizes, phi): (Vec<usize>, Option<Vec<Vec<f64>>>) = match workload.kind() {
        QueryKind::Marginal => (u.sizes().to_vec(), None),
        QueryKind::Product(phi) => (u.sizes().to_vec(), Some(phi.clone())),
        QueryKind::Extended => {
            let mut sizes = Vec::new();
            let mut phi = Vec::new();
            for j in 0..u.d() {
                let m = u.size(j);
                if u.kind(j) == AttributeKind::Numerical {
                    sizes.push(2 * m);
                    phi.push((0..2 * m).map(|z| (z < m) as u8 as f64).collect());
                } else {
                    sizes.push(m);
                    phi.push((0..m).map(|z| (z == 0) as u8 as f64).collect());
                }
            }
            (sizes, Some(phi))
        }
    };
    let spectra: Option<Vec<Vec<Complex64>>> = phi.map(|p| p.iter().map(|t| naive_dft(t)).collect());
    let total: usize = sizes.iter().product();
    if total > DenseCap::default().max_universe {
        return Err(Error::DenseTooLarge { rows: 0, cols: total });
    }
    let mut terms: Vec<(f64, Vec<f64>)> = Vec::new();
    for a in cells(&sizes) {
        let supp: Vec<usize> = (0..a.len()).filter(|&j| a[j] != 0).collect();
        let c: Vec<f64> = workload
            .sets()
            .iter()
            .map(|s| {
                if !supp.iter().all(|&j| s.contains(j)) {
                    return 0.0;
                }
                let us: f64 = s.iter().map(|j| sizes[j] as f64).product();
                let amp: f64 = match &spectra {
                    None => 1.0,
                    Some(sp) => s.iter().map(|j| sp[j][a[j]].norm_sqr()).product(),
                };
                // Snap round-off from structurally zero coefficients.
                let amp = if amp < 1e-20 { 0.0 } else { amp };
                amp / (us * us)
            })
            .collect();
        if c.iter().all(|&v| v == 0.0) {
            continue;
        }
        match terms.iter_mut().find(|(_, existing)| existing == &c) {
            Some(t) => t.0 += 1.0,
            None => terms.push((1.0, c)),
        }
    }
    Ok(terms)
}

fn eval_terms(terms: &[(f64, Vec<f64>)], p: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(n, c)| n * c.iter().zip(p).map(|(a, b)| a * b).sum::<f64>().sqrt())
        .sum()
}

/// Exhaustive search of the simplex grid with resolution `step`.
pub fn grid_search_pstar(workload: &Workload, step: f64) -> Result<GridResult> {
    let k = workload.len();
    if k > GRID_MAX_SETS {
        return Err(Error::TooManySets {
            max: GRID_MAX_SETS,
            actual: k,
        });
    }
    let terms = objective_terms(workload)?;
    let n = (1.0 / step).round() as usize;
    let nf = n as f64;
    let best = match k {
        1 => GridResult {
            p: vec![1.0],
            value: eval_terms(&terms, &[1.0]),
        },
        2 => (0..=n)
            .into_par_iter()
            .map(|i| {
                let p = vec![i as f64 / nf, (n - i) as f64 / nf];
                let value = eval_terms(&terms, &p);
                GridResult { p, value }
            })
            .reduce_with(|a, b| if b.value > a.value { b } else { a })
            .expect("grid is nonempty"),
        _ => (0..=n)
            .into_par_iter()
            .map(|i| {
                let mut best = GridResult {
                    p: Vec::new(),
                    value: f64::NEG_INFINITY,
                };
                let mut p = vec![0.0; 3];
                for j in 0..=(n - i) {
                    p[0] = i as f64 / nf;
                    p[1] = j as f64 / nf;
                    p[2] = (n - i - j) as f64 / nf;
                    let v = eval_terms(&terms, &p);
                    if v > best.value {
                        best = GridResult { p: p.clone(), value: v };
                    }
                }
                best
            })
            .reduce_with(|a, b| if b.value > a.value { b } else { a })
            .expect("grid is nonempty"),
    };
    Ok(best)
}

/// `f(p)` evaluated from the definition, for comparison with the optimizer.
pub fn brute_objective(workload: &Workload, p: &[f64]) -> Result<f64> {
    Ok(eval_terms(&objective_terms(workload)?, p))
}

/// Per-query Monte-Carlo statistics of `estimate - truth`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub mean_err: Vec<f64>,
    pub var_err: Vec<f64>,
    /// Kolmogorov-Smirnov distance of `(err / sigma)` from `N(0, 1)`, on the
    /// first `ks_samples` trials.
    pub ks_stat: Vec<f64>,
    pub ks_samples: usize,
}

/// Trials used for the normality statistic.
pub const KS_SAMPLES: usize = 10_000;

/// Critical KS distance at significance `alpha` for `n` samples (asymptotic).
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

fn ks_distance(mut z: Vec<f64>) -> f64 {
    let normal = Normal::standard();
    z.sort_by(|a, b| a.total_cmp(b));
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

const CHUNK: usize = 1_000;

/// Welford `(n, mean, m2)` per query, and raw errors kept for the KS test.
type ChunkStats = (Vec<(f64, f64, f64)>, Vec<Vec<f64>>);

/// Run `trials` independent releases. Chunk `c` of 1000 trials draws from
/// `SeededSampler::new(seed).child(c)`, so the result does not depend on the
/// thread count.
pub fn monte_carlo<F>(trials: usize, seed: u64, truth: &[f64], sigmas: &[f64], release: F) -> MonteCarloReport
where
    F: Fn(&mut SeededSampler) -> Vec<f64> + Sync,
{
    let q = truth.len();
    let root = SeededSampler::new(seed);
    let chunks = trials.div_ceil(CHUNK);
    let ks_samples = trials.min(KS_SAMPLES);
    let per_chunk: Vec<ChunkStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sampler = root.child(c as u64);
            let start = c * CHUNK;
            let end = (start + CHUNK).min(trials);
            let mut stats = vec![(0.0, 0.0, 0.0); q];
            let mut raw = vec![Vec::new(); q];
            for trial in start..end {
                let est = release(&mut sampler);
                for i in 0..q {
                    let e = est[i] - truth[i];
                    let (n, mean, m2) = &mut stats[i];
                    *n += 1.0;
                    let delta = e - *mean;
                    *mean += delta / *n;
                    *m2 += delta * (e - *mean);
                    if trial < ks_samples {
                        raw[i].push(e);
                    }
                }
            }
            (stats, raw)
        })
        .collect();
    let mut mean_err = vec![0.0; q];
    let mut var_err = vec![0.0; q];
    let mut ks_stat = vec![0.0; q];
    for i in 0..q {
        // Chan et al. pairwise merge of Welford states.
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for (stats, _) in &per_chunk {
            let (nb, mb, m2b) = stats[i];
            if nb == 0.0 {
                continue;
            }
            let delta = mb - mean;
            let tot = n + nb;
            mean += delta * nb / tot;
            m2 += m2b + delta * delta * n * nb / tot;
            n = tot;
        }
        mean_err[i] = mean;
        var_err[i] = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
        if sigmas[i] > 0.0 {
            let z: Vec<f64> = per_chunk
                .iter()
                .flat_map(|(_, raw)| raw[i].iter().map(|e| e / sigmas[i]))
                .collect();
            ks_stat[i] = ks_distance(z);
        }
    }
    MonteCarloReport {
        trials,
        mean_err,
        var_err,
        ks_stat,
        ks_samples,
    }
}
