//! Explicit factorizations `W = L R`, their norms, and lower-bound witnesses.
//!
//! Extended workloads are factored on the doubled universe used by the
//! release, so `L R` equals the dense matrix of the embedded product workload.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{cells, AttrSet, AttributeKind, QueryKind, Universe, Workload};
use crate::error::{Error, Result};
use crate::fourier::{character, indices_within, root_of_unity, FourierIndex};
use crate::mechanism::{zeta, Resolved};
use crate::oracle::{dense_prefix_workload, dense_workload, DenseCap};

/// Singular values below `RANK_CUTOFF * sigma_max` are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ExplicitFactorization {
    /// Rows `(S, t)`, columns indexed by `freqs`.
    pub l: DMatrix<Complex64>,
    /// Rows indexed by `freqs`, columns by the universe in row-major order.
    pub r: DMatrix<Complex64>,
    /// Diagonal of `E`, `tau_a / sum_b tau_b`.
    pub e: Vec<f64>,
    /// Diagonal of `P`, `p(S) / |U_S|`.
    pub p_diag: Vec<f64>,
    pub freqs: Vec<FourierIndex>,
    pub tau: Vec<f64>,
    pub rows: Vec<(AttrSet, Vec<usize>)>,
    pub universe: Universe,
}

fn cap_check(rows: usize, cols: usize, cap: DenseCap) -> Result<()> {
    if cols > cap.max_universe || rows > cap.max_queries {
        return Err(Error::DenseTooLarge { rows, cols });
    }
    Ok(())
}

/// `L = U~ E^{-1/2}`, `R = E^{1/2} V~*` with `U~_{(S,t),a} = phi_hat_S(a) chi_a(t) / |U_S|`
/// and `V~_{x,a} = chi_a(x)`, for the workload's own weights.
pub fn build_factorization(workload: &Workload, cap: DenseCap) -> Result<ExplicitFactorization> {
    let resolved = Resolved::new(workload)?;
    let w = &resolved.workload;
    let u = resolved.universe().clone();
    let n_cols = u.total_size()?;
    let n_rows: usize = w.sets().iter().map(|&s| u.subset_size(s)).sum::<Result<usize>>()?;
    cap_check(n_rows, n_cols.min(usize::MAX as u64) as usize, cap)?;
    let n_cols = n_cols as usize;

    let (freqs, tau): (Vec<FourierIndex>, Vec<f64>) =
        resolved.importances().into_iter().filter(|(_, t)| *t > 0.0).unzip();
    let total: f64 = tau.iter().sum();
    if freqs.is_empty() {
        return Err(Error::AllZeroWeights);
    }
    let e: Vec<f64> = tau.iter().map(|t| t / total).collect();
    let col_of: std::collections::BTreeMap<&FourierIndex, usize> =
        freqs.iter().enumerate().map(|(i, a)| (a, i)).collect();

    let mut rows = Vec::with_capacity(n_rows);
    let mut p_diag = Vec::with_capacity(n_rows);
    for (&s, &p) in w.sets().iter().zip(w.weights()) {
        let attrs = s.indices();
        let shape: Vec<usize> = attrs.iter().map(|&j| u.size(j)).collect();
        let us = u.subset_size_f64(s);
        for c in cells(&shape) {
            rows.push((s, c));
            p_diag.push(p / us);
        }
    }

    let mut l = DMatrix::<Complex64>::zeros(n_rows, freqs.len());
    let mut full = vec![0usize; u.d()];
    for (i, (s, t)) in rows.iter().enumerate() {
        full.iter_mut().for_each(|v| *v = 0);
        for (j, &v) in s.iter().zip(t) {
            full[j] = v;
        }
        let us = u.subset_size_f64(*s);
        for a in indices_within(&u, *s) {
            if let Some(&c) = col_of.get(&a) {
                let coef = resolved.spectrum.product(*s, &a.0);
                l[(i, c)] = coef * character(&u, &a, &full) / (us * e[c].sqrt());
            }
        }
    }

    let points: Vec<Vec<usize>> = cells(u.sizes()).collect();
    let mut r = DMatrix::<Complex64>::zeros(freqs.len(), n_cols);
    for (c, a) in freqs.iter().enumerate() {
        let scale = e[c].sqrt();
        for (x, point) in points.iter().enumerate() {
            r[(c, x)] = character(&u, a, point).conj() * scale;
        }
    }

    Ok(ExplicitFactorization {
        l,
        r,
        e,
        p_diag,
        freqs,
        tau,
        rows,
        universe: u,
    })
}

impl ExplicitFactorization {
    pub fn product(&self) -> DMatrix<Complex64> {
        &self.l * &self.r
    }

    /// Same `tau` and `P` with `E_{index}` multiplied by `factor`, and `L`, `R`
    /// rescaled to match. `L R` is unchanged; the optimality residuals are not.
    pub fn with_scaled_e(&self, index: usize, factor: f64) -> Self {
        let mut out = self.clone();
        out.e[index] *= factor;
        let s = factor.sqrt();
        out.l.column_mut(index).scale_mut(1.0 / s);
        out.r.row_mut(index).scale_mut(s);
        out
    }

    pub fn norms(&self) -> NormReport {
        let col_max = col_norm_max(&self.r);
        let row_norms = row_norms(&self.l);
        let frob_weighted = row_norms
            .iter()
            .zip(&self.p_diag)
            .map(|(n, p)| p * n * n)
            .sum::<f64>()
            .sqrt();
        let row_max = row_norms.iter().copied().fold(0.0, f64::max);
        NormReport {
            col_max,
            frob_weighted,
            row_max,
            gamma_f: frob_weighted * col_max,
            gamma_2: row_max * col_max,
        }
    }
}

fn row_norms(m: &DMatrix<Complex64>) -> Vec<f64> {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

fn col_norm_max(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Factorization norms of `(L, R)` under the weights `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    /// `||R||_{1->2}`.
    pub col_max: f64,
    /// `||P^{1/2} L||_F`.
    pub frob_weighted: f64,
    /// `||L||_{2->inf}`.
    pub row_max: f64,
    pub gamma_f: f64,
    pub gamma_2: f64,
}

/// Real factorization `(L^, R^)` with `L^ R^ = Re(L R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealFactorization {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl RealFactorization {
    pub fn norms(&self, p_diag: &[f64]) -> NormReport {
        let col_max = self
            .r
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let rows: Vec<f64> = self.l.row_iter().map(|r| r.norm()).collect();
        let frob_weighted = rows.iter().zip(p_diag).map(|(n, p)| p * n * n).sum::<f64>().sqrt();
        let row_max = rows.iter().copied().fold(0.0, f64::max);
        NormReport {
            col_max,
            frob_weighted,
            row_max,
            gamma_f: frob_weighted * col_max,
            gamma_2: row_max * col_max,
        }
    }
}

/// `L^ = [Re L, Im L]`, `R^ = [Re R; -Im R]`.
pub fn realify_pair(l: &DMatrix<Complex64>, r: &DMatrix<Complex64>) -> RealFactorization {
    let k = l.ncols();
    let mut lr = DMatrix::zeros(l.nrows(), 2 * k);
    let mut rr = DMatrix::zeros(2 * k, r.ncols());
    lr.view_mut((0, 0), (l.nrows(), k)).copy_from(&l.map(|z| z.re));
    lr.view_mut((0, k), (l.nrows(), k)).copy_from(&l.map(|z| z.im));
    rr.view_mut((0, 0), (k, r.ncols())).copy_from(&r.map(|z| z.re));
    rr.view_mut((k, 0), (k, r.ncols())).copy_from(&r.map(|z| -z.im));
    RealFactorization { l: lr, r: rr }
}

/// Real form of the factorization. With `drop_redundant`, each pair
/// `{a, -a}` contributes the two columns `sqrt(2) Re L_a`, `sqrt(2) Im L_a`
/// (one column when `a = -a`) instead of four.
pub fn realify(fact: &ExplicitFactorization, drop_redundant: bool) -> RealFactorization {
    if !drop_redundant {
        return realify_pair(&fact.l, &fact.r);
    }
    let index: std::collections::BTreeMap<&FourierIndex, usize> =
        fact.freqs.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let mut lcols: Vec<Vec<f64>> = Vec::new();
    let mut rrows: Vec<Vec<f64>> = Vec::new();
    let sqrt2 = std::f64::consts::SQRT_2;
    for (c, a) in fact.freqs.iter().enumerate() {
        let neg = a.negated(&fact.universe);
        let partner = index.get(&neg).copied();
        let lc = fact.l.column(c);
        let rc = fact.r.row(c);
        match partner {
            Some(p) if p == c => {
                lcols.push(lc.iter().map(|z| z.re).collect());
                rrows.push(rc.iter().map(|z| z.re).collect());
            }
            Some(p) if p < c => {}
            _ => {
                // Unpaired frequencies cannot occur for real workloads, but
                // keeping both parts keeps the product exact regardless.
                let w = if partner.is_some() { sqrt2 } else { 1.0 };
                lcols.push(lc.iter().map(|z| w * z.re).collect());
                rrows.push(rc.iter().map(|z| w * z.re).collect());
                lcols.push(lc.iter().map(|z| w * z.im).collect());
                rrows.push(rc.iter().map(|z| -w * z.im).collect());
            }
        }
    }
    let n = fact.l.nrows();
    let cols = fact.r.ncols();
    RealFactorization {
        l: DMatrix::from_fn(n, lcols.len(), |i, j| lcols[j][i]),
        r: DMatrix::from_fn(rrows.len(), cols, |i, j| rrows[i][j]),
    }
}

/// Residuals of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TightnessReport {
    /// `||L* P L - (sum tau)^2 E||_max`.
    pub lpl: f64,
    /// `||R R* - |U| E||_max`.
    pub rr: f64,
    /// `max_x | ||R e_x|| - 1 |`.
    pub colnorm: f64,
    /// `(max - min) / max` of row norms of `L` over sets with `p(S) > 0`.
    pub rownorm: f64,
}

pub fn tightness_certificate(fact: &ExplicitFactorization) -> TightnessReport {
    let total: f64 = fact.tau.iter().sum();
    let k = fact.freqs.len();
    let mut pl = fact.l.clone();
    for (i, &p) in fact.p_diag.iter().enumerate() {
        pl.row_mut(i).scale_mut(p);
    }
    let lpl = fact.l.adjoint() * pl;
    let rr = &fact.r * fact.r.adjoint();
    let n = fact.r.ncols() as f64;
    let mut lpl_res: f64 = 0.0;
    let mut rr_res: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let (want_l, want_r) = if i == j {
                (total * total * fact.e[i], n * fact.e[i])
            } else {
                (0.0, 0.0)
            };
            lpl_res = lpl_res.max((lpl[(i, j)] - want_l).norm());
            rr_res = rr_res.max((rr[(i, j)] - want_r).norm());
        }
    }
    let colnorm = fact
        .r
        .column_iter()
        .map(|c| (c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let norms: Vec<f64> = row_norms(&fact.l)
        .into_iter()
        .zip(&fact.p_diag)
        .filter(|(_, &p)| p > 0.0)
        .map(|(n, _)| n)
        .collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let rownorm = if max > 0.0 { (max - min) / max } else { 0.0 };
    TightnessReport {
        lpl: lpl_res,
        rr: rr_res,
        colnorm,
        rownorm,
    }
}

/// Sum of singular values at or above `RANK_CUTOFF * sigma_max`.
pub fn trace_norm_of(singular: &[f64]) -> f64 {
    let max = singular.iter().copied().fold(0.0, f64::max);
    singular.iter().filter(|&&s| s >= RANK_CUTOFF * max).sum()
}

pub fn trace_norm(m: &DMatrix<Complex64>) -> f64 {
    trace_norm_of(m.clone().singular_values().as_slice())
}

pub fn op_norm(m: &DMatrix<Complex64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Singular values of `P^{1/2} W`, largest first.
pub fn weighted_singular_values(workload: &Workload, cap: DenseCap) -> Result<Vec<f64>> {
    let dense = dense_workload(workload, cap)?;
    let mut s: Vec<f64> = dense.weighted().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// `(1/sqrt|U|) ||P^{1/2} W||_tr` for the workload's own query family and weights.
pub fn svd_lower_bound(workload: &Workload, cap: DenseCap) -> Result<f64> {
    let n = workload.universe().total_size()? as f64;
    let s = weighted_singular_values(workload, cap)?;
    Ok(trace_norm_of(&s) / n.sqrt())
}

/// Closed form of the optimal `gamma_F` for marginal and product workloads:
/// `sum_a tau_a` over the (possibly doubled) transform universe.
pub fn gamma_f_formula(workload: &Workload) -> Result<f64> {
    Ok(Resolved::new(workload)?.importances().values().sum())
}

/// Lower bound for extended marginals together with its witness data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundWitness {
    pub closed_form: f64,
    /// `(1/sqrt|U|) |tr(P^{1/2} W Y*)|` on the prefix workload, when dense.
    pub direct: Option<f64>,
    pub y_op_norm: Option<f64>,
}

/// `f_j(0) = (m+1)/2`, `f_j(a) = 1 / (1 - omega^{-a})`.
pub fn prefix_f(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|a| {
            if a == 0 {
                Complex64::new((m + 1) as f64 / 2.0, 0.0)
            } else {
                (Complex64::new(1.0, 0.0) - root_of_unity(m, a).conj()).inv()
            }
        })
        .collect()
}

/// Closed-form lower bound on `gamma_F(P^{1/2} W)` for the prefix family, and
/// when the instance fits `cap`, the trace value of the explicit test matrix.
pub fn extended_lower_bound(workload: &Workload, cap: Option<DenseCap>) -> Result<LowerBoundWitness> {
    if !matches!(workload.kind(), QueryKind::Extended) {
        return Err(Error::KindMismatch("extended"));
    }
    let u = workload.universe();
    let numerical = u.numerical();
    let categorical = u.categorical_attrs();
    let mut closed_form = 0.0;
    for t in crate::domain::downward_closure(workload).iter() {
        let mut coef = 1.0;
        for j in t.intersection(categorical).iter() {
            coef *= (u.size(j) - 1) as f64;
        }
        for j in t.intersection(numerical).iter() {
            coef *= zeta(u.size(j))?;
        }
        let o = t.intersection(numerical);
        let inner: f64 = workload
            .sets()
            .iter()
            .zip(workload.weights())
            .filter(|(s, _)| t.is_subset_of(**s))
            .map(|(&s, &p)| {
                let c = u.subset_size_f64(s.intersection(categorical));
                let boost: f64 = s
                    .intersection(numerical)
                    .difference(o)
                    .iter()
                    .map(|j| (1.0 + 1.0 / u.size(j) as f64).powi(2))
                    .product();
                p * boost / (c * c * 4f64.powi(s.intersection(numerical).len() as i32))
            })
            .sum();
        closed_form += coef * inner.sqrt();
    }
    let (direct, y_op_norm) = match cap {
        Some(cap) => {
            let (d, y) = direct_trace(workload, cap)?;
            (Some(d), Some(y))
        }
        None => (None, None),
    };
    Ok(LowerBoundWitness {
        closed_form,
        direct,
        y_op_norm,
    })
}

fn direct_trace(workload: &Workload, cap: DenseCap) -> Result<(f64, f64)> {
    let u = workload.universe();
    let dense = dense_prefix_workload(workload, cap)?;
    let n = dense.w.ncols();
    let f: Vec<Vec<Complex64>> = (0..u.d()).map(|j| prefix_f(u.size(j))).collect();
    let is_num = |j: usize| u.kind(j) == AttributeKind::Numerical;

    // Columns A: frequencies supported inside some set with p(S) > 0.
    let mut freqs: Vec<FourierIndex> = workload
        .sets()
        .iter()
        .zip(workload.weights())
        .filter(|(_, &p)| p > 0.0)
        .flat_map(|(&s, _)| indices_within(u, s))
        .collect();
    freqs.sort();
    freqs.dedup();

    let ut_entry = |s: AttrSet, t: &[i64], a: &FourierIndex| -> Complex64 {
        if !a.support().is_subset_of(s) {
            return Complex64::new(0.0, 0.0);
        }
        let mut full = vec![0usize; u.d()];
        for (j, &v) in s.iter().zip(t) {
            full[j] = v as usize;
        }
        let fprod: Complex64 = s.iter().filter(|&j| is_num(j)).map(|j| f[j][a.0[j]]).product();
        fprod * character(u, a, &full) / u.subset_size_f64(s)
    };

    let mut ut = DMatrix::<Complex64>::zeros(dense.rows.len(), freqs.len());
    for (i, (s, t)) in dense.rows.iter().enumerate() {
        for (c, a) in freqs.iter().enumerate() {
            ut[(i, c)] = ut_entry(*s, t, a);
        }
    }
    let kappa: Vec<f64> = (0..freqs.len())
        .map(|c| {
            ut.column(c)
                .iter()
                .zip(&dense.p_diag)
                .map(|(v, p)| p * v.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for (c, k) in kappa.iter().enumerate() {
        ut.column_mut(c).scale_mut(1.0 / k);
    }
    let points: Vec<Vec<usize>> = cells(u.sizes()).collect();
    let v = DMatrix::<Complex64>::from_fn(n, freqs.len(), |x, c| {
        character(u, &freqs[c], &points[x]) / (n as f64).sqrt()
    });
    let mut y = &ut * v.adjoint();
    let sqrt_p: Vec<f64> = dense.p_diag.iter().map(|p| p.sqrt()).collect();
    for (i, s) in sqrt_p.iter().enumerate() {
        y.row_mut(i).scale_mut(*s);
    }
    // tr(P^{1/2} W Y*) = sum_{i,x} sqrt(P_i) W_{i,x} conj(Y_{i,x}).
    let tr: Complex64 = (0..dense.rows.len())
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|x| y[(i, x)].conj() * (sqrt_p[i] * dense.w[(i, x)]))
                .sum::<Complex64>()
        })
        .sum();
    Ok((tr.norm() / (n as f64).sqrt(), op_norm(&y)))
}
