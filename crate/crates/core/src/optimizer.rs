//! Worst-case workload weights `p*` for the max-variance objective.
//!
//! `f(p) = sum_a sqrt(sum_{S ⊇ supp(a)} p(S) c_{a,S})` is concave on the
//! simplex; its maximiser makes the weighted RMS error equal to the largest
//! per-set standard deviation.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::{downward_closure, QueryKind, Workload};
use crate::error::{Error, Result};
use crate::fourier::indices_with_support;
use crate::mechanism::Resolved;

/// Inner sums below this are treated as the boundary of the feasible region.
const INNER_FLOOR: f64 = 1e-14;

/// One summand of `f`: `multiplicity * sqrt(sum_S coeffs[S] p(S))`.
#[derive(Debug, Clone, PartialEq)]
struct Term {
    multiplicity: f64,
    coeffs: Vec<(usize, f64)>,
}

/// `f` expressed over workload set positions.
#[derive(Debug, Clone)]
pub struct Objective {
    terms: Vec<Term>,
    n_sets: usize,
}

impl Objective {
    pub fn new(workload: &Workload) -> Result<Self> {
        let resolved = Resolved::new(workload)?;
        let w = &resolved.workload;
        let u = w.universe();
        let sizes: Vec<f64> = w.sets().iter().map(|&s| u.subset_size_f64(s).powi(2)).collect();
        let mut terms = Vec::new();
        for r in downward_closure(w).iter() {
            let containing: Vec<usize> = (0..w.len()).filter(|&i| r.is_subset_of(w.sets()[i])).collect();
            match w.kind() {
                QueryKind::Marginal => {
                    let multiplicity = r.iter().map(|j| (u.size(j) - 1) as f64).product();
                    let coeffs = containing.iter().map(|&i| (i, 1.0 / sizes[i])).collect();
                    terms.push(Term { multiplicity, coeffs });
                }
                _ => {
                    // Group frequencies with identical coefficient vectors.
                    let mut groups: BTreeMap<Vec<(usize, u64)>, f64> = BTreeMap::new();
                    for a in indices_with_support(u, r) {
                        let key: Vec<(usize, u64)> = containing
                            .iter()
                            .map(|&i| (i, resolved.spectrum.product_norm_sqr(w.sets()[i], &a.0) / sizes[i]))
                            .filter(|(_, c)| *c > 0.0)
                            .map(|(i, c)| (i, c.to_bits()))
                            .collect();
                        if !key.is_empty() {
                            *groups.entry(key).or_insert(0.0) += 1.0;
                        }
                    }
                    for (key, multiplicity) in groups {
                        terms.push(Term {
                            multiplicity,
                            coeffs: key.into_iter().map(|(i, b)| (i, f64::from_bits(b))).collect(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            terms,
            n_sets: w.len(),
        })
    }

    pub fn n_sets(&self) -> usize {
        self.n_sets
    }

    fn inner(term: &Term, p: &[f64]) -> f64 {
        term.coeffs.iter().map(|&(i, c)| c * p[i]).sum()
    }

    /// `f(p)`; equals the weighted RMS error at `mu = 1`.
    pub fn value(&self, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.multiplicity * Self::inner(t, p).sqrt())
            .sum()
    }

    /// Smallest inner sum over all terms.
    fn min_inner(&self, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| Self::inner(t, p))
            .fold(f64::INFINITY, f64::min)
    }

    /// `df/dp(S) = sum_terms multiplicity c_S / (2 sqrt(inner))`. Infinite when
    /// a term with `c_S > 0` has a zero inner sum.
    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_sets];
        for t in &self.terms {
            let inner = Self::inner(t, p);
            for &(i, c) in &t.coeffs {
                g[i] += if inner > 0.0 {
                    t.multiplicity * c / (2.0 * inner.sqrt())
                } else {
                    f64::INFINITY
                };
            }
        }
        g
    }
}

/// First-order optimality report for a weight vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// `(max_S g_S - min_{p(S) > 0} g_S) / max_S g_S`, zero at the optimum.
    pub residual: f64,
    /// Per-set standard deviation at `mu = 1`.
    pub sigmas: Vec<f64>,
    /// `max_{p(S) > 0} (max_T sigma_T - sigma_S) / max_T sigma_T`.
    pub sigma_gap: f64,
    /// `f(p)`.
    pub objective: f64,
    pub max_sigma: f64,
}

fn check_simplex(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if (sum - 1.0).abs() > 1e-9 || min < 0.0 || !sum.is_finite() {
        return Err(Error::NotOnSimplex { sum, min });
    }
    Ok(())
}

fn kkt_from(objective: &Objective, p: &[f64]) -> KktReport {
    let g = objective.gradient(p);
    let f = objective.value(p);
    let gmax = g.iter().copied().fold(0.0, f64::max);
    let gmin_support = g
        .iter()
        .zip(p)
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(&gi, _)| gi)
        .fold(f64::INFINITY, f64::min);
    let residual = if gmax.is_infinite() {
        f64::INFINITY
    } else {
        ((gmax - gmin_support) / gmax).max(0.0)
    };
    // sigma_S^2 = 2 f g_S at mu = 1.
    let sigmas: Vec<f64> = g.iter().map(|&gi| (2.0 * f * gi).sqrt()).collect();
    let max_sigma = sigmas.iter().copied().fold(0.0, f64::max);
    let sigma_gap = sigmas
        .iter()
        .zip(p)
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(&s, _)| (max_sigma - s) / max_sigma)
        .fold(0.0, f64::max);
    KktReport {
        residual,
        sigmas,
        sigma_gap,
        objective: f,
        max_sigma,
    }
}

/// Check the first-order conditions and the equal-variance property for `p`.
pub fn kkt_check(workload: &Workload, p: &[f64]) -> Result<KktReport> {
    if p.len() != workload.len() {
        return Err(Error::LengthMismatch {
            expected: workload.len(),
            actual: p.len(),
        });
    }
    check_simplex(p)?;
    Ok(kkt_from(&Objective::new(workload)?, p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSolution {
    pub p_star: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// `f` at every accepted iterate, starting from the uniform point.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projected gradient ascent with Barzilai-Borwein steps and an Armijo
/// backtracking line search, started at the uniform weights. Stops when the
/// KKT residual is at most `tol`.
pub fn optimize_pstar(workload: &Workload, tol: f64, max_iter: usize) -> Result<WeightSolution> {
    let objective = Objective::new(workload)?;
    let n = objective.n_sets();
    let mut p = vec![1.0 / n as f64; n];
    let mut f = objective.value(&p);
    let mut g = objective.gradient(&p);
    let mut trace = vec![f];
    let mut step = 1.0 / g.iter().map(|x| x.abs()).fold(f64::MIN_POSITIVE, f64::max);
    let mut residual = kkt_from(&objective, &p).residual;

    for iter in 0..max_iter {
        if residual <= tol {
            return Ok(WeightSolution {
                p_star: p,
                objective: f,
                kkt_residual: residual,
                iterations: iter,
                trace,
            });
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..200 {
            let cand: Vec<f64> = p.iter().zip(&g).map(|(pi, gi)| pi + alpha * gi).collect();
            let q = project_simplex(&cand);
            if objective.min_inner(&q) >= INNER_FLOOR {
                let fq = objective.value(&q);
                let ascent: f64 = g.iter().zip(q.iter().zip(&p)).map(|(gi, (qi, pi))| gi * (qi - pi)).sum();
                if fq >= f + 1e-4 * ascent && fq >= f {
                    accepted = Some((q, fq));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((q, fq)) = accepted else { break };
        let gq = objective.gradient(&q);
        let s: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|x| x * x).sum();
        let sy: f64 = s.iter().zip(gq.iter().zip(&g)).map(|(si, (a, b))| si * (a - b)).sum();
        step = if sy < 0.0 && ss > 0.0 { ss / -sy } else { alpha * 2.0 };
        p = q;
        f = fq;
        g = gq;
        trace.push(f);
        residual = kkt_from(&objective, &p).residual;
        if ss == 0.0 {
            break;
        }
    }
    if residual <= tol {
        let iterations = trace.len() - 1;
        return Ok(WeightSolution {
            p_star: p,
            objective: f,
            kkt_residual: residual,
            iterations,
            trace,
        });
    }
    Err(Error::NoConvergence {
        iterations: trace.len() - 1,
        residual,
        best: p,
    })
}
