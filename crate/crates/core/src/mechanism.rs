//! End-to-end private release and closed-form error predictions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use statrs::function::factorial::binomial;

use crate::budget::{
    accounting, check_mu, k_way_budget, sample_complex_gaussian, tau_marginal, tau_product, BudgetPlan,
    NoiseSource, SeededSampler,
};
use crate::domain::{cells, downward_closure, AttrSet, AttributeKind, Dataset, QueryKind, Universe, Workload};
use crate::error::{Error, Result};
use crate::fourier::{fourier_queries, indices_within, phi_spectrum, FourierIndex, InverseTransform, PhiSpectrum};

/// Embedding of an extended-marginal universe into a product-query universe
/// where each numerical domain is doubled.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedEmbedding {
    pub original: Universe,
    pub embedded: Universe,
    /// `1{z = 0}` for categorical attributes, `1{z <= m - 1}` over `2m` points
    /// for numerical ones.
    pub phi: Vec<Vec<f64>>,
}

pub fn embed_extended(universe: &Universe) -> ExtendedEmbedding {
    let mut sizes = Vec::with_capacity(universe.d());
    let mut phi = Vec::with_capacity(universe.d());
    for j in 0..universe.d() {
        let m = universe.size(j);
        match universe.kind(j) {
            AttributeKind::Categorical => {
                sizes.push(m);
                phi.push((0..m).map(|z| if z == 0 { 1.0 } else { 0.0 }).collect());
            }
            AttributeKind::Numerical => {
                sizes.push(2 * m);
                phi.push((0..2 * m).map(|z| if z < m { 1.0 } else { 0.0 }).collect());
            }
        }
    }
    let embedded = Universe::categorical(sizes).expect("doubled sizes stay valid");
    ExtendedEmbedding {
        original: universe.clone(),
        embedded,
        phi,
    }
}

impl ExtendedEmbedding {
    /// Map a target `t` in `T_S` to `t'` in `U'_S`. Negative values on
    /// numerical attributes select suffixes.
    pub fn to_embedded(&self, set: AttrSet, t: &[i64]) -> Result<Vec<usize>> {
        let attrs = set.indices();
        if attrs.len() != t.len() {
            return Err(Error::LengthMismatch {
                expected: attrs.len(),
                actual: t.len(),
            });
        }
        attrs
            .iter()
            .zip(t)
            .map(|(&j, &v)| {
                let m = self.original.size(j) as i64;
                let numerical = self.original.kind(j) == AttributeKind::Numerical;
                match (numerical, v) {
                    (_, v) if (0..m).contains(&v) => Ok(v as usize),
                    (true, v) if (-m..0).contains(&v) => Ok((m - 1 - v) as usize),
                    _ => Err(Error::AssignmentOutOfRange { index: j }),
                }
            })
            .collect()
    }

    /// Inverse of [`Self::to_embedded`].
    pub fn from_embedded(&self, set: AttrSet, t: &[usize]) -> Vec<i64> {
        set.iter()
            .zip(t)
            .map(|(j, &v)| {
                let m = self.original.size(j);
                if v < m {
                    v as i64
                } else {
                    m as i64 - 1 - v as i64
                }
            })
            .collect()
    }

    /// Product workload over the embedded universe with the same sets and weights.
    pub fn product_workload(&self, workload: &Workload) -> Result<Workload> {
        Workload::new(
            self.embedded.clone(),
            workload.sets().to_vec(),
            workload.weights().to_vec(),
            QueryKind::Product(self.phi.clone()),
        )
    }
}

/// A workload rewritten into the form the transforms operate on.
#[derive(Debug, Clone)]
pub(crate) struct Resolved {
    pub workload: Workload,
    pub spectrum: PhiSpectrum,
    pub embedding: Option<ExtendedEmbedding>,
}

impl Resolved {
    pub fn new(workload: &Workload) -> Result<Self> {
        match workload.kind() {
            QueryKind::Marginal => Ok(Self {
                spectrum: PhiSpectrum::indicator(workload.universe()),
                workload: workload.clone(),
                embedding: None,
            }),
            QueryKind::Product(phi) => Ok(Self {
                spectrum: phi_spectrum(phi),
                workload: workload.clone(),
                embedding: None,
            }),
            QueryKind::Extended => {
                let emb = embed_extended(workload.universe());
                let product = emb.product_workload(workload)?;
                Ok(Self {
                    spectrum: phi_spectrum(&emb.phi),
                    workload: product,
                    embedding: Some(emb),
                })
            }
        }
    }

    pub fn universe(&self) -> &Universe {
        self.workload.universe()
    }

    pub fn importances(&self) -> BTreeMap<FourierIndex, f64> {
        match self.workload.kind() {
            QueryKind::Marginal => tau_marginal(&self.workload),
            _ => tau_product(&self.workload, &self.spectrum),
        }
    }

    pub fn targets(&self, set: AttrSet, cell: &[usize]) -> Vec<i64> {
        match &self.embedding {
            Some(e) => e.from_embedded(set, cell),
            None => cell.iter().map(|&v| v as i64).collect(),
        }
    }
}

/// Per-frequency importances for any workload kind. Extended workloads are
/// keyed by frequencies of the embedded universe.
pub fn importances(workload: &Workload) -> Result<BTreeMap<FourierIndex, f64>> {
    Ok(Resolved::new(workload)?.importances())
}

#[derive(Debug, Clone)]
struct SetLayout {
    attrs: AttrSet,
    shape: Vec<usize>,
    /// (plan position, cell within the set's table, coefficient factor).
    terms: Vec<(usize, usize, Complex64)>,
    targets: Vec<Vec<i64>>,
    sigma: f64,
    transform: InverseTransform,
}

/// Released table for one attribute set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetRelease {
    pub attrs: AttrSet,
    /// Predicted standard deviation of every estimate in this table.
    pub sigma: f64,
    /// Domain sizes of the reconstruction grid.
    pub shape: Vec<usize>,
    pub targets: Vec<Vec<i64>>,
    pub estimates: Vec<f64>,
    /// Noisy Fourier coefficients fed to the inverse transform, in grid order.
    #[serde(skip)]
    pub coefficients: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseResult {
    pub kind: &'static str,
    pub sets: Vec<SetRelease>,
    pub plan: BudgetPlan,
    pub seed: Option<u64>,
    /// Noisy Fourier queries `F_a(D) + Z_a`.
    pub noisy: BTreeMap<FourierIndex, Complex64>,
}

impl ReleaseResult {
    pub fn set(&self, attrs: AttrSet) -> Option<&SetRelease> {
        self.sets.iter().find(|s| s.attrs == attrs)
    }

    /// Full coefficient array over `U_S` for the given set.
    pub fn coefficient_array(&self, attrs: AttrSet) -> Option<&[Complex64]> {
        self.set(attrs).map(|s| s.coefficients.as_slice())
    }
}

/// A release with the exact Fourier queries and the per-set layouts computed
/// once; [`PreparedRelease::run`] only draws noise and reconstructs.
#[derive(Debug, Clone)]
pub struct PreparedRelease {
    kind: &'static str,
    plan: BudgetPlan,
    freqs: Vec<FourierIndex>,
    variances: Vec<f64>,
    exact: Vec<Complex64>,
    sets: Vec<SetLayout>,
}

impl PreparedRelease {
    pub fn new(dataset: &Dataset, workload: &Workload, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let resolved = Resolved::new(workload)?;
        let plan = BudgetPlan::from_importances(mu, &resolved.importances())?;
        Self::build(dataset, workload, resolved, plan)
    }

    /// Use a caller-supplied plan (the k-way mechanism).
    pub fn with_plan(dataset: &Dataset, workload: &Workload, plan: BudgetPlan) -> Result<Self> {
        check_mu(plan.mu)?;
        let resolved = Resolved::new(workload)?;
        Self::build(dataset, workload, resolved, plan)
    }

    fn build(dataset: &Dataset, workload: &Workload, resolved: Resolved, plan: BudgetPlan) -> Result<Self> {
        if dataset.d() != workload.universe().d() {
            return Err(Error::LengthMismatch {
                expected: workload.universe().d(),
                actual: dataset.d(),
            });
        }
        if !plan.is_empty() {
            accounting(&plan)?;
        }
        let u = resolved.universe().clone();
        let freqs: Vec<FourierIndex> = plan.entries.keys().cloned().collect();
        let variances: Vec<f64> = plan.entries.values().map(|e| e.variance).collect();
        let position: BTreeMap<&FourierIndex, usize> = freqs.iter().enumerate().map(|(i, a)| (a, i)).collect();

        let mut sets = Vec::with_capacity(workload.len());
        for &s in workload.sets() {
            let attrs = s.indices();
            let shape: Vec<usize> = attrs.iter().map(|&j| u.size(j)).collect();
            let us = u.subset_size(s)? as f64;
            let mut terms = Vec::new();
            let mut var = 0.0;
            for (cell, a) in indices_within(&u, s).into_iter().enumerate() {
                let factor = resolved.spectrum.product(s, &a.0);
                if factor == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let Some(&pos) = position.get(&a) else {
                    return Err(Error::Unestimable(s));
                };
                let c = factor / us;
                var += c.norm_sqr() * variances[pos] / 2.0;
                terms.push((pos, cell, c));
            }
            let targets = cells(&shape).map(|c| resolved.targets(s, &c)).collect();
            sets.push(SetLayout {
                attrs: s,
                transform: InverseTransform::new(&shape),
                shape,
                terms,
                targets,
                sigma: var.sqrt(),
            });
        }

        let data = Dataset::new(&u, dataset.rows().to_vec())?;
        let table = fourier_queries(&u, &data, &freqs);
        let exact = freqs.iter().map(|a| table.entries[a]).collect();
        Ok(Self {
            kind: workload.kind().name(),
            plan,
            freqs,
            variances,
            exact,
            sets,
        })
    }

    pub fn plan(&self) -> &BudgetPlan {
        &self.plan
    }

    /// Predicted per-set standard deviations, in workload order.
    pub fn sigmas(&self) -> Vec<f64> {
        self.sets.iter().map(|s| s.sigma).collect()
    }

    /// Number of released values across all sets.
    pub fn output_len(&self) -> usize {
        self.sets.iter().map(|s| s.targets.len()).sum()
    }

    /// Draw noise once per frequency, in frequency order.
    fn noisy<N: NoiseSource + ?Sized>(&self, noise: &mut N) -> Vec<Complex64> {
        self.exact
            .iter()
            .zip(&self.variances)
            .map(|(f, &v)| f + sample_complex_gaussian(v, noise).expect("plan variances are positive"))
            .collect()
    }

    fn reconstruct(&self, layout: &SetLayout, noisy: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); layout.transform.len()];
        for &(pos, cell, c) in &layout.terms {
            coeffs[cell] = c * noisy[pos];
        }
        let mut buf = coeffs.clone();
        layout.transform.process(&mut buf).expect("layout shape is consistent");
        (coeffs, buf.iter().map(|v| v.re).collect())
    }

    /// Flattened estimates of all sets, in workload then grid order.
    pub fn run_flat<N: NoiseSource + ?Sized>(&self, noise: &mut N) -> Vec<f64> {
        let noisy = self.noisy(noise);
        let mut out = Vec::with_capacity(self.output_len());
        for layout in &self.sets {
            out.extend(self.reconstruct(layout, &noisy).1);
        }
        out
    }

    pub fn run<N: NoiseSource + ?Sized>(&self, noise: &mut N, seed: Option<u64>) -> ReleaseResult {
        let noisy = self.noisy(noise);
        let sets = self
            .sets
            .iter()
            .map(|layout| {
                let (coefficients, estimates) = self.reconstruct(layout, &noisy);
                SetRelease {
                    attrs: layout.attrs,
                    sigma: layout.sigma,
                    shape: layout.shape.clone(),
                    targets: layout.targets.clone(),
                    estimates,
                    coefficients,
                }
            })
            .collect();
        ReleaseResult {
            kind: self.kind,
            sets,
            plan: self.plan.clone(),
            seed,
            noisy: self.freqs.iter().cloned().zip(noisy).collect(),
        }
    }
}

fn require_kind(workload: &Workload, want: &'static str) -> Result<()> {
    if workload.kind().name() == want {
        Ok(())
    } else {
        Err(Error::KindMismatch(want))
    }
}

/// Release any workload kind with a seeded sampler.
pub fn release(dataset: &Dataset, workload: &Workload, mu: f64, sampler: &mut SeededSampler) -> Result<ReleaseResult> {
    let seed = sampler.seed();
    Ok(PreparedRelease::new(dataset, workload, mu)?.run(sampler, Some(seed)))
}

/// Release with an arbitrary noise source (no recorded seed).
pub fn release_with<N: NoiseSource + ?Sized>(
    dataset: &Dataset,
    workload: &Workload,
    mu: f64,
    noise: &mut N,
) -> Result<ReleaseResult> {
    Ok(PreparedRelease::new(dataset, workload, mu)?.run(noise, None))
}

pub fn release_marginals(
    dataset: &Dataset,
    workload: &Workload,
    mu: f64,
    sampler: &mut SeededSampler,
) -> Result<ReleaseResult> {
    require_kind(workload, "marginal")?;
    release(dataset, workload, mu, sampler)
}

pub fn release_product(
    dataset: &Dataset,
    workload: &Workload,
    mu: f64,
    sampler: &mut SeededSampler,
) -> Result<ReleaseResult> {
    require_kind(workload, "product")?;
    release(dataset, workload, mu, sampler)
}

pub fn release_extended(
    dataset: &Dataset,
    workload: &Workload,
    mu: f64,
    sampler: &mut SeededSampler,
) -> Result<ReleaseResult> {
    require_kind(workload, "extended")?;
    release(dataset, workload, mu, sampler)
}

/// Workload and plan of the all-`k`-way mechanism on a uniform-domain universe.
pub fn prepare_k_way(dataset: &Dataset, universe: &Universe, k: usize, mu: f64) -> Result<PreparedRelease> {
    let m = universe.size(0);
    if universe.sizes().iter().any(|&s| s != m) {
        return Err(Error::NonUniformDomain);
    }
    let plan = k_way_budget(universe.d(), k, m, mu)?;
    let workload = Workload::all_k_way(Universe::categorical(universe.sizes().to_vec())?, k)?;
    PreparedRelease::with_plan(dataset, &workload, plan)
}

pub fn release_k_way(
    dataset: &Dataset,
    universe: &Universe,
    k: usize,
    mu: f64,
    sampler: &mut SeededSampler,
) -> Result<ReleaseResult> {
    let seed = sampler.seed();
    Ok(prepare_k_way(dataset, universe, k, mu)?.run(sampler, Some(seed)))
}

/// Per-query standard deviation of the all-`k`-way mechanism:
/// `(1 / (mu m^k sqrt C(d,k))) sum_l C(d,l) (m-1)^l sqrt C(d-l, k-l)`.
pub fn k_way_sigma(d: usize, k: usize, m: usize, mu: f64) -> Result<f64> {
    if k == 0 || k > d || m < 2 {
        return Err(Error::BadArity { d, k, m });
    }
    check_mu(mu)?;
    let (d64, k64) = (d as u64, k as u64);
    let sum: f64 = (0..=k64)
        .map(|l| binomial(d64, l) * ((m - 1) as f64).powi(l as i32) * binomial(d64 - l, k64 - l).sqrt())
        .sum();
    Ok(sum / (mu * (m as f64).powi(k as i32) * binomial(d64, k64).sqrt()))
}

/// `eta(m) = (1/m) sum_{l=1}^{m} 1 / sin(pi (2l - 1) / 2m)`.
pub fn eta(m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::BadArity { d: 1, k: 1, m });
    }
    let mf = m as f64;
    let s: f64 = (1..=m).map(|l| 1.0 / (PI * (2 * l - 1) as f64 / (2.0 * mf)).sin()).sum();
    Ok(s / mf)
}

/// `zeta(m) = (1/m) sum_{a=1}^{m-1} 1 / sin(pi a / m)`.
pub fn zeta(m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::BadArity { d: 1, k: 1, m });
    }
    let mf = m as f64;
    let s: f64 = (1..m).map(|a| 1.0 / (PI * a as f64 / mf).sin()).sum();
    Ok(s / mf)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorPrediction {
    /// `sigma_S` per workload set, in workload order.
    pub per_set_sigma: Vec<f64>,
    pub weighted_rms: f64,
    pub max_sigma: f64,
}

/// Closed-form error of the release for the workload's own weights.
pub fn predicted_error(workload: &Workload, mu: f64) -> Result<ErrorPrediction> {
    check_mu(mu)?;
    match workload.kind() {
        QueryKind::Marginal => predicted_marginal(workload, mu),
        QueryKind::Product(_) => predicted_product(&Resolved::new(workload)?, mu),
        QueryKind::Extended => {
            let resolved = Resolved::new(workload)?;
            let mut out = predicted_product(&resolved, mu)?;
            out.weighted_rms = extended_weighted_rms(workload, mu)?;
            Ok(out)
        }
    }
}

fn finish(per_set_sigma: Vec<f64>, weighted_rms: f64) -> ErrorPrediction {
    let max_sigma = per_set_sigma.iter().copied().fold(0.0, f64::max);
    ErrorPrediction {
        per_set_sigma,
        weighted_rms,
        max_sigma,
    }
}

fn predicted_marginal(workload: &Workload, mu: f64) -> Result<ErrorPrediction> {
    let u = workload.universe();
    let nonzero = |r: AttrSet| r.iter().map(|j| (u.size(j) - 1) as f64).product::<f64>();
    let tau_r: BTreeMap<AttrSet, f64> = downward_closure(workload)
        .iter()
        .map(|r| {
            let inner: f64 = workload
                .sets()
                .iter()
                .zip(workload.weights())
                .filter(|(s, _)| r.is_subset_of(**s))
                .map(|(&s, &p)| p / u.subset_size_f64(s).powi(2))
                .sum();
            (r, inner.sqrt())
        })
        .collect();
    let sum: f64 = tau_r.iter().map(|(&r, &t)| nonzero(r) * t).sum();
    let tau = sum / (mu * mu);
    let mut sigmas = Vec::with_capacity(workload.len());
    for &s in workload.sets() {
        let mut acc = 0.0;
        for r in s.subsets() {
            let t = tau_r[&r];
            if t <= 0.0 {
                return Err(Error::Unestimable(s));
            }
            acc += nonzero(r) / t;
        }
        sigmas.push((tau * acc).sqrt() / u.subset_size_f64(s));
    }
    Ok(finish(sigmas, sum / mu))
}

fn predicted_product(resolved: &Resolved, mu: f64) -> Result<ErrorPrediction> {
    let w = &resolved.workload;
    let u = w.universe();
    let taus = resolved.importances();
    let sum: f64 = taus.values().sum();
    let tau = sum / (mu * mu);
    let mut sigmas = Vec::with_capacity(w.len());
    for &s in w.sets() {
        let mut acc = 0.0;
        for a in indices_within(u, s) {
            let f = resolved.spectrum.product_norm_sqr(s, &a.0);
            if f == 0.0 {
                continue;
            }
            let t = taus[&a];
            if t <= 0.0 {
                return Err(Error::Unestimable(s));
            }
            acc += f / t;
        }
        sigmas.push((tau * acc).sqrt() / u.subset_size_f64(s));
    }
    Ok(finish(sigmas, sum / mu))
}

/// `(1/mu) sum_{R ⊆ C, O ⊆ N} prod_R (m_j - 1) prod_O eta(m_j)
///  sqrt(sum_{S ⊇ R ∪ O} p(S) / (|U_{S∩C}|^2 4^{|S∩N|}))`.
pub fn extended_weighted_rms(workload: &Workload, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let u = workload.universe();
    let numerical = u.numerical();
    let categorical = u.categorical_attrs();
    let mut total = 0.0;
    for t in downward_closure(workload).iter() {
        let mut coef = 1.0;
        for j in t.intersection(categorical).iter() {
            coef *= (u.size(j) - 1) as f64;
        }
        for j in t.intersection(numerical).iter() {
            coef *= eta(u.size(j))?;
        }
        let inner: f64 = workload
            .sets()
            .iter()
            .zip(workload.weights())
            .filter(|(s, _)| t.is_subset_of(**s))
            .map(|(&s, &p)| {
                let c = u.subset_size_f64(s.intersection(categorical));
                p / (c * c * 4f64.powi(s.intersection(numerical).len() as i32))
            })
            .sum();
        total += coef * inner.sqrt();
    }
    Ok(total / mu)
}
