//! Frequency importances, noise calibration, privacy accounting and seeded
//! Gaussian sampling.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::function::factorial::binomial;

use crate::domain::{downward_closure, k_subsets, AttrSet, Universe, Workload};
use crate::error::{Error, Result};
use crate::fourier::{indices_with_support, FourierIndex, PhiSpectrum};

/// `tau_a = sqrt(sum_{S ⊇ supp(a)} p(S) / |U_S|^2)` for every `a` with
/// `supp(a)` in the downward closure of the workload.
pub fn tau_marginal(workload: &Workload) -> BTreeMap<FourierIndex, f64> {
    let u = workload.universe();
    let mut out = BTreeMap::new();
    for r in downward_closure(workload).iter() {
        let inner: f64 = workload
            .sets()
            .iter()
            .zip(workload.weights())
            .filter(|(s, _)| r.is_subset_of(**s))
            .map(|(&s, &p)| p / u.subset_size_f64(s).powi(2))
            .sum();
        let tau = inner.sqrt();
        for a in indices_with_support(u, r) {
            out.insert(a, tau);
        }
    }
    out
}

/// As [`tau_marginal`] with the extra factor `prod_{j in S} |phi_hat_j(a_j)|^2`
/// inside the sum.
pub fn tau_product(workload: &Workload, spectrum: &PhiSpectrum) -> BTreeMap<FourierIndex, f64> {
    let u = workload.universe();
    let mut out = BTreeMap::new();
    for r in downward_closure(workload).iter() {
        let containing: Vec<(AttrSet, f64)> = workload
            .sets()
            .iter()
            .zip(workload.weights())
            .filter(|(s, _)| r.is_subset_of(**s))
            .map(|(&s, &p)| (s, p / u.subset_size_f64(s).powi(2)))
            .collect();
        for a in indices_with_support(u, r) {
            let inner: f64 = containing
                .iter()
                .map(|&(s, w)| w * spectrum.product_norm_sqr(s, &a.0))
                .sum();
            out.insert(a, inner.sqrt());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanEntry {
    /// Importance `tau_a`.
    pub tau: f64,
    /// Complex noise variance `2 tau / tau_a`.
    pub variance: f64,
    /// Privacy share `mu_a^2 = tau_a / tau`.
    pub share: f64,
}

/// Noise calibration for every frequency with `tau_a > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    pub mu: f64,
    /// `tau = (1/mu^2) sum_a tau_a`.
    pub tau_total: f64,
    pub entries: BTreeMap<FourierIndex, PlanEntry>,
}

impl BudgetPlan {
    /// Build a plan from raw importances. Frequencies with `tau_a = 0` are dropped.
    pub fn from_importances(mu: f64, taus: &BTreeMap<FourierIndex, f64>) -> Result<Self> {
        check_mu(mu)?;
        let positive: Vec<(&FourierIndex, f64)> =
            taus.iter().filter(|(_, &t)| t > 0.0).map(|(a, &t)| (a, t)).collect();
        let sum: f64 = positive.iter().map(|(_, t)| t).sum();
        let tau_total = sum / (mu * mu);
        let entries = positive
            .into_iter()
            .map(|(a, t)| {
                (
                    a.clone(),
                    PlanEntry {
                        tau: t,
                        variance: 2.0 * tau_total / t,
                        share: t / tau_total,
                    },
                )
            })
            .collect();
        Ok(Self {
            mu,
            tau_total,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, a: &FourierIndex) -> Option<&PlanEntry> {
        self.entries.get(a)
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Row<'a> {
            a: &'a [usize],
            #[serde(flatten)]
            entry: PlanEntry,
        }
        let entries: Vec<Row> = self
            .entries
            .iter()
            .map(|(a, e)| Row { a: &a.0, entry: *e })
            .collect();
        serde_json::json!({ "mu": self.mu, "entries": entries })
    }
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMu(mu))
    }
}

/// Plan for all `k`-way marginals over `d` attributes of size `m`, with
/// `tau_a = sqrt(C(d - l, k - l))` for frequencies of weight `l <= k`.
pub fn k_way_budget(d: usize, k: usize, m: usize, mu: f64) -> Result<BudgetPlan> {
    if k == 0 || k > d || m < 2 {
        return Err(Error::BadArity { d, k, m });
    }
    check_mu(mu)?;
    let u = Universe::categorical(vec![m; d])?;
    let mut taus = BTreeMap::new();
    for l in 0..=k {
        let tau = binomial((d - l) as u64, (k - l) as u64).sqrt();
        for r in k_subsets(d, l) {
            for a in indices_with_support(&u, r) {
                taus.insert(a, tau);
            }
        }
    }
    BudgetPlan::from_importances(mu, &taus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccountingReport {
    /// `sum_a mu_a^2`.
    pub total: f64,
    /// `|sum_a mu_a^2 - mu^2|`.
    pub residual: f64,
}

/// Check that the per-frequency shares compose to `mu^2`.
pub fn accounting(plan: &BudgetPlan) -> Result<AccountingReport> {
    let expected = plan.mu * plan.mu;
    let total: f64 = plan.entries.values().map(|e| e.share).sum();
    let residual = (total - expected).abs();
    if plan.entries.is_empty() || residual.is_nan() || residual > 1e-9 * expected {
        return Err(Error::BudgetMismatch { total, expected });
    }
    Ok(AccountingReport { total, residual })
}

/// Source of independent standard normal draws.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
}

/// Always returns zero. Runs the full pipeline with the noise switched off.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }
}

/// Deterministic ChaCha20 stream keyed by a 64-bit seed.
///
/// Child samplers share the seed and use stream `index + 1`; the parent uses
/// stream 0. Streams never overlap, so children can run in parallel.
#[derive(Debug, Clone)]
pub struct SeededSampler {
    seed: u64,
    counter: u64,
    rng: ChaCha20Rng,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        Self {
            seed: self.seed,
            counter: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of normal draws taken so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }
}

impl NoiseSource for SeededSampler {
    fn standard_normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }
}

/// Draw from `CN(0, variance)`: real and imaginary parts independent
/// `N(0, variance / 2)`.
pub fn sample_complex_gaussian<N: NoiseSource + ?Sized>(variance: f64, noise: &mut N) -> Result<Complex64> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::NegativeVariance(variance));
    }
    if variance == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let s = (variance / 2.0).sqrt();
    let re = noise.standard_normal() * s;
    let im = noise.standard_normal() * s;
    Ok(Complex64::new(re, im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{QueryKind, Universe};
    use crate::fourier::phi_spectrum;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn golden_2x2() -> Workload {
        Workload::marginal(
            Universe::categorical(vec![2, 2]).unwrap(),
            vec![AttrSet::from_indices([0]), AttrSet::from_indices([1])],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn tau_two_singletons() {
        let t = tau_marginal(&golden_2x2());
        assert_eq!(t.len(), 3);
        assert_relative_eq!(t[&FourierIndex(vec![0, 0])], 0.5, max_relative = 1e-15);
        let s = 1.0 / (2.0 * 2f64.sqrt());
        assert_relative_eq!(t[&FourierIndex(vec![1, 0])], s, max_relative = 1e-15);
        assert_relative_eq!(t[&FourierIndex(vec![0, 1])], s, max_relative = 1e-15);
    }

    #[test]
    fn tau_single_set_and_zero_weights() {
        let u = Universe::categorical(vec![3, 4, 2]).unwrap();
        let s = AttrSet::from_indices([0, 1]);
        let w = Workload::marginal(u.clone(), vec![s], vec![1.0]).unwrap();
        let t = tau_marginal(&w);
        assert_eq!(t.len(), 12);
        for v in t.values() {
            assert_relative_eq!(*v, 1.0 / 12.0, max_relative = 1e-15);
        }
        let z = Workload::marginal(u, vec![s], vec![0.0]).unwrap();
        assert!(tau_marginal(&z).values().all(|&v| v == 0.0));
    }

    #[test]
    fn tau_product_indicator_equals_marginal() {
        let u = Universe::categorical(vec![2, 3, 5]).unwrap();
        let sets = vec![AttrSet::from_indices([0, 1]), AttrSet::from_indices([1, 2])];
        let w = Workload::marginal(u.clone(), sets, vec![0.3, 0.7]).unwrap();
        let spec = PhiSpectrum::indicator(&u);
        assert_eq!(tau_marginal(&w), tau_product(&w, &spec));
    }

    #[test]
    fn tau_product_prefix_attribute() {
        for m in [2usize, 3, 8] {
            let u = Universe::categorical(vec![2 * m]).unwrap();
            let phi = vec![(0..2 * m).map(|z| if z < m { 1.0 } else { 0.0 }).collect::<Vec<_>>()];
            let spec = phi_spectrum(&phi);
            let w = Workload::new(u, vec![AttrSet::from_indices([0])], vec![1.0], QueryKind::Product(phi)).unwrap();
            let t = tau_product(&w, &spec);
            assert_relative_eq!(t[&FourierIndex(vec![0])], 0.5, max_relative = 1e-14);
            for a in (2..2 * m).step_by(2) {
                assert_eq!(t[&FourierIndex(vec![a])], 0.0);
            }
            for a in (1..2 * m).step_by(2) {
                assert!(t[&FourierIndex(vec![a])] > 0.0);
            }
        }
    }

    #[test]
    fn k_way_examples() {
        for (d, m) in [(1usize, 2usize), (2, 3), (3, 2), (4, 3)] {
            let p = k_way_budget(d, d, m, 1.0).unwrap();
            assert_relative_eq!(p.tau_total, (m as f64).powi(d as i32), max_relative = 1e-12);
        }
        let p = k_way_budget(3, 2, 2, 1.0).unwrap();
        assert_relative_eq!(
            p.tau_total,
            3f64.sqrt() + 3.0 * 2f64.sqrt() + 3.0,
            max_relative = 1e-14
        );
        let one = k_way_budget(1, 1, 2, 1.0).unwrap();
        assert_relative_eq!(one.tau_total, 2.0, max_relative = 1e-15);
        for e in one.entries.values() {
            assert_relative_eq!(e.variance, 4.0, max_relative = 1e-15);
        }
        assert!(matches!(k_way_budget(2, 3, 2, 1.0), Err(Error::BadArity { .. })));
        assert!(matches!(k_way_budget(2, 1, 1, 1.0), Err(Error::BadArity { .. })));
        assert!(matches!(k_way_budget(2, 1, 2, 0.0), Err(Error::InvalidMu(_))));
    }

    #[test]
    fn k_way_plan_matches_uniform_weighted_plan() {
        for (d, k, m) in [(3usize, 2usize, 2usize), (4, 2, 3), (5, 3, 2)] {
            let u = Universe::categorical(vec![m; d]).unwrap();
            let w = Workload::all_k_way(u, k).unwrap();
            let general = BudgetPlan::from_importances(1.3, &tau_marginal(&w)).unwrap();
            let special = k_way_budget(d, k, m, 1.3).unwrap();
            assert_eq!(general.len(), special.len());
            for (a, e) in &general.entries {
                let s = special.get(a).unwrap();
                assert_relative_eq!(e.variance, s.variance, max_relative = 1e-12);
                assert_relative_eq!(e.share, s.share, max_relative = 1e-12);
            }
            // Variance ratio between weight-l and weight-k frequencies.
            let top = general
                .entries
                .iter()
                .find(|(a, _)| a.weight() == k)
                .unwrap()
                .1
                .variance;
            for (a, e) in &general.entries {
                let l = a.weight();
                let want = binomial((d - l) as u64, (k - l) as u64).sqrt();
                assert_relative_eq!(top / e.variance, want, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn plan_invariants_and_accounting() {
        let plan = BudgetPlan::from_importances(0.7, &tau_marginal(&golden_2x2())).unwrap();
        let r = accounting(&plan).unwrap();
        assert!(r.residual <= 1e-12 * 0.49);
        for e in plan.entries.values() {
            assert_relative_eq!(e.variance * e.tau, 2.0 * plan.tau_total, max_relative = 1e-14);
        }
        let mut missing = plan.clone();
        let first = missing.entries.keys().next().unwrap().clone();
        missing.entries.remove(&first);
        assert!(matches!(accounting(&missing), Err(Error::BudgetMismatch { .. })));
        let empty = BudgetPlan {
            mu: 1.0,
            tau_total: 0.0,
            entries: BTreeMap::new(),
        };
        assert!(matches!(accounting(&empty), Err(Error::BudgetMismatch { .. })));
    }

    #[test]
    fn plan_json_shape() {
        let plan = BudgetPlan::from_importances(1.0, &tau_marginal(&golden_2x2())).unwrap();
        let v = plan.to_json();
        assert_eq!(v["mu"], 1.0);
        assert_eq!(v["entries"].as_array().unwrap().len(), 3);
        assert_eq!(v["entries"][0]["a"], serde_json::json!([0, 0]));
        assert!(v["entries"][0]["share"].is_number());
    }

    #[test]
    fn complex_gaussian_zero_and_negative() {
        let mut s = SeededSampler::new(1);
        assert_eq!(sample_complex_gaussian(0.0, &mut s).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(
            sample_complex_gaussian(-1.0, &mut s),
            Err(Error::NegativeVariance(-1.0))
        );
        assert_eq!(
            sample_complex_gaussian(3.0, &mut ZeroNoise).unwrap(),
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn sampler_is_deterministic_and_children_differ() {
        let draw = |mut s: SeededSampler| (0..64).map(|_| s.standard_normal()).collect::<Vec<_>>();
        assert_eq!(draw(SeededSampler::new(42)), draw(SeededSampler::new(42)));
        assert_ne!(draw(SeededSampler::new(42)), draw(SeededSampler::new(43)));
        let root = SeededSampler::new(42);
        assert_eq!(draw(root.child(3)), draw(root.child(3)));
        assert_ne!(draw(root.child(3)), draw(root.child(4)));
        assert_ne!(draw(root.child(0)), draw(SeededSampler::new(42)));
    }

    #[test]
    fn complex_gaussian_moments() {
        let mut s = SeededSampler::new(2024);
        let n = 1_000_000;
        let (mut sr, mut si, mut qr, mut qi) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = sample_complex_gaussian(2.0, &mut s).unwrap();
            sr += z.re;
            si += z.im;
            qr += z.re * z.re;
            qi += z.im * z.im;
        }
        let nf = n as f64;
        assert!((qr / nf - 1.0).abs() < 0.02);
        assert!((qi / nf - 1.0).abs() < 0.02);
        assert_eq!(s.counter(), 2 * n as u64);
        // Unbiased at 1e5 draws: |mean| <= 5 sqrt(var / 1e5).
        let mut s = SeededSampler::new(99);
        let t = 100_000;
        let mean: f64 = (0..t)
            .map(|_| sample_complex_gaussian(2.0, &mut s).unwrap().re)
            .sum::<f64>()
            / t as f64;
        assert!(mean.abs() <= 5.0 * (1.0 / t as f64).sqrt());
        let _ = (sr, si);
    }

    proptest! {
        #[test]
        fn tau_monotone_in_weights(
            w in prop::collection::vec(0.0f64..1.0, 3),
            bump in 0.0f64..1.0,
            which in 0usize..3,
        ) {
            let u = Universe::categorical(vec![2, 3, 2]).unwrap();
            let sets = vec![
                AttrSet::from_indices([0]),
                AttrSet::from_indices([1, 2]),
                AttrSet::from_indices([0, 2]),
            ];
            let base = Workload::marginal(u.clone(), sets.clone(), w.clone()).unwrap();
            let mut w2 = w;
            w2[which] += bump;
            let more = Workload::marginal(u, sets, w2).unwrap();
            let t1 = tau_marginal(&base);
            let t2 = tau_marginal(&more);
            for (a, v) in &t1 {
                prop_assert!(t2[a] >= *v);
            }
        }

        #[test]
        fn shares_sum_to_mu_squared(w in prop::collection::vec(0.01f64..1.0, 3), mu in 0.1f64..5.0) {
            let u = Universe::categorical(vec![3, 2, 4]).unwrap();
            let sets = vec![
                AttrSet::from_indices([0, 1]),
                AttrSet::from_indices([2]),
                AttrSet::from_indices([1, 2]),
            ];
            let wl = Workload::marginal(u, sets, w).unwrap();
            let plan = BudgetPlan::from_importances(mu, &tau_marginal(&wl)).unwrap();
            let r = accounting(&plan).unwrap();
            prop_assert!(r.residual <= 1e-12 * mu * mu);
        }
    }
}
