//! Characters of the product group `Z_{m_1} x ... x Z_{m_d}`, dataset Fourier
//! queries, and fast multidimensional transforms.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::domain::{AttrSet, Dataset, Universe};
use crate::error::{Error, Result};

/// A frequency vector `a` with `0 <= a_j < m_j`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FourierIndex(pub Vec<usize>);

impl FourierIndex {
    pub fn zero(d: usize) -> Self {
        FourierIndex(vec![0; d])
    }

    pub fn new(universe: &Universe, a: Vec<usize>) -> Result<Self> {
        if a.len() != universe.d() {
            return Err(Error::LengthMismatch {
                expected: universe.d(),
                actual: a.len(),
            });
        }
        for (index, (&v, &m)) in a.iter().zip(universe.sizes()).enumerate() {
            if v >= m {
                return Err(Error::ValueOutOfRange {
                    index,
                    value: v as i64,
                    size: m,
                });
            }
        }
        Ok(FourierIndex(a))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `supp(a) = {j : a_j != 0}`.
    pub fn support(&self) -> AttrSet {
        AttrSet::from_indices(self.0.iter().enumerate().filter(|(_, &v)| v != 0).map(|(j, _)| j))
    }

    /// `||a||_0`.
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0).count()
    }

    /// `a' = -a mod m`.
    pub fn negated(&self, universe: &Universe) -> FourierIndex {
        FourierIndex(
            self.0
                .iter()
                .zip(universe.sizes())
                .map(|(&v, &m)| (m - v) % m)
                .collect(),
        )
    }
}

/// All frequencies whose support is exactly `support`, in lexicographic order.
pub fn indices_with_support(universe: &Universe, support: AttrSet) -> Vec<FourierIndex> {
    let attrs = support.indices();
    let shape: Vec<usize> = attrs.iter().map(|&j| universe.size(j) - 1).collect();
    crate::domain::cells(&shape)
        .map(|c| {
            let mut a = vec![0; universe.d()];
            for (&j, v) in attrs.iter().zip(c) {
                a[j] = v + 1;
            }
            FourierIndex(a)
        })
        .collect()
}

/// All frequencies with `supp(a) ⊆ set`, in lexicographic order.
pub fn indices_within(universe: &Universe, set: AttrSet) -> Vec<FourierIndex> {
    let attrs = set.indices();
    let shape: Vec<usize> = attrs.iter().map(|&j| universe.size(j)).collect();
    crate::domain::cells(&shape)
        .map(|c| {
            let mut a = vec![0; universe.d()];
            for (&j, v) in attrs.iter().zip(c) {
                a[j] = v;
            }
            FourierIndex(a)
        })
        .collect()
}

/// `omega_m^k = exp(2 pi i k / m)` with `k` reduced mod `m` first.
pub fn root_of_unity(m: usize, k: usize) -> Complex64 {
    let k = k % m;
    Complex64::from_polar(1.0, TAU * k as f64 / m as f64)
}

/// `chi_a(x) = prod_j omega_{m_j}^{a_j x_j}`.
pub fn character(universe: &Universe, a: &FourierIndex, x: &[usize]) -> Complex64 {
    a.0.iter()
        .zip(x)
        .zip(universe.sizes())
        .filter(|((&aj, _), _)| aj != 0)
        .map(|((&aj, &xj), &m)| root_of_unity(m, aj * xj))
        .product()
}

/// Exact Fourier query values `F_a(D)` for a set of frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTable {
    pub entries: BTreeMap<FourierIndex, Complex64>,
}

impl FourierTable {
    pub fn get(&self, a: &FourierIndex) -> Option<Complex64> {
        self.entries.get(a).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `F_a(D) = sum_i conj(chi_a(x_i))` for every requested `a`.
pub fn fourier_queries<'a, I>(universe: &Universe, dataset: &Dataset, indices: I) -> FourierTable
where
    I: IntoIterator<Item = &'a FourierIndex>,
{
    let hist = dataset.histogram();
    let list: Vec<&FourierIndex> = indices.into_iter().collect();
    let values: Vec<Complex64> = list
        .par_iter()
        .map(|a| {
            hist.iter()
                .map(|(x, c)| character(universe, a, x).conj() * *c as f64)
                .sum()
        })
        .collect();
    FourierTable {
        entries: list.into_iter().cloned().zip(values).collect(),
    }
}

/// Per-attribute Fourier coefficients `phi_hat_j(a) = sum_z phi_j(z) omega^{-a z}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiSpectrum {
    pub coeffs: Vec<Vec<Complex64>>,
}

impl PhiSpectrum {
    /// Spectrum of `phi_j(z) = 1{z = 0}`: identically one.
    pub fn indicator(universe: &Universe) -> Self {
        PhiSpectrum {
            coeffs: universe
                .sizes()
                .iter()
                .map(|&m| vec![Complex64::new(1.0, 0.0); m])
                .collect(),
        }
    }

    pub fn get(&self, j: usize, a: usize) -> Complex64 {
        self.coeffs[j][a]
    }

    /// `prod_{j in S} phi_hat_j(a_j)`.
    pub fn product(&self, set: AttrSet, a: &[usize]) -> Complex64 {
        set.iter().map(|j| self.coeffs[j][a[j]]).product()
    }

    /// `prod_{j in S} |phi_hat_j(a_j)|^2`.
    pub fn product_norm_sqr(&self, set: AttrSet, a: &[usize]) -> f64 {
        set.iter().map(|j| self.coeffs[j][a[j]].norm_sqr()).product()
    }
}

/// Forward transform of each table. Coefficients below `1e-12 * sum |phi|`
/// in modulus are rounded to exactly zero so that structurally vanishing
/// frequencies are recognised as such.
pub fn phi_spectrum(phi: &[Vec<f64>]) -> PhiSpectrum {
    let mut planner = FftPlanner::<f64>::new();
    let coeffs = phi
        .iter()
        .map(|table| {
            let mut buf: Vec<Complex64> = table.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            if !buf.is_empty() {
                planner.plan_fft_forward(buf.len()).process(&mut buf);
            }
            let scale: f64 = table.iter().map(|v| v.abs()).sum();
            let cutoff = 1e-12 * scale;
            for v in &mut buf {
                if v.norm() <= cutoff {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            buf
        })
        .collect();
    PhiSpectrum { coeffs }
}

/// Planned unnormalized inverse transform over a fixed mixed-radix shape.
///
/// Computes `out[t] = sum_a c[a] prod_i omega_{m_i}^{a_i t_i}` with row-major
/// layout (last axis fastest).
#[derive(Clone)]
pub struct InverseTransform {
    shape: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
    scratch_len: usize,
}

impl std::fmt::Debug for InverseTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InverseTransform").field("shape", &self.shape).finish()
    }
}

impl InverseTransform {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let plans: Vec<Arc<dyn Fft<f64>>> = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let scratch_len = plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        Self {
            shape: shape.to_vec(),
            plans,
            scratch_len,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transform `data` in place.
    pub fn process(&self, data: &mut [Complex64]) -> Result<()> {
        let total = self.len();
        if data.len() != total {
            return Err(Error::ShapeMismatch {
                expected: total,
                actual: data.len(),
            });
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len];
        let mut lines = vec![Complex64::new(0.0, 0.0); total];
        let mut stride = total;
        for (axis, plan) in self.plans.iter().enumerate() {
            let n = self.shape[axis];
            stride /= n;
            if n == 1 {
                continue;
            }
            let outer = total / (n * stride);
            // Gather every line along this axis into a contiguous buffer.
            let mut k = 0;
            for o in 0..outer {
                for i in 0..stride {
                    let base = o * n * stride + i;
                    for j in 0..n {
                        lines[k] = data[base + j * stride];
                        k += 1;
                    }
                }
            }
            plan.process_with_scratch(&mut lines, &mut scratch);
            let mut k = 0;
            for o in 0..outer {
                for i in 0..stride {
                    let base = o * n * stride + i;
                    for j in 0..n {
                        data[base + j * stride] = lines[k];
                        k += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One-shot inverse transform of a full coefficient array.
pub fn inverse_table(coeffs: &[Complex64], shape: &[usize]) -> Result<Vec<Complex64>> {
    let mut out = coeffs.to_vec();
    InverseTransform::new(shape).process(&mut out)?;
    Ok(out)
}
