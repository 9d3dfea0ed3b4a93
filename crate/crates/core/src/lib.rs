//! Differentially private release of weighted marginal, product and
//! extended-marginal workloads through a Fourier-basis factorization, with
//! dense certificates for checking optimality on small universes.
//!
//! ```
//! use marginal_release::{release, predicted_error, AttrSet, Dataset, SeededSampler, Universe, Workload};
//!
//! let u = Universe::categorical(vec![2, 3]).unwrap();
//! let data = Dataset::new(&u, vec![vec![0, 1], vec![1, 2], vec![1, 1]]).unwrap();
//! let w = Workload::marginal(u, vec![AttrSet::from_indices([0, 1])], vec![1.0]).unwrap();
//! let out = release(&data, &w, 1.0, &mut SeededSampler::new(42)).unwrap();
//! assert_eq!(out.sets[0].estimates.len(), 6);
//! assert!((out.sets[0].sigma - predicted_error(&w, 1.0).unwrap().max_sigma).abs() < 1e-12);
//! ```

pub mod budget;
pub mod domain;
pub mod error;
pub mod factorization;
pub mod fourier;
pub mod io;
pub mod mechanism;
pub mod optimizer;
pub mod oracle;

pub use budget::{accounting, k_way_budget, BudgetPlan, NoiseSource, SeededSampler, ZeroNoise};
pub use domain::{AttrSet, AttributeKind, Dataset, QueryKind, Universe, Workload};
pub use error::{Error, Result};
pub use factorization::{
    build_factorization, extended_lower_bound, realify, svd_lower_bound, tightness_certificate,
    ExplicitFactorization, LowerBoundWitness, NormReport, TightnessReport,
};
pub use fourier::FourierIndex;
pub use mechanism::{
    eta, k_way_sigma, predicted_error, release, release_extended, release_k_way, release_marginals,
    release_product, zeta, ErrorPrediction, PreparedRelease, ReleaseResult, SetRelease,
};
pub use optimizer::{kkt_check, optimize_pstar, KktReport, WeightSolution};
pub use oracle::DenseCap;
