//! Rank estimation for a low-rank signal observed under additive Gaussian
//! noise.
//!
//! The crate provides exact conditional tests for "is there a `k`-th
//! signal?" (the conditional singular value test and its integrated
//! variant), confidence intervals for the signal along each observed
//! singular direction, two asymptotic baselines, sequential stopping rules
//! that turn step p-values into a rank estimate, several noise-level
//! estimators, and a simulation laboratory for calibration studies.

pub mod baseline;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod icsv;
pub mod noise;
pub mod quadrature;
pub mod rank;
pub mod report;
pub mod rng;
pub mod simlab;
pub mod special;
pub mod spectra;

pub use error::{Error, Result};
pub use exact::{
    confidence_interval, csv_statistic, sequential_pvalues, ConfidenceInterval, Method,
    TestOutcome, TestSettings,
};
pub use icsv::{icsv_statistic, ISConfig, WishartPool};
pub use noise::{NoiseEstimate, NoiseVariant};
pub use quadrature::QuadratureConfig;
pub use rank::{estimate_rank, simple_stop, strong_stop, RankDecision, StopRule};
pub use spectra::{svd_full, LogMagnitude, ObservedMatrix, SingularSpectrum};
