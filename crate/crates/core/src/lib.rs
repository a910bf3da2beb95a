//! Hypothesis tests for scalar-on-function regression.
//!
//! Four procedures are provided for a scalar response `y` and a curve
//! covariate `X(t)`:
//!
//! | method | nullity (`H02`) | linearity (`H01`) |
//! |--------|-----------------|-------------------|
//! | GGF: projected Cramér-von Mises + wild bootstrap | yes | yes |
//! | MHR: FGAM mixed model, (restricted) likelihood ratio | yes | yes |
//! | HR: functional quadratic regression, `U_n` | | yes |
//! | KSM: FPC score regression, F test | yes | |
//!
//! The [`bench`] module runs size and power studies over the synthetic
//! settings in [`datagen`], and [`tecator`] applies all tests to the
//! Tecator meat spectra.

pub mod basis;
pub mod bench;
pub mod datagen;
pub mod error;
pub mod flm;
pub mod fpca;
pub mod funcdata;
pub mod ggf;
pub mod hr;
pub mod ksm;
mod linalg;
pub mod mhr;
pub mod rng;
pub mod tecator;
pub mod testing;

pub use error::{Error, Result};
pub use funcdata::{FunctionalDataset, Grid, SparseFunctionalDataset};
pub use rng::RngStream;
pub use testing::{Hypothesis, Method, TestResult};
