//! Total-correlation estimation with variational mutual-information bounds.
//!
//! Total correlation (TC) over `n` variables is split into `n - 1` mutual
//! information terms along a tree-like or line-like path
//! ([`decomposition`]). Each term is estimated by a trained critic using one of
//! four bounds ([`bounds`]): MINE, NWJ and InfoNCE from below, CLUB from above.
//! Data come from Gaussians with known TC ([`gaussian`]), so the
//! [`harness`] can score every estimator against the truth.
//!
//! ```
//! use totcorr::decomposition::{build_plan, closed_form_plan_sum, PathKind};
//! use totcorr::gaussian::{equicorrelated_sigma, solve_rho_for_tc};
//!
//! let rho = solve_rho_for_tc(4, 4.0).unwrap();
//! let model = equicorrelated_sigma(4, rho).unwrap();
//! let plan = build_plan(4, PathKind::Tree).unwrap();
//! assert!((closed_form_plan_sum(&model, &plan).unwrap() - 4.0).abs() < 1e-9);
//! ```
//!
//! The guide under `book/` walks through each piece; its snippets run as
//! doctests.

pub mod bounds;
pub mod decomposition;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod nn;
pub mod plot;
pub mod selftest;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussians.md")]
    mod gaussians {}
    #[doc = include_str!("../../../book/src/paths.md")]
    mod paths {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
