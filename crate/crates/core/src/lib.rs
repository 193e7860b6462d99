//! Numerical toolkit for extending distributions defined off a closed
//! singular set to the whole space (finite-part renormalization) and for
//! recursively renormalizing products of Green functions on flat Euclidean
//! configuration spaces.
//!
//! The crate is organized along the concepts it computes with:
//!
//! * [`testfn`] — smooth test functions with exact Taylor-mode jets,
//!   Taylor fields, and grid seminorms;
//! * [`geometry`] — closed singular sets with exact distance functions,
//!   configuration-space diagonals, the separation cover, and the tempered
//!   partition of unity;
//! * [`cutoff`] — the scaled cut-off family `χ_λ` and its decay estimates;
//! * [`distribution`] — the pairing engine with singularity-adapted
//!   deterministic quadrature and growth estimators;
//! * [`extension`] — renormalization schemes (Taylor projections) and the
//!   finite-part extension operator with counterterms and λ-extrapolation;
//! * [`feynman`] — Green kernels, Feynman amplitudes, and the recursive
//!   renormalization maps with factorization checks;
//! * [`oracle`] — independent reference quadratures used to cross-check
//!   the main pipeline.

pub mod cutoff;
pub mod distribution;
pub mod error;
pub mod expr;
pub mod extension;
pub mod feynman;
pub mod geometry;
pub mod multi;
pub mod oracle;
pub mod quad;
pub mod region;
pub mod taylor;
pub mod testfn;

pub use error::{Error, Result};
pub use multi::MAX_JET_ORDER;
pub use region::BoxRegion;
