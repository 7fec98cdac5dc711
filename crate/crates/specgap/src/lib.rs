//! Two-sided estimates of the principal eigenvalue (spectral gap) of a
//! one-dimensional diffusion operator `L = a(x) d²/dx² + b(x) d/dx` on an
//! interval, under the four combinations of Dirichlet/Neumann boundaries.
//!
//! The crate computes:
//!
//! * closed-form style variational bounds from the speed and scale measures
//!   of the operator (upper and lower, differing by at most a factor of 4),
//! * sharper refined bounds from an explicit family of test functions,
//!   including an iterative improvement scheme,
//! * an independent finite-difference eigensolver used as a cross-check.
//!
//! ```
//! use specgap::problem::DiffusionProblem;
//! use specgap::basic::{kappa_double, BoundaryCase};
//!
//! // Laplacian on (0,1): a = 1, b = 0.
//! let p = DiffusionProblem::from_coefficients(
//!     0.0, 1.0, |_| 1.0, |_| 0.0, 0.5, "laplacian",
//! ).unwrap();
//! let k = kappa_double(&p, BoundaryCase::DD).unwrap();
//! assert!((k.inverse - 16.0).abs() < 1e-6);
//! ```

pub mod basic;
pub mod eigen;
pub mod expr;
pub mod measure;
pub(crate) mod optimize;
pub mod problem;
pub mod quad;
pub mod refined;
pub mod testfn;
