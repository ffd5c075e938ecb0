//! Regularized asymptotic expansions for singularly perturbed parabolic systems
//!
//! (ε+t)u_t − ε²A(x)u_xx − D(t)u = f on (0,1)×(0,T], u(x,0) = h, u = 0 at x = 0, 1,
//!
//! together with a layer-adapted finite-difference reference solver and the
//! harness that compares the two as ε → 0. Everything numeric is generic over
//! [`Real`]; the `*64` aliases below fix the scalar to `f64`.

pub mod error;
pub mod linalg;
pub mod scalar;

pub mod poly;
pub mod problem;
pub mod interp;
pub mod quadrature;
pub mod spectral;
pub mod regularization;
pub mod layers;
pub mod degenerate_ode;
pub mod expansion;
pub mod series;
pub mod reference;
pub mod verification;
pub mod cli;

pub use error::{Error, Result};
pub use expansion::{AsymptoticTerm, Expansion, ExpansionOptions, K_MAX};
pub use problem::{preset, ProblemSpec, PRESET_NAMES};
pub use reference::{build_mesh, solve_reference, LayerMesh, Scheme};
pub use scalar::{Real, C};
pub use series::{evaluate_partial_sum, GridField};
pub use verification::{convergence_study, ConvergenceReport, StudyParams};

pub type C64 = C<f64>;
pub type ProblemSpec64 = ProblemSpec<f64>;
pub type Expansion64 = Expansion<f64>;
pub type ExpansionOptions64 = ExpansionOptions<f64>;
pub type GridField64 = GridField<f64>;
pub type LayerMesh64 = LayerMesh<f64>;
pub type StudyParams64 = StudyParams<f64>;
