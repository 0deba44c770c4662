//! Fixed boundary flows on embedded manifolds.
//!
//! A fixed boundary flow is a curve with prescribed endpoints whose tangent
//! follows the leading eigenvector of the local tangent covariance of a point
//! cloud as closely as possible. The crate assembles it from:
//!
//! - [`geometry`]: sphere, cone and affine manifolds with projection, exp/log
//!   and parallel transport;
//! - [`field`]: local covariance, the principal-direction field and its
//!   extension off the data;
//! - [`dae`]: the constrained Euler-Lagrange system and its index reduction;
//! - [`bvp`]: Lobatto collocation with a damped global Newton iteration;
//! - [`flow`]: the outer frozen-field iteration with manifold projection, and
//!   the principal flow baseline;
//! - [`analysis`]: the `h = ∞` Euclidean theory, `ρ` scale selection and
//!   reparameterization algebra.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to one of them.

pub mod analysis;
pub mod bvp;
pub mod curve;
pub mod dae;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod scalar;

pub use analysis::{
    arc_length_reparameterize, assumption_check, confidence_ellipsoid, discrete_objective, gamma_plus, gamma_s,
    h_sweep, lattice_oracle, reparam_alpha, rho_measure, sigma_infinity, EuclideanField, Lattice,
    LatticePathProblem,
};
pub use bvp::{solve_bvp, BvpSolution, CollocationScheme, NewtonOptions};
pub use curve::{DiscreteCurve, Mesh};
pub use dae::{constraint_residuals, ConstraintResidual, ELSystem};
pub use error::{FlowError, Result};
pub use field::{Bandwidth, CloudProjection, DataCloud, DataField, DirectionField, VectorFieldSample};
pub use flow::{
    fixed_boundary_flow, frechet_mean, initial_curve, principal_flow, solve_flow, DataFlowResult, FlowConfig,
    FlowResult, FlowStatus, PrincipalFlow, SolveOptions,
};
pub use geometry::{Manifold, TangentFrame};
pub use scalar::Scalar;

pub type ManifoldF64 = Manifold<f64>;
pub type ManifoldF32 = Manifold<f32>;
pub type DataCloudF64 = DataCloud<f64>;
pub type DataCloudF32 = DataCloud<f32>;
pub type DataFieldF64 = DataField<f64>;
pub type DataFieldF32 = DataField<f32>;
pub type DiscreteCurveF64 = DiscreteCurve<f64>;
pub type DiscreteCurveF32 = DiscreteCurve<f32>;
pub type FlowConfigF64 = FlowConfig<f64>;
pub type FlowConfigF32 = FlowConfig<f32>;
pub type FlowResultF64 = FlowResult<f64>;
pub type FlowResultF32 = FlowResult<f32>;
pub type EuclideanFieldF64 = EuclideanField<f64>;
pub type EuclideanFieldF32 = EuclideanField<f32>;
