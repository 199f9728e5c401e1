//! Boundary control of parabolic equations with Venttsel (dynamic,
//! surface-diffusive) boundary conditions on a periodic strip.
//!
//! The crate provides the forward solver, its linearizations, an exact
//! discrete adjoint for gradients and second-order forms, and optimizers
//! that produce and verify first- and second-order optimality conditions.

pub mod adjoint;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod random;

pub use adjoint::{
    constraint_gradient, constraint_value, duality_gap, lagrangian_gradient, objective_gradient,
    objective_second_form, objective_value, solve_adjoint, AdjointData, DerivativeReport,
    DualityReport, PrincipalData, Sensitivity,
};
pub use error::{Error, Result};
pub use forward::{
    manufactured_solution, solve_linear_state, solve_linearized, solve_second_linearized,
    solve_state, step_jacobian, ManufacturedSolution, NormalStencil, RowKind, SolverOptions,
    StepOperator,
};
pub use grid::{
    snapshot_from_fn, BoundaryPoint, BoundaryTrajectory, DomainSpec, Grid, QuadratureWeights,
    Side, StateTrajectory, VolumePoint,
};
pub use model::{
    make_quadratic_problem, validate, Constraint, ConstraintKind, ConstraintSpec, ControlBounds,
    Nonlinearity, ObjectiveSpec, ProblemSpec, QuadraticTrackingPreset, SampleRanges,
    StateTerm, SurfaceTerm, ValidationReport, Violation,
};
pub use optimize::{
    augmented_lagrangian, check_regularity, check_second_order, picard_optimality_system,
    projected_gradient, DescentResult, IterationRecord, KktFailure, KktReport, KktResult,
    OptimizeOptions, PicardResult, RegularityReport,
};
