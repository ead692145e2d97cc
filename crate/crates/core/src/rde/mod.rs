//! Path integration of the linear and nonlinear equations.
//!
//! The linear equation is solved through its explicit representation
//! `X_t = x0 A_t + B_t`, so discretization error enters only through the
//! trapezoid quadratures of `Y`, `B` and `H`. The nonlinear one is an ordinary
//! ODE per realization and is stepped with RK4.

mod ensemble;
pub mod gaussian;
mod grid;
mod linear;
mod nonlinear;

pub(crate) use ensemble::par_map;
pub use ensemble::{
    pick_stride, simulate_linear, simulate_nonlinear, stationary_sample, Column, EnsembleSpec,
    Ensembles, Label, NonlinearEnsembles, PathEnsemble, Refinement, Sampling, StationarySample,
};
pub use grid::TimeGrid;
pub use linear::{
    forced_response, integrate_y, propagator, reversed_h, solve_linear, solve_linear_paths,
    LinearModel, LinearSolution, PathKey, Propagator, LOG_BUDGET,
};
pub use nonlinear::{
    integrate_nonlinear, solve_nonlinear, NonlinearModel, NonlinearSolution, Nonlinearity,
};
