//! Geometric denoising on grids (TV, Huber-TV, TV_psi with power fidelities)
//! and the Lipschitz shift-transformation calculus used to study the jump
//! sets of its solutions.

pub mod curvature;
pub mod energies;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod jumps;
pub mod linalg;
pub mod phantom;
pub mod pushforward;
pub mod quadrature;
pub mod shift;
pub mod solvers;

pub use energies::{
    check_p_increasing, check_psi_membership, concave_psi_example, energy_pair_gap, huber_psi,
    perona_malik_psi, phi_value, tv_psi_value, EnergyPsi, FidelitySpec, ModelSpec, PairGap,
    PsiKind, RegulariserSpec,
};
pub use curvature::{
    corner_cut_radius, extract_contours, fit_circle, level_line_curvature, mean_curvature_of_graph,
    r_curvature_estimate, CircleFit, Contour, CurvatureReport, RCurvature,
};
pub use error::{Error, Result};
pub use experiments::{append_jsonl, run_scenario, run_suite, Metric, Report, Scenario, BUILTINS};
pub use grid::{div_backward, grad_forward, perimeter, total_variation, variation_on, GridImage, Mask, VectorField};
pub use jumps::{containment_excess, detect_jumps, JumpSample, JumpSet};
pub use phantom::{generate_phantom, Noise, PhantomKind, PhantomSpec};
pub use pushforward::{
    double_lip_gap, pushforward_grid, regulariser_change, transport_check, transport_quadrature, wedge_area,
    DoubleLipGap, FunctionalImage, QuadratureSpec, TransportCheck, WedgeArea,
};
pub use shift::{
    comparison_constants, scaling_sweep, Bump, ComparisonConstants, LipschitzGraph, ShiftTransform, SweepTable,
    Transform,
};
pub use solvers::{objective_value, oracle_solve, solve_denoise, SolveResult, SolverConfig};

/// A point (or vector) in the plane.
pub type Point = nalgebra::Vector2<f64>;
/// A 2x2 matrix.
pub type Mat2 = nalgebra::Matrix2<f64>;
