//! Numerical checks of the conflict bounds (Theorems 1 and 2), Pareto
//! stationarity, and convergence on convex quadratics (Theorems 3 and 4).

mod bounds;
mod pareto;
mod quadratic;
mod suite;

pub use bounds::{
    constructed_ensemble, f_bound, ordered_projection_run, theorem1_bound, theorem1_bounds,
    theorem1_check, theorem2_check, theorem2_check_with, BoundCheck, BoundFn, GradientEnsemble,
    Outcome, ProjectionRun,
};
pub use pareto::{
    min_norm_element, pareto_stationary, MinNormPoint, PARETO_TOL_ANALYTIC, PARETO_TOL_TRAJECTORY,
    SIMPLEX_MAX_ITERS,
};
pub use quadratic::{
    average_optimum, run_two_objective_fedfv, theorem4_monitor, theorem4_run, ConvexQuadratic,
    GradientConvention, Theorem4Record, Theorem4Run, Trajectory,
};
pub use suite::{
    bound_sweep, convergence_record, monitor_record, random_two_objective, theory_suite,
    theory_suite_with, BoundSweepRecord, ConvergenceRecord, MonitorRecord, OutcomeCounts,
    TheoryRecord, TheoryReport, TheorySummary, CONVERGENCE_STEPS, DESCENT_TOL, MONITOR_ROUNDS,
};
