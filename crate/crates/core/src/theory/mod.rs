//! Exact constructions of additive, product and pairwise-interaction models,
//! their verification, and the λ monotonicity experiment.

mod construct;
mod expansion;
mod verify;

pub use construct::{
    build_ga2m, build_gam, build_product, gate_difference, pair_grid, pair_shift, product_beta, scalar, sup_error,
    tabulated, tie_experts, BuildConfig, Domain, Ga2mSpec, ScalarFn, SeparableTerm, BETA_CLAMP, VALIDATION_POINTS,
};
pub use expansion::{chebyshev_separable, SeparableExpansion};
pub use verify::{
    fit_gam_mlp, generic_interaction, generic_interaction_spec, lambda_monotonicity_experiment, verify_theory,
    MlpFitReport, TheoryCheck, TheoryReport, VerifyOptions,
};
