//! EM/ECM estimation of variance components in the one-way linear mixed model
//!
//! ```text
//! y = Xβ + Zη + ε,   η ~ N(0, τ²I_q),   ε ~ N(0, σ²I_n)
//! ```
//!
//! Every iteration solves Henderson's mixed-model equations for the BLUE and
//! BLUP, then updates (τ², σ²) from average squared terms plus a trace
//! adjustment. ML and REML run the exact same iteration and differ only in the
//! matrices whose traces supply that adjustment:
//!
//! | update | ML                   | REML                    |
//! |--------|----------------------|-------------------------|
//! | τ²     | tr{(M_ηη)⁻¹}         | tr{C_ηη}                |
//! | σ²     | tr{Z(M_ηη)⁻¹Z′}      | tr{[X Z] C [X Z]′}      |
//!
//! The [`likelihood`] module evaluates the ML and REML objectives directly
//! from the marginal model, and [`oracle`] maximizes them by brute-force grid
//! refinement without touching the EM or Henderson code, so the two routes
//! can check each other.

pub mod em;
pub mod error;
pub mod henderson;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod validation;

pub use em::{
    em_step, fit, ols_fixed_point, ols_reml_iteration, trace_adjustments, EmConfig, EmStep,
    EmStepDiagnostics, FitResult, IterationRecord, OlsIteration, StopReason, TraceAdjustments,
    TraceMode,
};
pub use error::{Error, Result};
pub use henderson::{HendersonSolution, HendersonSystem};
pub use likelihood::{LogLik, MarginalModel};
pub use model::{
    simulate, z_from_groups, CovariateSpec, Criterion, ModelData, Simulation, SimulationSpec,
    VarianceComponents,
};
pub use oracle::{OracleConfig, OracleResult, SearchBox};
pub use validation::{compare, compare_estimates, EstimateRow, ValidationReport};
