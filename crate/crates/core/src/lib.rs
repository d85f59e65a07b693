//! Numerical laboratory for a super-exponential dyadic shell model: frequency
//! ladders, the model in three normalizations, adaptive backward and forward
//! integration, barrier functions of the trapping region, and diagnostics.

pub mod barriers;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod ladder;
pub mod model;
pub mod nonfinite;
pub mod precision;

pub use barriers::{
    build_barriers, monitor_membership, verify_lemma_bounds, BarrierEnvelope, BoundFamily,
    BoundReport, MembershipLog,
};
pub use diagnostics::{
    besov_norm, blowup_indicator, energy, force_regularity, galerkin_convergence, BlowupOutcome,
    EnergyReport, GalerkinReport, NormReport, RegularityReport,
};
pub use error::{Error, Result};
pub use integrator::{
    integrate, integrate_backward_galerkin, roundtrip, BackwardOptions, GalerkinMode,
    IntegratorConfig, Method, RoundTrip, Trajectory,
};
pub use ladder::{build_ladder, validate_constraints, Ladder, LadderParams, ValidationMode};
pub use model::{convert, Form, ForcingSpec, ModelVariant, ShellState};
pub use precision::Precision;
