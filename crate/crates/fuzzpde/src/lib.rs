//! Solvers and classification for heat-like equations with triangular fuzzy
//! parameters. The crate answers three questions about a problem of the form
//! U_t + P U_xx (+ Q U_yy) = F with a fuzzy-parameterized initial condition:
//! what is the crisp solution at a given parameter corner (variational
//! iteration), does the fuzzy solution admit monotone closed-form endpoints
//! (classification), and what do the alpha-cut envelopes look like where the
//! answer is only available through the coupled endpoint system (solution
//! envelopes with their validity region).

pub mod bfs;
pub mod grid;
pub mod problem;
pub mod registry;
pub mod spatial;
pub mod ss;
pub mod vim;

pub use bfs::{
    BfsError, ClassificationReport, DifferentiabilityReport, EndpointFunctions, Sign,
    SignProfile, Verdict, Witness,
};
pub use grid::{Axis, AxisSpec, GridError, GridFunction, GridSpec};
pub use problem::{
    CornerChoice, CrispInstance, HeatLikeProblem, ProblemError, ProblemFile,
};
pub use registry::RegistryError;
pub use spatial::{SpatialError, SpatialOperator};
pub use ss::{RegionBox, SeikkalaSystem, SsError, SsSolution, ValidityMask};
pub use vim::{VimConfig, VimError, VimResult};
