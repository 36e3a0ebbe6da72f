//! Simulator and estimation library for a continuous-variable
//! measurement-device-independent QKD protocol.
//!
//! The crate covers the full classical data path of the protocol: Gaussian
//! channel simulation with an untrusted relay ([`relay`]), party-local
//! covariance estimation with zero extra public communication
//! ([`estimation`]), optimal conditional displacements that decorrelate the
//! raw keys from the relay announcement ([`displacement`]), the equivalence
//! chain between MDI-style detection and direct heterodyne detection
//! ([`teleport`]), and a config-driven experiment pipeline ([`pipeline`]).
//!
//! All variances are in shot-noise units (vacuum quadrature variance = 1),
//! and every stochastic routine is deterministic for a fixed seed,
//! independent of thread count.

pub mod displacement;
pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod pipeline;
pub mod relay;
pub mod teleport;

pub use error::{Error, Result};
pub use gaussian::{CovarianceMatrix, GaussianModel, SampleBatch};
pub use pipeline::{run_experiment, run_equivalence_sweep, ExperimentConfig, Report};
pub use relay::{ProtocolParams, RelayStrategy};
