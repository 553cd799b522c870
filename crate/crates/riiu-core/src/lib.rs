//! Reflexive integrated-information units (RIIU).
//!
//! A RIIU is a recurrent cell that carries, next to its hidden state `h`,
//! a meta-state `mu` updated from the gradient of a local integration
//! surrogate, a scalar integration score, and a fixed-width broadcast
//! vector for workspace-style communication between units.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`eig`], [`gelu`], [`rng`]: dense linear algebra,
//!   a cyclic Jacobi eigensolver, the exact-erf GELU, and a portable
//!   seeded random stream.
//! - [`autophi`]: the sliding-window covariance buffer and the relative
//!   Auto-Phi surrogate with its fixed-subspace gradient.
//! - [`cell`], [`params`]: the RIIU step, its ablations, baseline cells,
//!   parameter initialization and matching.
//! - [`grad`]: a per-episode reverse-mode tape plus Adam and gradient
//!   clipping.
//! - [`env`]: the vectorized 4x4 grid world with the move-right
//!   actuator-failure protocol.
//! - [`agent`]: the four-layer stack, global workspace, REINFORCE
//!   training loop, and repair-latency metric.
//! - [`oracle`]: a brute-force Gaussian minimum-information-bipartition
//!   oracle used to calibrate the surrogate on small systems.
//! - [`reference`]: straight-line reference implementations used as
//!   independent oracles by the test suites.

pub mod agent;
pub mod autophi;
pub mod cell;
pub mod eig;
pub mod env;
pub mod error;
pub mod gelu;
pub mod grad;
pub mod oracle;
pub mod params;
pub mod reference;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Matrix, Vector};
