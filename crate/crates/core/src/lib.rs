//! Dynamic information manipulation games on finite POMDPs.
//!
//! A decision maker (DM) controls a partially observed Markov chain and
//! minimizes an expected utility of its discounted accumulated cost. An
//! information manipulator (IM) sees the full state and, stage by stage,
//! replaces the joint law of the next (observable, hidden) pair by a designed
//! one whose hidden marginal matches the truth. The crate provides:
//!
//! - [`model`]: the finite game instance and its validation;
//! - [`info_state`]: unnormalized information states and the update Ψ;
//! - [`dm`]: exact backward induction for the DM;
//! - [`lp`]: a dense bounded-variable simplex for the stage design LPs;
//! - [`design`]: the IM's ex ante and interim recursions;
//! - [`deviation`]: manipulated objectives, distortion profiles, the
//!   performance-deviation bound and Monte-Carlo simulation;
//! - [`gaussian`]: the linear-Gaussian closed forms and their oracles;
//! - [`discrete_example`]: the two-stage binary example on an action grid;
//! - [`scenario`]: JSON scenarios and the bundled instances;
//! - [`random`]: random instances for property tests and benchmarks.

pub mod design;
pub mod deviation;
pub mod discrete_example;
pub mod dm;
pub mod error;
pub mod exec;
pub mod gaussian;
pub mod history;
pub mod info_state;
pub mod lp;
pub mod model;
pub mod quadrature;
pub mod random;
pub mod scenario;
pub mod utility;

pub use error::{DimgError, Result};
pub use exec::Execution;
pub use history::{JointHistory, ObsHistory};
pub use info_state::InformationState;
pub use model::{validate_model, DistributionXY, PomdpModel};
pub use utility::Utility;
