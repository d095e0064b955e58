//! Best-of-three-worlds linear bandits.
//!
//! The learner runs optimistic follow-the-regularized-leader over a logarithmic
//! barrier of a polytope action set, samples actions from a Dikin point set
//! that is scaled up away from a reference vertex, and feeds an importance
//! weighted loss estimate back into the leader. The same code path achieves
//! logarithmic regret on stochastic instances (with or without adversarial
//! corruption) and square-root regret on adversarial ones.
//!
//! Module map:
//! - [`geometry`]: action sets, membership, Minkowski gauge, Carathéodory decomposition.
//! - [`barrier`]: log-barrier calculus, Dikin frames and the damped Newton solver.
//! - [`learner`]: the bandit algorithm and its vanilla (unscaled) baseline.
//! - [`environments`]: stochastic, adversarial and corrupted loss generators plus regret accounting.
//! - [`oracles`]: independent numeric verifiers for the supporting lemmas.
//! - [`harness`]: experiment configs, seeded batches, CSV traces, summaries and comparisons.

pub mod barrier;
pub mod environments;
pub mod geometry;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod oracles;

pub use barrier::{BarrierError, BarrierFrame, DikinPointSet, LogBarrier};
pub use environments::{Environment, EnvironmentError, EnvironmentSpec, RegretLedger};
pub use geometry::{ConvexCombination, GeometryError, PolytopeActionSet};
pub use learner::{Learner, LearnerConfig, LearnerState, Mode, RoundRecord};
pub use oracles::LemmaReport;

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
