//! Kalman filtering for measurements that depend on an earlier state.
//!
//! Two equivalent sequential filters are provided: [`scfilter`] augments the
//! state with a clone of the earlier state, while [`dskf`] keeps the state
//! size fixed and carries the correlation through the epoch transition.
//! [`oracle`] holds independent reference solutions and [`complexity`] the
//! analytical cost models.

pub mod complexity;
pub mod dskf;
pub mod equivalence;
pub mod error;
pub mod kf;
pub mod matcore;
pub mod models;
pub mod oracle;
pub mod runio;
pub mod scfilter;

pub use dskf::{dskf_update, DelayedStateFilter};
pub use error::{Error, Result};
pub use kf::{kf_predict, kf_update};
pub use matcore::{Matrix, OpCounter};
pub use models::{Belief, DelayedMeasurement, EpochTransition, SystemModel};
pub use oracle::{batch_solve, joint_condition, TrajectoryProblem};
pub use runio::RandomStream;
pub use scfilter::{sc_clone, sc_update, AugmentedBelief, CloningFilter};
