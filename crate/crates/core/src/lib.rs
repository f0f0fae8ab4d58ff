//! Car-following models and platoon trajectory generation.
//!
//! A stacked-LSTM car-following network is trained either on leader/follower
//! pairs with teacher forcing, or on whole platoons where each follower's
//! inputs are drawn from actual or generated upstream states according to a
//! decaying sampling schedule. Trained models (and the IDM baseline) then
//! generate every follower of a platoon from the first leader's trajectory.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops
// follow the per-step recurrences they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod network;
pub mod sampling;
pub mod state;
pub mod training;

pub use error::{Error, Result};
pub use models::{AnyModel, CarFollowingModel, IdmParams, LstmModel};
pub use network::{LstmMemory, NetworkParams};
pub use sampling::{DecaySchedule, SampleMask, ScheduleFamily};
pub use state::{features, integrate_step, ObservationFeatures, Platoon, Trajectory, VehicleState};
