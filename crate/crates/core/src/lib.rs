//! Safe-exploration model predictive control.
//!
//! The controller tracks a possibly unreachable output setpoint inside a
//! partially unknown constraint set. At every step it jointly optimizes a
//! *learning* trajectory, which may enter unverified space, and a *backup*
//! trajectory that stays in the verified safe set. Both trajectories share
//! the current state and the first input, so the applied input is always
//! backed by a safe plan. A scalar storage budget drains whenever the backup
//! plan is not at rest, which provably forces the closed loop out of local
//! minima created by obstacles.
//!
//! Crate layout:
//! - [`dynamics`]: plant models (kinematic bicycle, finite 1-D integrator).
//! - [`environment`]: constraint-set algebra, sensing, knowledge updates.
//! - [`costs`]: stage/tracking/offset costs and setpoint search.
//! - [`solver`]: exact enumeration backend and a smooth augmented-Lagrangian
//!   NLP backend behind one interface.
//! - [`mpc`]: the two-trajectory controller, candidate shifting, storage.
//! - [`analysis`]: transitory-setpoint tests and offline run verification.
//! - [`sim`]: closed-loop simulator, scenario files, structured logs.

pub mod analysis;
pub mod costs;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod mpc;
pub mod sim;
pub mod solver;
pub(crate) mod util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
