//! Two-dimensional controlled gliding: a falling-ellipse flight model with
//! quasi-steady fluid closures, an episodic perching task, and an off-policy
//! actor-critic learner that discovers time- and energy-optimal policies.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod net;
pub mod racer;
pub mod seeds;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
