pub mod action;
pub mod airl;
pub mod approx;
pub mod bc;
pub mod envsim;
pub mod error;
pub mod evalharness;
pub mod experts;
pub mod impedance;
pub mod rng;
pub mod rollout;
pub mod sysid;
pub mod trajectory;
pub mod trpo;

pub use error::{Error, Result};
