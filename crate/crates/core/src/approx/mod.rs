//! Small dense networks with hand-written reverse and forward mode derivatives.

mod checkpoint;
mod mlp;
mod optim;
mod policy;

pub use checkpoint::{Checkpoint, Role};
pub use mlp::{Activation, Mlp, Trace};
pub use optim::{Adam, Momentum};
pub use policy::{log_density, GaussianPolicy, RewardNet, INITIAL_LOG_STD, LOG_STD_MAX, LOG_STD_MIN};
