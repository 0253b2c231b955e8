//! Deterministic fixed-step planar manipulation worlds.

mod arm;
mod task;
mod world;

pub use arm::*;
pub use task::*;
pub use world::*;
