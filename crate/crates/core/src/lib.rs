//! A deterministic desk-scale laboratory for human-gated interactive
//! imitation learning on planar manipulation tasks.

pub mod env;
pub mod eval;
pub mod error;
pub mod policy;
pub mod rng;
pub mod bilateral;
pub mod dagger;
pub mod dataset;
pub mod harness;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/coupling.md")]
    mod coupling {}
    #[doc = include_str!("../../../book/src/gated-rollouts.md")]
    mod gated_rollouts {}
    #[doc = include_str!("../../../book/src/regimes.md")]
    mod regimes {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/seeds.md")]
    mod seeds {}
}
