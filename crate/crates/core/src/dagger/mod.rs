//! Interactive imitation learning: warmup demonstrations, gated rollouts
//! with expert intervention, dataset aggregation and the training regimes.

mod expert;
mod gate;
mod regime;
mod rollout;

pub use expert::*;
pub use gate::*;
pub use regime::*;
pub use rollout::*;
