//! Live teleoperation over websockets: an operator watches autonomous
//! rollouts, takes over at any tick through a virtual leader device, and
//! saves or discards what was recorded.

pub mod protocol;
pub mod queue;
pub mod server;
pub mod session;
pub mod transcript;

pub use protocol::{ClientFrame, Command, ServerFrame, Snapshot, PROTOCOL_VERSION};
pub use server::{start, ServerConfig, ServerHandle};
pub use session::{Session, SessionConfig};
pub use transcript::{replay, Transcript};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/teleop.md")]
    mod teleop {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
}
