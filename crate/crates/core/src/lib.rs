//! Wiretap-channel secrecy tooling: GF(2) hashing, error-correcting codes,
//! channel models, exact leakage oracles, neural leakage estimators,
//! finite-length secrecy bounds and closed-loop hash-size design.

pub mod bounds;
pub mod channel;
pub mod ecc;
pub mod error;
pub mod gf2;
pub mod hashdesign;
pub mod neural;
pub mod oracle;
pub mod parallel;
pub mod pipeline;
pub mod rng;

pub use channel::{ChannelModel, ChannelOutput};
pub use ecc::CodeSpec;
pub use error::{Error, Result};
pub use gf2::{BitVec, Gf2Matrix, UhfPair};
pub use pipeline::{SampleBatch, SystemConfig};
