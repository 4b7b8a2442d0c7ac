//! Secure peripheral pipeline simulator.

pub mod audio;
pub mod classifier;
pub mod driver;
pub mod pipeline;
pub mod pta;
pub mod relay;
pub mod tee;
pub mod trace;
