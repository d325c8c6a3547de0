//! Encrypted networked control with a double cryptographic layer.
//!
//! Measurements are quantized onto a signed fixed-point grid, encoded as
//! integers, encrypted under Paillier (shared by the plant entities) and then
//! wrapped in a per-link RSA layer. A remote controller evaluates an
//! integer-coefficient linear control law directly on the Paillier
//! ciphertexts. The simulator runs the encrypted loop next to a plaintext
//! shadow loop and checks that both agree bit for bit.

pub mod codec;
pub mod controller;
pub mod crypto;
pub mod exec;
pub mod fixedpoint;
pub mod keyring;
pub mod linalg;
pub mod plant;
pub mod sim;
pub mod synthesis;

#[cfg(test)]
mod fixtures;

pub use fixedpoint::{Fixed, GridParams};
