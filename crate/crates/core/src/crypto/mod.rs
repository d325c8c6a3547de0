//! Paillier and textbook RSA over arbitrary-precision integers.
//!
//! All randomness is injected by the caller. Key generation and encryption
//! take an explicit RNG so that a seeded generator replays bit-exactly.

mod keyfile;
mod paillier;
pub mod prime;
mod rsa;

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use keyfile::{KeyFile, KeyFileKind, KEY_FILE_VERSION};
pub use paillier::{PaillierCiphertext, PaillierKeypair, PaillierPrivateKey, PaillierPublicKey};
pub use rsa::{RsaKeypair, RsaPublicKey, DEFAULT_PUBLIC_EXPONENT};

/// Short fingerprint of a modulus; used to tag ciphertexts with the key
/// they were produced under.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyId(pub u64);

impl KeyId {
    pub fn of_modulus(tag: &str, modulus: &BigUint) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(tag.as_bytes());
        hasher.update(modulus.to_bytes_be());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        KeyId(u64::from_be_bytes(word))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({:016x})", self.0)
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("requested modulus of {requested} bits, at least {minimum} are required")]
    KeySizeTooSmall { requested: u64, minimum: u64 },
    #[error("primes must be distinct and admissible for this scheme")]
    InvalidPrimes,
    #[error("plaintext is outside [0, modulus)")]
    PlaintextOutOfRange,
    #[error("ciphertext is outside the ciphertext space")]
    CiphertextOutOfRange,
    #[error("randomness is not coprime to the modulus")]
    RandomnessNotCoprime,
    #[error("public exponent is not invertible modulo the Carmichael value")]
    ExponentNotInvertible,
    #[error("key mismatch: ciphertext tagged {found}, key is {expected}")]
    KeyMismatch { expected: KeyId, found: KeyId },
    #[error("malformed key file: {0}")]
    KeyFile(String),
}
