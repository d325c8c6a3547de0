//! Textbook (unpadded) RSA on `Z_n`.
//!
//! Encryption is deterministic: `0` and `1` are fixed points and equal
//! plaintexts give equal ciphertexts. The scheme is therefore not
//! semantically secure; it is used here only as a keyed permutation of
//! `Z_n` wrapping ciphertexts that are already randomized.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::RngCore;

use super::prime::{carmichael, gen_prime};
use super::{CryptoError, KeyId};

pub const DEFAULT_PUBLIC_EXPONENT: u32 = 65_537;
const MIN_BITS: u64 = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaPublicKey {
    n: BigUint,
    e: BigUint,
    id: KeyId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaKeypair {
    public: RsaPublicKey,
    d: BigUint,
}

impl RsaPublicKey {
    pub fn new(n: BigUint, e: BigUint) -> Self {
        let id = KeyId::of_modulus("rsa", &n);
        Self { n, e, id }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn exponent(&self) -> &BigUint {
        &self.e
    }

    pub fn id(&self) -> KeyId {
        self.id
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn encrypt(&self, m: &BigUint) -> Result<BigUint, CryptoError> {
        if *m >= self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        Ok(m.modpow(&self.e, &self.n))
    }
}

impl RsaKeypair {
    pub fn generate<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<Self, CryptoError> {
        if bits < MIN_BITS {
            return Err(CryptoError::KeySizeTooSmall {
                requested: bits,
                minimum: MIN_BITS,
            });
        }
        let e = BigUint::from(DEFAULT_PUBLIC_EXPONENT);
        loop {
            let p = gen_prime(bits.div_ceil(2), rng);
            let q = gen_prime(bits / 2, rng);
            if let Ok(kp) = Self::from_primes(&p, &q, &e) {
                return Ok(kp);
            }
        }
    }

    /// `d = e^{-1} mod lcm(p - 1, q - 1)`.
    pub fn from_primes(p: &BigUint, q: &BigUint, e: &BigUint) -> Result<Self, CryptoError> {
        if p == q || *p < BigUint::from(2u32) || *q < BigUint::from(2u32) {
            return Err(CryptoError::InvalidPrimes);
        }
        let lambda = carmichael(p, q);
        if !e.gcd(&lambda).is_one() {
            return Err(CryptoError::ExponentNotInvertible);
        }
        let d = e.modinv(&lambda).ok_or(CryptoError::ExponentNotInvertible)?;
        Ok(Self {
            public: RsaPublicKey::new(p * q, e.clone()),
            d,
        })
    }

    pub fn from_parts(n: BigUint, e: BigUint, d: BigUint) -> Result<Self, CryptoError> {
        let kp = Self {
            public: RsaPublicKey::new(n, e),
            d,
        };
        let probe = BigUint::from(2u32) % kp.public.modulus();
        if kp.decrypt(&kp.public.encrypt(&probe)?)? != probe {
            return Err(CryptoError::KeyFile("private exponent does not invert the public one".into()));
        }
        Ok(kp)
    }

    pub fn public(&self) -> &RsaPublicKey {
        &self.public
    }

    pub fn private_exponent(&self) -> &BigUint {
        &self.d
    }

    pub fn decrypt(&self, c: &BigUint) -> Result<BigUint, CryptoError> {
        if *c >= self.public.n {
            return Err(CryptoError::CiphertextOutOfRange);
        }
        Ok(c.modpow(&self.d, &self.public.n))
    }
}
