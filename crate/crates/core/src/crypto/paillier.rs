use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

use super::prime::{carmichael, gen_prime};
use super::{CryptoError, KeyId};

const MIN_BITS: u64 = 16;

/// Paillier public key with the simplified generator `g = n + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    g: BigUint,
    id: KeyId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    lambda: BigUint,
    mu: BigUint,
    public: PaillierPublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierKeypair {
    pub public: PaillierPublicKey,
    pub private: PaillierPrivateKey,
}

/// An element of `Z*_{n^2}` tagged with the key that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PaillierCiphertext {
    value: BigUint,
    key: KeyId,
}

impl PaillierCiphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> KeyId {
        self.key
    }

    /// Re-attaches a raw integer (for example one recovered from an outer RSA
    /// layer) to a key. The value is range-checked against the key.
    pub fn from_raw(pk: &PaillierPublicKey, value: BigUint) -> Result<Self, CryptoError> {
        if value >= pk.n_squared {
            return Err(CryptoError::CiphertextOutOfRange);
        }
        Ok(Self { value, key: pk.id })
    }
}

impl PaillierPublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let g = &n + 1u32;
        let id = KeyId::of_modulus("paillier", &n);
        Self { n, n_squared, g, id }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn id(&self) -> KeyId {
        self.id
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    fn check(&self, c: &PaillierCiphertext) -> Result<(), CryptoError> {
        if c.key != self.id {
            return Err(CryptoError::KeyMismatch {
                expected: self.id,
                found: c.key,
            });
        }
        Ok(())
    }

    /// `g^m · r^n mod n^2`.
    pub fn encrypt_with(&self, m: &BigUint, r: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        if *m >= self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        if r.is_zero() || !r.gcd(&self.n).is_one() {
            return Err(CryptoError::RandomnessNotCoprime);
        }
        // g^m = (1 + n)^m = 1 + m·n (mod n^2)
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok(PaillierCiphertext {
            value: gm * rn % &self.n_squared,
            key: self.id,
        })
    }

    /// Draws `r` uniformly from the units of `Z_n`.
    pub fn random_unit<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    pub fn encrypt<R: RngCore + ?Sized>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<PaillierCiphertext, CryptoError> {
        let r = self.random_unit(rng);
        self.encrypt_with(m, &r)
    }

    /// Ciphertext of the modular sum of the two plaintexts.
    pub fn add(
        &self,
        a: &PaillierCiphertext,
        b: &PaillierCiphertext,
    ) -> Result<PaillierCiphertext, CryptoError> {
        self.check(a)?;
        self.check(b)?;
        Ok(PaillierCiphertext {
            value: &a.value * &b.value % &self.n_squared,
            key: self.id,
        })
    }

    /// `c^k mod n^2`; decrypts to `k·m mod n`. `k = 0` yields the unit 1.
    pub fn scale(&self, c: &PaillierCiphertext, k: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        self.check(c)?;
        Ok(PaillierCiphertext {
            value: c.value.modpow(k, &self.n_squared),
            key: self.id,
        })
    }

    /// The trivial encryption of zero, the neutral element of `add`.
    pub fn one(&self) -> PaillierCiphertext {
        PaillierCiphertext {
            value: BigUint::one(),
            key: self.id,
        }
    }

    /// Multiplies by a fresh `r^n`, leaving the plaintext unchanged.
    pub fn rerandomize<R: RngCore + ?Sized>(
        &self,
        c: &PaillierCiphertext,
        rng: &mut R,
    ) -> Result<PaillierCiphertext, CryptoError> {
        self.check(c)?;
        let r = self.random_unit(rng);
        Ok(PaillierCiphertext {
            value: &c.value * r.modpow(&self.n, &self.n_squared) % &self.n_squared,
            key: self.id,
        })
    }
}

impl PaillierPrivateKey {
    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    /// Rebuilds a private key from stored `(n, λ, μ)`.
    pub fn from_parts(n: BigUint, lambda: BigUint, mu: BigUint) -> Result<Self, CryptoError> {
        let public = PaillierPublicKey::from_modulus(n);
        let key = Self { lambda, mu, public };
        // one cheap consistency probe: decrypt(encrypt(1, r=1)) must be 1
        let probe = key.public.encrypt_with(&BigUint::one(), &BigUint::one())?;
        if key.decrypt(&probe)? != BigUint::one() {
            return Err(CryptoError::KeyFile("λ/μ do not match the modulus".into()));
        }
        Ok(key)
    }

    /// `L(c^λ mod n^2) · μ mod n` with `L(u) = (u - 1) / n`.
    pub fn decrypt(&self, c: &PaillierCiphertext) -> Result<BigUint, CryptoError> {
        self.public.check(c)?;
        let pk = &self.public;
        if c.value >= pk.n_squared {
            return Err(CryptoError::CiphertextOutOfRange);
        }
        let u = c.value.modpow(&self.lambda, &pk.n_squared);
        let l = (u - 1u32) / &pk.n;
        Ok(l * &self.mu % &pk.n)
    }
}

impl PaillierKeypair {
    /// Generates a keypair whose modulus has exactly `bits` bits.
    pub fn generate<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<Self, CryptoError> {
        if bits < MIN_BITS {
            return Err(CryptoError::KeySizeTooSmall {
                requested: bits,
                minimum: MIN_BITS,
            });
        }
        let p_bits = bits.div_ceil(2);
        let q_bits = bits / 2;
        loop {
            let p = gen_prime(p_bits, rng);
            let q = gen_prime(q_bits, rng);
            if let Ok(kp) = Self::from_primes(&p, &q) {
                debug_assert_eq!(kp.public.bits(), bits);
                return Ok(kp);
            }
        }
    }

    /// Builds the keypair for the given primes. Requires `p != q` and
    /// `gcd(pq, (p-1)(q-1)) = 1`.
    pub fn from_primes(p: &BigUint, q: &BigUint) -> Result<Self, CryptoError> {
        if p == q || *p < BigUint::from(2u32) || *q < BigUint::from(2u32) {
            return Err(CryptoError::InvalidPrimes);
        }
        let n = p * q;
        let phi = (p - 1u32) * (q - 1u32);
        if !n.gcd(&phi).is_one() {
            return Err(CryptoError::InvalidPrimes);
        }
        let public = PaillierPublicKey::from_modulus(n);
        let lambda = carmichael(p, q);
        let u = public.g.modpow(&lambda, &public.n_squared);
        let l = (u - 1u32) / &public.n;
        let mu = l.modinv(&public.n).ok_or(CryptoError::InvalidPrimes)?;
        let private = PaillierPrivateKey {
            lambda,
            mu,
            public: public.clone(),
        };
        Ok(Self { public, private })
    }
}
