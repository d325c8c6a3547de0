//! Text serialization of key material: big integers as lowercase hex.

use num_bigint::BigUint;
use num_traits::Num;
use serde::{Deserialize, Serialize};

use super::{CryptoError, PaillierPrivateKey, PaillierPublicKey, RsaKeypair, RsaPublicKey};

pub const KEY_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyFileKind {
    PaillierPublic,
    PaillierPrivate,
    RsaPublic,
    RsaPrivate,
}

/// One key as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub version: u32,
    pub kind: KeyFileKind,
    pub bits: u64,
    pub modulus: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private_exponent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
}

fn to_hex(v: &BigUint) -> String {
    v.to_str_radix(16)
}

fn from_hex(field: &str, v: Option<&String>) -> Result<BigUint, CryptoError> {
    let s = v.ok_or_else(|| CryptoError::KeyFile(format!("missing field `{field}`")))?;
    BigUint::from_str_radix(s, 16).map_err(|e| CryptoError::KeyFile(format!("field `{field}`: {e}")))
}

impl KeyFile {
    fn base(kind: KeyFileKind, n: &BigUint) -> Self {
        Self {
            version: KEY_FILE_VERSION,
            kind,
            bits: n.bits(),
            modulus: to_hex(n),
            exponent: None,
            private_exponent: None,
            lambda: None,
            mu: None,
        }
    }

    pub fn paillier_public(pk: &PaillierPublicKey) -> Self {
        Self::base(KeyFileKind::PaillierPublic, pk.modulus())
    }

    pub fn paillier_private(sk: &PaillierPrivateKey) -> Self {
        Self {
            lambda: Some(to_hex(sk.lambda())),
            mu: Some(to_hex(sk.mu())),
            ..Self::base(KeyFileKind::PaillierPrivate, sk.public().modulus())
        }
    }

    pub fn rsa_public(pk: &RsaPublicKey) -> Self {
        Self {
            exponent: Some(to_hex(pk.exponent())),
            ..Self::base(KeyFileKind::RsaPublic, pk.modulus())
        }
    }

    pub fn rsa_private(kp: &RsaKeypair) -> Self {
        Self {
            private_exponent: Some(to_hex(kp.private_exponent())),
            ..Self::rsa_public(kp.public())
        }
        .with_kind(KeyFileKind::RsaPrivate)
    }

    fn with_kind(mut self, kind: KeyFileKind) -> Self {
        self.kind = kind;
        self
    }

    fn modulus(&self) -> Result<BigUint, CryptoError> {
        if self.version != KEY_FILE_VERSION {
            return Err(CryptoError::KeyFile(format!("unsupported version {}", self.version)));
        }
        let n = from_hex("modulus", Some(&self.modulus))?;
        if n.bits() != self.bits {
            return Err(CryptoError::KeyFile(format!(
                "bit length {} does not match modulus ({} bits)",
                self.bits,
                n.bits()
            )));
        }
        Ok(n)
    }

    fn expect(&self, kind: KeyFileKind) -> Result<(), CryptoError> {
        if self.kind != kind {
            return Err(CryptoError::KeyFile(format!("expected {kind:?}, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn to_paillier_public(&self) -> Result<PaillierPublicKey, CryptoError> {
        match self.kind {
            KeyFileKind::PaillierPublic | KeyFileKind::PaillierPrivate => {
                Ok(PaillierPublicKey::from_modulus(self.modulus()?))
            }
            _ => Err(CryptoError::KeyFile(format!("expected a Paillier key, found {:?}", self.kind))),
        }
    }

    pub fn to_paillier_private(&self) -> Result<PaillierPrivateKey, CryptoError> {
        self.expect(KeyFileKind::PaillierPrivate)?;
        PaillierPrivateKey::from_parts(
            self.modulus()?,
            from_hex("lambda", self.lambda.as_ref())?,
            from_hex("mu", self.mu.as_ref())?,
        )
    }

    pub fn to_rsa_public(&self) -> Result<RsaPublicKey, CryptoError> {
        match self.kind {
            KeyFileKind::RsaPublic | KeyFileKind::RsaPrivate => Ok(RsaPublicKey::new(
                self.modulus()?,
                from_hex("exponent", self.exponent.as_ref())?,
            )),
            _ => Err(CryptoError::KeyFile(format!("expected an RSA key, found {:?}", self.kind))),
        }
    }

    pub fn to_rsa_private(&self) -> Result<RsaKeypair, CryptoError> {
        self.expect(KeyFileKind::RsaPrivate)?;
        RsaKeypair::from_parts(
            self.modulus()?,
            from_hex("exponent", self.exponent.as_ref())?,
            from_hex("private_exponent", self.private_exponent.as_ref())?,
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("key files always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, CryptoError> {
        toml::from_str(text).map_err(|e| CryptoError::KeyFile(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::PaillierKeypair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn paillier_private_roundtrip() {
        let kp = PaillierKeypair::generate(64, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let text = KeyFile::paillier_private(&kp.private).to_toml();
        assert!(text.contains("kind = \"paillier-private\""));
        assert!(text.contains("version = 1"));
        let back = KeyFile::from_toml(&text).unwrap();
        assert_eq!(back.to_paillier_private().unwrap(), kp.private);
        assert_eq!(back.to_paillier_public().unwrap(), kp.public);
    }

    #[test]
    fn rsa_roundtrip_and_kind_checks() {
        let kp = RsaKeypair::generate(128, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let private = KeyFile::from_toml(&KeyFile::rsa_private(&kp).to_toml()).unwrap();
        assert_eq!(private.to_rsa_private().unwrap(), kp);
        let public = KeyFile::from_toml(&KeyFile::rsa_public(kp.public()).to_toml()).unwrap();
        assert_eq!(&public.to_rsa_public().unwrap(), kp.public());
        assert!(public.to_rsa_private().is_err());
        assert!(public.to_paillier_public().is_err());
    }

    #[test]
    fn tampered_files_are_rejected() {
        let kp = RsaKeypair::generate(64, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let mut file = KeyFile::rsa_private(&kp);
        file.bits += 1;
        assert!(file.to_rsa_private().is_err());
        let mut file = KeyFile::rsa_private(&kp);
        file.version = 7;
        assert!(file.to_rsa_public().is_err());
        let mut file = KeyFile::rsa_private(&kp);
        file.private_exponent = Some("3".into());
        assert!(file.to_rsa_private().is_err());
    }
}
