//! Encryption pipeline between plant entities and control units.
//!
//! * entity → controller: grid values are encoded, encrypted under Paillier
//!   as a `(v, -v)` pair and each half is wrapped in the uplink RSA key of the
//!   addressed control unit.
//! * controller: strips the uplink layer and computes on Paillier ciphertexts.
//! * controller → entity: results are wrapped in the entity's downlink RSA
//!   key; the entity strips it and decrypts the Paillier layer.
//!
//! Every container carries the identity of the keys it was produced under,
//! so decrypting with the wrong key is an error rather than silent garbage.

use num_bigint::BigUint;
use rand::RngCore;

use crate::crypto::{CryptoError, KeyId, PaillierCiphertext, PaillierPrivateKey, PaillierPublicKey, RsaKeypair, RsaPublicKey};
use crate::fixedpoint::{Fixed, FixedPointError, GridParams};
use crate::keyring::{Denial, PartyKeys};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("grid of 2^{n} codes does not fit under the Paillier modulus")]
    GridExceedsPaillier { n: u32 },
    #[error("value {0} has no representable negation and cannot be dual-encrypted")]
    UnsymmetricValue(String),
    #[error("Paillier ciphertext does not fit below the RSA modulus")]
    CiphertextExceedsRsa,
    #[error("expected a {expected:?} ciphertext, found {found:?}")]
    WrongLayer { expected: Layer, found: Layer },
    #[error("ciphertext addressed to party {found}, key belongs to party {expected}")]
    WrongParty { expected: u32, found: u32 },
    #[error("grid mismatch: ciphertext carries {found:?}, expected {expected:?}")]
    GridMismatch { expected: GridParams, found: GridParams },
    #[error("malformed wire frame: {0}")]
    Frame(String),
    #[error(transparent)]
    Denied(#[from] Denial),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Grid(#[from] FixedPointError),
}

/// Which outer layer a ciphertext travels under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Entity to control unit, unwrapped by the control unit.
    Uplink,
    /// Control unit to entity, unwrapped by the entity.
    Downlink,
}

impl Layer {
    pub fn tag(self) -> u8 {
        match self {
            Layer::Uplink => 0x01,
            Layer::Downlink => 0x02,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x01 => Some(Layer::Uplink),
            0x02 => Some(Layer::Downlink),
            _ => None,
        }
    }
}

/// Paillier encryptions of `v` and `-v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualCiphertext {
    pub plus: PaillierCiphertext,
    pub minus: PaillierCiphertext,
    pub grid: GridParams,
}

/// A Paillier ciphertext wrapped by one RSA layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OuterCiphertext {
    value: BigUint,
    layer: Layer,
    party: u32,
    outer_key: KeyId,
    inner_key: KeyId,
}

impl OuterCiphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn party(&self) -> u32 {
        self.party
    }

    pub fn outer_key(&self) -> KeyId {
        self.outer_key
    }

    pub fn to_frame(&self) -> WireFrame {
        WireFrame {
            layer: self.layer,
            party: self.party,
            value: self.value.clone(),
        }
    }

    /// Re-binds a received frame to the keys it is expected to be under.
    pub fn from_frame(frame: WireFrame, outer: &RsaPublicKey, inner: &PaillierPublicKey) -> Self {
        Self {
            value: frame.value,
            layer: frame.layer,
            party: frame.party,
            outer_key: outer.id(),
            inner_key: inner.id(),
        }
    }
}

/// Uplink message for one grid value: both halves of the dual pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OuterDual {
    pub plus: OuterCiphertext,
    pub minus: OuterCiphertext,
    pub grid: GridParams,
}

/// Serialized message: `[layer tag: u8][party: u32 BE][len: u32 BE][value: len bytes BE]`,
/// rendered as lowercase hex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireFrame {
    pub layer: Layer,
    pub party: u32,
    pub value: BigUint,
}

impl WireFrame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body = self.value.to_bytes_be();
        let mut out = Vec::with_capacity(9 + body.len());
        out.push(self.layer.tag());
        out.extend_from_slice(&self.party.to_be_bytes());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 9 {
            return Err(CodecError::Frame("frame shorter than its header".into()));
        }
        let layer = Layer::from_tag(bytes[0])
            .ok_or_else(|| CodecError::Frame(format!("unknown layer tag {:#04x}", bytes[0])))?;
        let party = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let len = u32::from_be_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 9 + len {
            return Err(CodecError::Frame(format!(
                "length prefix {len} does not match {} payload bytes",
                bytes.len() - 9
            )));
        }
        Ok(Self {
            layer,
            party,
            value: BigUint::from_bytes_be(&bytes[9..]),
        })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(text: &str) -> Result<Self, CodecError> {
        let bytes = hex::decode(text.trim()).map_err(|e| CodecError::Frame(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

fn check_grid(grid: GridParams, pk: &PaillierPublicKey) -> Result<(), CodecError> {
    if BigUint::from(grid.modulus()) >= *pk.modulus() {
        return Err(CodecError::GridExceedsPaillier { n: grid.word_bits() });
    }
    Ok(())
}

/// Encrypts the code of `v` and of `-v` under Paillier.
pub fn encrypt_dual_one<R: RngCore + ?Sized>(
    v: Fixed,
    pk: &PaillierPublicKey,
    rng: &mut R,
) -> Result<DualCiphertext, CodecError> {
    check_grid(v.grid(), pk)?;
    let neg = v
        .checked_neg()
        .map_err(|_| CodecError::UnsymmetricValue(v.to_string()))?;
    Ok(DualCiphertext {
        plus: pk.encrypt(&BigUint::from(v.to_code()), rng)?,
        minus: pk.encrypt(&BigUint::from(neg.to_code()), rng)?,
        grid: v.grid(),
    })
}

pub fn encrypt_dual<R: RngCore + ?Sized>(
    values: &[Fixed],
    pk: &PaillierPublicKey,
    rng: &mut R,
) -> Result<Vec<DualCiphertext>, CodecError> {
    values.iter().map(|&v| encrypt_dual_one(v, pk, rng)).collect()
}

fn wrap(
    layer: Layer,
    party: u32,
    c: &PaillierCiphertext,
    outer: &RsaPublicKey,
) -> Result<OuterCiphertext, CodecError> {
    let value = outer
        .encrypt(c.value())
        .map_err(|_| CodecError::CiphertextExceedsRsa)?;
    Ok(OuterCiphertext {
        value,
        layer,
        party,
        outer_key: outer.id(),
        inner_key: c.key_id(),
    })
}

fn unwrap_layer(
    expected_layer: Layer,
    party: u32,
    c: &OuterCiphertext,
    keypair: &RsaKeypair,
    inner: &PaillierPublicKey,
) -> Result<PaillierCiphertext, CodecError> {
    if c.layer != expected_layer {
        return Err(CodecError::WrongLayer {
            expected: expected_layer,
            found: c.layer,
        });
    }
    if c.party != party {
        return Err(CodecError::WrongParty {
            expected: party,
            found: c.party,
        });
    }
    let outer_id = keypair.public().id();
    if c.outer_key != outer_id {
        return Err(CryptoError::KeyMismatch {
            expected: outer_id,
            found: c.outer_key,
        }
        .into());
    }
    if c.inner_key != inner.id() {
        return Err(CryptoError::KeyMismatch {
            expected: inner.id(),
            found: c.inner_key,
        }
        .into());
    }
    let raw = keypair.decrypt(&c.value)?;
    Ok(PaillierCiphertext::from_raw(inner, raw)?)
}

/// Wraps already dual-encrypted values for control unit `party`.
pub fn wrap_uplink(
    party: u32,
    duals: &[DualCiphertext],
    uplink: &RsaPublicKey,
) -> Result<Vec<OuterDual>, CodecError> {
    duals
        .iter()
        .map(|d| {
            Ok(OuterDual {
                plus: wrap(Layer::Uplink, party, &d.plus, uplink)?,
                minus: wrap(Layer::Uplink, party, &d.minus, uplink)?,
                grid: d.grid,
            })
        })
        .collect()
}

/// Entity side: dual-encrypts `values` and wraps them for control unit `party`.
pub fn encrypt_uplink<R: RngCore + ?Sized>(
    party: u32,
    values: &[Fixed],
    pk: &PaillierPublicKey,
    uplink: &RsaPublicKey,
    rng: &mut R,
) -> Result<Vec<OuterDual>, CodecError> {
    wrap_uplink(party, &encrypt_dual(values, pk, rng)?, uplink)
}

/// Control-unit side: removes the uplink layer, leaving Paillier ciphertexts.
pub fn strip_uplink(
    party: u32,
    c: &[OuterDual],
    uplink: &RsaKeypair,
    pk: &PaillierPublicKey,
) -> Result<Vec<DualCiphertext>, CodecError> {
    c.iter()
        .map(|d| {
            Ok(DualCiphertext {
                plus: unwrap_layer(Layer::Uplink, party, &d.plus, uplink, pk)?,
                minus: unwrap_layer(Layer::Uplink, party, &d.minus, uplink, pk)?,
                grid: d.grid,
            })
        })
        .collect()
}

/// Control-unit side: wraps results for entity `party`.
pub fn encrypt_downlink(
    party: u32,
    v: &[PaillierCiphertext],
    downlink: &RsaPublicKey,
) -> Result<Vec<OuterCiphertext>, CodecError> {
    v.iter()
        .map(|c| wrap(Layer::Downlink, party, c, downlink))
        .collect()
}

pub fn strip_downlink(
    party: u32,
    c: &[OuterCiphertext],
    downlink: &RsaKeypair,
    pk: &PaillierPublicKey,
) -> Result<Vec<PaillierCiphertext>, CodecError> {
    c.iter()
        .map(|c| unwrap_layer(Layer::Downlink, party, c, downlink, pk))
        .collect()
}

/// Paillier decryption, reduction mod `2^n` and decoding onto the grid.
pub fn decrypt_inner(
    c: &[PaillierCiphertext],
    sk: &PaillierPrivateKey,
    grid: GridParams,
) -> Result<Vec<Fixed>, CodecError> {
    let modulus = BigUint::from(grid.modulus());
    c.iter()
        .map(|c| {
            let m = sk.decrypt(c)? % &modulus;
            let code = u64::try_from(m).expect("reduced below 2^n");
            Ok(Fixed::from_code(code, grid)?)
        })
        .collect()
}

/// Entity side: full two-layer decryption using only the keys `holder` has.
pub fn decrypt_downlink(
    holder: &PartyKeys,
    party: u32,
    c: &[OuterCiphertext],
    grid: GridParams,
) -> Result<Vec<Fixed>, CodecError> {
    let (downlink, sk) = holder.downlink_and_paillier(party)?;
    let inner = strip_downlink(party, c, downlink, sk.public())?;
    decrypt_inner(&inner, sk, grid)
}

/// Checks that every dual ciphertext uses `grid`.
pub fn expect_grid(c: &[DualCiphertext], grid: GridParams) -> Result<(), CodecError> {
    match c.iter().find(|d| d.grid != grid) {
        Some(d) => Err(CodecError::GridMismatch {
            expected: grid,
            found: d.grid,
        }),
        None => Ok(()),
    }
}
