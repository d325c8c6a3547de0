//! Parties, key distribution and the static access audit.
//!
//! Confidentiality is modelled as key possession: a party can recover a
//! signal from a ciphertext exactly when it holds every private key on the
//! ciphertext's layer stack. The distribution implemented by [`provision`]:
//!
//! | key                    | private part held by        |
//! |------------------------|-----------------------------|
//! | Paillier (shared)      | every entity                |
//! | uplink RSA `i`         | control unit `i` only       |
//! | downlink RSA `i`       | entity `i` only             |
//!
//! Public halves are known to everyone. A trusted dealer (this module)
//! generates all keys and hands each party its share.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, DualCiphertext, OuterCiphertext, OuterDual};
use crate::crypto::{
    CryptoError, KeyFile, PaillierKeypair, PaillierPrivateKey, PaillierPublicKey, RsaKeypair, RsaPublicKey,
};
use crate::fixedpoint::{Fixed, GridParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartyKind {
    Entity,
    ControlUnit,
}

/// A plant entity or a control unit, indexed from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Party {
    pub kind: PartyKind,
    pub index: u32,
}

impl Party {
    pub fn entity(index: u32) -> Self {
        Self {
            kind: PartyKind::Entity,
            index,
        }
    }

    pub fn control_unit(index: u32) -> Self {
        Self {
            kind: PartyKind::ControlUnit,
            index,
        }
    }

    /// File stem used by the per-party key files.
    pub fn file_stem(&self) -> String {
        match self.kind {
            PartyKind::Entity => format!("entity_{}", self.index),
            PartyKind::ControlUnit => format!("control_{}", self.index),
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PartyKind::Entity => write!(f, "entity-{}", self.index),
            PartyKind::ControlUnit => write!(f, "control-{}", self.index),
        }
    }
}

impl FromStr for Party {
    type Err = KeyringError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || KeyringError::Format(format!("unknown party `{s}`"));
        let (kind, idx) = s.split_once('-').ok_or_else(bad)?;
        let index: u32 = idx.parse().map_err(|_| bad())?;
        if index == 0 {
            return Err(bad());
        }
        match kind {
            "entity" => Ok(Party::entity(index)),
            "control" => Ok(Party::control_unit(index)),
            _ => Err(bad()),
        }
    }
}

/// A private key in the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SecretKey {
    Paillier,
    Uplink(u32),
    Downlink(u32),
}

impl fmt::Display for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecretKey::Paillier => f.write_str("Paillier private key"),
            SecretKey::Uplink(i) => write!(f, "uplink RSA private key {i}"),
            SecretKey::Downlink(i) => write!(f, "downlink RSA private key {i}"),
        }
    }
}

/// Refusal to decrypt, naming the keys the party lacks.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{party} cannot decrypt: missing {}", fmt_keys(.missing))]
pub struct Denial {
    pub party: Party,
    pub missing: Vec<SecretKey>,
}

fn fmt_keys(keys: &[SecretKey]) -> String {
    keys.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl Denial {
    pub fn missing(party: Party, missing: Vec<SecretKey>) -> Self {
        Self { party, missing }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KeyringError {
    #[error("at least one entity is required")]
    NoParties,
    #[error(
        "Paillier modulus ({bits} bits) must exceed {bound} (2^n times the largest absolute gain row sum); \
         use at least {required_bits} bits"
    )]
    PaillierBelowBound {
        bits: u64,
        bound: BigUint,
        required_bits: u64,
    },
    #[error("RSA modulus {index} ({bits} bits) is smaller than the squared Paillier modulus; use at least {required_bits} bits")]
    RsaBelowPaillierSquare {
        index: u32,
        bits: u64,
        required_bits: u64,
    },
    #[error("expected {expected} RSA keypairs per layer, got {found}")]
    KeyCount { expected: usize, found: usize },
    #[error("key material is inconsistent: {0}")]
    Inconsistent(String),
    #[error("malformed key file: {0}")]
    Format(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything one party knows.
#[derive(Clone, Debug)]
pub struct PartyKeys {
    party: Party,
    paillier_public: PaillierPublicKey,
    uplink_public: Vec<RsaPublicKey>,
    downlink_public: Vec<RsaPublicKey>,
    paillier_private: Option<PaillierPrivateKey>,
    uplink_private: BTreeMap<u32, RsaKeypair>,
    downlink_private: BTreeMap<u32, RsaKeypair>,
}

impl PartyKeys {
    pub fn party(&self) -> Party {
        self.party
    }

    pub fn paillier_public(&self) -> &PaillierPublicKey {
        &self.paillier_public
    }

    pub fn uplink_public(&self, i: u32) -> Option<&RsaPublicKey> {
        self.uplink_public.get(i.checked_sub(1)? as usize)
    }

    pub fn downlink_public(&self, i: u32) -> Option<&RsaPublicKey> {
        self.downlink_public.get(i.checked_sub(1)? as usize)
    }

    pub fn paillier_private(&self) -> Option<&PaillierPrivateKey> {
        self.paillier_private.as_ref()
    }

    pub fn uplink_private(&self, i: u32) -> Option<&RsaKeypair> {
        self.uplink_private.get(&i)
    }

    pub fn downlink_private(&self, i: u32) -> Option<&RsaKeypair> {
        self.downlink_private.get(&i)
    }

    pub fn holds(&self, key: SecretKey) -> bool {
        match key {
            SecretKey::Paillier => self.paillier_private.is_some(),
            SecretKey::Uplink(i) => self.uplink_private.contains_key(&i),
            SecretKey::Downlink(i) => self.downlink_private.contains_key(&i),
        }
    }

    pub fn held_secrets(&self) -> Vec<SecretKey> {
        let mut out = Vec::new();
        if self.paillier_private.is_some() {
            out.push(SecretKey::Paillier);
        }
        out.extend(self.uplink_private.keys().map(|&i| SecretKey::Uplink(i)));
        out.extend(self.downlink_private.keys().map(|&i| SecretKey::Downlink(i)));
        out
    }

    /// Succeeds iff every key in `keys` is held.
    pub fn require(&self, keys: &[SecretKey]) -> Result<(), Denial> {
        let missing: Vec<SecretKey> = keys.iter().copied().filter(|&k| !self.holds(k)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Denial::missing(self.party, missing))
        }
    }

    fn require_paillier(&self) -> Result<&PaillierPrivateKey, Denial> {
        self.paillier_private
            .as_ref()
            .ok_or_else(|| Denial::missing(self.party, vec![SecretKey::Paillier]))
    }
}

/// A signal as it appears in one of the four ciphertext forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SignalKind {
    /// Measurement on the wire, under uplink RSA and Paillier.
    UplinkWire,
    /// Control command on the wire, under downlink RSA and Paillier.
    DownlinkWire,
    /// Measurement inside the controller after the uplink layer is removed.
    UplinkInner,
    /// Control command computed by the controller, before downlink wrapping.
    ControlInner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signal {
    pub kind: SignalKind,
    /// Entity the signal belongs to.
    pub owner: u32,
}

impl Signal {
    pub fn required_keys(&self) -> Vec<SecretKey> {
        match self.kind {
            SignalKind::UplinkWire => vec![SecretKey::Uplink(self.owner), SecretKey::Paillier],
            SignalKind::DownlinkWire => vec![SecretKey::Downlink(self.owner), SecretKey::Paillier],
            SignalKind::UplinkInner | SignalKind::ControlInner => vec![SecretKey::Paillier],
        }
    }

    /// The confidentiality clause, if any, that forbids `party` from
    /// recovering this signal.
    pub fn protecting_clause(&self, party: Party) -> Option<Clause> {
        match self.kind {
            SignalKind::UplinkWire | SignalKind::DownlinkWire => {
                (party != Party::entity(self.owner)).then_some(Clause::Transit)
            }
            SignalKind::UplinkInner | SignalKind::ControlInner => {
                (party.kind == PartyKind::ControlUnit).then_some(Clause::Controller)
            }
        }
    }

    pub fn all(n: u32) -> Vec<Signal> {
        let kinds = [
            SignalKind::UplinkWire,
            SignalKind::DownlinkWire,
            SignalKind::UplinkInner,
            SignalKind::ControlInner,
        ];
        (1..=n)
            .flat_map(|owner| kinds.into_iter().map(move |kind| Signal { kind, owner }))
            .collect()
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.owner;
        match self.kind {
            SignalKind::UplinkWire => write!(f, "y_{i} on the wire"),
            SignalKind::DownlinkWire => write!(f, "u_{i} on the wire"),
            SignalKind::UplinkInner => write!(f, "y_{i} inside the controller"),
            SignalKind::ControlInner => write!(f, "u_{i} inside the controller"),
        }
    }
}

/// The two confidentiality requirements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Clause {
    /// Wire ciphertexts of entity `i` are opaque to everyone but entity `i`.
    Transit,
    /// Controller-side ciphertexts are opaque to every control unit.
    Controller,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Transit => f.write_str("property (i): transit confidentiality"),
            Clause::Controller => f.write_str("property (ii): controller-side confidentiality"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessEntry {
    pub party: Party,
    pub signal: Signal,
    pub required: Vec<SecretKey>,
    pub missing: Vec<SecretKey>,
    pub clause: Option<Clause>,
}

impl AccessEntry {
    pub fn can_recover(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_violation(&self) -> bool {
        self.clause.is_some() && self.can_recover()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Violation {
    pub party: Party,
    pub signal: Signal,
    pub clause: Clause,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} can recover {} (violates {})", self.party, self.signal, self.clause)
    }
}

/// The full (party, signal) access matrix.
#[derive(Clone, Debug)]
pub struct AccessReport {
    pub entries: Vec<AccessEntry>,
}

impl AccessReport {
    pub fn violations(&self) -> Vec<Violation> {
        self.entries
            .iter()
            .filter(|e| e.is_violation())
            .map(|e| Violation {
                party: e.party,
                signal: e.signal,
                clause: e.clause.expect("violations carry a clause"),
            })
            .collect()
    }

    pub fn is_secure(&self) -> bool {
        self.entries.iter().all(|e| !e.is_violation())
    }

    pub fn entry(&self, party: Party, signal: Signal) -> Option<&AccessEntry> {
        self.entries.iter().find(|e| e.party == party && e.signal == signal)
    }
}

/// Key sizes used by the dealer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecurityParams {
    pub paillier_bits: u64,
    pub rsa_bits: u64,
    pub grid: GridParams,
}

#[derive(Clone, Debug)]
pub struct Keyring {
    n: u32,
    paillier_public: PaillierPublicKey,
    uplink_public: Vec<RsaPublicKey>,
    downlink_public: Vec<RsaPublicKey>,
    holders: Vec<PartyKeys>,
}

/// Smallest bit length `b` with `2^(b-1) > bound`, i.e. every `b`-bit modulus exceeds it.
fn bits_exceeding(bound: &BigUint) -> u64 {
    bound.bits() + 1
}

/// Generates all keys for `n` entities and `n` control units and distributes them.
///
/// `required_bound` is the lower bound the Paillier modulus must exceed
/// (see `synthesis::required_paillier_bound`).
pub fn provision<R: RngCore + ?Sized>(
    n: u32,
    params: SecurityParams,
    required_bound: &BigUint,
    rng: &mut R,
) -> Result<Keyring, KeyringError> {
    if n == 0 {
        return Err(KeyringError::NoParties);
    }
    let paillier = PaillierKeypair::generate(params.paillier_bits, rng)?;
    check_paillier(&paillier.public, params.grid, required_bound)?;
    let uplink = (0..n)
        .map(|_| RsaKeypair::generate(params.rsa_bits, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let downlink = (0..n)
        .map(|_| RsaKeypair::generate(params.rsa_bits, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Keyring::assemble(params.grid, paillier, uplink, downlink, required_bound)
}

fn check_paillier(pk: &PaillierPublicKey, grid: GridParams, bound: &BigUint) -> Result<(), KeyringError> {
    let effective = bound.max(&BigUint::from(grid.modulus())).clone();
    if *pk.modulus() <= effective {
        return Err(KeyringError::PaillierBelowBound {
            bits: pk.bits(),
            bound: effective.clone(),
            required_bits: bits_exceeding(&effective),
        });
    }
    Ok(())
}

impl Keyring {
    /// Distributes the given keys, enforcing the modulus size rules.
    pub fn assemble(
        grid: GridParams,
        paillier: PaillierKeypair,
        uplink: Vec<RsaKeypair>,
        downlink: Vec<RsaKeypair>,
        required_bound: &BigUint,
    ) -> Result<Self, KeyringError> {
        check_paillier(&paillier.public, grid, required_bound)?;
        let keyring = Self::assemble_unchecked(paillier, uplink, downlink)?;
        keyring.check_sizes(grid, required_bound)?;
        Ok(keyring)
    }

    /// Checks the modulus size rules: the Paillier modulus exceeds both
    /// `2^n` and `required_bound`, and every RSA modulus is at least the
    /// square of the Paillier modulus.
    pub fn check_sizes(&self, grid: GridParams, required_bound: &BigUint) -> Result<(), KeyringError> {
        check_paillier(&self.paillier_public, grid, required_bound)?;
        let n_sq = self.paillier_public.modulus_squared();
        for (idx, pk) in self.uplink_public.iter().chain(&self.downlink_public).enumerate() {
            if pk.modulus() < n_sq {
                return Err(KeyringError::RsaBelowPaillierSquare {
                    index: (idx % self.uplink_public.len().max(1)) as u32 + 1,
                    bits: pk.bits(),
                    required_bits: n_sq.bits() + 1,
                });
            }
        }
        Ok(())
    }

    /// Distributes keys without the modulus size rules. Only useful to
    /// demonstrate what goes wrong when they are violated.
    pub fn assemble_unchecked(
        paillier: PaillierKeypair,
        uplink: Vec<RsaKeypair>,
        downlink: Vec<RsaKeypair>,
    ) -> Result<Self, KeyringError> {
        let n = uplink.len();
        if n == 0 {
            return Err(KeyringError::NoParties);
        }
        if downlink.len() != n {
            return Err(KeyringError::KeyCount {
                expected: n,
                found: downlink.len(),
            });
        }
        let uplink_public: Vec<RsaPublicKey> = uplink.iter().map(|k| k.public().clone()).collect();
        let downlink_public: Vec<RsaPublicKey> = downlink.iter().map(|k| k.public().clone()).collect();
        let blank = |party| PartyKeys {
            party,
            paillier_public: paillier.public.clone(),
            uplink_public: uplink_public.clone(),
            downlink_public: downlink_public.clone(),
            paillier_private: None,
            uplink_private: BTreeMap::new(),
            downlink_private: BTreeMap::new(),
        };
        let mut holders = Vec::with_capacity(2 * n);
        for (i, kp) in downlink.into_iter().enumerate() {
            let mut keys = blank(Party::entity(i as u32 + 1));
            keys.paillier_private = Some(paillier.private.clone());
            keys.downlink_private.insert(i as u32 + 1, kp);
            holders.push(keys);
        }
        for (i, kp) in uplink.into_iter().enumerate() {
            let mut keys = blank(Party::control_unit(i as u32 + 1));
            keys.uplink_private.insert(i as u32 + 1, kp);
            holders.push(keys);
        }
        Ok(Self {
            n: n as u32,
            paillier_public: paillier.public,
            uplink_public,
            downlink_public,
            holders,
        })
    }

    pub fn parties(&self) -> u32 {
        self.n
    }

    pub fn paillier_public(&self) -> &PaillierPublicKey {
        &self.paillier_public
    }

    pub fn uplink_public(&self, i: u32) -> &RsaPublicKey {
        &self.uplink_public[i as usize - 1]
    }

    pub fn downlink_public(&self, i: u32) -> &RsaPublicKey {
        &self.downlink_public[i as usize - 1]
    }

    pub fn holders(&self) -> &[PartyKeys] {
        &self.holders
    }

    pub fn holder(&self, party: Party) -> Option<&PartyKeys> {
        self.holders.iter().find(|h| h.party == party)
    }

    pub fn entity(&self, i: u32) -> &PartyKeys {
        self.holder(Party::entity(i)).expect("entity exists")
    }

    pub fn control_unit(&self, i: u32) -> &PartyKeys {
        self.holder(Party::control_unit(i)).expect("control unit exists")
    }

    pub fn paillier_private(&self) -> Option<&PaillierPrivateKey> {
        self.holders.iter().find_map(|h| h.paillier_private.as_ref())
    }

    pub fn uplink_private(&self, i: u32) -> Option<&RsaKeypair> {
        self.holders.iter().find_map(|h| h.uplink_private.get(&i))
    }

    pub fn downlink_private(&self, i: u32) -> Option<&RsaKeypair> {
        self.holders.iter().find_map(|h| h.downlink_private.get(&i))
    }

    /// Copies `key` to `party`. Used to construct compromised
    /// configurations for auditing.
    pub fn grant(&mut self, party: Party, key: SecretKey) -> Result<(), KeyringError> {
        let missing = || KeyringError::Inconsistent(format!("nobody holds {key}"));
        let idx = self
            .holders
            .iter()
            .position(|h| h.party == party)
            .ok_or_else(|| KeyringError::Inconsistent(format!("unknown party {party}")))?;
        match key {
            SecretKey::Paillier => {
                let sk = self.paillier_private().cloned().ok_or_else(missing)?;
                self.holders[idx].paillier_private = Some(sk);
            }
            SecretKey::Uplink(i) => {
                let kp = self.uplink_private(i).cloned().ok_or_else(missing)?;
                self.holders[idx].uplink_private.insert(i, kp);
            }
            SecretKey::Downlink(i) => {
                let kp = self.downlink_private(i).cloned().ok_or_else(missing)?;
                self.holders[idx].downlink_private.insert(i, kp);
            }
        }
        Ok(())
    }

    /// Builds the access matrix over all parties and all signal forms.
    pub fn audit(&self) -> AccessReport {
        let signals = Signal::all(self.n);
        let entries = self
            .holders
            .iter()
            .flat_map(|h| {
                signals.iter().map(move |&signal| {
                    let required = signal.required_keys();
                    let missing = required.iter().copied().filter(|&k| !h.holds(k)).collect();
                    AccessEntry {
                        party: h.party,
                        signal,
                        required,
                        missing,
                        clause: signal.protecting_clause(h.party),
                    }
                })
            })
            .collect();
        AccessReport { entries }
    }

    /// Writes one file per party containing only that party's keys.
    pub fn export_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, KeyringError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for h in &self.holders {
            let path = dir.join(format!("{}.toml", h.party.file_stem()));
            std::fs::write(&path, PartyFile::from_keys(h).to_toml())?;
            written.push(path);
        }
        Ok(written)
    }

    /// Writes one file per key pair (`paillier.toml`, `uplink_<i>.toml`,
    /// `downlink_<i>.toml`), each holding the private key.
    pub fn export_keypairs(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, KeyringError> {
        std::fs::create_dir_all(dir)?;
        let missing = |what: String| KeyringError::Inconsistent(format!("nobody holds {what}"));
        let mut files = vec![(
            "paillier".to_string(),
            KeyFile::paillier_private(self.paillier_private().ok_or_else(|| missing("the Paillier key".into()))?),
        )];
        for i in 1..=self.n {
            let up = self.uplink_private(i).ok_or_else(|| missing(format!("uplink key {i}")))?;
            files.push((format!("uplink_{i}"), KeyFile::rsa_private(up)));
        }
        for i in 1..=self.n {
            let down = self.downlink_private(i).ok_or_else(|| missing(format!("downlink key {i}")))?;
            files.push((format!("downlink_{i}"), KeyFile::rsa_private(down)));
        }
        let mut written = Vec::new();
        for (stem, file) in files {
            let path = dir.join(format!("{stem}.toml"));
            std::fs::write(&path, file.to_toml())?;
            written.push(path);
        }
        Ok(written)
    }

    /// Reads every `entity_*.toml` / `control_*.toml` file in `dir`.
    pub fn import_dir(dir: &Path) -> Result<Self, KeyringError> {
        let mut holders = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !(name.starts_with("entity_") || name.starts_with("control_")) || !name.ends_with(".toml") {
                continue;
            }
            let text = std::fs::read_to_string(entry.path())?;
            holders.push(PartyFile::from_toml(&text)?.into_keys()?);
        }
        Self::from_holders(holders)
    }

    pub fn from_holders(mut holders: Vec<PartyKeys>) -> Result<Self, KeyringError> {
        let first = holders.first().ok_or(KeyringError::NoParties)?.clone();
        let n = first.uplink_public.len() as u32;
        for h in &holders {
            if h.paillier_public != first.paillier_public
                || h.uplink_public != first.uplink_public
                || h.downlink_public != first.downlink_public
            {
                return Err(KeyringError::Inconsistent(format!(
                    "{} disagrees with {} on public keys",
                    h.party, first.party
                )));
            }
        }
        holders.sort_by_key(|h| h.party);
        let expected: Vec<Party> = (1..=n)
            .map(Party::entity)
            .chain((1..=n).map(Party::control_unit))
            .collect();
        let found: Vec<Party> = holders.iter().map(|h| h.party).collect();
        if found != expected {
            return Err(KeyringError::Inconsistent(format!(
                "expected parties {expected:?}, found {found:?}"
            )));
        }
        Ok(Self {
            n,
            paillier_public: first.paillier_public,
            uplink_public: first.uplink_public,
            downlink_public: first.downlink_public,
            holders,
        })
    }
}

/// Ciphertext in one of the four forms a party may observe.
#[derive(Clone, Debug)]
pub enum Message {
    UplinkWire { owner: u32, data: Vec<OuterDual> },
    DownlinkWire { owner: u32, data: Vec<OuterCiphertext> },
    UplinkInner { owner: u32, data: Vec<DualCiphertext> },
    ControlInner { owner: u32, data: Vec<crate::crypto::PaillierCiphertext> },
}

impl Message {
    pub fn signal(&self) -> Signal {
        let (kind, owner) = match self {
            Message::UplinkWire { owner, .. } => (SignalKind::UplinkWire, *owner),
            Message::DownlinkWire { owner, .. } => (SignalKind::DownlinkWire, *owner),
            Message::UplinkInner { owner, .. } => (SignalKind::UplinkInner, *owner),
            Message::ControlInner { owner, .. } => (SignalKind::ControlInner, *owner),
        };
        Signal { kind, owner }
    }
}

/// Attempts to recover the plaintext grid values of `msg` using only the
/// keys `holder` has. For dual-encrypted forms the `+v` half is returned.
pub fn try_decrypt(holder: &PartyKeys, msg: &Message, grid: GridParams) -> Result<Vec<Fixed>, CodecError> {
    holder.require(&msg.signal().required_keys())?;
    let sk = holder.require_paillier()?;
    let pk = sk.public();
    match msg {
        Message::UplinkWire { owner, data } => {
            let kp = holder.uplink_private(*owner).expect("checked by require");
            let inner = codec::strip_uplink(*owner, data, kp, pk)?;
            let plus: Vec<_> = inner.into_iter().map(|d| d.plus).collect();
            codec::decrypt_inner(&plus, sk, grid)
        }
        Message::DownlinkWire { owner, data } => codec::decrypt_downlink(holder, *owner, data, grid),
        Message::UplinkInner { data, .. } => {
            let plus: Vec<_> = data.iter().map(|d| d.plus.clone()).collect();
            codec::decrypt_inner(&plus, sk, grid)
        }
        Message::ControlInner { data, .. } => codec::decrypt_inner(data, sk, grid),
    }
}

impl PartyKeys {
    /// Downlink keypair `i` and the Paillier private key, or a denial
    /// naming whichever is missing.
    pub fn downlink_and_paillier(&self, i: u32) -> Result<(&RsaKeypair, &PaillierPrivateKey), Denial> {
        self.require(&[SecretKey::Downlink(i), SecretKey::Paillier])?;
        Ok((
            self.downlink_private.get(&i).expect("checked"),
            self.paillier_private.as_ref().expect("checked"),
        ))
    }
}

const PARTY_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexedKey {
    index: u32,
    #[serde(flatten)]
    key: KeyFile,
}

/// On-disk form of [`PartyKeys`].
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PartyFile {
    version: u32,
    party: String,
    paillier_public: KeyFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    paillier_private: Option<KeyFile>,
    uplink_public: Vec<IndexedKey>,
    downlink_public: Vec<IndexedKey>,
    #[serde(default)]
    uplink_private: Vec<IndexedKey>,
    #[serde(default)]
    downlink_private: Vec<IndexedKey>,
}

impl PartyFile {
    fn from_keys(h: &PartyKeys) -> Self {
        let public = |keys: &[RsaPublicKey]| {
            keys.iter()
                .enumerate()
                .map(|(i, k)| IndexedKey {
                    index: i as u32 + 1,
                    key: KeyFile::rsa_public(k),
                })
                .collect()
        };
        let private = |keys: &BTreeMap<u32, RsaKeypair>| {
            keys.iter()
                .map(|(&index, k)| IndexedKey {
                    index,
                    key: KeyFile::rsa_private(k),
                })
                .collect()
        };
        Self {
            version: PARTY_FILE_VERSION,
            party: h.party.to_string(),
            paillier_public: KeyFile::paillier_public(&h.paillier_public),
            paillier_private: h.paillier_private.as_ref().map(KeyFile::paillier_private),
            uplink_public: public(&h.uplink_public),
            downlink_public: public(&h.downlink_public),
            uplink_private: private(&h.uplink_private),
            downlink_private: private(&h.downlink_private),
        }
    }

    fn to_toml(&self) -> String {
        toml::to_string(self).expect("party files always serialize")
    }

    fn from_toml(text: &str) -> Result<Self, KeyringError> {
        toml::from_str(text).map_err(|e| KeyringError::Format(e.to_string()))
    }

    fn into_keys(self) -> Result<PartyKeys, KeyringError> {
        if self.version != PARTY_FILE_VERSION {
            return Err(KeyringError::Format(format!("unsupported version {}", self.version)));
        }
        let ordered_public = |keys: Vec<IndexedKey>| -> Result<Vec<RsaPublicKey>, KeyringError> {
            keys.into_iter()
                .enumerate()
                .map(|(pos, k)| {
                    if k.index as usize != pos + 1 {
                        return Err(KeyringError::Format("public keys must be listed in index order".into()));
                    }
                    Ok(k.key.to_rsa_public()?)
                })
                .collect()
        };
        let private = |keys: Vec<IndexedKey>| -> Result<BTreeMap<u32, RsaKeypair>, KeyringError> {
            keys.into_iter()
                .map(|k| Ok((k.index, k.key.to_rsa_private()?)))
                .collect()
        };
        let paillier_public = self.paillier_public.to_paillier_public()?;
        let paillier_private = self
            .paillier_private
            .map(|f| f.to_paillier_private())
            .transpose()?;
        if let Some(sk) = &paillier_private {
            if sk.public() != &paillier_public {
                return Err(KeyringError::Inconsistent("Paillier private key does not match public key".into()));
            }
        }
        let keys = PartyKeys {
            party: self.party.parse()?,
            paillier_public,
            uplink_public: ordered_public(self.uplink_public)?,
            downlink_public: ordered_public(self.downlink_public)?,
            paillier_private,
            uplink_private: private(self.uplink_private)?,
            downlink_private: private(self.downlink_private)?,
        };
        for (i, kp) in &keys.uplink_private {
            if keys.uplink_public(*i) != Some(kp.public()) {
                return Err(KeyringError::Inconsistent(format!("uplink private key {i} does not match")));
            }
        }
        for (i, kp) in &keys.downlink_private {
            if keys.downlink_public(*i) != Some(kp.public()) {
                return Err(KeyringError::Inconsistent(format!("downlink private key {i} does not match")));
            }
        }
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn params() -> SecurityParams {
        SecurityParams {
            paillier_bits: 64,
            rsa_bits: 160,
            grid: GridParams::new(24, 6).unwrap(),
        }
    }

    fn ring(seed: u64) -> Keyring {
        let bound = BigUint::from(115u32) << 24;
        provision(2, params(), &bound, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn distribution_matches_the_table() {
        let ring = ring(1);
        assert_eq!(ring.holders().len(), 4);
        assert_eq!(ring.entity(1).held_secrets(), vec![SecretKey::Paillier, SecretKey::Downlink(1)]);
        assert_eq!(ring.entity(2).held_secrets(), vec![SecretKey::Paillier, SecretKey::Downlink(2)]);
        assert_eq!(ring.control_unit(1).held_secrets(), vec![SecretKey::Uplink(1)]);
        assert_eq!(ring.control_unit(2).held_secrets(), vec![SecretKey::Uplink(2)]);
    }

    #[test]
    fn honest_distribution_is_secure() {
        let report = ring(2).audit();
        assert_eq!(report.entries.len(), 4 * 8);
        assert!(report.is_secure(), "{:?}", report.violations());
        let own = report
            .entry(Party::entity(1), Signal { kind: SignalKind::DownlinkWire, owner: 1 })
            .unwrap();
        assert!(own.can_recover());
        assert_eq!(own.clause, None);
        let other = report
            .entry(Party::entity(2), Signal { kind: SignalKind::UplinkWire, owner: 1 })
            .unwrap();
        assert_eq!(other.missing, vec![SecretKey::Uplink(1)]);
    }

    #[test]
    fn leaking_paillier_to_a_control_unit_is_flagged() {
        let mut ring = ring(3);
        ring.grant(Party::control_unit(1), SecretKey::Paillier).unwrap();
        let violations = ring.audit().violations();
        let cu1 = Party::control_unit(1);
        let expected = vec![
            Violation { party: cu1, signal: Signal { kind: SignalKind::UplinkWire, owner: 1 }, clause: Clause::Transit },
            Violation { party: cu1, signal: Signal { kind: SignalKind::UplinkInner, owner: 1 }, clause: Clause::Controller },
            Violation { party: cu1, signal: Signal { kind: SignalKind::ControlInner, owner: 1 }, clause: Clause::Controller },
            Violation { party: cu1, signal: Signal { kind: SignalKind::UplinkInner, owner: 2 }, clause: Clause::Controller },
            Violation { party: cu1, signal: Signal { kind: SignalKind::ControlInner, owner: 2 }, clause: Clause::Controller },
        ];
        let mut got = violations.clone();
        got.sort();
        let mut want = expected;
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn leaking_uplink_key_to_another_entity_is_flagged() {
        let mut ring = ring(4);
        ring.grant(Party::entity(2), SecretKey::Uplink(1)).unwrap();
        assert_eq!(
            ring.audit().violations(),
            vec![Violation {
                party: Party::entity(2),
                signal: Signal { kind: SignalKind::UplinkWire, owner: 1 },
                clause: Clause::Transit,
            }]
        );
    }

    #[test]
    fn try_decrypt_follows_key_possession() {
        let ring = ring(5);
        let grid = params().grid;
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let value = Fixed::from_raw(-321, grid).unwrap();
        let wire = codec::encrypt_uplink(1, &[value], ring.paillier_public(), ring.uplink_public(1), &mut rng).unwrap();
        let msg = Message::UplinkWire { owner: 1, data: wire.clone() };
        let denial = match try_decrypt(ring.control_unit(1), &msg, grid) {
            Err(CodecError::Denied(d)) => d,
            other => panic!("expected denial, got {other:?}"),
        };
        assert_eq!(denial.missing, vec![SecretKey::Paillier]);
        assert!(denial.to_string().contains("Paillier private key"));
        match try_decrypt(ring.entity(2), &msg, grid) {
            Err(CodecError::Denied(d)) => assert_eq!(d.missing, vec![SecretKey::Uplink(1)]),
            other => panic!("expected denial, got {other:?}"),
        }

        let inner = codec::strip_uplink(1, &wire, ring.uplink_private(1).unwrap(), ring.paillier_public()).unwrap();
        let inner_msg = Message::UplinkInner { owner: 1, data: inner.clone() };
        assert!(try_decrypt(ring.control_unit(1), &inner_msg, grid).is_err());
        assert_eq!(try_decrypt(ring.entity(2), &inner_msg, grid).unwrap(), vec![value]);

        let down = codec::encrypt_downlink(1, &[inner[0].plus.clone()], ring.downlink_public(1)).unwrap();
        let down_msg = Message::DownlinkWire { owner: 1, data: down };
        assert_eq!(try_decrypt(ring.entity(1), &down_msg, grid).unwrap(), vec![value]);
        assert!(try_decrypt(ring.entity(2), &down_msg, grid).is_err());
    }

    #[test]
    fn undersized_paillier_is_refused() {
        let bound = BigUint::from(115u32) << 24;
        let mut p = params();
        p.paillier_bits = 28;
        let err = provision(1, p, &bound, &mut ChaCha20Rng::seed_from_u64(7)).unwrap_err();
        match err {
            KeyringError::PaillierBelowBound { required_bits, .. } => assert_eq!(required_bits, 32),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undersized_rsa_is_refused() {
        let mut p = params();
        p.rsa_bits = 100;
        let err = provision(1, p, &BigUint::from(1u32), &mut ChaCha20Rng::seed_from_u64(8)).unwrap_err();
        assert!(matches!(err, KeyringError::RsaBelowPaillierSquare { .. }));
    }

    #[test]
    fn party_files_roundtrip() {
        let ring = ring(9);
        let dir = tempfile::tempdir().unwrap();
        let written = ring.export_dir(dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let cu = std::fs::read_to_string(dir.path().join("control_1.toml")).unwrap();
        assert!(!cu.contains("paillier-private"));
        assert!(cu.contains("rsa-private"));
        let back = Keyring::import_dir(dir.path()).unwrap();
        assert_eq!(back.parties(), 2);
        for (a, b) in ring.holders().iter().zip(back.holders()) {
            assert_eq!(a.party(), b.party());
            assert_eq!(a.held_secrets(), b.held_secrets());
        }
        assert!(back.audit().is_secure());
    }

    #[test]
    fn keypair_files_one_per_key() {
        let ring = ring(11);
        let dir = tempfile::tempdir().unwrap();
        let written = ring.export_keypairs(dir.path()).unwrap();
        let names: Vec<_> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            ["paillier.toml", "uplink_1.toml", "uplink_2.toml", "downlink_1.toml", "downlink_2.toml"]
        );
        let text = std::fs::read_to_string(dir.path().join("paillier.toml")).unwrap();
        let sk = KeyFile::from_toml(&text).unwrap().to_paillier_private().unwrap();
        assert_eq!(sk.public(), ring.paillier_public());
    }

    #[test]
    fn size_check_on_unchecked_keyring() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let paillier = PaillierKeypair::generate(28, &mut rng).unwrap();
        let rsa = |rng: &mut ChaCha20Rng| RsaKeypair::generate(128, rng).unwrap();
        let ring = Keyring::assemble_unchecked(paillier, vec![rsa(&mut rng)], vec![rsa(&mut rng)]).unwrap();
        let grid = GridParams::new(24, 6).unwrap();
        let bound = BigUint::from(115u32) << 24;
        assert!(matches!(
            ring.check_sizes(grid, &bound),
            Err(KeyringError::PaillierBelowBound { .. })
        ));
        assert!(ring.check_sizes(grid, &BigUint::from(1u32)).is_ok());
    }

    #[test]
    fn missing_party_file_is_an_error() {
        let ring = ring(10);
        let dir = tempfile::tempdir().unwrap();
        ring.export_dir(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("entity_2.toml")).unwrap();
        assert!(matches!(Keyring::import_dir(dir.path()), Err(KeyringError::Inconsistent(_))));
    }

    #[test]
    fn party_names_parse() {
        assert_eq!("entity-3".parse::<Party>().unwrap(), Party::entity(3));
        assert_eq!("control-1".parse::<Party>().unwrap(), Party::control_unit(1));
        assert!("control-0".parse::<Party>().is_err());
        assert!("dealer-1".parse::<Party>().is_err());
    }
}
