//! Vehicle identities: keypairs, dealer-issued trust-point IDs, and message
//! signatures.
//!
//! Signing goes through [`SignatureScheme`]. The default scheme is Ed25519,
//! which is deterministic (no per-call randomness), so simulation traces are
//! reproducible byte for byte. Payloads are signed, not encrypted.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{sha256, Hash32};
use crate::ledger::{TimeFlag, Transaction};

pub const SEED_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    SeedLength(usize),
    #[error("public key {0} is already registered")]
    DuplicateKey(PublicKey),
    #[error("malformed public key")]
    MalformedKey,
}

/// A deterministic signature scheme with 32-byte keys and 64-byte signatures.
pub trait SignatureScheme {
    fn derive_public(secret: &[u8; SEED_LEN]) -> Result<[u8; PUBLIC_KEY_LEN], IdentityError>;
    fn sign(secret: &[u8; SEED_LEN], message: &[u8]) -> [u8; SIGNATURE_LEN];
    /// Must return `false`, never panic, on malformed keys or signatures.
    fn verify(public: &[u8], message: &[u8], sig: &[u8]) -> bool;
}

pub struct Ed25519;

impl SignatureScheme for Ed25519 {
    fn derive_public(secret: &[u8; SEED_LEN]) -> Result<[u8; PUBLIC_KEY_LEN], IdentityError> {
        Ok(ed25519_dalek::SigningKey::from_bytes(secret)
            .verifying_key()
            .to_bytes())
    }

    fn sign(secret: &[u8; SEED_LEN], message: &[u8]) -> [u8; SIGNATURE_LEN] {
        use ed25519_dalek::Signer;
        ed25519_dalek::SigningKey::from_bytes(secret)
            .sign(message)
            .to_bytes()
    }

    fn verify(public: &[u8], message: &[u8], sig: &[u8]) -> bool {
        let Ok(pk) = <[u8; PUBLIC_KEY_LEN]>::try_from(public) else {
            return false;
        };
        let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(sig) else {
            return false;
        };
        let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        vk.verify_strict(message, &ed25519_dalek::Signature::from_bytes(&sig))
            .is_ok()
    }
}

pub type DefaultScheme = Ed25519;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn verify(&self, message: &[u8], sig: &Signature) -> bool {
        verify(&self.0, message, &sig.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

/// A signing keypair. The secret never leaves this type except through
/// [`KeyPair::secret_key`].
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    secret: [u8; SEED_LEN],
    public: PublicKey,
}

impl KeyPair {
    pub fn secret_key(&self) -> &[u8; SEED_LEN] {
        &self.secret
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(self, message)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Derives a keypair from a 32-byte seed. The seed is the secret key.
pub fn keygen(seed: &[u8]) -> Result<KeyPair, IdentityError> {
    let secret: [u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| IdentityError::SeedLength(seed.len()))?;
    let public = PublicKey(DefaultScheme::derive_public(&secret)?);
    Ok(KeyPair { secret, public })
}

/// Convenience: keypair from SHA-256 of a label (`"IV-1"` etc).
pub fn keygen_from_label(label: &str) -> KeyPair {
    keygen(sha256(&[label.as_bytes()]).as_bytes()).expect("digest is 32 bytes")
}

pub fn sign(kp: &KeyPair, message: &[u8]) -> Signature {
    Signature(DefaultScheme::sign(&kp.secret, message))
}

pub fn verify(public_key: &[u8], message: &[u8], sig: &[u8]) -> bool {
    DefaultScheme::verify(public_key, message, sig)
}

/// A vehicle's trust-point identity: SHA-256(dealer_id ∥ public key ∥ counter).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct IvTpId(pub Hash32);

impl IvTpId {
    pub fn derive(dealer_id: &Hash32, vehicle_pk: &PublicKey, counter: u64) -> Self {
        IvTpId(sha256(&[&dealer_id.0, &vehicle_pk.0, &counter.to_be_bytes()]))
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        Hash32::from_hex(s).map(IvTpId)
    }

    pub fn short(&self) -> String {
        self.0.to_hex()[..8].to_string()
    }
}

impl fmt::Debug for IvTpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IvTpId({})", self.short())
    }
}

impl fmt::Display for IvTpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for IvTpId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IvTpId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Hash32::deserialize(d).map(IvTpId)
    }
}

/// Lookup of keys already bound to an identity, used to refuse re-issuance.
pub trait KeyRegistry {
    fn is_key_registered(&self, pk: &PublicKey) -> bool;
}

/// A dealer that issues trust-point IDs and signs the matching Register
/// transactions.
#[derive(Debug, Clone)]
pub struct DealerAuthority {
    dealer_id: Hash32,
    keypair: KeyPair,
    issuance_counter: u64,
}

impl DealerAuthority {
    pub fn new(dealer_id: Hash32, keypair: KeyPair) -> Self {
        Self {
            dealer_id,
            keypair,
            issuance_counter: 0,
        }
    }

    /// Dealer named `name`: id = SHA-256(name), key seed = SHA-256("dealer-key:" ∥ name).
    pub fn from_name(name: &str) -> Self {
        let id = sha256(&[name.as_bytes()]);
        let seed = sha256(&[b"dealer-key:", name.as_bytes()]);
        Self::new(id, keygen(seed.as_bytes()).expect("digest is 32 bytes"))
    }

    pub fn dealer_id(&self) -> Hash32 {
        self.dealer_id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key()
    }

    pub fn issuance_counter(&self) -> u64 {
        self.issuance_counter
    }

    /// Issues a fresh ID for `vehicle_pk` and returns the dealer-signed
    /// Register transaction binding the two.
    pub fn issue_ivtp<R: KeyRegistry + ?Sized>(
        &mut self,
        vehicle_pk: PublicKey,
        registry: &R,
        tf: TimeFlag,
    ) -> Result<(IvTpId, Transaction), IdentityError> {
        if ed25519_dalek::VerifyingKey::from_bytes(&vehicle_pk.0).is_err() {
            return Err(IdentityError::MalformedKey);
        }
        if registry.is_key_registered(&vehicle_pk) {
            return Err(IdentityError::DuplicateKey(vehicle_pk));
        }
        let counter = self.issuance_counter;
        let id = IvTpId::derive(&self.dealer_id, &vehicle_pk, counter);
        let tx = Transaction::register(
            id,
            vehicle_pk,
            self.dealer_id,
            self.keypair.public_key(),
            counter,
            tf,
            &self.keypair,
        );
        self.issuance_counter += 1;
        Ok((id, tx))
    }
}
