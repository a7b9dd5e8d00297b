//! Golden vectors, regenerated from fixed seeds rather than written by hand.

use serde::Serialize;

use crate::codec::{sha256, Hash32};
use crate::identity::{keygen, IvTpId};
use crate::ledger::merkle_root;

/// Dealer used for every identity vector.
pub const VECTOR_DEALER: &str = "dealer";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityVector {
    pub seed_hex: String,
    pub public_key_hex: String,
    pub ivtp_id_hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MerkleVector {
    pub leaves_hex: Vec<String>,
    pub root_hex: String,
}

/// Seeds: 32 zero bytes, then SHA-256 of "IV-1" through "IV-5". Every id
/// uses dealer_id = SHA-256("dealer") and counter 0.
pub fn identity_vectors() -> Vec<IdentityVector> {
    let dealer_id = sha256(&[VECTOR_DEALER.as_bytes()]);
    let seeds = std::iter::once(Hash32([0; 32]))
        .chain((1..=5).map(|i| sha256(&[format!("IV-{i}").as_bytes()])));
    seeds
        .map(|seed| {
            let kp = keygen(seed.as_bytes()).expect("32-byte seed");
            IdentityVector {
                seed_hex: seed.to_hex(),
                public_key_hex: kp.public_key().to_hex(),
                ivtp_id_hex: IvTpId::derive(&dealer_id, &kp.public_key(), 0).to_hex(),
            }
        })
        .collect()
}

/// Leaf i is SHA-256("leaf-<i>"); sizes cover the single leaf, even and odd
/// levels, and a full power of two.
pub fn merkle_vectors() -> Vec<MerkleVector> {
    [1usize, 2, 3, 4, 5, 7, 8, 13]
        .into_iter()
        .map(|n| {
            let leaves: Vec<Hash32> = (0..n).map(|i| sha256(&[format!("leaf-{i}").as_bytes()])).collect();
            MerkleVector {
                leaves_hex: leaves.iter().map(Hash32::to_hex).collect(),
                root_hex: merkle_root(&leaves).expect("non-empty").to_hex(),
            }
        })
        .collect()
}

/// Pretty JSON with a trailing newline, as stored under `vectors/`.
pub fn to_file_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("vectors serialize");
    s.push('\n');
    s
}
