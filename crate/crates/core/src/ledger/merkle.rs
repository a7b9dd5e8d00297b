use crate::codec::{sha256, Hash32};

use super::LedgerError;

/// Binary SHA-256 Merkle root. Parents are `H(left ∥ right)`; an unpaired
/// node at any level is paired with itself, so a single leaf L has root
/// `H(L ∥ L)`.
pub fn merkle_root(leaves: &[Hash32]) -> Result<Hash32, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyList);
    }
    let mut level: Vec<Hash32> = leaves.to_vec();
    loop {
        level = level
            .chunks(2)
            .map(|pair| {
                let left = &pair[0];
                let right = pair.get(1).unwrap_or(left);
                sha256(&[&left.0, &right.0])
            })
            .collect();
        if level.len() == 1 {
            return Ok(level[0]);
        }
    }
}
