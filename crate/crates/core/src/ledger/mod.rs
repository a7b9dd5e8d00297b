//! The blockchain ledger: transactions, Merkle roots, SHA-256 block chaining,
//! replay-based validation, trust-point balances and the communication index.
//!
//! Balances are integers in milli-trust (0.5 trust point = 500). Each
//! registration grants the chain's configured endowment; rewards are
//! transfers, so total supply only grows with registrations.

mod block;
mod chain;
mod merkle;
mod state;
mod tx;

use thiserror::Error;

use crate::codec::CodecError;
use crate::identity::IvTpId;

pub use block::{header_hash, Block, BlockBody};
pub use chain::{
    decode_file, encode_blocks, validate_chain, validate_file_bytes, Chain, ValidationFailure,
    ValidationReport, FILE_MAGIC, FILE_VERSION,
};
pub use merkle::merkle_root;
pub use state::{ChainParams, DealerRecord, LedgerState, TxError, TxLocation, DEFAULT_ENDOWMENT};
pub use tx::{agreement_message, TimeFlag, Transaction, TxBody, TxId, TxKind};

pub(crate) use tx::{read_ids, write_ids};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("merkle root of an empty list")]
    EmptyList,
    #[error("block must contain at least one transaction")]
    EmptyBlock,
    #[error("transaction {tx_id:?} invalid: {cause}")]
    InvalidTx { tx_id: TxId, cause: TxError },
    #[error("block timestamp {got} precedes previous block at {prev}")]
    NonMonotonicTimestamp { prev: TimeFlag, got: TimeFlag },
    #[error("transaction {tx_id:?}: insufficient balance (have {have}, need {need})")]
    InsufficientBalance { tx_id: TxId, have: u64, need: u64 },
    #[error("unknown vehicle {0}")]
    UnknownVehicle(IvTpId),
    #[error("corrupt chain file: {0}")]
    CorruptChainFile(String),
    #[error("chain invalid at height {}: {}", .0.height, .0.cause)]
    Invalid(ValidationFailure),
    #[error("encoding: {0}")]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests;
