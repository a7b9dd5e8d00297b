use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::codec::{Hash32, Reader, Writer};
use crate::identity::{IvTpId, KeyRegistry, PublicKey};

use super::block::{Block, BlockBody};
use super::state::{ChainParams, LedgerState, TxError, TxLocation};
use super::tx::{TimeFlag, Transaction, TxId};
use super::LedgerError;

pub const FILE_MAGIC: &[u8; 4] = b"IVTP";
pub const FILE_VERSION: u8 = 0x01;

/// An append-only chain plus the state obtained by replaying it.
#[derive(Debug, Clone)]
pub struct Chain {
    params: ChainParams,
    blocks: Vec<Block>,
    state: LedgerState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationFailure {
    pub height: u64,
    pub tx_id: Option<TxId>,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub blocks_checked: u64,
    pub failure: Option<ValidationFailure>,
}

impl ValidationReport {
    fn fail(height: u64, tx_id: Option<TxId>, cause: impl Into<String>) -> Self {
        ValidationReport {
            ok: false,
            blocks_checked: height,
            failure: Some(ValidationFailure {
                height,
                tx_id,
                cause: cause.into(),
            }),
        }
    }
}

impl Chain {
    pub fn new(params: ChainParams) -> Self {
        Chain {
            blocks: vec![Block::genesis(params.clone())],
            params,
            state: LedgerState::default(),
        }
    }

    /// Rebuilds a chain from blocks, replaying every transaction.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, LedgerError> {
        let (report, state) = replay(&blocks);
        match (report.failure, state) {
            (None, Some(state)) => Ok(Chain {
                params: blocks[0].params().cloned().expect("validated genesis"),
                blocks,
                state,
            }),
            (Some(f), _) => Err(LedgerError::Invalid(f)),
            (None, None) => unreachable!("replay yields state when ok"),
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    /// Number of blocks including genesis.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    /// Validates `txs` on top of the current tip and returns the sealed
    /// block with the resulting state, leaving `self` untouched.
    pub fn candidate_block(
        &self,
        txs: Vec<Transaction>,
        timestamp: TimeFlag,
    ) -> Result<(Block, LedgerState), LedgerError> {
        if txs.is_empty() {
            return Err(LedgerError::EmptyBlock);
        }
        let tip = self.tip();
        if timestamp < tip.timestamp {
            return Err(LedgerError::NonMonotonicTimestamp {
                prev: tip.timestamp,
                got: timestamp,
            });
        }
        let height = tip.height + 1;
        let mut state = self.state.clone();
        for (i, tx) in txs.iter().enumerate() {
            let at = TxLocation {
                height,
                index: i as u32,
            };
            state
                .apply(&self.params, tx, at)
                .map_err(|cause| LedgerError::from_tx(tx.tx_id(), cause))?;
        }
        let block = Block::seal(height, tip.block_hash, timestamp, txs)?;
        Ok((block, state))
    }

    pub fn append_block(
        &mut self,
        txs: Vec<Transaction>,
        timestamp: TimeFlag,
    ) -> Result<&Block, LedgerError> {
        let (block, state) = self.candidate_block(txs, timestamp)?;
        self.blocks.push(block);
        self.state = state;
        Ok(self.tip())
    }

    pub fn validate(&self) -> ValidationReport {
        validate_chain(&self.blocks)
    }

    pub fn balance(&self, id: &IvTpId) -> Result<u64, LedgerError> {
        self.state
            .balance(id)
            .ok_or(LedgerError::UnknownVehicle(*id))
    }

    pub fn comm_table(&self) -> BTreeMap<IvTpId, Vec<IvTpId>> {
        self.state.comm_index.clone()
    }

    pub fn tx(&self, id: &TxId) -> Option<&Transaction> {
        let loc = self.state.locations.get(id)?;
        self.blocks
            .get(loc.height as usize)?
            .txs()
            .get(loc.index as usize)
    }

    /// Every committed transaction touching `id`, in commit order.
    pub fn history(&self, id: &IvTpId) -> Result<Vec<&Transaction>, LedgerError> {
        if !self.state.is_registered(id) {
            return Err(LedgerError::UnknownVehicle(*id));
        }
        Ok(self
            .state
            .history
            .get(id)
            .map(|ids| ids.iter().filter_map(|t| self.tx(t)).collect())
            .unwrap_or_default())
    }

    pub fn transactions(&self) -> impl Iterator<Item = (&Block, &Transaction)> {
        self.blocks
            .iter()
            .flat_map(|b| b.txs().iter().map(move |tx| (b, tx)))
    }

    pub fn encode_file(&self) -> Vec<u8> {
        encode_blocks(&self.blocks)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.encode_file())
    }

    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        let bytes = std::fs::read(path).map_err(|e| LedgerError::Io(e.to_string()))?;
        Chain::from_blocks(decode_file(&bytes)?)
    }
}

impl KeyRegistry for Chain {
    fn is_key_registered(&self, pk: &PublicKey) -> bool {
        self.state.is_key_registered(pk)
    }
}

pub fn encode_blocks(blocks: &[Block]) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(FILE_MAGIC).u8(FILE_VERSION);
    for b in blocks {
        w.bytes(&b.encode().expect("block fits the encoding"))
            .expect("block fits the encoding");
    }
    w.finish()
}

/// Parses a chain file into blocks without validating them.
pub fn decode_file(bytes: &[u8]) -> Result<Vec<Block>, LedgerError> {
    match decode_prefix(bytes) {
        (blocks, None) => Ok(blocks),
        (_, Some((_, cause))) => Err(LedgerError::CorruptChainFile(cause)),
    }
}

/// Decodes as many blocks as possible. On failure also returns the index of
/// the first block that could not be read (0 for a bad file header).
fn decode_prefix(bytes: &[u8]) -> (Vec<Block>, Option<(u64, String)>) {
    let mut blocks = Vec::new();
    let mut r = Reader::new(bytes);
    match r.take(4) {
        Ok(magic) if magic == FILE_MAGIC => {}
        Ok(_) => return (blocks, Some((0, "bad magic".into()))),
        Err(e) => return (blocks, Some((0, e.to_string()))),
    }
    match r.u8() {
        Ok(FILE_VERSION) => {}
        Ok(v) => return (blocks, Some((0, format!("unsupported version {v:#04x}")))),
        Err(e) => return (blocks, Some((0, e.to_string()))),
    }
    while r.remaining() > 0 {
        let at = blocks.len() as u64;
        match r.bytes().and_then(Block::decode) {
            Ok(block) => blocks.push(block),
            Err(e) => return (blocks, Some((at, format!("block {at}: {e}")))),
        }
    }
    (blocks, None)
}

/// Decodes and validates raw chain-file bytes. A block that fails to decode
/// is reported as a failure at its position, unless an earlier block
/// already fails validation.
pub fn validate_file_bytes(bytes: &[u8]) -> ValidationReport {
    let (blocks, err) = decode_prefix(bytes);
    match err {
        None => validate_chain(&blocks),
        Some((at, cause)) => {
            let prefix = validate_chain(&blocks);
            if !blocks.is_empty() && !prefix.ok {
                prefix
            } else {
                ValidationReport::fail(at, None, cause)
            }
        }
    }
}

/// Recomputes every link, root and hash, verifies every signature, and
/// replays balances from genesis. Reports the first failure.
pub fn validate_chain(blocks: &[Block]) -> ValidationReport {
    replay(blocks).0
}

fn replay(blocks: &[Block]) -> (ValidationReport, Option<LedgerState>) {
    let Some(genesis) = blocks.first() else {
        return (ValidationReport::fail(0, None, "no genesis block"), None);
    };
    let Some(params) = genesis.params() else {
        return (
            ValidationReport::fail(0, None, "first block is not a genesis block"),
            None,
        );
    };
    if genesis.height != 0 || genesis.prev_hash != Hash32::ZERO {
        return (ValidationReport::fail(0, None, "bad genesis header"), None);
    }
    let mut state = LedgerState::default();
    let mut prev: Option<&Block> = None;
    for (i, block) in blocks.iter().enumerate() {
        let h = i as u64;
        let fail = |cause: &str| (ValidationReport::fail(h, None, cause), None);
        if block.height != h {
            return fail("height out of sequence");
        }
        if let Some(prev) = prev {
            if block.prev_hash != prev.block_hash {
                return fail("prev_hash does not match previous block");
            }
            if block.timestamp < prev.timestamp {
                return fail("timestamp decreases");
            }
            if block.params().is_some() {
                return fail("genesis body past height 0");
            }
            if block.txs().is_empty() {
                return fail("empty block");
            }
        }
        match block.recompute_merkle_root() {
            Ok(root) if root == block.merkle_root => {}
            _ => return fail("merkle_root mismatch"),
        }
        if block.recompute_hash() != block.block_hash {
            return fail("block_hash mismatch");
        }
        if let BlockBody::Transactions(txs) = &block.body {
            for (j, tx) in txs.iter().enumerate() {
                let at = TxLocation {
                    height: h,
                    index: j as u32,
                };
                if let Err(cause) = state.apply(params, tx, at) {
                    return (
                        ValidationReport::fail(h, Some(tx.tx_id()), cause.to_string()),
                        None,
                    );
                }
            }
        }
        prev = Some(block);
    }
    (
        ValidationReport {
            ok: true,
            blocks_checked: blocks.len() as u64,
            failure: None,
        },
        Some(state),
    )
}

impl LedgerError {
    pub(crate) fn from_tx(tx_id: TxId, cause: TxError) -> Self {
        match cause {
            TxError::InsufficientBalance { have, need } => {
                LedgerError::InsufficientBalance { tx_id, have, need }
            }
            cause => LedgerError::InvalidTx { tx_id, cause },
        }
    }
}
