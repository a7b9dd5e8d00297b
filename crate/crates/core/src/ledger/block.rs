use crate::codec::{sha256, CodecError, Hash32, Reader, Writer};

use super::merkle::merkle_root;
use super::state::ChainParams;
use super::tx::{TimeFlag, Transaction, TxId};
use super::LedgerError;

/// Block contents. The genesis block carries the chain parameters in place
/// of transactions, and its Merkle root is the parameters' digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockBody {
    Genesis(ChainParams),
    Transactions(Vec<Transaction>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub merkle_root: Hash32,
    pub timestamp: TimeFlag,
    pub body: BlockBody,
    pub block_hash: Hash32,
}

/// SHA-256(height ∥ prev_hash ∥ merkle_root ∥ timestamp).
pub fn header_hash(height: u64, prev_hash: &Hash32, merkle_root: &Hash32, ts: TimeFlag) -> Hash32 {
    sha256(&[
        &height.to_be_bytes(),
        &prev_hash.0,
        &merkle_root.0,
        &ts.0.to_be_bytes(),
    ])
}

impl Block {
    pub fn genesis(params: ChainParams) -> Self {
        let merkle_root = params.digest();
        Block {
            height: 0,
            prev_hash: Hash32::ZERO,
            merkle_root,
            timestamp: TimeFlag(0),
            block_hash: header_hash(0, &Hash32::ZERO, &merkle_root, TimeFlag(0)),
            body: BlockBody::Genesis(params),
        }
    }

    /// Seals a block over `txs`. Does not validate the transactions.
    pub fn seal(
        height: u64,
        prev_hash: Hash32,
        timestamp: TimeFlag,
        txs: Vec<Transaction>,
    ) -> Result<Self, LedgerError> {
        let ids: Vec<TxId> = txs.iter().map(Transaction::tx_id).collect();
        let merkle_root = merkle_root(&ids)?;
        Ok(Block {
            height,
            prev_hash,
            merkle_root,
            timestamp,
            block_hash: header_hash(height, &prev_hash, &merkle_root, timestamp),
            body: BlockBody::Transactions(txs),
        })
    }

    pub fn txs(&self) -> &[Transaction] {
        match &self.body {
            BlockBody::Genesis(_) => &[],
            BlockBody::Transactions(txs) => txs,
        }
    }

    pub fn params(&self) -> Option<&ChainParams> {
        match &self.body {
            BlockBody::Genesis(p) => Some(p),
            BlockBody::Transactions(_) => None,
        }
    }

    pub fn recompute_hash(&self) -> Hash32 {
        header_hash(self.height, &self.prev_hash, &self.merkle_root, self.timestamp)
    }

    /// Merkle root implied by the body (the params digest for genesis).
    pub fn recompute_merkle_root(&self) -> Result<Hash32, LedgerError> {
        match &self.body {
            BlockBody::Genesis(p) => Ok(p.digest()),
            BlockBody::Transactions(txs) => {
                merkle_root(&txs.iter().map(Transaction::tx_id).collect::<Vec<_>>())
            }
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.u64(self.height)
            .hash(&self.prev_hash)
            .hash(&self.merkle_root)
            .u64(self.timestamp.0);
        match &self.body {
            BlockBody::Genesis(p) => {
                w.u8(0).bytes(&p.encode()?)?;
            }
            BlockBody::Transactions(txs) => {
                w.u8(1).count(txs.len())?;
                for tx in txs {
                    w.bytes(&tx.encode()?)?;
                }
            }
        }
        w.hash(&self.block_hash);
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let height = r.u64()?;
        let prev_hash = r.hash()?;
        let merkle_root = r.hash()?;
        let timestamp = TimeFlag(r.u64()?);
        let body = match r.u8()? {
            0 => BlockBody::Genesis(ChainParams::decode(r.bytes()?)?),
            1 => {
                let n = r.count(4)?;
                let mut txs = Vec::with_capacity(n);
                for _ in 0..n {
                    txs.push(Transaction::decode(r.bytes()?)?);
                }
                BlockBody::Transactions(txs)
            }
            tag => return Err(CodecError::UnknownTag { what: "block body", tag }),
        };
        let block_hash = r.hash()?;
        r.finish()?;
        Ok(Block {
            height,
            prev_hash,
            merkle_root,
            timestamp,
            body,
            block_hash,
        })
    }
}
