//! Proof-of-Driving: a transaction reaches the chain only after a strict
//! majority of the other vehicles that are currently driving (have a fresh
//! beacon) endorse it as valid.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::identity::{IvTpId, KeyPair, Signature};
use crate::ledger::{
    Block, Chain, LedgerError, TimeFlag, Transaction, TxBody, TxError, TxId, TxLocation,
};

pub const DEFAULT_BEACON_PERIOD_MS: u64 = 500;
pub const DEFAULT_BEACON_WINDOW_MS: u64 = 1000;
pub const DEFAULT_PENDING_TTL_MS: u64 = 2000;
pub const DEFAULT_NETWORK_ID: &str = "ivtp-net";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Verdict {
    Invalid = 0,
    Valid = 1,
}

/// Why a transaction fails Proof-of-Driving.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum PodError {
    #[error("author is not registered")]
    NotRegistered,
    #[error("signature does not verify against the registered key")]
    BadSignature,
    #[error("author has no fresh beacon")]
    NotDriving,
    #[error("vehicle {0} in the ordering has no fresh beacon")]
    ParticipantNotDriving(IvTpId),
    #[error("beacon for another network")]
    WrongNetwork,
    #[error("registrations are issued by dealers, not endorsed")]
    NotPodTransaction,
    #[error("transaction does not match the frame that carried it")]
    PayloadMismatch,
    #[error(transparent)]
    Ledger(TxError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PodVerdict {
    Valid,
    Invalid(PodError),
}

impl PodVerdict {
    pub fn as_verdict(&self) -> Verdict {
        match self {
            PodVerdict::Valid => Verdict::Valid,
            PodVerdict::Invalid(_) => Verdict::Invalid,
        }
    }
}

/// A signed verdict on a pending transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub tx_id: TxId,
    pub endorser: IvTpId,
    pub verdict: Verdict,
    pub signature: Signature,
}

impl Endorsement {
    pub fn signing_bytes(tx_id: &TxId, verdict: Verdict) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"IVTP/endorse").hash(tx_id).u8(verdict as u8);
        w.finish()
    }

    pub fn new(tx_id: TxId, endorser: IvTpId, verdict: Verdict, kp: &KeyPair) -> Self {
        Endorsement {
            tx_id,
            endorser,
            verdict,
            signature: kp.sign(&Self::signing_bytes(&tx_id, verdict)),
        }
    }

    pub fn verify(&self, chain: &Chain) -> bool {
        chain
            .state()
            .key_of(&self.endorser)
            .map(|pk| pk.verify(&Self::signing_bytes(&self.tx_id, self.verdict), &self.signature))
            .unwrap_or(false)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.hash(&self.tx_id)
            .hash(&self.endorser.0)
            .u8(self.verdict as u8)
            .raw(&self.signature.0);
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tx_id = r.hash()?;
        let endorser = IvTpId(r.hash()?);
        let verdict = match r.u8()? {
            0 => Verdict::Invalid,
            1 => Verdict::Valid,
            tag => return Err(CodecError::UnknownTag { what: "verdict", tag }),
        };
        Ok(Endorsement {
            tx_id,
            endorser,
            verdict,
            signature: Signature(r.array()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PodContext {
    pub active_set: BTreeSet<IvTpId>,
    pub beacon_window_ms: u64,
    pub network_id: String,
}

impl PodContext {
    pub fn new(active_set: BTreeSet<IvTpId>, beacon_window_ms: u64, network_id: &str) -> Self {
        Self {
            active_set,
            beacon_window_ms,
            network_id: network_id.to_string(),
        }
    }

    pub fn from_chain<'a>(
        chain: &Chain,
        pending: impl IntoIterator<Item = &'a Transaction>,
        now: TimeFlag,
        beacon_window_ms: u64,
        network_id: &str,
    ) -> Self {
        Self::new(
            active_vehicles_with_pending(chain, pending, now, beacon_window_ms),
            beacon_window_ms,
            network_id,
        )
    }

    /// Size of the endorsing population for a transaction by `author`.
    pub fn voters(&self, author: &IvTpId) -> usize {
        self.active_set.len() - usize::from(self.active_set.contains(author))
    }
}

fn is_fresh(tf: TimeFlag, now: TimeFlag, window_ms: u64) -> bool {
    tf <= now && tf.0 >= now.0.saturating_sub(window_ms)
}

/// Registered vehicles whose latest committed beacon is in `[now - window, now]`.
pub fn active_vehicles(chain: &Chain, now: TimeFlag, window_ms: u64) -> BTreeSet<IvTpId> {
    active_vehicles_with_pending(chain, std::iter::empty(), now, window_ms)
}

/// Like [`active_vehicles`], also counting beacons still awaiting commit.
pub fn active_vehicles_with_pending<'a>(
    chain: &Chain,
    pending: impl IntoIterator<Item = &'a Transaction>,
    now: TimeFlag,
    window_ms: u64,
) -> BTreeSet<IvTpId> {
    let state = chain.state();
    let mut latest: BTreeMap<IvTpId, TimeFlag> = state.last_beacon.clone();
    for tx in pending {
        if matches!(tx.body, TxBody::Beacon { .. }) && tx.tf <= now {
            let e = latest.entry(tx.author).or_default();
            *e = (*e).max(tx.tf);
        }
    }
    latest
        .into_iter()
        .filter(|(id, tf)| state.is_registered(id) && is_fresh(*tf, now, window_ms))
        .map(|(id, _)| id)
        .collect()
}

/// Proof-of-Driving check, in order: registration, signature, freshness,
/// then the variant's own rules.
pub fn pod_check(ctx: &PodContext, tx: &Transaction, chain: &Chain) -> PodVerdict {
    use PodVerdict::Invalid;
    if matches!(tx.body, TxBody::Register { .. }) {
        return Invalid(PodError::NotPodTransaction);
    }
    let Some(pk) = chain.state().key_of(&tx.author) else {
        return Invalid(PodError::NotRegistered);
    };
    let Ok(msg) = tx.signing_bytes() else {
        return Invalid(PodError::Ledger(TxError::Malformed("encoding".into())));
    };
    if !pk.verify(&msg, &tx.signature) {
        return Invalid(PodError::BadSignature);
    }
    // A beacon is what establishes freshness, so it is exempt from needing one.
    let is_beacon = matches!(tx.body, TxBody::Beacon { .. });
    if !is_beacon && !ctx.active_set.contains(&tx.author) {
        return Invalid(PodError::NotDriving);
    }
    match &tx.body {
        TxBody::Beacon { network_id, .. } if *network_id != ctx.network_id => {
            return Invalid(PodError::WrongNetwork)
        }
        TxBody::Arbitration { ordering, .. } => {
            if let Some(id) = ordering.iter().find(|id| !ctx.active_set.contains(id)) {
                return Invalid(PodError::ParticipantNotDriving(*id));
            }
        }
        _ => {}
    }
    match chain.state().check(chain.params(), tx) {
        Ok(()) => PodVerdict::Valid,
        Err(e) => Invalid(PodError::Ledger(e)),
    }
}

/// Smallest endorsement count strictly greater than half of `n`. A network
/// with no other voters commits vacuously.
pub fn quorum_threshold(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        n / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingTx {
    pub tx: Transaction,
    pub tx_id: TxId,
    pub endorsements: BTreeMap<IvTpId, Endorsement>,
    pub submitted_at: TimeFlag,
}

impl PendingTx {
    pub fn new(tx: Transaction, submitted_at: TimeFlag) -> Self {
        Self {
            tx_id: tx.tx_id(),
            tx,
            endorsements: BTreeMap::new(),
            submitted_at,
        }
    }

    pub fn with_endorsements(mut self, es: impl IntoIterator<Item = Endorsement>) -> Self {
        for e in es {
            self.endorsements.entry(e.endorser).or_insert(e);
        }
        self
    }

    /// (valid, invalid) counts among eligible voters.
    pub fn tally(&self, ctx: &PodContext) -> (usize, usize) {
        let author = self.tx.author;
        self.endorsements
            .values()
            .filter(|e| e.endorser != author && ctx.active_set.contains(&e.endorser))
            .fold((0, 0), |(v, i), e| match e.verdict {
                Verdict::Valid => (v + 1, i),
                Verdict::Invalid => (v, i + 1),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DropReason {
    /// A quorum of voters judged it invalid.
    Rejected,
    /// Quorum reached, but it no longer applies on top of the chain.
    Ledger(TxError),
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitOutcome {
    pub block: Option<Block>,
    pub still_pending: Vec<PendingTx>,
    pub dropped: Vec<(TxId, DropReason)>,
}

/// Collects every pending transaction that has reached quorum into one block,
/// ordered by (tf, tx_id). The block is sealed on top of `chain` but not
/// appended.
pub fn try_commit(
    pending: Vec<PendingTx>,
    ctx: &PodContext,
    chain: &Chain,
    now: TimeFlag,
) -> CommitOutcome {
    let mut ready = Vec::new();
    let mut still_pending = Vec::new();
    let mut dropped = Vec::new();
    for p in pending {
        let threshold = quorum_threshold(ctx.voters(&p.tx.author));
        let (valid, invalid) = p.tally(ctx);
        if valid >= threshold {
            ready.push(p);
        } else if threshold > 0 && invalid >= threshold {
            dropped.push((p.tx_id, DropReason::Rejected));
        } else {
            still_pending.push(p);
        }
    }
    ready.sort_by_key(|p| (p.tx.tf, p.tx_id));

    let height = chain.tip().height + 1;
    let mut scratch = chain.state().clone();
    let mut txs = Vec::new();
    for p in ready {
        let at = TxLocation {
            height,
            index: txs.len() as u32,
        };
        match scratch.apply(chain.params(), &p.tx, at) {
            Ok(()) => txs.push(p.tx),
            Err(e) => dropped.push((p.tx_id, DropReason::Ledger(e))),
        }
    }
    let block = if txs.is_empty() {
        None
    } else {
        let ts = now.max(chain.tip().timestamp);
        Some(
            chain
                .candidate_block(txs, ts)
                .expect("transactions were applied in order above")
                .0,
        )
    };
    CommitOutcome {
        block,
        still_pending,
        dropped,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("transaction already pending")]
    AlreadyPending,
    #[error("transaction already committed")]
    AlreadyCommitted,
    #[error("no pending transaction {0:?}")]
    UnknownTx(TxId),
    #[error("endorser is the author")]
    SelfEndorsement,
    #[error("endorser already voted")]
    DuplicateEndorsement,
    #[error("endorsement signature invalid or endorser unknown")]
    BadEndorsement,
}

/// Pending transactions and their endorsements, as held by the ledger
/// replica. Endorsements are verified and deduplicated on entry.
#[derive(Debug, Clone, Default)]
pub struct TxPool {
    pending: BTreeMap<TxId, PendingTx>,
    ttl_ms: u64,
}

/// Result of one commit round against the pool.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoundResult {
    pub committed: Vec<Transaction>,
    pub dropped: Vec<(TxId, DropReason)>,
}

impl TxPool {
    pub fn new(ttl_ms: u64) -> Self {
        Self {
            pending: BTreeMap::new(),
            ttl_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn txs(&self) -> impl Iterator<Item = &Transaction> {
        self.pending.values().map(|p| &p.tx)
    }

    pub fn get(&self, id: &TxId) -> Option<&PendingTx> {
        self.pending.get(id)
    }

    pub fn submit(&mut self, chain: &Chain, tx: Transaction, now: TimeFlag) -> Result<TxId, PoolError> {
        let p = PendingTx::new(tx, now);
        let id = p.tx_id;
        if chain.state().locations.contains_key(&id) {
            return Err(PoolError::AlreadyCommitted);
        }
        if self.pending.contains_key(&id) {
            return Err(PoolError::AlreadyPending);
        }
        self.pending.insert(id, p);
        Ok(id)
    }

    pub fn endorse(&mut self, chain: &Chain, e: Endorsement) -> Result<(), PoolError> {
        let p = self
            .pending
            .get_mut(&e.tx_id)
            .ok_or(PoolError::UnknownTx(e.tx_id))?;
        if e.endorser == p.tx.author {
            return Err(PoolError::SelfEndorsement);
        }
        if p.endorsements.contains_key(&e.endorser) {
            return Err(PoolError::DuplicateEndorsement);
        }
        if !e.verify(chain) {
            return Err(PoolError::BadEndorsement);
        }
        p.endorsements.insert(e.endorser, e);
        Ok(())
    }

    /// Drops anything pending longer than the TTL, then commits whatever has
    /// reached quorum as one block appended to `chain`.
    pub fn commit_round(
        &mut self,
        chain: &mut Chain,
        ctx: &PodContext,
        now: TimeFlag,
    ) -> Result<RoundResult, LedgerError> {
        let mut result = RoundResult::default();
        let ttl = self.ttl_ms;
        self.pending.retain(|id, p| {
            let keep = p.submitted_at.0.saturating_add(ttl) >= now.0;
            if !keep {
                result.dropped.push((*id, DropReason::Expired));
            }
            keep
        });
        let pending = std::mem::take(&mut self.pending).into_values().collect();
        let outcome = try_commit(pending, ctx, chain, now);
        self.pending = outcome
            .still_pending
            .into_iter()
            .map(|p| (p.tx_id, p))
            .collect();
        result.dropped.extend(outcome.dropped);
        if let Some(block) = outcome.block {
            let txs = block.txs().to_vec();
            chain.append_block(txs.clone(), block.timestamp)?;
            result.committed = txs;
        }
        Ok(result)
    }
}
