use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::codec::{sha256, CodecError, Hash32, Reader, Writer};
use crate::identity::{IvTpId, PublicKey};

use super::tx::{agreement_message, TimeFlag, Transaction, TxBody, TxId};

/// Why a single transaction is not acceptable against a ledger state.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum TxError {
    #[error("vehicle {0} is not registered")]
    NotRegistered(IvTpId),
    #[error("signature does not verify")]
    BadSignature,
    #[error("dealer {0} is not an authorized issuer")]
    UnauthorizedDealer(Hash32),
    #[error("issued id does not match SHA-256(dealer ∥ key ∥ counter)")]
    IdMismatch,
    #[error("vehicle {0} is already registered")]
    AlreadyRegistered(IvTpId),
    #[error("public key {0} is already bound to another vehicle")]
    DuplicateKey(PublicKey),
    #[error("author does not match the acting party")]
    AuthorMismatch,
    #[error("reward amount must be positive")]
    ZeroAmount,
    #[error("insufficient balance: have {have}, need {need}")]
    InsufficientBalance { have: u64, need: u64 },
    #[error("transfer to self")]
    SelfTransfer,
    #[error("receiver list contains the sender or a duplicate")]
    BadReceivers,
    #[error("ordering is empty or contains duplicates")]
    BadOrdering,
    #[error("proposer is not part of the ordering")]
    ProposerNotInOrdering,
    #[error("agreement from {0} is invalid")]
    BadAgreement(IvTpId),
    #[error("agreements do not cover every non-proposer participant")]
    NotUnanimous,
    #[error("intersection {0} already has a committed arbitration")]
    DuplicateArbitration(String),
    #[error("reward for {0:?} already paid by this vehicle")]
    DuplicateReward(String),
    #[error("transaction already committed")]
    DuplicateTx,
    #[error("malformed transaction: {0}")]
    Malformed(String),
}

impl From<CodecError> for TxError {
    fn from(e: CodecError) -> Self {
        TxError::Malformed(e.to_string())
    }
}

/// Dealer allowed to issue identities on a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DealerRecord {
    pub dealer_id: Hash32,
    pub public_key: PublicKey,
}

/// Chain-wide parameters, committed to by the genesis block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainParams {
    /// milli-trust granted to each vehicle at registration.
    pub endowment: u64,
    pub dealers: Vec<DealerRecord>,
}

pub const DEFAULT_ENDOWMENT: u64 = 100_000;

impl ChainParams {
    pub fn new(endowment: u64, dealers: Vec<DealerRecord>) -> Self {
        Self { endowment, dealers }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.u64(self.endowment).count(self.dealers.len())?;
        for d in &self.dealers {
            w.hash(&d.dealer_id).raw(&d.public_key.0);
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let endowment = r.u64()?;
        let n = r.count(64)?;
        let mut dealers = Vec::with_capacity(n);
        for _ in 0..n {
            dealers.push(DealerRecord {
                dealer_id: r.hash()?,
                public_key: PublicKey(r.array()?),
            });
        }
        r.finish()?;
        Ok(Self { endowment, dealers })
    }

    pub fn digest(&self) -> Hash32 {
        sha256(&[&self.encode().expect("params fit the encoding")])
    }

    fn dealer_key(&self, dealer_id: &Hash32) -> Option<&PublicKey> {
        self.dealers
            .iter()
            .find(|d| &d.dealer_id == dealer_id)
            .map(|d| &d.public_key)
    }
}

/// Where a committed transaction lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLocation {
    pub height: u64,
    pub index: u32,
}

/// State derived by replaying every committed transaction from genesis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerState {
    pub balances: BTreeMap<IvTpId, u64>,
    pub registrations: BTreeMap<IvTpId, PublicKey>,
    keys: BTreeSet<PublicKey>,
    /// Peers each vehicle has communicated with, in first-contact order.
    pub comm_index: BTreeMap<IvTpId, Vec<IvTpId>>,
    pub history: BTreeMap<IvTpId, Vec<TxId>>,
    pub last_beacon: BTreeMap<IvTpId, TimeFlag>,
    arbitrations: BTreeSet<String>,
    paid_rewards: BTreeSet<(IvTpId, String)>,
    pub locations: BTreeMap<TxId, TxLocation>,
}

impl LedgerState {
    pub fn is_registered(&self, id: &IvTpId) -> bool {
        self.registrations.contains_key(id)
    }

    pub fn key_of(&self, id: &IvTpId) -> Option<&PublicKey> {
        self.registrations.get(id)
    }

    pub fn is_key_registered(&self, pk: &PublicKey) -> bool {
        self.keys.contains(pk)
    }

    pub fn balance(&self, id: &IvTpId) -> Option<u64> {
        self.balances.get(id).copied()
    }

    pub fn total_supply(&self) -> u128 {
        self.balances.values().map(|&b| b as u128).sum()
    }

    pub fn has_arbitration(&self, intersection_id: &str) -> bool {
        self.arbitrations.contains(intersection_id)
    }

    pub fn has_paid_reward(&self, from: &IvTpId, reason: &str) -> bool {
        self.paid_rewards.contains(&(*from, reason.to_string()))
    }

    fn registered_key(&self, id: &IvTpId) -> Result<&PublicKey, TxError> {
        self.key_of(id).ok_or(TxError::NotRegistered(*id))
    }

    fn require_registered(&self, id: &IvTpId) -> Result<(), TxError> {
        self.registered_key(id).map(|_| ())
    }

    /// Checks `tx` against this state without modifying it.
    pub fn check(&self, params: &ChainParams, tx: &Transaction) -> Result<(), TxError> {
        let msg = tx.signing_bytes()?;
        if self.locations.contains_key(&tx.tx_id()) {
            return Err(TxError::DuplicateTx);
        }
        if let TxBody::Register {
            ivtp_id,
            vehicle_pk,
            dealer_id,
            dealer_pk,
            counter,
        } = &tx.body
        {
            if tx.author != *ivtp_id {
                return Err(TxError::AuthorMismatch);
            }
            if params.dealer_key(dealer_id) != Some(dealer_pk) {
                return Err(TxError::UnauthorizedDealer(*dealer_id));
            }
            if !dealer_pk.verify(&msg, &tx.signature) {
                return Err(TxError::BadSignature);
            }
            if IvTpId::derive(dealer_id, vehicle_pk, *counter) != *ivtp_id {
                return Err(TxError::IdMismatch);
            }
            if self.is_registered(ivtp_id) {
                return Err(TxError::AlreadyRegistered(*ivtp_id));
            }
            if self.is_key_registered(vehicle_pk) {
                return Err(TxError::DuplicateKey(*vehicle_pk));
            }
            return Ok(());
        }

        let author_pk = self.registered_key(&tx.author)?;
        if !author_pk.verify(&msg, &tx.signature) {
            return Err(TxError::BadSignature);
        }
        match &tx.body {
            TxBody::Register { .. } => unreachable!("handled above"),
            TxBody::Beacon { .. } => Ok(()),
            TxBody::Comm {
                sender, receivers, ..
            } => {
                if *sender != tx.author {
                    return Err(TxError::AuthorMismatch);
                }
                let mut seen = BTreeSet::new();
                for r in receivers {
                    if r == sender || !seen.insert(*r) {
                        return Err(TxError::BadReceivers);
                    }
                    self.require_registered(r)?;
                }
                Ok(())
            }
            TxBody::Reward {
                from,
                to,
                amount,
                reason,
            } => {
                if *from != tx.author {
                    return Err(TxError::AuthorMismatch);
                }
                if *amount == 0 {
                    return Err(TxError::ZeroAmount);
                }
                if from == to {
                    return Err(TxError::SelfTransfer);
                }
                self.require_registered(to)?;
                if self.has_paid_reward(from, reason) {
                    return Err(TxError::DuplicateReward(reason.clone()));
                }
                let have = self.balance(from).unwrap_or(0);
                if have < *amount {
                    return Err(TxError::InsufficientBalance {
                        have,
                        need: *amount,
                    });
                }
                Ok(())
            }
            TxBody::Arbitration {
                intersection_id,
                ordering,
                proposer,
                agreements,
            } => {
                if *proposer != tx.author {
                    return Err(TxError::AuthorMismatch);
                }
                let members: BTreeSet<IvTpId> = ordering.iter().copied().collect();
                if ordering.is_empty() || members.len() != ordering.len() {
                    return Err(TxError::BadOrdering);
                }
                if !members.contains(proposer) {
                    return Err(TxError::ProposerNotInOrdering);
                }
                for id in ordering {
                    self.require_registered(id)?;
                }
                if self.has_arbitration(intersection_id) {
                    return Err(TxError::DuplicateArbitration(intersection_id.clone()));
                }
                let agreed_msg = agreement_message(intersection_id, proposer, ordering)?;
                let mut agreed = BTreeSet::new();
                for (id, sig) in agreements {
                    let ok = id != proposer
                        && members.contains(id)
                        && agreed.insert(*id)
                        && self.registered_key(id)?.verify(&agreed_msg, sig);
                    if !ok {
                        return Err(TxError::BadAgreement(*id));
                    }
                }
                if agreed.len() + 1 != members.len() {
                    return Err(TxError::NotUnanimous);
                }
                Ok(())
            }
        }
    }

    /// Checks and applies `tx`; on error the state is untouched.
    pub fn apply(
        &mut self,
        params: &ChainParams,
        tx: &Transaction,
        at: TxLocation,
    ) -> Result<(), TxError> {
        self.check(params, tx)?;
        let tx_id = tx.tx_id();
        match &tx.body {
            TxBody::Register {
                ivtp_id,
                vehicle_pk,
                ..
            } => {
                self.registrations.insert(*ivtp_id, *vehicle_pk);
                self.keys.insert(*vehicle_pk);
                self.balances.insert(*ivtp_id, params.endowment);
            }
            TxBody::Beacon { .. } => {
                let last = self.last_beacon.entry(tx.author).or_default();
                *last = (*last).max(tx.tf);
            }
            TxBody::Comm {
                sender, receivers, ..
            } => {
                for r in receivers {
                    add_peer(&mut self.comm_index, *sender, *r);
                    add_peer(&mut self.comm_index, *r, *sender);
                }
            }
            TxBody::Reward {
                from,
                to,
                amount,
                reason,
            } => {
                *self.balances.get_mut(from).expect("checked") -= amount;
                *self.balances.get_mut(to).expect("checked") += amount;
                self.paid_rewards.insert((*from, reason.clone()));
            }
            TxBody::Arbitration {
                intersection_id, ..
            } => {
                self.arbitrations.insert(intersection_id.clone());
            }
        }
        for id in tx.participants() {
            self.history.entry(id).or_default().push(tx_id);
        }
        self.locations.insert(tx_id, at);
        Ok(())
    }

    /// Canonical serialization; two states are equal iff these bytes are.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        let count = |w: &mut Writer, n: usize| {
            w.count(n).expect("state size fits u32");
        };
        count(&mut w, self.registrations.len());
        for (id, pk) in &self.registrations {
            w.hash(&id.0).raw(&pk.0);
            w.u64(self.balances.get(id).copied().unwrap_or(0));
        }
        count(&mut w, self.comm_index.len());
        for (id, peers) in &self.comm_index {
            w.hash(&id.0);
            count(&mut w, peers.len());
            peers.iter().for_each(|p| {
                w.hash(&p.0);
            });
        }
        count(&mut w, self.history.len());
        for (id, txs) in &self.history {
            w.hash(&id.0);
            count(&mut w, txs.len());
            txs.iter().for_each(|t| {
                w.hash(t);
            });
        }
        count(&mut w, self.last_beacon.len());
        for (id, tf) in &self.last_beacon {
            w.hash(&id.0).u64(tf.0);
        }
        count(&mut w, self.arbitrations.len());
        for a in &self.arbitrations {
            w.str(a).expect("short string");
        }
        count(&mut w, self.paid_rewards.len());
        for (id, reason) in &self.paid_rewards {
            w.hash(&id.0).str(reason).expect("short string");
        }
        w.finish()
    }
}

fn add_peer(index: &mut BTreeMap<IvTpId, Vec<IvTpId>>, of: IvTpId, peer: IvTpId) {
    let peers = index.entry(of).or_default();
    if !peers.contains(&peer) {
        peers.push(peer);
    }
}
