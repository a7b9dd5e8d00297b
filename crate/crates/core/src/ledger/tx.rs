use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, CodecError, Hash32, Reader, Writer};
use crate::identity::{IvTpId, KeyPair, PublicKey, Signature, SIGNATURE_LEN};

/// Simulation time in milliseconds; "1.00 s" is `TimeFlag(1000)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimeFlag(pub u64);

impl TimeFlag {
    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn plus(self, ms: u64) -> TimeFlag {
        TimeFlag(self.0.saturating_add(ms))
    }
}

impl fmt::Display for TimeFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

pub type TxId = Hash32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxKind {
    Register = 1,
    Beacon = 2,
    Comm = 3,
    Reward = 4,
    Arbitration = 5,
}

impl TxKind {
    pub fn name(self) -> &'static str {
        match self {
            TxKind::Register => "Register",
            TxKind::Beacon => "Beacon",
            TxKind::Comm => "Comm",
            TxKind::Reward => "Reward",
            TxKind::Arbitration => "Arbitration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxBody {
    /// Dealer binding of a new identity to a vehicle key. The transaction
    /// signature is the dealer's.
    Register {
        ivtp_id: IvTpId,
        vehicle_pk: PublicKey,
        dealer_id: Hash32,
        dealer_pk: PublicKey,
        counter: u64,
    },
    Beacon {
        network_id: String,
        position_zone: String,
    },
    Comm {
        sender: IvTpId,
        receivers: Vec<IvTpId>,
        message_hash: Hash32,
        tf_sent: TimeFlag,
    },
    Reward {
        from: IvTpId,
        to: IvTpId,
        /// milli-trust; 1000 = one trust point.
        amount: u64,
        reason: String,
    },
    Arbitration {
        intersection_id: String,
        ordering: Vec<IvTpId>,
        proposer: IvTpId,
        agreements: Vec<(IvTpId, Signature)>,
    },
}

impl TxBody {
    pub fn kind(&self) -> TxKind {
        match self {
            TxBody::Register { .. } => TxKind::Register,
            TxBody::Beacon { .. } => TxKind::Beacon,
            TxBody::Comm { .. } => TxKind::Comm,
            TxBody::Reward { .. } => TxKind::Reward,
            TxBody::Arbitration { .. } => TxKind::Arbitration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub author: IvTpId,
    pub tf: TimeFlag,
    pub body: TxBody,
    pub signature: Signature,
}

impl Transaction {
    /// Builds and signs a transaction with the author's key.
    pub fn new(author: IvTpId, tf: TimeFlag, body: TxBody, kp: &KeyPair) -> Self {
        let mut tx = Transaction {
            author,
            tf,
            body,
            signature: Signature([0u8; SIGNATURE_LEN]),
        };
        tx.signature = kp.sign(&tx.signing_bytes().expect("well-formed transaction"));
        tx
    }

    pub fn register(
        ivtp_id: IvTpId,
        vehicle_pk: PublicKey,
        dealer_id: Hash32,
        dealer_pk: PublicKey,
        counter: u64,
        tf: TimeFlag,
        dealer_kp: &KeyPair,
    ) -> Self {
        let body = TxBody::Register {
            ivtp_id,
            vehicle_pk,
            dealer_id,
            dealer_pk,
            counter,
        };
        Transaction::new(ivtp_id, tf, body, dealer_kp)
    }

    pub fn kind(&self) -> TxKind {
        self.body.kind()
    }

    /// Canonical encoding without the trailing signature.
    pub fn signing_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        self.write_unsigned(&mut w)?;
        Ok(w.finish())
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        self.write_unsigned(&mut w)?;
        w.raw(&self.signature.0);
        Ok(w.finish())
    }

    pub fn tx_id(&self) -> TxId {
        sha256(&[&self.encode().expect("well-formed transaction")])
    }

    fn write_unsigned(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u8(self.kind() as u8).hash(&self.author.0).u64(self.tf.0);
        match &self.body {
            TxBody::Register {
                ivtp_id,
                vehicle_pk,
                dealer_id,
                dealer_pk,
                counter,
            } => {
                w.hash(&ivtp_id.0)
                    .raw(&vehicle_pk.0)
                    .hash(dealer_id)
                    .raw(&dealer_pk.0)
                    .u64(*counter);
            }
            TxBody::Beacon {
                network_id,
                position_zone,
            } => {
                w.str(network_id)?.str(position_zone)?;
            }
            TxBody::Comm {
                sender,
                receivers,
                message_hash,
                tf_sent,
            } => {
                w.hash(&sender.0);
                write_ids(w, receivers)?;
                w.hash(message_hash).u64(tf_sent.0);
            }
            TxBody::Reward {
                from,
                to,
                amount,
                reason,
            } => {
                w.hash(&from.0).hash(&to.0).u64(*amount).str(reason)?;
            }
            TxBody::Arbitration {
                intersection_id,
                ordering,
                proposer,
                agreements,
            } => {
                w.str(intersection_id)?;
                write_ids(w, ordering)?;
                w.hash(&proposer.0);
                w.count(agreements.len())?;
                for (id, sig) in agreements {
                    w.hash(&id.0).raw(&sig.0);
                }
            }
        }
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let tx = Self::read(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let author = IvTpId(r.hash()?);
        let tf = TimeFlag(r.u64()?);
        let body = match tag {
            1 => TxBody::Register {
                ivtp_id: IvTpId(r.hash()?),
                vehicle_pk: PublicKey(r.array()?),
                dealer_id: r.hash()?,
                dealer_pk: PublicKey(r.array()?),
                counter: r.u64()?,
            },
            2 => TxBody::Beacon {
                network_id: r.string()?,
                position_zone: r.string()?,
            },
            3 => TxBody::Comm {
                sender: IvTpId(r.hash()?),
                receivers: read_ids(r)?,
                message_hash: r.hash()?,
                tf_sent: TimeFlag(r.u64()?),
            },
            4 => TxBody::Reward {
                from: IvTpId(r.hash()?),
                to: IvTpId(r.hash()?),
                amount: r.u64()?,
                reason: r.string()?,
            },
            5 => {
                let intersection_id = r.string()?;
                let ordering = read_ids(r)?;
                let proposer = IvTpId(r.hash()?);
                let n = r.count(32 + SIGNATURE_LEN)?;
                let mut agreements = Vec::with_capacity(n);
                for _ in 0..n {
                    agreements.push((IvTpId(r.hash()?), Signature(r.array()?)));
                }
                TxBody::Arbitration {
                    intersection_id,
                    ordering,
                    proposer,
                    agreements,
                }
            }
            tag => {
                return Err(CodecError::UnknownTag {
                    what: "transaction",
                    tag,
                })
            }
        };
        Ok(Transaction {
            author,
            tf,
            body,
            signature: Signature(r.array()?),
        })
    }

    /// Every vehicle this transaction concerns, deduplicated, in a stable order.
    pub fn participants(&self) -> Vec<IvTpId> {
        let mut out = vec![self.author];
        match &self.body {
            TxBody::Register { ivtp_id, .. } => out.push(*ivtp_id),
            TxBody::Beacon { .. } => {}
            TxBody::Comm {
                sender, receivers, ..
            } => {
                out.push(*sender);
                out.extend(receivers);
            }
            TxBody::Reward { from, to, .. } => {
                out.push(*from);
                out.push(*to);
            }
            TxBody::Arbitration {
                ordering, proposer, ..
            } => {
                out.push(*proposer);
                out.extend(ordering);
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        out.retain(|id| seen.insert(*id));
        out
    }
}

pub(crate) fn write_ids(w: &mut Writer, ids: &[IvTpId]) -> Result<(), CodecError> {
    w.count(ids.len())?;
    for id in ids {
        w.hash(&id.0);
    }
    Ok(())
}

pub(crate) fn read_ids(r: &mut Reader<'_>) -> Result<Vec<IvTpId>, CodecError> {
    let n = r.count(32)?;
    (0..n).map(|_| r.hash().map(IvTpId)).collect()
}

/// Bytes a participant signs to agree to a crossing order.
pub fn agreement_message(
    intersection_id: &str,
    proposer: &IvTpId,
    ordering: &[IvTpId],
) -> Result<Vec<u8>, CodecError> {
    let mut w = Writer::new();
    w.raw(b"IVTP/agree").str(intersection_id)?.hash(&proposer.0);
    write_ids(&mut w, ordering)?;
    Ok(w.finish())
}
