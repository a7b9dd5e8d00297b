use crate::arbitration::Schedule;
use crate::codec::{sha256, CodecError, Hash32, Reader, Writer};
use crate::consensus::Endorsement;
use crate::identity::{IvTpId, Signature};
use crate::ledger::{read_ids, write_ids, TimeFlag, Transaction};

use super::frame::FrameKind;

/// Decoded frame payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Beacon {
        tx: Transaction,
    },
    /// Free-form data plus the Comm transaction recording who heard it.
    Comm {
        tx: Transaction,
        body: Vec<u8>,
    },
    /// An arrival announcement, itself recorded through a Comm transaction
    /// whose message hash is [`intent_digest`].
    Intent {
        intersection_id: String,
        round: u32,
        arrival: TimeFlag,
        tx: Transaction,
    },
    Schedule {
        intersection_id: String,
        round: u32,
        schedule: Schedule,
    },
    Agree {
        intersection_id: String,
        round: u32,
        proposer: IvTpId,
        ordering: Vec<IvTpId>,
        signature: Signature,
        reward: Option<Transaction>,
    },
    Disagree {
        intersection_id: String,
        round: u32,
        proposer: IvTpId,
        ordering: Vec<IvTpId>,
    },
    Endorse(Endorsement),
    RewardNotice {
        intersection_id: String,
        round: u32,
        arbitration: Transaction,
        reward: Option<Transaction>,
    },
}

pub fn intent_digest(intersection_id: &str, round: u32, arrival: TimeFlag) -> Result<Hash32, CodecError> {
    let mut w = Writer::new();
    w.raw(b"IVTP/intent").str(intersection_id)?.u32(round).u64(arrival.0);
    Ok(sha256(&[&w.finish()]))
}

fn put_tx(w: &mut Writer, tx: &Transaction) -> Result<(), CodecError> {
    w.bytes(&tx.encode()?)?;
    Ok(())
}

fn get_tx(r: &mut Reader<'_>) -> Result<Transaction, CodecError> {
    Transaction::decode(r.bytes()?)
}

fn put_opt_tx(w: &mut Writer, tx: &Option<Transaction>) -> Result<(), CodecError> {
    match tx {
        None => {
            w.u8(0);
        }
        Some(tx) => {
            w.u8(1);
            put_tx(w, tx)?;
        }
    }
    Ok(())
}

fn get_opt_tx(r: &mut Reader<'_>) -> Result<Option<Transaction>, CodecError> {
    match r.u8()? {
        0 => Ok(None),
        1 => get_tx(r).map(Some),
        tag => Err(CodecError::UnknownTag { what: "option", tag }),
    }
}

impl Message {
    pub fn kind(&self) -> FrameKind {
        match self {
            Message::Beacon { .. } => FrameKind::Beacon,
            Message::Comm { .. } => FrameKind::Comm,
            Message::Intent { .. } => FrameKind::Intent,
            Message::Schedule { .. } => FrameKind::Schedule,
            Message::Agree { .. } => FrameKind::Agree,
            Message::Disagree { .. } => FrameKind::Disagree,
            Message::Endorse(_) => FrameKind::Endorse,
            Message::RewardNotice { .. } => FrameKind::RewardNotice,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        match self {
            Message::Beacon { tx } => put_tx(&mut w, tx)?,
            Message::Comm { tx, body } => {
                put_tx(&mut w, tx)?;
                w.bytes(body)?;
            }
            Message::Intent {
                intersection_id,
                round,
                arrival,
                tx,
            } => {
                w.str(intersection_id)?.u32(*round).u64(arrival.0);
                put_tx(&mut w, tx)?;
            }
            Message::Schedule {
                intersection_id,
                round,
                schedule,
            } => {
                w.str(intersection_id)?.u32(*round).hash(&schedule.proposer.0);
                write_ids(&mut w, &schedule.ordering)?;
                w.count(schedule.basis.len())?;
                for (id, tf) in &schedule.basis {
                    w.hash(&id.0).u64(tf.0);
                }
            }
            Message::Agree {
                intersection_id,
                round,
                proposer,
                ordering,
                signature,
                reward,
            } => {
                w.str(intersection_id)?.u32(*round).hash(&proposer.0);
                write_ids(&mut w, ordering)?;
                w.raw(&signature.0);
                put_opt_tx(&mut w, reward)?;
            }
            Message::Disagree {
                intersection_id,
                round,
                proposer,
                ordering,
            } => {
                w.str(intersection_id)?.u32(*round).hash(&proposer.0);
                write_ids(&mut w, ordering)?;
            }
            Message::Endorse(e) => {
                w.raw(&e.encode());
            }
            Message::RewardNotice {
                intersection_id,
                round,
                arbitration,
                reward,
            } => {
                w.str(intersection_id)?.u32(*round);
                put_tx(&mut w, arbitration)?;
                put_opt_tx(&mut w, reward)?;
            }
        }
        Ok(w.finish())
    }

    pub fn decode(kind: FrameKind, payload: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(payload);
        let m = match kind {
            FrameKind::Beacon => Message::Beacon { tx: get_tx(&mut r)? },
            FrameKind::Comm => Message::Comm {
                tx: get_tx(&mut r)?,
                body: r.bytes()?.to_vec(),
            },
            FrameKind::Intent => Message::Intent {
                intersection_id: r.string()?,
                round: r.u32()?,
                arrival: TimeFlag(r.u64()?),
                tx: get_tx(&mut r)?,
            },
            FrameKind::Schedule => {
                let intersection_id = r.string()?;
                let round = r.u32()?;
                let proposer = IvTpId(r.hash()?);
                let ordering = read_ids(&mut r)?;
                let n = r.count(40)?;
                let mut basis = Vec::with_capacity(n);
                for _ in 0..n {
                    basis.push((IvTpId(r.hash()?), TimeFlag(r.u64()?)));
                }
                Message::Schedule {
                    intersection_id,
                    round,
                    schedule: Schedule {
                        ordering,
                        proposer,
                        basis,
                    },
                }
            }
            FrameKind::Agree => Message::Agree {
                intersection_id: r.string()?,
                round: r.u32()?,
                proposer: IvTpId(r.hash()?),
                ordering: read_ids(&mut r)?,
                signature: Signature(r.array()?),
                reward: get_opt_tx(&mut r)?,
            },
            FrameKind::Disagree => Message::Disagree {
                intersection_id: r.string()?,
                round: r.u32()?,
                proposer: IvTpId(r.hash()?),
                ordering: read_ids(&mut r)?,
            },
            FrameKind::Endorse => Message::Endorse(Endorsement::read(&mut r)?),
            FrameKind::RewardNotice => Message::RewardNotice {
                intersection_id: r.string()?,
                round: r.u32()?,
                arbitration: get_tx(&mut r)?,
                reward: get_opt_tx(&mut r)?,
            },
        };
        r.finish()?;
        Ok(m)
    }

    /// Ledger transactions carried by this message.
    pub fn transactions(&self) -> Vec<&Transaction> {
        match self {
            Message::Beacon { tx } | Message::Comm { tx, .. } | Message::Intent { tx, .. } => vec![tx],
            Message::Agree { reward, .. } => reward.iter().collect(),
            Message::RewardNotice {
                arbitration, reward, ..
            } => std::iter::once(arbitration).chain(reward.iter()).collect(),
            Message::Schedule { .. } | Message::Disagree { .. } | Message::Endorse(_) => Vec::new(),
        }
    }
}
