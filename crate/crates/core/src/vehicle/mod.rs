//! The vehicle agent: frame codec, the receive pipeline, beaconing,
//! endorsement and the glue between frames and arbitration sessions.
//!
//! A vehicle never touches the network or the ledger directly. Every
//! handler returns [`Action`]s that the simulation carries out, which keeps
//! the agent a plain state machine that tests can drive by hand.

mod frame;
mod message;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::arbitration::{IntersectionSession, SessionConfig, SessionEvent, SessionOut, SessionTimer};
use crate::codec::{sha256, CodecError};
use crate::consensus::{active_vehicles_with_pending, pod_check, Endorsement, PodContext, PodError, PodVerdict};
use crate::identity::{IvTpId, KeyPair};
use crate::ledger::{Chain, TimeFlag, Transaction, TxBody, TxId};

pub use frame::{Audience, Frame, FrameKind};
pub use message::{intent_digest, Message};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VehicleError {
    #[error("vehicle is not registered on the chain")]
    NotRegistered,
    #[error("already in a session for intersection {0}")]
    SessionExists(String),
    #[error("encoding: {0}")]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleParams {
    pub beacon_period_ms: u64,
    pub beacon_window_ms: u64,
    pub network_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VehicleTimer {
    Beacon,
    /// Scheduled free-form broadcast.
    Send(Vec<u8>),
    Session(String, SessionTimer),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    UnknownSender,
    BadSignature,
    NotAddressed,
    FutureTimeFlag,
    Malformed(String),
}

/// Observable side effects worth tracing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Note {
    Received {
        from: IvTpId,
        kind: FrameKind,
        tx_ids: Vec<TxId>,
    },
    Dropped {
        from: IvTpId,
        kind: FrameKind,
        cause: DropCause,
    },
    Verdict {
        tx_id: TxId,
        cause: Option<PodError>,
    },
    Session {
        intersection_id: String,
        event: SessionEvent,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send(Frame),
    Submit(Transaction),
    SetTimer { at: TimeFlag, timer: VehicleTimer },
    Note(Note),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboxEntry {
    pub from: IvTpId,
    pub tf: TimeFlag,
    pub kind: FrameKind,
}

pub struct VehicleState {
    pub alias: String,
    pub id: IvTpId,
    keypair: KeyPair,
    params: VehicleParams,
    /// Where endorsements are addressed.
    ledger_node: IvTpId,
    /// Latest beacon seen from each vehicle, own included.
    beacons: BTreeMap<IvTpId, Transaction>,
    inbox: Vec<InboxEntry>,
    endorsed: BTreeSet<TxId>,
    sessions: BTreeMap<String, IntersectionSession>,
    drops: u64,
}

impl VehicleState {
    pub fn new(alias: &str, id: IvTpId, keypair: KeyPair, params: VehicleParams, ledger_node: IvTpId) -> Self {
        Self {
            alias: alias.to_string(),
            id,
            keypair,
            params,
            ledger_node,
            beacons: BTreeMap::new(),
            inbox: Vec::new(),
            endorsed: BTreeSet::new(),
            sessions: BTreeMap::new(),
            drops: 0,
        }
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn inbox(&self) -> &[InboxEntry] {
        &self.inbox
    }

    pub fn endorsed(&self) -> &BTreeSet<TxId> {
        &self.endorsed
    }

    pub fn session(&self, intersection_id: &str) -> Option<&IntersectionSession> {
        self.sessions.get(intersection_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &IntersectionSession> {
        self.sessions.values()
    }

    /// Peers with a fresh beacon in this vehicle's view.
    pub fn active_peers(&self, chain: &Chain, now: TimeFlag) -> BTreeSet<IvTpId> {
        let mut set = self.active_set(chain, now);
        set.remove(&self.id);
        set
    }

    fn active_set(&self, chain: &Chain, now: TimeFlag) -> BTreeSet<IvTpId> {
        active_vehicles_with_pending(chain, self.beacons.values(), now, self.params.beacon_window_ms)
    }

    pub fn pod_context(&self, chain: &Chain, now: TimeFlag) -> PodContext {
        PodContext::new(
            self.active_set(chain, now),
            self.params.beacon_window_ms,
            &self.params.network_id,
        )
    }

    /// Arms the first beacon.
    pub fn start(&self, now: TimeFlag) -> Vec<Action> {
        vec![Action::SetTimer {
            at: now,
            timer: VehicleTimer::Beacon,
        }]
    }

    /// Enrols in an intersection; the session starts at this vehicle's arrival.
    pub fn join_session(&mut self, cfg: SessionConfig) -> Result<Vec<Action>, VehicleError> {
        let iid = cfg.intersection_id.clone();
        if self.sessions.contains_key(&iid) {
            return Err(VehicleError::SessionExists(iid));
        }
        let at = cfg.arrival;
        self.sessions.insert(iid.clone(), IntersectionSession::new(self.id, cfg));
        Ok(vec![Action::SetTimer {
            at,
            timer: VehicleTimer::Session(iid, SessionTimer::Arrive),
        }])
    }

    fn frame(&self, audience: Audience, msg: &Message, now: TimeFlag) -> Frame {
        Frame::signed(self.id, audience, now, msg.kind(), msg.encode().expect("bounded payload"), &self.keypair)
            .expect("bounded frame")
    }

    pub fn emit_beacon(&mut self, now: TimeFlag) -> (Frame, Transaction) {
        let tx = Transaction::new(
            self.id,
            now,
            TxBody::Beacon {
                network_id: self.params.network_id.clone(),
                position_zone: String::new(),
            },
            &self.keypair,
        );
        self.beacons.insert(self.id, tx.clone());
        (self.frame(Audience::Broadcast, &Message::Beacon { tx: tx.clone() }, now), tx)
    }

    /// Broadcasts `payload` and records it as a Comm to every active peer.
    pub fn send_comm(&mut self, payload: &[u8], now: TimeFlag, chain: &Chain) -> Result<(Frame, Transaction), VehicleError> {
        if chain.state().key_of(&self.id) != Some(&self.keypair.public_key()) {
            return Err(VehicleError::NotRegistered);
        }
        let tx = self.comm_tx(sha256(&[payload]), now, chain);
        let msg = Message::Comm {
            tx: tx.clone(),
            body: payload.to_vec(),
        };
        Ok((self.frame(Audience::Broadcast, &msg, now), tx))
    }

    fn comm_tx(&self, message_hash: crate::codec::Hash32, now: TimeFlag, chain: &Chain) -> Transaction {
        Transaction::new(
            self.id,
            now,
            TxBody::Comm {
                sender: self.id,
                receivers: self.active_peers(chain, now).into_iter().collect(),
                message_hash,
                tf_sent: now,
            },
            &self.keypair,
        )
    }

    pub fn on_timer(&mut self, timer: VehicleTimer, now: TimeFlag, chain: &Chain) -> Vec<Action> {
        match timer {
            VehicleTimer::Beacon => {
                let (frame, tx) = self.emit_beacon(now);
                vec![
                    Action::Send(frame),
                    Action::Submit(tx),
                    Action::SetTimer {
                        at: now.plus(self.params.beacon_period_ms),
                        timer: VehicleTimer::Beacon,
                    },
                ]
            }
            VehicleTimer::Send(payload) => match self.send_comm(&payload, now, chain) {
                Ok((frame, tx)) => vec![Action::Send(frame), Action::Submit(tx)],
                Err(_) => Vec::new(),
            },
            VehicleTimer::Session(iid, t) => {
                let Some(session) = self.sessions.get_mut(&iid) else {
                    return Vec::new();
                };
                let outs = session.on_timer(t, now, &self.keypair);
                self.apply_session(&iid, outs, now, chain)
            }
        }
    }

    fn drop_frame(&mut self, f: &Frame, cause: DropCause) -> Vec<Action> {
        self.drops += 1;
        vec![Action::Note(Note::Dropped {
            from: f.sender,
            kind: f.kind,
            cause,
        })]
    }

    /// Receive pipeline: authenticate against the on-chain key, check
    /// addressing and payload, then dispatch by kind.
    pub fn on_receive(&mut self, f: &Frame, now: TimeFlag, chain: &Chain) -> Vec<Action> {
        let Some(key) = chain.state().key_of(&f.sender) else {
            return self.drop_frame(f, DropCause::UnknownSender);
        };
        if !f.verify(key) {
            return self.drop_frame(f, DropCause::BadSignature);
        }
        if !f.audience.includes(&self.id) {
            return self.drop_frame(f, DropCause::NotAddressed);
        }
        if f.tf > now {
            return self.drop_frame(f, DropCause::FutureTimeFlag);
        }
        let msg = match Message::decode(f.kind, &f.payload) {
            Ok(m) => m,
            Err(e) => return self.drop_frame(f, DropCause::Malformed(e.to_string())),
        };
        self.inbox.push(InboxEntry {
            from: f.sender,
            tf: f.tf,
            kind: f.kind,
        });
        let mut out = vec![Action::Note(Note::Received {
            from: f.sender,
            kind: f.kind,
            tx_ids: msg.transactions().iter().map(|t| t.tx_id()).collect(),
        })];
        self.dispatch(f, msg, now, chain, &mut out);
        out
    }

    fn dispatch(&mut self, f: &Frame, msg: Message, now: TimeFlag, chain: &Chain, out: &mut Vec<Action>) {
        let from = f.sender;
        match msg {
            Message::Beacon { tx } => {
                let consistent = tx.author == from && matches!(tx.body, TxBody::Beacon { .. });
                if consistent {
                    let newer = self.beacons.get(&from).is_none_or(|old| old.tf < tx.tf);
                    if newer {
                        self.beacons.insert(from, tx.clone());
                    }
                }
                self.endorse(&tx, consistent, now, chain, out);
            }
            Message::Comm { tx, body } => {
                let ok = carries_comm(&tx, from, &sha256(&[&body]));
                self.endorse(&tx, ok, now, chain, out);
            }
            Message::Intent {
                intersection_id,
                round,
                arrival,
                tx,
            } => {
                let ok = intent_digest(&intersection_id, round, arrival)
                    .map(|h| carries_comm(&tx, from, &h))
                    .unwrap_or(false);
                self.endorse(&tx, ok, now, chain, out);
                if !ok {
                    return;
                }
                if let Some(s) = self.sessions.get_mut(&intersection_id) {
                    let outs = s.on_intent(from, round, arrival, now);
                    out.extend(self.apply_session(&intersection_id, outs, now, chain));
                }
            }
            Message::Schedule {
                intersection_id,
                round,
                schedule,
            } => {
                if let Some(s) = self.sessions.get_mut(&intersection_id) {
                    let outs = s.on_schedule(from, round, &schedule, f.tf, now, &self.keypair);
                    out.extend(self.apply_session(&intersection_id, outs, now, chain));
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
                if let Some(s) = self.sessions.get_mut(&intersection_id) {
                    let key = chain.state().key_of(&from);
                    let outs = s.on_agree(from, key, round, proposer, &ordering, signature, reward, now, &self.keypair);
                    out.extend(self.apply_session(&intersection_id, outs, now, chain));
                }
            }
            Message::Disagree {
                intersection_id,
                round,
                ..
            } => {
                if let Some(s) = self.sessions.get_mut(&intersection_id) {
                    let outs = s.on_disagree(from, round, now);
                    out.extend(self.apply_session(&intersection_id, outs, now, chain));
                }
            }
            // Endorsements are for the ledger replica.
            Message::Endorse(_) => {}
            Message::RewardNotice {
                intersection_id,
                arbitration,
                reward,
                ..
            } => {
                let ok = arbitration.author == from;
                self.endorse(&arbitration, ok, now, chain, out);
                if let Some(r) = &reward {
                    self.endorse(r, true, now, chain, out);
                }
                if !ok {
                    return;
                }
                if let Some(s) = self.sessions.get_mut(&intersection_id) {
                    let outs = s.on_notice(&arbitration);
                    out.extend(self.apply_session(&intersection_id, outs, now, chain));
                }
            }
        }
    }

    /// Votes once on `tx` unless this vehicle wrote it. `consistent` is false
    /// when the carrying frame contradicts the transaction.
    fn endorse(&mut self, tx: &Transaction, consistent: bool, now: TimeFlag, chain: &Chain, out: &mut Vec<Action>) {
        let tx_id = tx.tx_id();
        if tx.author == self.id || !self.endorsed.insert(tx_id) {
            return;
        }
        let verdict = if consistent {
            pod_check(&self.pod_context(chain, now), tx, chain)
        } else {
            PodVerdict::Invalid(PodError::PayloadMismatch)
        };
        let e = Endorsement::new(tx_id, self.id, verdict.as_verdict(), &self.keypair);
        out.push(Action::Note(Note::Verdict {
            tx_id,
            cause: match verdict {
                PodVerdict::Valid => None,
                PodVerdict::Invalid(c) => Some(c),
            },
        }));
        out.push(Action::Send(self.frame(Audience::to(self.ledger_node), &Message::Endorse(e), now)));
    }

    fn apply_session(&mut self, iid: &str, outs: Vec<SessionOut>, now: TimeFlag, chain: &Chain) -> Vec<Action> {
        let mut actions = Vec::new();
        for o in outs {
            match o {
                SessionOut::Intent { round, arrival } => {
                    let digest = intent_digest(iid, round, arrival).expect("short id");
                    let tx = self.comm_tx(digest, now, chain);
                    let msg = Message::Intent {
                        intersection_id: iid.to_string(),
                        round,
                        arrival,
                        tx: tx.clone(),
                    };
                    actions.push(Action::Send(self.frame(Audience::Broadcast, &msg, now)));
                    actions.push(Action::Submit(tx));
                }
                SessionOut::Schedule { round, schedule } => {
                    let msg = Message::Schedule {
                        intersection_id: iid.to_string(),
                        round,
                        schedule,
                    };
                    actions.push(Action::Send(self.frame(Audience::Broadcast, &msg, now)));
                }
                SessionOut::Agree {
                    round,
                    proposer,
                    ordering,
                    signature,
                    reward,
                } => {
                    let msg = Message::Agree {
                        intersection_id: iid.to_string(),
                        round,
                        proposer,
                        ordering,
                        signature,
                        reward,
                    };
                    actions.push(Action::Send(self.frame(Audience::to(proposer), &msg, now)));
                }
                SessionOut::Disagree {
                    round,
                    proposer,
                    ordering,
                } => {
                    let msg = Message::Disagree {
                        intersection_id: iid.to_string(),
                        round,
                        proposer,
                        ordering,
                    };
                    actions.push(Action::Send(self.frame(Audience::Broadcast, &msg, now)));
                }
                SessionOut::Notice {
                    round,
                    arbitration,
                    reward,
                } => {
                    let msg = Message::RewardNotice {
                        intersection_id: iid.to_string(),
                        round,
                        arbitration,
                        reward,
                    };
                    actions.push(Action::Send(self.frame(Audience::Broadcast, &msg, now)));
                }
                SessionOut::Submit(tx) => {
                    // A reward written by someone else still gets this vehicle's vote.
                    self.endorse(&tx, true, now, chain, &mut actions);
                    actions.push(Action::Submit(tx));
                }
                SessionOut::Timer { at, timer } => actions.push(Action::SetTimer {
                    at,
                    timer: VehicleTimer::Session(iid.to_string(), timer),
                }),
                SessionOut::Event(event) => actions.push(Action::Note(Note::Session {
                    intersection_id: iid.to_string(),
                    event,
                })),
            }
        }
        actions
    }
}

fn carries_comm(tx: &Transaction, from: IvTpId, expected: &crate::codec::Hash32) -> bool {
    tx.author == from
        && matches!(&tx.body, TxBody::Comm { sender, message_hash, .. } if *sender == from && message_hash == expected)
}
