//! Intersection arbitration: vehicles broadcast crossing intents, the vehicle
//! that finishes computing first proposes a first-come-first-serve order,
//! every other participant recomputes it and must agree, and the first
//! vehicle to cross pays the scheduler a reward.
//!
//! A session that sees a disagreement or times out retries once: everyone
//! re-broadcasts its intent and the lowest-id participant re-proposes. A
//! second failure aborts the session, and the crossing falls back to
//! ordering by id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{IvTpId, KeyPair, PublicKey, Signature};
use crate::ledger::{agreement_message, TimeFlag, Transaction, TxBody};

pub const DEFAULT_REWARD_MILLITRUST: u64 = 500;
pub const MAX_ROUNDS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArbitrationError {
    #[error("no intents to order")]
    EmptyIntents,
    #[error("agreements do not cover every participant")]
    NotUnanimous,
    #[error("first arrival did not attach a matching reward")]
    MissingReward,
}

/// Who pays whom when a session commits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardDirection {
    /// First-arriving vehicle pays the scheduler.
    #[default]
    FirstToScheduler,
    /// Scheduler pays the first-arriving vehicle.
    SchedulerToFirst,
}

/// Sorts vehicles by arrival time, ties broken by id.
pub fn compute_order(intents: &BTreeMap<IvTpId, TimeFlag>) -> Result<Vec<IvTpId>, ArbitrationError> {
    if intents.is_empty() {
        return Err(ArbitrationError::EmptyIntents);
    }
    let mut v: Vec<(TimeFlag, IvTpId)> = intents.iter().map(|(id, tf)| (*tf, *id)).collect();
    v.sort();
    Ok(v.into_iter().map(|(_, id)| id).collect())
}

/// The participant that finishes computing first (lowest id on ties), with
/// the time its proposal goes out.
pub fn elect_scheduler(
    participants: &BTreeSet<IvTpId>,
    compute_delays: &BTreeMap<IvTpId, u64>,
    intent_completion_time: TimeFlag,
) -> Option<(IvTpId, TimeFlag)> {
    participants
        .iter()
        .map(|id| {
            let delay = compute_delays.get(id).copied().unwrap_or(0);
            (intent_completion_time.plus(delay), *id)
        })
        .min()
        .map(|(t, id)| (id, t))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub ordering: Vec<IvTpId>,
    pub proposer: IvTpId,
    pub basis: Vec<(IvTpId, TimeFlag)>,
}

impl Schedule {
    pub fn from_intents(
        proposer: IvTpId,
        intents: &BTreeMap<IvTpId, TimeFlag>,
    ) -> Result<Self, ArbitrationError> {
        Ok(Schedule {
            ordering: compute_order(intents)?,
            proposer,
            basis: intents.iter().map(|(id, tf)| (*id, *tf)).collect(),
        })
    }

    /// The ordering is exactly the FCFS sort of the stated basis.
    pub fn is_consistent(&self) -> bool {
        let basis: BTreeMap<IvTpId, TimeFlag> = self.basis.iter().copied().collect();
        basis.len() == self.basis.len() && compute_order(&basis).ok().as_ref() == Some(&self.ordering)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Agree,
    /// Carries the responder's own ordering (empty if it has none).
    Disagree(Vec<IvTpId>),
}

/// A participant's verdict on a proposed schedule: agree only if it holds an
/// intent from every participant and its own FCFS order matches.
pub fn on_schedule(
    own_intents: &BTreeMap<IvTpId, TimeFlag>,
    participants: &BTreeSet<IvTpId>,
    s: &Schedule,
) -> Response {
    let own = compute_order(own_intents).unwrap_or_default();
    let complete = participants.iter().all(|p| own_intents.contains_key(p));
    if complete && own == s.ordering {
        Response::Agree
    } else {
        Response::Disagree(own)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agreement {
    pub signature: Signature,
    /// Pre-signed payment, attached by the first-arriving vehicle.
    pub reward: Option<Transaction>,
}

pub fn reward_reason(intersection_id: &str) -> String {
    format!("arbitration:{intersection_id}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardPolicy {
    pub amount: u64,
    pub direction: RewardDirection,
}

impl Default for RewardPolicy {
    fn default() -> Self {
        Self {
            amount: DEFAULT_REWARD_MILLITRUST,
            direction: RewardDirection::default(),
        }
    }
}

/// Builds the Arbitration transaction and the matching Reward. No reward is
/// paid when the scheduler is also the first to cross.
pub fn commit_and_reward(
    intersection_id: &str,
    participants: &BTreeSet<IvTpId>,
    schedule: &Schedule,
    agreements: &BTreeMap<IvTpId, Agreement>,
    policy: &RewardPolicy,
    proposer_kp: &KeyPair,
    now: TimeFlag,
) -> Result<(Transaction, Option<Transaction>), ArbitrationError> {
    let proposer = schedule.proposer;
    let others: BTreeSet<IvTpId> = participants.iter().copied().filter(|p| *p != proposer).collect();
    let signed: BTreeSet<IvTpId> = agreements.keys().copied().collect();
    if others != signed {
        return Err(ArbitrationError::NotUnanimous);
    }
    let arbitration = Transaction::new(
        proposer,
        now,
        TxBody::Arbitration {
            intersection_id: intersection_id.to_string(),
            ordering: schedule.ordering.clone(),
            proposer,
            agreements: agreements.iter().map(|(id, a)| (*id, a.signature)).collect(),
        },
        proposer_kp,
    );
    let first = schedule.ordering[0];
    if first == proposer {
        return Ok((arbitration, None));
    }
    let reward = match policy.direction {
        RewardDirection::FirstToScheduler => {
            let tx = agreements[&first]
                .reward
                .clone()
                .ok_or(ArbitrationError::MissingReward)?;
            if !is_expected_reward(&tx, first, proposer, intersection_id, policy.amount) {
                return Err(ArbitrationError::MissingReward);
            }
            tx
        }
        RewardDirection::SchedulerToFirst => {
            reward_tx(proposer, first, intersection_id, policy.amount, proposer_kp, now)
        }
    };
    Ok((arbitration, Some(reward)))
}

fn reward_tx(
    from: IvTpId,
    to: IvTpId,
    intersection_id: &str,
    amount: u64,
    kp: &KeyPair,
    now: TimeFlag,
) -> Transaction {
    Transaction::new(
        from,
        now,
        TxBody::Reward {
            from,
            to,
            amount,
            reason: reward_reason(intersection_id),
        },
        kp,
    )
}

fn is_expected_reward(tx: &Transaction, from: IvTpId, to: IvTpId, intersection_id: &str, amount: u64) -> bool {
    tx.author == from
        && matches!(&tx.body, TxBody::Reward { from: f, to: t, amount: a, reason }
            if *f == from && *t == to && *a == amount && *reason == reward_reason(intersection_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collecting,
    Proposing,
    Agreeing,
    Committed,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Committed | Phase::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionTimer {
    Arrive,
    Deadline(u32),
    Compute(u32),
    Timeout(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Opened { round: u32 },
    Proposed { round: u32, ordering: Vec<IvTpId> },
    Agreed { round: u32, proposer: IvTpId, ordering: Vec<IvTpId> },
    Disagreed { round: u32, proposer: IvTpId, own: Vec<IvTpId> },
    Recovering { round: u32 },
    Committed {
        round: u32,
        proposer: IvTpId,
        ordering: Vec<IvTpId>,
        /// This participant's own FCFS order at commit time.
        local: Vec<IvTpId>,
    },
    Aborted { round: u32, fallback: Vec<IvTpId> },
}

/// Something the session wants its vehicle to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOut {
    Intent { round: u32, arrival: TimeFlag },
    Schedule { round: u32, schedule: Schedule },
    Agree {
        round: u32,
        proposer: IvTpId,
        ordering: Vec<IvTpId>,
        signature: Signature,
        reward: Option<Transaction>,
    },
    Disagree { round: u32, proposer: IvTpId, ordering: Vec<IvTpId> },
    Notice {
        round: u32,
        arbitration: Transaction,
        reward: Option<Transaction>,
    },
    Submit(Transaction),
    Timer { at: TimeFlag, timer: SessionTimer },
    Event(SessionEvent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub intersection_id: String,
    pub participants: BTreeSet<IvTpId>,
    /// This vehicle's own arrival time.
    pub arrival: TimeFlag,
    pub compute_delay_ms: u64,
    pub collection_window_ms: u64,
    pub reward: RewardPolicy,
}

/// One vehicle's view of one intersection session.
#[derive(Debug, Clone)]
pub struct IntersectionSession {
    cfg: SessionConfig,
    me: IvTpId,
    intents: BTreeMap<IvTpId, TimeFlag>,
    phase: Phase,
    round: u32,
    opened: bool,
    arrived: bool,
    /// (send time, proposer) of the best schedule seen this round.
    accepted: Option<(TimeFlag, IvTpId)>,
    proposal: Option<Schedule>,
    agreements: BTreeMap<IvTpId, Agreement>,
    notice: Option<SessionOut>,
    outcome: Option<(Vec<IvTpId>, IvTpId)>,
}

impl IntersectionSession {
    pub fn new(me: IvTpId, cfg: SessionConfig) -> Self {
        Self {
            cfg,
            me,
            intents: BTreeMap::new(),
            phase: Phase::Collecting,
            round: 1,
            opened: false,
            arrived: false,
            accepted: None,
            proposal: None,
            agreements: BTreeMap::new(),
            notice: None,
            outcome: None,
        }
    }

    pub fn intersection_id(&self) -> &str {
        &self.cfg.intersection_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn intents(&self) -> &BTreeMap<IvTpId, TimeFlag> {
        &self.intents
    }

    /// Committed (ordering, proposer), if any.
    pub fn outcome(&self) -> Option<&(Vec<IvTpId>, IvTpId)> {
        self.outcome.as_ref()
    }

    pub fn fallback_ordering(&self) -> Vec<IvTpId> {
        self.cfg.participants.iter().copied().collect()
    }

    fn complete(&self) -> bool {
        self.cfg.participants.iter().all(|p| self.intents.contains_key(p))
    }

    fn window(&self) -> u64 {
        self.cfg.collection_window_ms
    }

    fn lowest_participant(&self) -> IvTpId {
        *self.cfg.participants.iter().next().expect("non-empty participants")
    }

    /// Starts the round-1 clock. The deadline is anchored to the first
    /// arrival flag rather than to local receive time, so every participant
    /// shares it regardless of latency.
    fn open(&mut self, now: TimeFlag, anchor: TimeFlag, out: &mut Vec<SessionOut>) {
        if self.opened {
            return;
        }
        self.opened = true;
        let deadline = anchor.plus(self.window()).max(now);
        out.push(SessionOut::Event(SessionEvent::Opened { round: 1 }));
        out.push(SessionOut::Timer {
            at: deadline,
            timer: SessionTimer::Deadline(1),
        });
        out.push(SessionOut::Timer {
            at: deadline.plus(self.cfg.compute_delay_ms),
            timer: SessionTimer::Compute(1),
        });
        out.push(SessionOut::Timer {
            at: deadline.plus(self.window()),
            timer: SessionTimer::Timeout(1),
        });
    }

    /// This vehicle reaches the intersection and announces itself.
    pub fn on_arrive(&mut self, now: TimeFlag) -> Vec<SessionOut> {
        let mut out = Vec::new();
        if self.phase.is_terminal() || self.arrived {
            return out;
        }
        self.arrived = true;
        self.intents.insert(self.me, self.cfg.arrival);
        self.open(now, self.cfg.arrival.min(now), &mut out);
        out.push(SessionOut::Intent {
            round: self.round,
            arrival: self.cfg.arrival,
        });
        out
    }

    pub fn on_intent(&mut self, from: IvTpId, round: u32, arrival: TimeFlag, now: TimeFlag) -> Vec<SessionOut> {
        let mut out = Vec::new();
        if !self.cfg.participants.contains(&from) || from == self.me {
            return out;
        }
        if self.phase == Phase::Committed {
            // A retry from someone who missed the commit notice; repeat it.
            if round > self.round {
                out.extend(self.notice.clone());
            }
            return out;
        }
        if self.phase.is_terminal() {
            return out;
        }
        self.intents.entry(from).or_insert(arrival);
        self.open(now, arrival.min(now), &mut out);
        if round > self.round {
            out.extend(self.recover(now));
        }
        out
    }

    pub fn on_timer(&mut self, timer: SessionTimer, now: TimeFlag, kp: &KeyPair) -> Vec<SessionOut> {
        match timer {
            SessionTimer::Arrive => self.on_arrive(now),
            SessionTimer::Deadline(r) => {
                if r == self.round && self.phase == Phase::Collecting {
                    self.phase = Phase::Proposing;
                }
                Vec::new()
            }
            SessionTimer::Compute(r) => {
                let may_propose = r == self.round
                    && matches!(self.phase, Phase::Collecting | Phase::Proposing)
                    && self.accepted.is_none()
                    && self.complete();
                if may_propose {
                    self.propose(now, kp)
                } else {
                    Vec::new()
                }
            }
            SessionTimer::Timeout(r) => {
                if r == self.round && !self.phase.is_terminal() {
                    self.recover(now)
                } else {
                    Vec::new()
                }
            }
        }
    }

    fn propose(&mut self, now: TimeFlag, kp: &KeyPair) -> Vec<SessionOut> {
        let schedule = Schedule::from_intents(self.me, &self.intents).expect("own intent present");
        self.phase = Phase::Agreeing;
        self.accepted = Some((now, self.me));
        self.agreements.clear();
        self.proposal = Some(schedule.clone());
        let mut out = vec![
            SessionOut::Event(SessionEvent::Proposed {
                round: self.round,
                ordering: schedule.ordering.clone(),
            }),
            SessionOut::Schedule {
                round: self.round,
                schedule,
            },
        ];
        out.extend(self.try_finish(now, kp));
        out
    }

    pub fn on_schedule(
        &mut self,
        from: IvTpId,
        round: u32,
        schedule: &Schedule,
        sent_at: TimeFlag,
        now: TimeFlag,
        kp: &KeyPair,
    ) -> Vec<SessionOut> {
        let mut out = Vec::new();
        if self.phase.is_terminal()
            || round < self.round
            || schedule.proposer != from
            || !self.cfg.participants.contains(&from)
        {
            return out;
        }
        if round > self.round {
            out.extend(self.recover(now));
            if self.phase.is_terminal() {
                return out;
            }
        }
        let key = (sent_at, from);
        if matches!(self.accepted, Some(best) if best <= key) {
            return out;
        }
        self.accepted = Some(key);
        if self.proposal.take().is_some() {
            self.agreements.clear();
        }
        self.phase = Phase::Agreeing;

        match on_schedule(&self.intents, &self.cfg.participants, schedule) {
            Response::Agree => {
                let msg = agreement_message(&self.cfg.intersection_id, &from, &schedule.ordering)
                    .expect("short fields");
                let pays = self.cfg.reward.direction == RewardDirection::FirstToScheduler
                    && schedule.ordering.first() == Some(&self.me);
                let reward = pays.then(|| {
                    reward_tx(self.me, from, &self.cfg.intersection_id, self.cfg.reward.amount, kp, now)
                });
                out.push(SessionOut::Event(SessionEvent::Agreed {
                    round,
                    proposer: from,
                    ordering: schedule.ordering.clone(),
                }));
                out.push(SessionOut::Agree {
                    round,
                    proposer: from,
                    ordering: schedule.ordering.clone(),
                    signature: kp.sign(&msg),
                    reward,
                });
            }
            Response::Disagree(own) => {
                out.push(SessionOut::Event(SessionEvent::Disagreed {
                    round,
                    proposer: from,
                    own: own.clone(),
                }));
                out.push(SessionOut::Disagree {
                    round,
                    proposer: from,
                    ordering: own,
                });
                out.extend(self.recover(now));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_agree(
        &mut self,
        from: IvTpId,
        from_key: Option<&PublicKey>,
        round: u32,
        proposer: IvTpId,
        ordering: &[IvTpId],
        signature: Signature,
        reward: Option<Transaction>,
        now: TimeFlag,
        kp: &KeyPair,
    ) -> Vec<SessionOut> {
        let Some(proposal) = &self.proposal else {
            return Vec::new();
        };
        if self.phase != Phase::Agreeing
            || round != self.round
            || proposer != self.me
            || ordering != proposal.ordering.as_slice()
            || !self.cfg.participants.contains(&from)
        {
            return Vec::new();
        }
        let msg = agreement_message(&self.cfg.intersection_id, &proposer, ordering).expect("short fields");
        if !from_key.is_some_and(|k| k.verify(&msg, &signature)) {
            return Vec::new();
        }
        self.agreements.entry(from).or_insert(Agreement { signature, reward });
        self.try_finish(now, kp)
    }

    fn try_finish(&mut self, now: TimeFlag, kp: &KeyPair) -> Vec<SessionOut> {
        let Some(proposal) = self.proposal.clone() else {
            return Vec::new();
        };
        match commit_and_reward(
            &self.cfg.intersection_id,
            &self.cfg.participants,
            &proposal,
            &self.agreements,
            &self.cfg.reward,
            kp,
            now,
        ) {
            Ok((arbitration, reward)) => {
                self.phase = Phase::Committed;
                self.outcome = Some((proposal.ordering.clone(), self.me));
                let notice = SessionOut::Notice {
                    round: self.round,
                    arbitration: arbitration.clone(),
                    reward: reward.clone(),
                };
                self.notice = Some(notice.clone());
                let mut out = vec![SessionOut::Submit(arbitration)];
                out.extend(reward.map(SessionOut::Submit));
                out.push(notice);
                out.push(self.committed_event(&proposal.ordering, self.me));
                out
            }
            Err(ArbitrationError::NotUnanimous) => Vec::new(),
            Err(_) => self.recover(now),
        }
    }

    fn committed_event(&self, ordering: &[IvTpId], proposer: IvTpId) -> SessionOut {
        SessionOut::Event(SessionEvent::Committed {
            round: self.round,
            proposer,
            ordering: ordering.to_vec(),
            local: compute_order(&self.intents).unwrap_or_default(),
        })
    }

    pub fn on_disagree(&mut self, from: IvTpId, round: u32, now: TimeFlag) -> Vec<SessionOut> {
        if self.phase.is_terminal() || round != self.round || !self.cfg.participants.contains(&from) {
            return Vec::new();
        }
        self.recover(now)
    }

    /// Adopts a committed arbitration this vehicle signed (or proposed).
    pub fn on_notice(&mut self, arbitration: &Transaction) -> Vec<SessionOut> {
        let TxBody::Arbitration {
            intersection_id,
            ordering,
            proposer,
            agreements,
        } = &arbitration.body
        else {
            return Vec::new();
        };
        let signed = *proposer == self.me || agreements.iter().any(|(id, _)| *id == self.me);
        if self.phase.is_terminal() || *intersection_id != self.cfg.intersection_id || !signed {
            return Vec::new();
        }
        self.phase = Phase::Committed;
        self.outcome = Some((ordering.clone(), *proposer));
        vec![self.committed_event(ordering, *proposer)]
    }

    /// Moves to the retry round, or aborts if the retry already failed.
    pub fn recover(&mut self, now: TimeFlag) -> Vec<SessionOut> {
        if self.phase.is_terminal() {
            return Vec::new();
        }
        if self.round >= MAX_ROUNDS {
            self.phase = Phase::Aborted;
            return vec![SessionOut::Event(SessionEvent::Aborted {
                round: self.round,
                fallback: self.fallback_ordering(),
            })];
        }
        self.round += 1;
        self.phase = Phase::Proposing;
        self.accepted = None;
        self.proposal = None;
        self.agreements.clear();
        self.opened = true;
        let w = self.window();
        let mut out = vec![SessionOut::Event(SessionEvent::Recovering { round: self.round })];
        if self.arrived {
            out.push(SessionOut::Intent {
                round: self.round,
                arrival: self.cfg.arrival,
            });
        }
        if self.me == self.lowest_participant() {
            out.push(SessionOut::Timer {
                at: now.plus(w),
                timer: SessionTimer::Compute(self.round),
            });
        }
        out.push(SessionOut::Timer {
            at: now.plus(2 * w),
            timer: SessionTimer::Timeout(self.round),
        });
        out
    }
}
