//! Runs a scenario: registers the fleet, then drives vehicles, the ledger
//! replica and the network on one event loop, recording a trace.
//!
//! The ledger replica stands in for the vehicular cloud. It is a network
//! node of its own that receives endorsements as frames, gets transactions
//! straight from their authors, and runs a commit round after every busy
//! instant.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::arbitration::{RewardPolicy, SessionConfig, SessionEvent};
use crate::codec::{sha256, Hash32};
use crate::consensus::{Endorsement, PodContext, PoolError, TxPool};
use crate::identity::{keygen_from_label, DealerAuthority, IdentityError, IvTpId};
use crate::ledger::{Chain, ChainParams, DealerRecord, LedgerError, TimeFlag, Transaction, TxId};
use crate::netsim::{EventKind, Handler, LinkModel, NetError, Network, SimEvent};
use crate::scenario::ScenarioConfig;
use crate::vehicle::{Action, Audience, Frame, FrameKind, Message, Note, VehicleParams, VehicleState, VehicleTimer};

/// Network address of the ledger replica.
pub fn ledger_node_id() -> IvTpId {
    IvTpId(sha256(&[b"IVTP/ledger-node"]))
}

pub const LEDGER_NODE: &str = "ledger";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("network: {0:?}")]
    Net(NetError),
    #[error("identity: {0}")]
    Identity(#[from] IdentityError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("scenario: {0}")]
    Scenario(String),
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_ms: u64,
    pub vehicle: String,
    pub dir: String,
    pub kind: String,
    pub detail: Value,
}

pub fn encode_trace(records: &[TraceRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("trace records serialize"));
        out.push(b'\n');
    }
    out
}

pub fn decode_trace(bytes: &[u8]) -> Result<Vec<TraceRecord>, serde_json::Error> {
    bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(serde_json::from_slice)
        .collect()
}

pub struct RunOutput {
    pub chain: Chain,
    pub trace: Vec<TraceRecord>,
    pub vehicles: Vec<VehicleState>,
}

impl RunOutput {
    pub fn trace_bytes(&self) -> Vec<u8> {
        encode_trace(&self.trace)
    }

    pub fn trace_digest(&self) -> Hash32 {
        sha256(&[&self.trace_bytes()])
    }
}

struct World {
    vehicles: BTreeMap<IvTpId, VehicleState>,
    names: BTreeMap<IvTpId, String>,
    chain: Chain,
    pool: TxPool,
    /// Endorsements that overtook their transaction, with arrival time.
    orphans: BTreeMap<TxId, Vec<(TimeFlag, Endorsement)>>,
    window_ms: u64,
    ttl_ms: u64,
    network_id: String,
    trace: Vec<TraceRecord>,
}

type Net = Network<Frame, VehicleTimer>;

impl World {
    fn name(&self, id: &IvTpId) -> String {
        self.names.get(id).cloned().unwrap_or_else(|| id.to_hex())
    }

    fn names_of<'a>(&self, ids: impl IntoIterator<Item = &'a IvTpId>) -> Vec<String> {
        ids.into_iter().map(|id| self.name(id)).collect()
    }

    fn record(&mut self, t: TimeFlag, who: &str, dir: &str, kind: &str, detail: Value) {
        self.trace.push(TraceRecord {
            t_ms: t.0,
            vehicle: who.to_string(),
            dir: dir.to_string(),
            kind: kind.to_string(),
            detail,
        });
    }

    fn perform(&mut self, net: &mut Net, owner: IvTpId, actions: Vec<Action>) {
        let now = net.now();
        let who = self.name(&owner);
        for a in actions {
            match a {
                Action::Send(frame) => {
                    let (audience, sent) = match &frame.audience {
                        Audience::Broadcast => (json!("broadcast"), net.broadcast(owner, frame.clone(), now)),
                        Audience::To(set) => (json!(self.names_of(set)), net.multicast(owner, set, frame.clone(), now)),
                    };
                    let delivered = sent.map(|d| d.len()).unwrap_or(0);
                    self.record(
                        now,
                        &who,
                        "send",
                        frame.kind.name(),
                        json!({"to": audience, "deliveries": delivered}),
                    );
                }
                Action::Submit(tx) => self.submit(now, &who, tx),
                Action::SetTimer { at, timer } => {
                    net.set_timer(owner, at.max(now), timer).expect("not in the past");
                }
                Action::Note(note) => self.note(now, &who, note),
            }
        }
    }

    fn note(&mut self, now: TimeFlag, who: &str, note: Note) {
        match note {
            Note::Received { from, kind, tx_ids } => {
                let detail = json!({"from": self.name(&from), "tx_ids": tx_ids});
                self.record(now, who, "recv", kind.name(), detail);
            }
            Note::Dropped { from, kind, cause } => {
                let detail = json!({"from": self.name(&from), "cause": cause});
                self.record(now, who, "drop", kind.name(), detail);
            }
            Note::Verdict { tx_id, cause } => {
                let detail = json!({
                    "tx_id": tx_id,
                    "valid": cause.is_none(),
                    "cause": cause.map(|c| c.to_string()),
                });
                self.record(now, who, "verdict", "tx", detail);
            }
            Note::Session {
                intersection_id,
                event,
            } => {
                let (kind, detail) = self.session_detail(&intersection_id, &event);
                self.record(now, who, "session", kind, detail);
            }
        }
    }

    fn session_detail(&self, iid: &str, e: &SessionEvent) -> (&'static str, Value) {
        match e {
            SessionEvent::Opened { round } => ("opened", json!({"intersection": iid, "round": round})),
            SessionEvent::Proposed { round, ordering } => (
                "proposed",
                json!({"intersection": iid, "round": round, "ordering": self.names_of(ordering)}),
            ),
            SessionEvent::Agreed {
                round,
                proposer,
                ordering,
            } => (
                "agreed",
                json!({"intersection": iid, "round": round, "proposer": self.name(proposer), "ordering": self.names_of(ordering)}),
            ),
            SessionEvent::Disagreed { round, proposer, own } => (
                "disagreed",
                json!({"intersection": iid, "round": round, "proposer": self.name(proposer), "own": self.names_of(own)}),
            ),
            SessionEvent::Recovering { round } => ("recovering", json!({"intersection": iid, "round": round})),
            SessionEvent::Committed {
                round,
                proposer,
                ordering,
                local,
            } => (
                "committed",
                json!({
                    "intersection": iid,
                    "round": round,
                    "proposer": self.name(proposer),
                    "ordering": self.names_of(ordering),
                    "local": self.names_of(local),
                }),
            ),
            SessionEvent::Aborted { round, fallback } => (
                "aborted",
                json!({"intersection": iid, "round": round, "fallback": self.names_of(fallback)}),
            ),
        }
    }

    fn submit(&mut self, now: TimeFlag, who: &str, tx: Transaction) {
        let kind = tx.kind().name();
        let tx_id = tx.tx_id();
        let result = self.pool.submit(&self.chain, tx, now);
        let detail = match &result {
            Ok(_) => json!({"tx_id": tx_id, "by": who}),
            Err(e) => json!({"tx_id": tx_id, "by": who, "error": e.to_string()}),
        };
        self.record(now, LEDGER_NODE, "submit", kind, detail);
        if result.is_ok() {
            for (_, e) in self.orphans.remove(&tx_id).unwrap_or_default() {
                let _ = self.pool.endorse(&self.chain, e);
            }
        }
    }

    fn on_ledger_frame(&mut self, now: TimeFlag, f: &Frame) {
        let from = self.name(&f.sender);
        if f.kind != FrameKind::Endorse {
            // Broadcast traffic reaches this node too; only votes concern it.
            self.record(now, LEDGER_NODE, "recv", f.kind.name(), json!({"from": from, "outcome": "ignored"}));
            return;
        }
        let authentic = self
                .chain
                .state()
                .key_of(&f.sender)
                .is_some_and(|k| f.verify(k));
        let endorsement = match Message::decode(f.kind, &f.payload) {
            Ok(Message::Endorse(e)) if authentic && e.endorser == f.sender => e,
            _ => {
                self.record(now, LEDGER_NODE, "drop", f.kind.name(), json!({"from": from, "cause": "rejected"}));
                return;
            }
        };
        let tx_id = endorsement.tx_id;
        let outcome = match self.pool.endorse(&self.chain, endorsement.clone()) {
            Ok(()) => "counted".to_string(),
            Err(PoolError::UnknownTx(_)) if !self.chain.state().locations.contains_key(&tx_id) => {
                self.orphans.entry(tx_id).or_default().push((now, endorsement));
                "held".to_string()
            }
            Err(e) => e.to_string(),
        };
        self.record(
            now,
            LEDGER_NODE,
            "recv",
            f.kind.name(),
            json!({"from": from, "tx_id": tx_id, "outcome": outcome}),
        );
    }

    fn commit_round(&mut self, now: TimeFlag) {
        let ctx = PodContext::from_chain(&self.chain, self.pool.txs(), now, self.window_ms, &self.network_id);
        let result = self
            .pool
            .commit_round(&mut self.chain, &ctx, now)
            .expect("commit rounds only append blocks built on the tip");
        for (tx_id, reason) in &result.dropped {
            self.record(now, LEDGER_NODE, "drop", "tx", json!({"tx_id": tx_id, "reason": reason}));
        }
        if !result.committed.is_empty() {
            let tip = self.chain.tip();
            let detail = json!({
                "height": tip.height,
                "block_hash": tip.block_hash,
                "txs": result.committed.iter().map(|t| json!({"tx_id": t.tx_id(), "kind": t.kind().name()})).collect::<Vec<_>>(),
            });
            self.record(now, LEDGER_NODE, "commit", "block", detail);
        }
        let ttl = self.ttl_ms;
        let chain = &self.chain;
        self.orphans.retain(|id, held| {
            held.retain(|(t, _)| t.0.saturating_add(ttl) >= now.0);
            !held.is_empty() && !chain.state().locations.contains_key(id)
        });
    }
}

impl Handler<Frame, VehicleTimer> for World {
    fn on_event(&mut self, net: &mut Net, ev: SimEvent<Frame, VehicleTimer>) {
        let now = ev.due;
        match ev.kind {
            EventKind::Deliver { to, msg, .. } => {
                if to == ledger_node_id() {
                    self.on_ledger_frame(now, &msg);
                    return;
                }
                let Some(v) = self.vehicles.get_mut(&to) else { return };
                let actions = v.on_receive(&msg, now, &self.chain);
                self.perform(net, to, actions);
            }
            EventKind::TimerFire { owner, tag, .. } => {
                let kind = match &tag {
                    VehicleTimer::Beacon => "beacon".to_string(),
                    VehicleTimer::Send(_) => "send".to_string(),
                    VehicleTimer::Session(iid, t) => format!("{iid}:{t:?}").to_lowercase(),
                };
                let who = self.name(&owner);
                self.record(now, &who, "timer", &kind, Value::Null);
                let Some(v) = self.vehicles.get_mut(&owner) else { return };
                let actions = v.on_timer(tag, now, &self.chain);
                self.perform(net, owner, actions);
            }
        }
    }

    fn on_quiescent(&mut self, _net: &mut Net, now: TimeFlag) {
        self.commit_round(now);
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    net: Net,
    world: World,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate().map_err(|e| SimError::Scenario(e.to_string()))?;
        let mut dealer = DealerAuthority::from_name(&cfg.dealer);
        let params = ChainParams::new(
            cfg.ledger.endowment_millitrust,
            vec![DealerRecord {
                dealer_id: dealer.dealer_id(),
                public_key: dealer.public_key(),
            }],
        );
        let mut chain = Chain::new(params);
        let mut regs = Vec::new();
        let mut fleet = Vec::new();
        for v in &cfg.vehicles {
            let kp = keygen_from_label(v.seed_label());
            let (id, tx) = dealer.issue_ivtp(kp.public_key(), &chain, TimeFlag(0))?;
            regs.push(tx);
            fleet.push((v.alias.clone(), id, kp));
        }
        chain.append_block(regs, TimeFlag(0))?;

        let n = &cfg.network;
        let link = LinkModel::new(n.latency_ms, n.jitter_ms, n.drop_probability).map_err(SimError::Net)?;
        let mut net = Network::new(link, n.seed);
        net.join(ledger_node_id());

        let c = &cfg.consensus;
        let vparams = VehicleParams {
            beacon_period_ms: c.beacon_period_ms,
            beacon_window_ms: c.beacon_window_ms,
            network_id: c.network_id.clone(),
        };
        let mut world = World {
            vehicles: BTreeMap::new(),
            names: BTreeMap::new(),
            chain,
            pool: TxPool::new(c.pending_ttl_ms),
            orphans: BTreeMap::new(),
            window_ms: c.beacon_window_ms,
            ttl_ms: c.pending_ttl_ms,
            network_id: c.network_id.clone(),
            trace: Vec::new(),
        };
        world.names.insert(ledger_node_id(), LEDGER_NODE.to_string());
        world.record(TimeFlag(0), "", "config", "scenario", json!({"name": cfg.name}));

        let by_alias: BTreeMap<String, IvTpId> = fleet.iter().map(|(a, id, _)| (a.clone(), *id)).collect();
        for (alias, id, kp) in fleet {
            net.join(id);
            world.names.insert(id, alias.clone());
            world.record(TimeFlag(0), &alias, "config", "vehicle", json!({"id": id}));
            world
                .vehicles
                .insert(id, VehicleState::new(&alias, id, kp, vparams.clone(), ledger_node_id()));
        }
        let reg = world.chain.tip();
        let detail = json!({"height": reg.height, "block_hash": reg.block_hash, "registrations": cfg.vehicles.len()});
        world.record(TimeFlag(0), LEDGER_NODE, "commit", "block", detail);

        let mut sim = Simulation {
            cfg: cfg.clone(),
            net,
            world,
        };
        let ids: Vec<IvTpId> = sim.world.vehicles.keys().copied().collect();
        for id in ids {
            let actions = sim.world.vehicles[&id].start(TimeFlag(0));
            sim.world.perform(&mut sim.net, id, actions);
        }
        let policy = RewardPolicy {
            amount: cfg.arbitration.reward_millitrust,
            direction: cfg.arbitration.reward_direction,
        };
        for x in &cfg.intersections {
            let participants: BTreeSet<IvTpId> = x.participants.iter().map(|p| by_alias[p]).collect();
            sim.world.record(
                TimeFlag(0),
                "",
                "config",
                "intersection",
                json!({"id": x.id, "participants": x.participants}),
            );
            for p in &x.participants {
                let id = by_alias[p];
                let session = SessionConfig {
                    intersection_id: x.id.clone(),
                    participants: participants.clone(),
                    arrival: TimeFlag(x.arrival_ms[p]),
                    compute_delay_ms: x.compute_delay_ms.get(p).copied().unwrap_or(0),
                    collection_window_ms: x.collection_window_ms,
                    reward: policy.clone(),
                };
                let v = sim.world.vehicles.get_mut(&id).expect("declared vehicle");
                let actions = v
                    .join_session(session)
                    .map_err(|e| SimError::Scenario(e.to_string()))?;
                sim.world.perform(&mut sim.net, id, actions);
            }
        }
        for m in &cfg.messages {
            let id = by_alias[&m.from];
            sim.net
                .set_timer(id, TimeFlag(m.at_ms), VehicleTimer::Send(m.payload.as_bytes().to_vec()))
                .map_err(SimError::Net)?;
        }
        Ok(sim)
    }

    /// Deterministic fault injection for tests; see [`Network::set_drop_filter`].
    pub fn set_drop_filter(&mut self, filter: impl FnMut(&IvTpId, &IvTpId, &Frame) -> bool + 'static) {
        self.net.set_drop_filter(filter);
    }

    pub fn vehicle_id(&self, alias: &str) -> Option<IvTpId> {
        self.world.names.iter().find(|(_, n)| n.as_str() == alias).map(|(id, _)| *id)
    }

    pub fn run(mut self) -> RunOutput {
        let t_end = TimeFlag(self.cfg.run.t_end_ms);
        self.net.run_until(t_end, &mut self.world);
        let mut vehicles: Vec<VehicleState> = std::mem::take(&mut self.world.vehicles).into_values().collect();
        vehicles.sort_by(|a, b| a.alias.cmp(&b.alias));
        RunOutput {
            chain: self.world.chain,
            trace: self.world.trace,
            vehicles,
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(cfg)?.run())
}
