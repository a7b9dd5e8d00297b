//! `report.json`: a summary derived only from the persisted chain and trace,
//! so it can be regenerated byte for byte from a run's output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::arbitration::reward_reason;
use crate::codec::{sha256, Hash32};
use crate::identity::IvTpId;
use crate::ledger::{Chain, LedgerError, Transaction, TxBody, TxId};
use crate::sim::{decode_trace, RunOutput, TraceRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("trace is not valid JSON lines: {0}")]
    Trace(#[from] serde_json::Error),
    #[error("trace names vehicle {0} twice")]
    DuplicateName(String),
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: String },
    #[error("{0}")]
    Chain(#[from] LedgerError),
}

pub const CHAIN_FILE: &str = "chain.bin";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const REPORT_FILE: &str = "report.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |e| ReportError::Io {
        path: path.to_path_buf(),
        cause: e.to_string(),
    }
}

/// Writes `chain.bin`, `trace.jsonl` and `report.json` into `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<RunReport, ReportError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace = out.trace_bytes();
    let report = RunReport::build(&out.chain, &trace)?;
    for (name, bytes) in [
        (CHAIN_FILE, out.chain.encode_file()),
        (TRACE_FILE, trace),
        (REPORT_FILE, report.to_json()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(report)
}

/// Rebuilds the report from the chain and trace persisted in `dir`.
pub fn regenerate(dir: &Path) -> Result<RunReport, ReportError> {
    let chain_path = dir.join(CHAIN_FILE);
    let trace_path = dir.join(TRACE_FILE);
    let chain = Chain::load(&chain_path)?;
    let trace = std::fs::read(&trace_path).map_err(io_err(&trace_path))?;
    RunReport::build(&chain, &trace)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockSummary {
    pub height: u64,
    pub hash: Hash32,
    pub timestamp_ms: u64,
    pub tx_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainSummary {
    pub valid: bool,
    pub height: u64,
    pub blocks: Vec<BlockSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Supply {
    pub vehicles: usize,
    pub endowment_millitrust: u64,
    pub total_millitrust: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewardSummary {
    pub from: String,
    pub to: String,
    pub amount_millitrust: u64,
    pub tx_id: TxId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    /// The Arbitration transaction is on the chain.
    Committed,
    /// Participants gave up; the crossing falls back to id order.
    Aborted,
    /// Neither happened before the run ended.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    pub intersection: String,
    pub participants: Vec<String>,
    pub status: SessionStatus,
    pub ordering: Option<Vec<String>>,
    pub proposer: Option<String>,
    pub rounds: u64,
    pub arbitration_tx: Option<TxId>,
    pub rewards: Vec<RewardSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub chain: ChainSummary,
    pub supply: Supply,
    pub balances: BTreeMap<String, u64>,
    pub comm_table: BTreeMap<String, Vec<String>>,
    pub sessions: Vec<SessionSummary>,
    pub trace_digest: Hash32,
}

/// Alias lookup recovered from the trace's config records.
#[derive(Debug, Clone, Default)]
pub struct Names(BTreeMap<IvTpId, String>);

impl Names {
    pub fn from_trace(records: &[TraceRecord]) -> Result<Self, ReportError> {
        let mut map = BTreeMap::new();
        for r in records.iter().filter(|r| r.dir == "config" && r.kind == "vehicle") {
            let parsed = r.detail["id"].as_str().and_then(|h| IvTpId::from_hex(h).ok());
            if let Some(id) = parsed {
                if map.insert(id, r.vehicle.clone()).is_some() {
                    return Err(ReportError::DuplicateName(r.vehicle.clone()));
                }
            }
        }
        Ok(Names(map))
    }

    pub fn name(&self, id: &IvTpId) -> String {
        self.0.get(id).cloned().unwrap_or_else(|| id.to_hex())
    }

    pub fn lookup(&self, alias: &str) -> Option<IvTpId> {
        self.0.iter().find(|(_, a)| a.as_str() == alias).map(|(id, _)| *id)
    }

    fn all<'a>(&self, ids: impl IntoIterator<Item = &'a IvTpId>) -> Vec<String> {
        ids.into_iter().map(|id| self.name(id)).collect()
    }
}

/// Human-readable rendering of a committed transaction.
pub fn tx_json(tx: &Transaction, names: &Names) -> Value {
    let body = match &tx.body {
        TxBody::Register {
            ivtp_id,
            vehicle_pk,
            dealer_id,
            counter,
            ..
        } => json!({"ivtp_id": names.name(ivtp_id), "vehicle_pk": vehicle_pk, "dealer_id": dealer_id, "counter": counter}),
        TxBody::Beacon {
            network_id,
            position_zone,
        } => json!({"network_id": network_id, "position_zone": position_zone}),
        TxBody::Comm {
            receivers,
            message_hash,
            tf_sent,
            ..
        } => json!({"receivers": names.all(receivers), "message_hash": message_hash, "tf_sent": tf_sent}),
        TxBody::Reward {
            from,
            to,
            amount,
            reason,
        } => json!({"from": names.name(from), "to": names.name(to), "amount_millitrust": amount, "reason": reason}),
        TxBody::Arbitration {
            intersection_id,
            ordering,
            proposer,
            agreements,
        } => json!({
            "intersection": intersection_id,
            "ordering": names.all(ordering),
            "proposer": names.name(proposer),
            "agreed_by": names.all(agreements.iter().map(|(id, _)| id)),
        }),
    };
    json!({
        "tx_id": tx.tx_id(),
        "kind": tx.kind().name(),
        "author": names.name(&tx.author),
        "tf": tx.tf,
        "body": body,
    })
}

pub fn comm_table_named(chain: &Chain, names: &Names) -> BTreeMap<String, Vec<String>> {
    chain
        .comm_table()
        .iter()
        .map(|(id, peers)| {
            let mut named = names.all(peers);
            named.sort();
            (names.name(id), named)
        })
        .collect()
}

impl RunReport {
    pub fn build(chain: &Chain, trace: &[u8]) -> Result<Self, ReportError> {
        let records = decode_trace(trace)?;
        let names = Names::from_trace(&records)?;
        let state = chain.state();

        let scenario = records
            .iter()
            .find(|r| r.dir == "config" && r.kind == "scenario")
            .and_then(|r| r.detail["name"].as_str())
            .unwrap_or_default()
            .to_string();

        let blocks = chain
            .blocks()
            .iter()
            .map(|b| BlockSummary {
                height: b.height,
                hash: b.block_hash,
                timestamp_ms: b.timestamp.0,
                tx_count: b.txs().len(),
            })
            .collect();

        let mut sessions = Vec::new();
        for r in records.iter().filter(|r| r.dir == "config" && r.kind == "intersection") {
            let iid = r.detail["id"].as_str().unwrap_or_default().to_string();
            let participants: Vec<String> = r.detail["participants"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .unwrap_or_default();
            sessions.push(session_summary(chain, &names, &records, iid, participants));
        }

        Ok(RunReport {
            scenario,
            chain: ChainSummary {
                valid: chain.validate().ok,
                height: chain.tip().height,
                blocks,
            },
            supply: Supply {
                vehicles: state.registrations.len(),
                endowment_millitrust: chain.params().endowment,
                total_millitrust: state.total_supply(),
            },
            balances: state.balances.iter().map(|(id, b)| (names.name(id), *b)).collect(),
            comm_table: comm_table_named(chain, &names),
            sessions,
            trace_digest: sha256(&[trace]),
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }
}

fn session_summary(
    chain: &Chain,
    names: &Names,
    records: &[TraceRecord],
    iid: String,
    participants: Vec<String>,
) -> SessionSummary {
    let events: Vec<&TraceRecord> = records
        .iter()
        .filter(|r| r.dir == "session" && r.detail["intersection"].as_str() == Some(&iid))
        .collect();
    let rounds = events
        .iter()
        .filter_map(|r| r.detail["round"].as_u64())
        .max()
        .unwrap_or(0);

    let arbitration = chain.transactions().find_map(|(_, tx)| match &tx.body {
        TxBody::Arbitration {
            intersection_id,
            ordering,
            proposer,
            ..
        } if *intersection_id == iid => Some((tx.tx_id(), ordering.clone(), *proposer)),
        _ => None,
    });
    let reason = reward_reason(&iid);
    let rewards = chain
        .transactions()
        .filter_map(|(_, tx)| match &tx.body {
            TxBody::Reward {
                from,
                to,
                amount,
                reason: r,
            } if *r == reason => Some(RewardSummary {
                from: names.name(from),
                to: names.name(to),
                amount_millitrust: *amount,
                tx_id: tx.tx_id(),
            }),
            _ => None,
        })
        .collect();

    let aborted = events.iter().any(|r| r.kind == "aborted");
    let status = match (&arbitration, aborted) {
        (Some(_), _) => SessionStatus::Committed,
        (None, true) => SessionStatus::Aborted,
        (None, false) => SessionStatus::Unresolved,
    };
    SessionSummary {
        intersection: iid,
        participants,
        status,
        ordering: arbitration.as_ref().map(|(_, o, _)| names.all(o)),
        proposer: arbitration.as_ref().map(|(_, _, p)| names.name(p)),
        rounds,
        arbitration_tx: arbitration.map(|(id, _, _)| id),
        rewards,
    }
}

/// Checks that every participant that reported a local commit computed the
/// same ordering that reached the chain.
pub fn agreement_violations(report: &RunReport, trace: &[TraceRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for s in report.sessions.iter().filter(|s| s.status == SessionStatus::Committed) {
        let committed = s.ordering.clone().unwrap_or_default();
        let mut reported = BTreeSet::new();
        for r in trace
            .iter()
            .filter(|r| r.dir == "session" && r.kind == "committed" && r.detail["intersection"] == s.intersection.as_str())
        {
            reported.insert(r.vehicle.clone());
            let local: Vec<String> = serde_json::from_value(r.detail["local"].clone()).unwrap_or_default();
            if local != committed {
                out.push(format!("{}: {} computed {:?}, chain has {:?}", s.intersection, r.vehicle, local, committed));
            }
        }
        if reported.is_empty() {
            out.push(format!("{}: committed without any participant reporting it", s.intersection));
        }
    }
    out
}
