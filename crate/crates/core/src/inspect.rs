//! Read-only queries over a persisted chain file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::identity::IvTpId;
use crate::ledger::{validate_file_bytes, Chain, LedgerError};
use crate::report::{comm_table_named, tx_json, Names};
use crate::sim::decode_trace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Balance(String),
    History(String),
    CommTable,
    Validate,
}

#[derive(Debug, Error)]
pub enum InspectError {
    #[error("cannot read {path}: {cause}")]
    Unreadable { path: PathBuf, cause: String },
    #[error("{0}")]
    CorruptChainFile(String),
    #[error("chain invalid at height {height}: {cause}")]
    Invalid { height: u64, cause: String },
    #[error("unknown vehicle {0}")]
    UnknownVehicle(String),
    #[error("vehicle prefix {0} is ambiguous")]
    AmbiguousVehicle(String),
    #[error("trace {path}: {cause}")]
    Trace { path: PathBuf, cause: String },
}

impl InspectError {
    /// Process exit status: 1 for integrity failures, 2 for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            InspectError::CorruptChainFile(_) | InspectError::Invalid { .. } => 1,
            _ => 2,
        }
    }
}

/// Loads aliases from `trace`, or from a `trace.jsonl` next to the chain file
/// when no trace is given and one exists.
pub fn load_names(chain_path: &Path, trace: Option<&Path>) -> Result<Names, InspectError> {
    let sibling = chain_path.with_file_name("trace.jsonl");
    let path = match trace {
        Some(p) => p.to_path_buf(),
        None if sibling.is_file() => sibling,
        None => return Ok(Names::default()),
    };
    let err = |cause: String| InspectError::Trace {
        path: path.clone(),
        cause,
    };
    let bytes = std::fs::read(&path).map_err(|e| err(e.to_string()))?;
    let records = decode_trace(&bytes).map_err(|e| err(e.to_string()))?;
    Names::from_trace(&records).map_err(|e| err(e.to_string()))
}

/// Accepts an alias known from the trace, a full hex id, or a unique hex
/// prefix of a registered id.
pub fn resolve_vehicle(chain: &Chain, names: &Names, who: &str) -> Result<IvTpId, InspectError> {
    if let Some(id) = names.lookup(who) {
        return Ok(id);
    }
    let needle = who.to_ascii_lowercase();
    if needle.is_empty() || !needle.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(InspectError::UnknownVehicle(who.into()));
    }
    let mut hits = chain
        .state()
        .registrations
        .keys()
        .filter(|id| id.to_hex().starts_with(&needle));
    match (hits.next(), hits.next()) {
        (Some(id), None) => Ok(*id),
        (Some(_), Some(_)) => Err(InspectError::AmbiguousVehicle(who.into())),
        (None, _) => Err(InspectError::UnknownVehicle(who.into())),
    }
}

fn read_chain(path: &Path) -> Result<Vec<u8>, InspectError> {
    std::fs::read(path).map_err(|e| InspectError::Unreadable {
        path: path.to_path_buf(),
        cause: e.to_string(),
    })
}

fn load_chain(bytes: &[u8]) -> Result<Chain, InspectError> {
    let blocks = crate::ledger::decode_file(bytes).map_err(|e| InspectError::CorruptChainFile(e.to_string()))?;
    Chain::from_blocks(blocks).map_err(|e| match e {
        LedgerError::Invalid(f) => InspectError::Invalid {
            height: f.height,
            cause: f.cause,
        },
        other => InspectError::CorruptChainFile(other.to_string()),
    })
}

/// Runs `query` against the chain at `chain_path` and returns the text to print.
pub fn inspect(chain_path: &Path, trace: Option<&Path>, query: &Query) -> Result<String, InspectError> {
    let bytes = read_chain(chain_path)?;
    if *query == Query::Validate {
        let report = validate_file_bytes(&bytes);
        return match report.failure {
            None => Ok(format!("ok: {} blocks\n", report.blocks_checked)),
            Some(f) => Err(InspectError::Invalid {
                height: f.height,
                cause: f.cause,
            }),
        };
    }
    let chain = load_chain(&bytes)?;
    let names = load_names(chain_path, trace)?;
    let mut out = String::new();
    match query {
        Query::Balance(who) => {
            let id = resolve_vehicle(&chain, &names, who)?;
            let balance = chain
                .balance(&id)
                .map_err(|_| InspectError::UnknownVehicle(who.clone()))?;
            writeln!(out, "{} {balance}", names.name(&id)).unwrap();
        }
        Query::History(who) => {
            let id = resolve_vehicle(&chain, &names, who)?;
            let txs = chain
                .history(&id)
                .map_err(|_| InspectError::UnknownVehicle(who.clone()))?;
            for tx in txs {
                let height = chain.state().locations[&tx.tx_id()].height;
                let mut line = tx_json(tx, &names);
                line["height"] = height.into();
                writeln!(out, "{line}").unwrap();
            }
        }
        Query::CommTable => {
            for (id, peers) in comm_table_named(&chain, &names) {
                writeln!(out, "{id}: {}", peers.join(", ")).unwrap();
            }
        }
        Query::Validate => unreachable!("handled above"),
    }
    Ok(out)
}
