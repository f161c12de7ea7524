//! Append-only audit store shared by the access provider, the service
//! provider and the clients.
//!
//! Export format, one record per line, tab-separated:
//!
//! ```text
//! seq  sim_time  actor  correlation_id(16 hex)  kind  detail
//! ```
//!
//! `detail` is `key=value` pairs sorted by key and joined with `,`, or `-`
//! when empty. Keys and values never contain `=`, `,`, tabs or newlines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::wire::ActorAddr;
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuditKind {
    AuthResult,
    PaymentResult,
    ServiceGrant,
    ServiceUse,
    ServiceError,
}

impl AuditKind {
    pub const ALL: [AuditKind; 5] = [
        AuditKind::AuthResult,
        AuditKind::PaymentResult,
        AuditKind::ServiceGrant,
        AuditKind::ServiceUse,
        AuditKind::ServiceError,
    ];
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for AuditKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        AuditKind::ALL.into_iter().find(|k| k.to_string() == s).ok_or(())
    }
}

pub type Detail = BTreeMap<String, String>;

/// A record before the store assigns its sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditDraft {
    pub sim_time: Tick,
    pub actor: ActorAddr,
    pub correlation_id: u64,
    pub kind: AuditKind,
    pub detail: Detail,
}

impl AuditDraft {
    pub fn new(actor: ActorAddr, correlation_id: u64, kind: AuditKind) -> Self {
        AuditDraft { sim_time: 0, actor, correlation_id, kind, detail: Detail::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.detail.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub seq: u64,
    pub sim_time: Tick,
    pub actor: ActorAddr,
    pub correlation_id: u64,
    pub kind: AuditKind,
    pub detail: Detail,
}

impl AuditRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.get(key).map(String::as_str)
    }

    pub fn to_line(&self) -> String {
        let detail = if self.detail.is_empty() {
            "-".to_string()
        } else {
            self.detail.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
        };
        format!(
            "{}\t{}\t{}\t{:016x}\t{}\t{}",
            self.seq, self.sim_time, self.actor, self.correlation_id, self.kind, detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("record at tick {given} precedes last stored tick {last}")]
    TimeRegression { last: Tick, given: Tick },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditStore {
    records: Vec<AuditRecord>,
}

impl AuditStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, draft: AuditDraft) -> Result<u64, StoreError> {
        if let Some(last) = self.records.last() {
            if draft.sim_time < last.sim_time {
                return Err(StoreError::TimeRegression { last: last.sim_time, given: draft.sim_time });
            }
        }
        let seq = self.records.len() as u64;
        self.records.push(AuditRecord {
            seq,
            sim_time: draft.sim_time,
            actor: draft.actor,
            correlation_id: draft.correlation_id,
            kind: draft.kind,
            detail: draft.detail,
        });
        Ok(seq)
    }

    pub fn query(&self, correlation_id: u64) -> Vec<&AuditRecord> {
        self.records.iter().filter(|r| r.correlation_id == correlation_id).collect()
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    /// Parses an export. Sequence and time ordering are left to the
    /// invariant checks so that damaged logs can still be reported on.
    pub fn parse_export(text: &str) -> Result<Vec<AuditRecord>, StoreError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| parse_line(l).map_err(|reason| StoreError::Malformed { line: i + 1, reason }))
            .collect()
    }
}

fn parse_line(line: &str) -> Result<AuditRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [seq, time, actor, corr, kind, detail] = fields[..] else {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    };
    let mut map = Detail::new();
    if detail != "-" {
        for pair in detail.split(',') {
            let (k, v) = pair.split_once('=').ok_or_else(|| format!("bad detail pair {pair:?}"))?;
            map.insert(k.to_string(), v.to_string());
        }
    }
    Ok(AuditRecord {
        seq: seq.parse().map_err(|_| format!("bad seq {seq:?}"))?,
        sim_time: time.parse().map_err(|_| format!("bad sim_time {time:?}"))?,
        actor: actor.parse().map_err(|e| format!("{e}"))?,
        correlation_id: u64::from_str_radix(corr, 16).map_err(|_| format!("bad correlation id {corr:?}"))?,
        kind: kind.parse().map_err(|_| format!("unknown record kind {kind:?}"))?,
        detail: map,
    })
}

/// Checks one flow's record kinds against
/// `AuthResult (PaymentResult (ServiceGrant ServiceUse*)? ServiceError*)?`.
///
/// Returns the index of the first offending record.
pub fn check_flow_grammar(kinds: &[AuditKind]) -> Result<(), usize> {
    #[derive(Clone, Copy)]
    enum State {
        Start,
        Authed,
        Paid,
        Granted,
        Erroring,
    }
    let mut state = State::Start;
    for (i, &kind) in kinds.iter().enumerate() {
        state = match (state, kind) {
            (State::Start, AuditKind::AuthResult) => State::Authed,
            (State::Authed, AuditKind::PaymentResult) => State::Paid,
            (State::Paid, AuditKind::ServiceGrant) => State::Granted,
            (State::Granted, AuditKind::ServiceUse) => State::Granted,
            (State::Paid | State::Granted | State::Erroring, AuditKind::ServiceError) => State::Erroring,
            _ => return Err(i),
        };
    }
    if kinds.is_empty() {
        return Err(0);
    }
    Ok(())
}
