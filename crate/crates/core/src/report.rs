//! Flow summaries and invariant checks over an audit export.
//!
//! Everything here works from exported text alone (plus, optionally, the
//! ledger export of the same run), so a report can be produced for any
//! audit file long after the run that wrote it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::accounts::{AccountKind, Ledger};
use crate::store::{check_flow_grammar, AuditKind, AuditRecord, AuditStore};
use crate::wire::ActorAddr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("malformed audit: {0}")]
    MalformedAudit(String),
    #[error("malformed ledger at line {line}: {reason}")]
    MalformedLedger { line: usize, reason: String },
}

/// One account's balance before and after a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRow {
    pub client: ActorAddr,
    pub kind: AccountKind,
    pub initial: i64,
    pub final_balance: i64,
}

pub fn ledger_rows(initial: &Ledger, final_ledger: &Ledger) -> Vec<LedgerRow> {
    initial
        .accounts()
        .map(|a| LedgerRow {
            client: a.client,
            kind: a.kind,
            initial: a.balance,
            final_balance: final_ledger.get(a.client).map_or(a.balance, |f| f.balance),
        })
        .collect()
}

pub fn export_ledger(rows: &[LedgerRow]) -> String {
    let mut out = String::from("client\tkind\tinitial\tfinal\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.client, r.kind.name(), r.initial, r.final_balance);
    }
    out
}

pub fn parse_ledger(text: &str) -> Result<Vec<LedgerRow>, ReportError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let err = |reason: &str| ReportError::MalformedLedger { line: i + 1, reason: reason.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        let [client, kind, initial, final_balance] = f[..] else {
            return Err(err("expected 4 fields"));
        };
        rows.push(LedgerRow {
            client: client.parse().map_err(|_| err("bad client"))?,
            kind: match kind {
                "prepaid" => AccountKind::Prepaid,
                "postpaid" => AccountKind::Postpaid,
                _ => return Err(err("bad account kind")),
            },
            initial: initial.parse().map_err(|_| err("bad initial balance"))?,
            final_balance: final_balance.parse().map_err(|_| err("bad final balance"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Granted { paid: u64 },
    Denied { reason: String },
    /// Authenticated but no payment record.
    Unpaid,
    /// No authentication record at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSummary {
    pub correlation_id: u64,
    pub client: Option<String>,
    pub verdict: Verdict,
    pub service_uses: usize,
    pub errors: Vec<String>,
}

impl FlowSummary {
    pub fn describe(&self) -> String {
        let mut s = match &self.verdict {
            Verdict::Granted { paid } => format!("GRANTED, paid {paid}, {} service uses", self.service_uses),
            Verdict::Denied { reason } => format!("DENIED {reason}"),
            Verdict::Unpaid => "AUTHENTICATED, no payment".to_string(),
            Verdict::None => "NO DECISION".to_string(),
        };
        if !self.errors.is_empty() {
            let _ = write!(s, "; errors: {}", run_length(&self.errors));
        }
        s
    }
}

/// "A B B B" -> "A, B x3"
fn run_length(items: &[String]) -> String {
    let mut parts: Vec<(String, usize)> = Vec::new();
    for item in items {
        match parts.last_mut() {
            Some((last, n)) if last == item => *n += 1,
            _ => parts.push((item.clone(), 1)),
        }
    }
    parts
        .iter()
        .map(|(item, n)| if *n == 1 { item.clone() } else { format!("{item} x{n}") })
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    /// Empty when the check passed.
    pub violations: Vec<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub flows: Vec<FlowSummary>,
    pub denials: BTreeMap<String, usize>,
    pub ledger: Vec<LedgerRow>,
    pub checks: Vec<Check>,
}

pub const CHECK_NAMES: [&str; 9] = [
    "flow-grammar",
    "single-verdict",
    "nonce-single-use",
    "payment-gated-access",
    "seq-gapless",
    "time-monotone",
    "prohibition-absorbing",
    "prepaid-non-negative",
    "balance-conservation",
];

impl Report {
    pub fn from_export(audit: &str, ledger: Option<&str>) -> Result<Report, ReportError> {
        let records = AuditStore::parse_export(audit).map_err(|e| ReportError::MalformedAudit(e.to_string()))?;
        let ledger = ledger.map(parse_ledger).transpose()?;
        Ok(Report::analyze(&records, ledger.as_deref()))
    }

    pub fn analyze(records: &[AuditRecord], ledger: Option<&[LedgerRow]>) -> Report {
        let mut flows: BTreeMap<u64, Vec<&AuditRecord>> = BTreeMap::new();
        for r in records {
            flows.entry(r.correlation_id).or_default().push(r);
        }
        let summaries: Vec<FlowSummary> = flows.iter().map(|(&corr, recs)| summarize(corr, recs)).collect();
        let mut denials = BTreeMap::new();
        for f in &summaries {
            if let Verdict::Denied { reason } = &f.verdict {
                *denials.entry(reason.clone()).or_insert(0) += 1;
            }
        }
        let checks = vec![
            check_grammar(&flows),
            check_single_verdict(&flows),
            check_nonce_single_use(records),
            check_payment_gate(&flows),
            check_seq(records),
            check_time(records),
            check_prohibition(records),
            check_prepaid_non_negative(records),
            check_conservation(records, ledger),
        ];
        Report { flows: summaries, denials, ledger: ledger.map(<[_]>::to_vec).unwrap_or_default(), checks }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render_text(&self, header: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "\nflows: {}", self.flows.len());
        for f in &self.flows {
            let client = f.client.as_deref().unwrap_or("?");
            let _ = writeln!(out, "  {:016x} {client}: {}", f.correlation_id, f.describe());
        }
        let _ = writeln!(out, "\ndenials:");
        for (reason, n) in &self.denials {
            let _ = writeln!(out, "  {reason}: {n}");
        }
        if !self.ledger.is_empty() {
            let _ = writeln!(out, "\nledger:");
            for r in &self.ledger {
                let _ = writeln!(
                    out,
                    "  {} {}: {} -> {} ({:+})",
                    r.client,
                    r.kind.name(),
                    r.initial,
                    r.final_balance,
                    r.final_balance - r.initial
                );
            }
        }
        let _ = writeln!(out, "\ninvariants:");
        for c in &self.checks {
            let _ = writeln!(out, "  {} {}", if c.passed() { "PASS" } else { "FAIL" }, c.name);
            for v in &c.violations {
                let _ = writeln!(out, "       {v}");
            }
        }
        out
    }

    /// Tab-separated, one fact per line.
    pub fn render_machine(&self, header: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            let _ = writeln!(out, "meta\t{k}\t{v}");
        }
        for f in &self.flows {
            let (verdict, amount, reason) = match &f.verdict {
                Verdict::Granted { paid } => ("granted", paid.to_string(), "-".to_string()),
                Verdict::Denied { reason } => ("denied", "-".to_string(), reason.clone()),
                Verdict::Unpaid => ("unpaid", "-".to_string(), "-".to_string()),
                Verdict::None => ("none", "-".to_string(), "-".to_string()),
            };
            let errors = if f.errors.is_empty() { "-".to_string() } else { f.errors.join(",") };
            let _ = writeln!(
                out,
                "flow\t{:016x}\t{}\t{verdict}\t{amount}\t{reason}\t{}\t{errors}",
                f.correlation_id,
                f.client.as_deref().unwrap_or("-"),
                f.service_uses
            );
        }
        for (reason, n) in &self.denials {
            let _ = writeln!(out, "denial\t{reason}\t{n}");
        }
        for r in &self.ledger {
            let _ = writeln!(out, "ledger\t{}\t{}\t{}\t{}", r.client, r.kind.name(), r.initial, r.final_balance);
        }
        for c in &self.checks {
            let _ = writeln!(out, "check\t{}\t{}\t{}", c.name, if c.passed() { "pass" } else { "fail" }, c.violations.len());
        }
        out
    }
}

fn summarize(corr: u64, recs: &[&AuditRecord]) -> FlowSummary {
    let client = recs.iter().find_map(|r| r.get("client")).map(str::to_string);
    let auth = recs.iter().find(|r| r.kind == AuditKind::AuthResult);
    let payment = recs.iter().find(|r| r.kind == AuditKind::PaymentResult);
    let verdict = match (auth, payment) {
        (_, Some(p)) if p.get("outcome") == Some("paid") => {
            Verdict::Granted { paid: p.get("amount").and_then(|a| a.parse().ok()).unwrap_or(0) }
        }
        (_, Some(p)) => Verdict::Denied { reason: p.get("reason").unwrap_or("?").to_string() },
        (Some(a), None) if a.get("outcome") == Some("denied") => {
            Verdict::Denied { reason: a.get("reason").unwrap_or("?").to_string() }
        }
        (Some(_), None) => Verdict::Unpaid,
        (None, None) => Verdict::None,
    };
    FlowSummary {
        correlation_id: corr,
        client,
        verdict,
        service_uses: recs.iter().filter(|r| r.kind == AuditKind::ServiceUse).count(),
        errors: recs
            .iter()
            .filter(|r| r.kind == AuditKind::ServiceError)
            .map(|r| r.get("reason").unwrap_or("?").to_string())
            .collect(),
    }
}

fn check(name: &'static str, violations: Vec<String>) -> Check {
    Check { name, violations }
}

fn check_grammar(flows: &BTreeMap<u64, Vec<&AuditRecord>>) -> Check {
    let mut v = Vec::new();
    for (corr, recs) in flows {
        let kinds: Vec<AuditKind> = recs.iter().map(|r| r.kind).collect();
        if let Err(i) = check_flow_grammar(&kinds) {
            v.push(format!("flow {corr:016x}: unexpected {} at seq {}", recs[i].kind, recs[i].seq));
        }
    }
    check("flow-grammar", v)
}

fn check_single_verdict(flows: &BTreeMap<u64, Vec<&AuditRecord>>) -> Check {
    let mut v = Vec::new();
    for (corr, recs) in flows {
        for kind in [AuditKind::AuthResult, AuditKind::PaymentResult, AuditKind::ServiceGrant] {
            let n = recs.iter().filter(|r| r.kind == kind).count();
            if n > 1 {
                v.push(format!("flow {corr:016x}: {n} {kind} records"));
            }
        }
    }
    check("single-verdict", v)
}

/// A token nonce is granted at most once, and its key opens at most one session.
fn check_nonce_single_use(records: &[AuditRecord]) -> Check {
    let mut v = Vec::new();
    for (kind, outcome) in [(AuditKind::AuthResult, Some("granted")), (AuditKind::ServiceGrant, None)] {
        let mut seen = BTreeSet::new();
        for r in records.iter().filter(|r| r.kind == kind && (outcome.is_none() || r.get("outcome") == outcome)) {
            let nonce = r.get("nonce").unwrap_or("?");
            if !seen.insert(nonce) {
                v.push(format!("nonce {nonce} in a second {kind} at seq {}", r.seq));
            }
        }
    }
    check("nonce-single-use", v)
}

/// Service is only granted to flows that paid, for the nonce that was paid for.
fn check_payment_gate(flows: &BTreeMap<u64, Vec<&AuditRecord>>) -> Check {
    let mut v = Vec::new();
    for (corr, recs) in flows {
        let paid = recs.iter().any(|r| r.kind == AuditKind::PaymentResult && r.get("outcome") == Some("paid"));
        let auth_nonce = recs
            .iter()
            .find(|r| r.kind == AuditKind::AuthResult && r.get("outcome") == Some("granted"))
            .and_then(|r| r.get("nonce"));
        let granted = recs.iter().find(|r| r.kind == AuditKind::ServiceGrant);
        if let Some(g) = granted {
            if !paid {
                v.push(format!("flow {corr:016x}: ServiceGrant at seq {} without payment", g.seq));
            } else if g.get("nonce") != auth_nonce {
                v.push(format!("flow {corr:016x}: ServiceGrant nonce differs from the authenticated one"));
            }
        }
        if granted.is_none() {
            if let Some(u) = recs.iter().find(|r| r.kind == AuditKind::ServiceUse) {
                v.push(format!("flow {corr:016x}: ServiceUse at seq {} without a grant", u.seq));
            }
        }
    }
    check("payment-gated-access", v)
}

fn check_seq(records: &[AuditRecord]) -> Check {
    let v = records
        .iter()
        .enumerate()
        .filter(|(i, r)| r.seq != *i as u64)
        .map(|(i, r)| format!("record {i} has seq {}", r.seq))
        .take(10)
        .collect();
    check("seq-gapless", v)
}

fn check_time(records: &[AuditRecord]) -> Check {
    let v = records
        .windows(2)
        .filter(|w| w[1].sim_time < w[0].sim_time)
        .map(|w| format!("seq {} at tick {} precedes tick {}", w[1].seq, w[1].sim_time, w[0].sim_time))
        .collect();
    check("time-monotone", v)
}

/// After a service fault, the client never gets service again.
fn check_prohibition(records: &[AuditRecord]) -> Check {
    let mut prohibited: BTreeSet<&str> = BTreeSet::new();
    let mut v = Vec::new();
    for r in records {
        let Some(client) = r.get("client") else { continue };
        match r.kind {
            AuditKind::ServiceError if r.get("reason") == Some("ServiceFault") => {
                prohibited.insert(client);
            }
            AuditKind::ServiceGrant | AuditKind::ServiceUse if prohibited.contains(client) => {
                v.push(format!("{} for prohibited {client} at seq {}", r.kind, r.seq));
            }
            _ => {}
        }
    }
    check("prohibition-absorbing", v)
}

fn payments(records: &[AuditRecord]) -> impl Iterator<Item = &AuditRecord> {
    records.iter().filter(|r| r.kind == AuditKind::PaymentResult)
}

fn check_prepaid_non_negative(records: &[AuditRecord]) -> Check {
    let v = payments(records)
        .filter(|r| r.get("account") == Some("prepaid"))
        .filter(|r| r.get("balance").and_then(|b| b.parse::<i64>().ok()).is_none_or(|b| b < 0))
        .map(|r| format!("seq {}: prepaid balance {}", r.seq, r.get("balance").unwrap_or("?")))
        .collect();
    check("prepaid-non-negative", v)
}

/// Balances move by exactly the amounts paid: successive payment records of
/// one account agree with each other, and with the ledger export if given.
fn check_conservation(records: &[AuditRecord], ledger: Option<&[LedgerRow]>) -> Check {
    let mut v = Vec::new();
    // client -> (balance after the last payment record, total paid)
    let mut seen: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
    for r in payments(records) {
        let (Some(client), Some(balance)) = (r.get("client"), r.get("balance").and_then(|b| b.parse::<i64>().ok()))
        else {
            continue;
        };
        let paid: i64 = if r.get("outcome") == Some("paid") {
            r.get("amount").and_then(|a| a.parse().ok()).unwrap_or(0)
        } else {
            0
        };
        let sign = if r.get("account") == Some("postpaid") { 1 } else { -1 };
        if let Some(&(before, _)) = seen.get(client) {
            if balance != before + sign * paid {
                v.push(format!("seq {}: {client} balance {before} -> {balance} after paying {paid}", r.seq));
            }
        }
        let total = seen.get(client).map_or(0, |e| e.1) + paid;
        seen.insert(client, (balance, total));
    }
    for row in ledger.unwrap_or_default() {
        let client = row.client.to_string();
        let total = seen.get(client.as_str()).map_or(0, |e| e.1);
        let expected = match row.kind {
            AccountKind::Prepaid => row.initial - total,
            AccountKind::Postpaid => row.initial + total,
        };
        if row.final_balance != expected {
            v.push(format!(
                "{client}: initial {} with {total} paid should end at {expected}, ledger says {}",
                row.initial, row.final_balance
            ));
        }
    }
    check("balance-conservation", v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAPPY: &str = "\
0\t14\tprovider\t0000000000000001\tAuthResult\tclient=client:0,nonce=aa,outcome=granted
1\t14\tprovider\t0000000000000001\tPaymentResult\taccount=prepaid,amount=250,balance=750,client=client:0,outcome=paid,price=250
2\t103\tsp:0\t0000000000000001\tServiceGrant\taco=aco:0,client=client:0,nonce=aa,service_type=7
3\t204\tsp:0\t0000000000000001\tServiceUse\tbytes=5,client=client:0,use_seq=0
4\t225\tsp:0\t0000000000000001\tServiceUse\tbytes=5,client=client:0,use_seq=1
5\t243\tsp:0\t0000000000000001\tServiceUse\tbytes=5,client=client:0,use_seq=2
";
    const LEDGER: &str = "client\tkind\tinitial\tfinal\nclient:0\tprepaid\t1000\t750\n";

    #[test]
    fn happy_summary() {
        let r = Report::from_export(HAPPY, Some(LEDGER)).unwrap();
        assert_eq!(r.flows.len(), 1);
        assert_eq!(r.flows[0].describe(), "GRANTED, paid 250, 3 service uses");
        assert!(r.all_passed(), "{}", r.render_text(&[]));
        assert!(r.render_text(&[]).contains("client:0 prepaid: 1000 -> 750 (-250)"));
    }

    #[test]
    fn repeated_errors_are_counted() {
        let f = FlowSummary {
            correlation_id: 1,
            client: None,
            verdict: Verdict::Granted { paid: 250 },
            service_uses: 0,
            errors: ["ServiceFault", "ClientProhibited", "ClientProhibited"].map(String::from).to_vec(),
        };
        assert_eq!(f.describe(), "GRANTED, paid 250, 0 service uses; errors: ServiceFault, ClientProhibited x2");
    }

    #[test]
    fn empty_audit() {
        let r = Report::from_export("", None).unwrap();
        assert!(r.flows.is_empty() && r.denials.is_empty());
        assert!(r.all_passed());
    }

    #[test]
    fn grammar_violation_is_named() {
        // hand-edited: the grant moved before the payment
        let edited = HAPPY.replace("\tPaymentResult\t", "\tTMP\t").replace("\tServiceGrant\t", "\tPaymentResult\t");
        let edited = edited.replace("\tTMP\t", "\tServiceGrant\t");
        let r = Report::from_export(&edited, None).unwrap();
        assert!(!r.check("flow-grammar").unwrap().passed());
        assert!(r.render_text(&[]).contains("FAIL flow-grammar"));
    }

    #[test]
    fn ledger_mismatch_fails_conservation() {
        let r = Report::from_export(HAPPY, Some("client\tkind\tinitial\tfinal\nclient:0\tprepaid\t1000\t700\n")).unwrap();
        assert!(!r.check("balance-conservation").unwrap().passed());
    }

    #[test]
    fn second_grant_for_one_nonce() {
        let mut text = HAPPY.to_string();
        text.push_str("6\t300\tsp:0\t0000000000000002\tServiceGrant\taco=aco:0,client=client:0,nonce=aa,service_type=7\n");
        let r = Report::from_export(&text, None).unwrap();
        assert!(!r.check("nonce-single-use").unwrap().passed());
        assert!(!r.check("payment-gated-access").unwrap().passed());
        assert!(!r.check("flow-grammar").unwrap().passed());
    }

    #[test]
    fn malformed() {
        assert!(matches!(Report::from_export("0\t1\tprovider\n", None), Err(ReportError::MalformedAudit(_))));
    }

    #[test]
    fn check_names_are_stable() {
        let r = Report::from_export("", None).unwrap();
        let names: Vec<_> = r.checks.iter().map(|c| c.name).collect();
        assert_eq!(names, CHECK_NAMES);
    }
}
