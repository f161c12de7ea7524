//! Scenario files: actors, keys, accounts, links, faults and a client script.
//!
//! Scenarios are TOML. [`Scenario::parse`] checks syntax and types, then
//! [`Scenario::validate`] checks ranges and cross references so that a
//! validated scenario cannot route an envelope over a missing link or charge
//! a missing account.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::accounts::{Account, AccountKind, AccountStatus};
use crate::actors::{Intent, RetryPolicy};
use crate::crypto::{SecretKey, KEY_LEN};
use crate::sim::{Latency, Link};
use crate::wire::ActorAddr;
use crate::Tick;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub max_ticks: Tick,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub keys: Vec<KeySpec>,
    pub access_provider: ProviderSpec,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub acos: Vec<AcoSpec>,
    #[serde(default)]
    pub service_providers: Vec<ServiceProviderSpec>,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub infra_faults: Vec<Window>,
    #[serde(default)]
    pub service_faults: Vec<ServiceFault>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub token_ttl: Tick,
    pub key_ttl: Tick,
    pub retries: u32,
    pub retry_interval: Tick,
}

impl Default for Protocol {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Protocol { token_ttl: 500, key_ttl: 1000, retries: retry.retries, retry_interval: retry.interval }
    }
}

impl Protocol {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { retries: self.retries, interval: self.retry_interval }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySpec {
    pub id: u16,
    /// 32 hex digits.
    pub hex: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    /// Key shared with every service provider; access keys are sealed under it.
    pub service_key: u16,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub index: u16,
    /// Password on record at the access provider.
    pub password: String,
    /// What the handset actually enters, when it differs.
    pub typed_password: Option<String>,
}

impl ClientSpec {
    pub fn entered_password(&self) -> &str {
        self.typed_password.as_deref().unwrap_or(&self.password)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcoSpec {
    pub index: u16,
    pub key: u16,
    pub service_provider: u16,
    #[serde(default)]
    pub tariff: Vec<TariffEntry>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TariffEntry {
    pub service_type: u16,
    pub price: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProviderSpec {
    pub index: u16,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountSpec {
    pub client: u16,
    pub kind: AccountKind,
    #[serde(default)]
    pub balance: i64,
    #[serde(default = "open")]
    pub status: AccountStatus,
    #[serde(default)]
    pub privileges: Vec<Privilege>,
}

fn open() -> AccountStatus {
    AccountStatus::Open
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Privilege {
    pub aco: u16,
    pub service_type: u16,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum LatencySpec {
    Fixed(Tick),
    Range([Tick; 2]),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: ActorAddr,
    pub b: ActorAddr,
    #[serde(default = "one_tick")]
    pub latency: LatencySpec,
    #[serde(default)]
    pub loss: f64,
    #[serde(default)]
    pub dup: f64,
}

fn one_tick() -> LatencySpec {
    LatencySpec::Fixed(1)
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub from: Tick,
    pub to: Tick,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceFault {
    pub client: u16,
    pub use_seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    RequestAccess,
    UseService,
    EndSession,
    ReplayToken,
    ReplayKey,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub at: Tick,
    pub client: u16,
    pub action: Action,
    pub aco: Option<u16>,
    pub service_type: Option<u16>,
    /// Number of times the action fires (default 1).
    pub repeat: Option<u32>,
    /// Ticks between repetitions (default 1).
    pub every: Option<Tick>,
}

/// One validation problem, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{} validation error(s):\n{}", .0.len(), join_lines(.0))]
    Invalid(Vec<Diagnostic>),
}

fn join_lines(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl Scenario {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            ScenarioError::Parse { line, message: e.message().to_string() }
        })?;
        let diags = scenario.validate();
        if diags.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid(diags))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::parse(&text)
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut v = Validator::default();
        self.check_globals(&mut v);
        let keys = self.check_keys(&mut v);
        let actors = self.check_actors(&mut v, &keys);
        self.check_accounts(&mut v, &actors);
        let links = self.check_links(&mut v, &actors);
        self.check_faults(&mut v, &actors);
        self.check_script(&mut v, &actors, &links);
        v.diags
    }

    fn check_globals(&self, v: &mut Validator) {
        if self.name.trim().is_empty() {
            v.err("name", "must not be empty");
        }
        if self.max_ticks == 0 {
            v.err("max_ticks", "must be at least 1");
        }
        let p = &self.protocol;
        for (field, value) in [
            ("protocol.token_ttl", p.token_ttl),
            ("protocol.key_ttl", p.key_ttl),
            ("protocol.retry_interval", p.retry_interval),
        ] {
            if value == 0 {
                v.err(field, "must be at least 1");
            }
        }
    }

    fn check_keys(&self, v: &mut Validator) -> BTreeSet<u16> {
        let mut ids = BTreeSet::new();
        for (i, k) in self.keys.iter().enumerate() {
            if !ids.insert(k.id) {
                v.err(format!("keys[{i}].id"), format!("duplicate key id {}", k.id));
            }
            if parse_key(&k.hex).is_none() {
                v.err(format!("keys[{i}].hex"), format!("expected {} hex digits", 2 * KEY_LEN));
            }
        }
        if !ids.contains(&self.access_provider.service_key) {
            v.err("access_provider.service_key", format!("key {} is not provisioned", self.access_provider.service_key));
        }
        ids
    }

    fn check_actors(&self, v: &mut Validator, keys: &BTreeSet<u16>) -> BTreeSet<ActorAddr> {
        let mut actors: BTreeSet<ActorAddr> = [ActorAddr::TELECOM, ActorAddr::ACCESS_PROVIDER].into();
        for (i, c) in self.clients.iter().enumerate() {
            if !actors.insert(ActorAddr::client(c.index)) {
                v.err(format!("clients[{i}].index"), format!("duplicate client {}", c.index));
            }
            if c.password.is_empty() {
                v.err(format!("clients[{i}].password"), "must not be empty");
            }
            if c.typed_password.as_deref() == Some("") {
                v.err(format!("clients[{i}].typed_password"), "must not be empty");
            }
        }
        for (i, s) in self.service_providers.iter().enumerate() {
            if !actors.insert(ActorAddr::service_provider(s.index)) {
                v.err(format!("service_providers[{i}].index"), format!("duplicate service provider {}", s.index));
            }
        }
        let mut aco_keys = BTreeSet::new();
        for (i, a) in self.acos.iter().enumerate() {
            if !actors.insert(ActorAddr::aco(a.index)) {
                v.err(format!("acos[{i}].index"), format!("duplicate aco {}", a.index));
            }
            if !keys.contains(&a.key) {
                v.err(format!("acos[{i}].key"), format!("key {} is not provisioned", a.key));
            } else if a.key == self.access_provider.service_key || !aco_keys.insert(a.key) {
                v.err(format!("acos[{i}].key"), format!("key {} is already assigned", a.key));
            }
            if !self.service_providers.iter().any(|s| s.index == a.service_provider) {
                v.err(
                    format!("acos[{i}].service_provider"),
                    format!("service provider {} is not declared", a.service_provider),
                );
            }
            let mut types = BTreeSet::new();
            for (j, t) in a.tariff.iter().enumerate() {
                if !types.insert(t.service_type) {
                    v.err(
                        format!("acos[{i}].tariff[{j}].service_type"),
                        format!("duplicate service type {}", t.service_type),
                    );
                }
                if t.price == 0 {
                    v.err(format!("acos[{i}].tariff[{j}].price"), "must be at least 1");
                }
            }
        }
        actors
    }

    fn check_accounts(&self, v: &mut Validator, actors: &BTreeSet<ActorAddr>) {
        let mut seen = BTreeSet::new();
        for (i, a) in self.accounts.iter().enumerate() {
            let client = ActorAddr::client(a.client);
            if !actors.contains(&client) {
                v.err(format!("accounts[{i}].client"), format!("{client} is not declared"));
            }
            if !seen.insert(a.client) {
                v.err(format!("accounts[{i}].client"), format!("{client} already has an account"));
            }
            if a.balance < 0 {
                v.err(format!("accounts[{i}].balance"), "must not be negative");
            }
            for (j, p) in a.privileges.iter().enumerate() {
                let aco = ActorAddr::aco(p.aco);
                if !actors.contains(&aco) {
                    v.err(format!("accounts[{i}].privileges[{j}].aco"), format!("{aco} is not declared"));
                }
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            if !seen.contains(&c.index) {
                v.err(format!("clients[{i}]"), format!("{} has no account", ActorAddr::client(c.index)));
            }
        }
    }

    fn check_links(&self, v: &mut Validator, actors: &BTreeSet<ActorAddr>) -> BTreeSet<(ActorAddr, ActorAddr)> {
        let mut links = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            for (end, addr) in [("a", l.a), ("b", l.b)] {
                if !actors.contains(&addr) {
                    v.err(format!("links[{i}].{end}"), format!("{addr} is not declared"));
                }
            }
            if l.a == l.b {
                v.err(format!("links[{i}]"), "endpoints must differ");
            }
            if !links.insert(link_key(l.a, l.b)) {
                v.err(format!("links[{i}]"), format!("duplicate link {} <-> {}", l.a, l.b));
            }
            for (field, p) in [("loss", l.loss), ("dup", l.dup)] {
                if !(0.0..=1.0).contains(&p) {
                    v.err(format!("links[{i}].{field}"), "probability out of range");
                }
            }
            match l.latency {
                LatencySpec::Fixed(0) => v.err(format!("links[{i}].latency"), "must be at least 1 tick"),
                LatencySpec::Range([lo, hi]) if lo == 0 || lo > hi => {
                    v.err(format!("links[{i}].latency"), "range must satisfy 1 <= min <= max")
                }
                _ => {}
            }
        }
        links
    }

    fn check_faults(&self, v: &mut Validator, actors: &BTreeSet<ActorAddr>) {
        for (i, w) in self.infra_faults.iter().enumerate() {
            if w.from > w.to {
                v.err(format!("infra_faults[{i}]"), "from must not exceed to");
            }
        }
        for (i, f) in self.service_faults.iter().enumerate() {
            let client = ActorAddr::client(f.client);
            if !actors.contains(&client) {
                v.err(format!("service_faults[{i}].client"), format!("{client} is not declared"));
            }
        }
    }

    fn check_script(
        &self,
        v: &mut Validator,
        actors: &BTreeSet<ActorAddr>,
        links: &BTreeSet<(ActorAddr, ActorAddr)>,
    ) {
        let need = |v: &mut Validator, field: &str, a: ActorAddr, b: ActorAddr| {
            if actors.contains(&a) && actors.contains(&b) && !links.contains(&link_key(a, b)) {
                v.err(field.to_string(), format!("requires a link {a} <-> {b}"));
            }
        };
        for (i, s) in self.script.iter().enumerate() {
            let client = ActorAddr::client(s.client);
            if !actors.contains(&client) {
                v.err(format!("script[{i}].client"), format!("{client} is not declared"));
            }
            if s.repeat == Some(0) {
                v.err(format!("script[{i}].repeat"), "must be at least 1");
            }
            if s.every == Some(0) {
                v.err(format!("script[{i}].every"), "must be at least 1");
            }
            if s.action != Action::RequestAccess {
                for (field, set) in [("aco", s.aco.is_some()), ("service_type", s.service_type.is_some())] {
                    if set {
                        v.err(format!("script[{i}].{field}"), "only meaningful for request_access");
                    }
                }
                continue;
            }
            let (Some(aco), Some(_)) = (s.aco, s.service_type) else {
                v.err(format!("script[{i}]"), "request_access needs aco and service_type");
                continue;
            };
            let aco_addr = ActorAddr::aco(aco);
            let Some(spec) = self.acos.iter().find(|a| a.index == aco) else {
                v.err(format!("script[{i}].aco"), format!("{aco_addr} is not declared"));
                continue;
            };
            let field = format!("script[{i}]");
            need(v, &field, client, aco_addr);
            need(v, &field, client, ActorAddr::TELECOM);
            need(v, &field, ActorAddr::TELECOM, ActorAddr::ACCESS_PROVIDER);
            need(v, &field, aco_addr, ActorAddr::service_provider(spec.service_provider));
        }
    }

    /// Key material by id. Only meaningful on a validated scenario.
    pub fn secret_key(&self, id: u16) -> Option<SecretKey> {
        let spec = self.keys.iter().find(|k| k.id == id)?;
        Some(SecretKey::new(id, parse_key(&spec.hex)?))
    }

    pub fn ledger_accounts(&self) -> Vec<Account> {
        self.accounts
            .iter()
            .map(|a| Account {
                client: ActorAddr::client(a.client),
                kind: a.kind,
                balance: a.balance,
                status: a.status,
                privileges: a.privileges.iter().map(|p| (ActorAddr::aco(p.aco), p.service_type)).collect(),
            })
            .collect()
    }

    pub fn sim_links(&self) -> Vec<Link> {
        self.links
            .iter()
            .map(|l| Link {
                a: l.a,
                b: l.b,
                latency: match l.latency {
                    LatencySpec::Fixed(t) => Latency::Fixed(t),
                    LatencySpec::Range([min, max]) => Latency::Uniform { min, max },
                },
                loss: l.loss,
                dup: l.dup,
            })
            .collect()
    }

    pub fn tariff(&self, aco: &AcoSpec) -> BTreeMap<u16, u32> {
        aco.tariff.iter().map(|t| (t.service_type, t.price)).collect()
    }

    /// The script with repetitions expanded, in firing order.
    pub fn timeline(&self) -> Vec<(Tick, ActorAddr, Intent)> {
        let mut out = Vec::new();
        for s in &self.script {
            let intent = match s.action {
                Action::RequestAccess => Intent::RequestAccess {
                    aco: ActorAddr::aco(s.aco.unwrap_or_default()),
                    service_type: s.service_type.unwrap_or_default(),
                },
                Action::UseService => Intent::UseService,
                Action::EndSession => Intent::EndSession,
                Action::ReplayToken => Intent::ReplayToken,
                Action::ReplayKey => Intent::ReplayKey,
            };
            let every = s.every.unwrap_or(1);
            for k in 0..s.repeat.unwrap_or(1) {
                out.push((s.at + Tick::from(k) * every, ActorAddr::client(s.client), intent.clone()));
            }
        }
        // stable: entries at the same tick keep file order
        out.sort_by_key(|(at, _, _)| *at);
        out
    }
}

/// Unordered link identity.
pub(crate) fn link_key(a: ActorAddr, b: ActorAddr) -> (ActorAddr, ActorAddr) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn parse_key(text: &str) -> Option<[u8; KEY_LEN]> {
    let mut out = [0u8; KEY_LEN];
    hex::decode_to_slice(text, &mut out).ok()?;
    Some(out)
}

#[derive(Default)]
struct Validator {
    diags: Vec<Diagnostic>,
}

impl Validator {
    fn err(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.diags.push(Diagnostic { field: field.into(), reason: reason.into() });
    }
}

