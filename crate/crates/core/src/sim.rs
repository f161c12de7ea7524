//! Seeded discrete-event network simulator.
//!
//! Events are popped in `(due_at, seq)` order. Each envelope an actor emits
//! is encoded to its wire frame, carried over the declared link between
//! sender and receiver (which may lose, delay or duplicate it) and decoded
//! again on delivery. Every random draw comes from a stream derived from the
//! master seed and a fixed label, one per link and one per actor, so adding
//! a link or actor never perturbs the others.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::accounts::Ledger;
use crate::actors::{
    AcoState, Actor, ClientState, Effects, Input, Intent, ProviderState, ServiceProviderState, TelecomState,
};
use crate::crypto::md5::md5;
use crate::scenario::{link_key, Scenario};
use crate::store::AuditStore;
use crate::wire::{self, ActorAddr, Envelope, MessageKind};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Latency {
    Fixed(Tick),
    /// Uniform over the inclusive range.
    Uniform { min: Tick, max: Tick },
}

/// A bidirectional channel between two actors.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: ActorAddr,
    pub b: ActorAddr,
    pub latency: Latency,
    pub loss: f64,
    pub dup: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Deliver { to: ActorAddr, frame: Vec<u8> },
    Intent { client: ActorAddr, intent: Intent },
    Timer { client: ActorAddr, generation: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub due_at: Tick,
    pub seq: u64,
    pub action: Action,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due_at, self.seq).cmp(&(other.due_at, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// What happened to one emitted envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fate {
    Lost,
    /// Delivery ticks, two when duplicated.
    Delivered(Vec<Tick>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub sent_at: Tick,
    pub src: ActorAddr,
    pub dst: ActorAddr,
    pub kind: MessageKind,
    pub correlation_id: u64,
    pub payload_digest: [u8; 16],
    pub fate: Fate,
}

impl TranscriptEntry {
    pub fn to_line(&self) -> String {
        let fate = match &self.fate {
            Fate::Lost => "lost".to_string(),
            Fate::Delivered(at) => at.iter().map(|t| format!("@{t}")).collect::<Vec<_>>().join(","),
        };
        format!(
            "{}\t{}\t{}\t{:?}\t{:016x}\t{}\t{}",
            self.sent_at, self.src, self.dst, self.kind, self.correlation_id, hex::encode(self.payload_digest), fate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// The event queue drained.
    Completed,
    /// An event was due after `max_ticks`; results are partial.
    MaxTicksExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no link between {src} and {dst}")]
    UndeclaredRoute { src: ActorAddr, dst: ActorAddr },
    #[error("{0} is not an actor of this scenario")]
    UnknownActor(ActorAddr),
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub seed: u64,
    pub status: RunStatus,
    /// Tick of the last processed event.
    pub end_tick: Tick,
    pub audit: AuditStore,
    pub transcript: Vec<TranscriptEntry>,
    pub clients: Vec<ClientState>,
    pub service_providers: Vec<ServiceProviderState>,
    pub initial_ledger: Ledger,
    pub final_ledger: Ledger,
}

impl Outcome {
    pub fn transcript_export(&self) -> String {
        self.transcript.iter().map(|e| e.to_line() + "\n").collect()
    }

    pub fn client(&self, index: u16) -> Option<&ClientState> {
        self.clients.iter().find(|c| c.addr() == ActorAddr::client(index))
    }
}

/// Derives an independent stream from the master seed and a label.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut a = seed.to_be_bytes().to_vec();
    a.extend_from_slice(label.as_bytes());
    let mut b = label.as_bytes().to_vec();
    b.extend_from_slice(&seed.to_be_bytes());
    let mut key = [0u8; 32];
    key[..16].copy_from_slice(&md5(&a));
    key[16..].copy_from_slice(&md5(&b));
    ChaCha8Rng::from_seed(key)
}

struct Channel {
    link: Link,
    rng: ChaCha8Rng,
}

pub struct Simulator {
    seed: u64,
    max_ticks: Tick,
    now: Tick,
    next_seq: u64,
    queue: BinaryHeap<Reverse<SimEvent>>,
    actors: BTreeMap<ActorAddr, (Actor, ChaCha8Rng)>,
    channels: BTreeMap<(ActorAddr, ActorAddr), Channel>,
    audit: AuditStore,
    transcript: Vec<TranscriptEntry>,
    initial_ledger: Ledger,
}

impl Simulator {
    /// Builds the actors, links and scripted intents of a validated scenario.
    pub fn new(scenario: &Scenario, seed: u64) -> Simulator {
        let protocol = scenario.protocol;
        let service_key = scenario
            .secret_key(scenario.access_provider.service_key)
            .expect("validated scenario provisions the service key");
        let ledger = Ledger::new(scenario.ledger_accounts());

        let mut actors = Vec::new();
        for c in &scenario.clients {
            actors.push(Actor::Client(ClientState::new(c.index, c.entered_password(), protocol.retry_policy())));
        }
        let mut aco_keys = Vec::new();
        for a in &scenario.acos {
            let key = scenario.secret_key(a.key).expect("validated scenario provisions aco keys");
            aco_keys.push((key.clone(), ActorAddr::aco(a.index)));
            actors.push(Actor::Aco(AcoState::new(
                a.index,
                key,
                ActorAddr::service_provider(a.service_provider),
                scenario.tariff(a),
            )));
        }
        let faults: Vec<_> =
            scenario.service_faults.iter().map(|f| (ActorAddr::client(f.client), f.use_seq)).collect();
        for s in &scenario.service_providers {
            actors.push(Actor::Service(ServiceProviderState::new(s.index, service_key.clone(), faults.clone())));
        }
        actors.push(Actor::Telecom(TelecomState::new(
            scenario.infra_faults.iter().map(|w| (w.from, w.to)).collect(),
        )));
        let directory = scenario
            .clients
            .iter()
            .map(|c| (ActorAddr::client(c.index), c.password.clone().into_bytes()))
            .collect();
        actors.push(Actor::Provider(ProviderState::new(
            aco_keys,
            service_key,
            directory,
            ledger.clone(),
            protocol.token_ttl,
            protocol.key_ttl,
        )));

        let mut sim = Simulator {
            seed,
            max_ticks: scenario.max_ticks,
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            actors: actors
                .into_iter()
                .map(|a| (a.addr(), (a.clone(), derive_rng(seed, &format!("actor/{}", a.addr())))))
                .collect(),
            channels: scenario
                .sim_links()
                .into_iter()
                .map(|link| {
                    let (lo, hi) = link_key(link.a, link.b);
                    let rng = derive_rng(seed, &format!("link/{lo}/{hi}"));
                    ((lo, hi), Channel { link, rng })
                })
                .collect(),
            audit: AuditStore::new(),
            transcript: Vec::new(),
            initial_ledger: ledger,
        };
        for (at, client, intent) in scenario.timeline() {
            sim.schedule(at, Action::Intent { client, intent });
        }
        sim
    }

    fn schedule(&mut self, due_at: Tick, action: Action) {
        self.queue.push(Reverse(SimEvent { due_at, seq: self.next_seq, action }));
        self.next_seq += 1;
    }

    /// Runs until the queue drains or the next event is due after `max_ticks`.
    pub fn run(mut self) -> Result<Outcome, SimError> {
        let mut status = RunStatus::Completed;
        while let Some(Reverse(event)) = self.queue.pop() {
            if event.due_at > self.max_ticks {
                status = RunStatus::MaxTicksExceeded;
                break;
            }
            self.now = event.due_at;
            let (addr, input) = match event.action {
                Action::Deliver { to, frame } => {
                    let env = wire::decode(&frame).expect("frames are encoded by the simulator");
                    (to, Input::Deliver(env))
                }
                Action::Intent { client, intent } => (client, Input::Intent(intent)),
                Action::Timer { client, generation } => (client, Input::Timer { generation }),
            };
            let (actor, rng) = self.actors.get_mut(&addr).ok_or(SimError::UnknownActor(addr))?;
            let fx = actor.handle(self.now, input, rng);
            self.apply(addr, fx)?;
        }
        Ok(self.finish(status))
    }

    fn apply(&mut self, addr: ActorAddr, fx: Effects) -> Result<(), SimError> {
        for mut draft in fx.audit {
            draft.sim_time = self.now;
            self.audit.append(draft).expect("simulation time never runs backwards");
        }
        for env in fx.envelopes {
            self.transmit(env)?;
        }
        if let Some(timer) = fx.timer {
            self.schedule(timer.due_at, Action::Timer { client: addr, generation: timer.generation });
        }
        Ok(())
    }

    fn transmit(&mut self, env: Envelope) -> Result<(), SimError> {
        let route = SimError::UndeclaredRoute { src: env.src, dst: env.dst };
        let channel = self.channels.get_mut(&link_key(env.src, env.dst)).ok_or(route)?;
        let frame = wire::encode(&env).expect("actors emit bounded payloads");

        let draw_latency = |rng: &mut ChaCha8Rng| match channel.link.latency {
            Latency::Fixed(t) => t,
            Latency::Uniform { min, max } => rng.gen_range(min..=max),
        };
        let fate = if channel.rng.gen::<f64>() < channel.link.loss {
            Fate::Lost
        } else {
            let mut at = vec![self.now + draw_latency(&mut channel.rng)];
            if channel.rng.gen::<f64>() < channel.link.dup {
                at.push(self.now + draw_latency(&mut channel.rng));
            }
            Fate::Delivered(at)
        };
        self.transcript.push(TranscriptEntry {
            sent_at: self.now,
            src: env.src,
            dst: env.dst,
            kind: env.kind,
            correlation_id: env.correlation_id,
            payload_digest: md5(&env.payload),
            fate: fate.clone(),
        });
        if let Fate::Delivered(at) = fate {
            for due in at {
                self.schedule(due, Action::Deliver { to: env.dst, frame: frame.clone() });
            }
        }
        Ok(())
    }

    fn finish(self, status: RunStatus) -> Outcome {
        let mut clients = Vec::new();
        let mut service_providers = Vec::new();
        let mut final_ledger = self.initial_ledger.clone();
        for (actor, _) in self.actors.into_values() {
            match actor {
                Actor::Client(c) => clients.push(c),
                Actor::Service(s) => service_providers.push(s),
                Actor::Provider(p) => final_ledger = p.ledger().clone(),
                _ => {}
            }
        }
        Outcome {
            seed: self.seed,
            status,
            end_tick: self.now,
            audit: self.audit,
            transcript: self.transcript,
            clients,
            service_providers,
            initial_ledger: self.initial_ledger,
            final_ledger,
        }
    }
}

/// Convenience wrapper: build and run.
pub fn run(scenario: &Scenario, seed: u64) -> Result<Outcome, SimError> {
    Simulator::new(scenario, seed).run()
}

