//! The five protocol state machines.
//!
//! Every actor is driven through [`Actor::handle`]: given the current tick,
//! one input and a random source, it mutates its own state and returns the
//! envelopes to send, the audit records to append and an optional timer.
//! Nothing else is touched, so replaying the same inputs with the same
//! random draws reproduces the same outputs.

mod aco;
mod client;
mod provider;
mod service;
mod telecom;

use rand::RngCore;

pub use self::aco::AcoState;
pub use self::client::{ClientState, FailReason, Phase, RetryPolicy, TimeoutAction};
pub use self::provider::{AuthVerdict, ProviderState};
pub use self::service::ServiceProviderState;
pub use self::telecom::TelecomState;
use crate::payload::{Nonce, Payload};
use crate::store::AuditDraft;
use crate::wire::{ActorAddr, Envelope};
use crate::Tick;

/// Scripted client behaviour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Intent {
    RequestAccess { aco: ActorAddr, service_type: u16 },
    UseService,
    EndSession,
    /// Re-presents the last answered challenge under a fresh correlation id.
    ReplayToken,
    /// Re-presents the access key of the last ended session.
    ReplayKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Deliver(Envelope),
    Intent(Intent),
    Timer { generation: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerRequest {
    pub due_at: Tick,
    pub generation: u64,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Effects {
    pub envelopes: Vec<Envelope>,
    pub audit: Vec<AuditDraft>,
    pub timer: Option<TimerRequest>,
}

impl Effects {
    fn send(&mut self, env: Envelope) {
        self.envelopes.push(env);
    }

    fn record(&mut self, draft: AuditDraft) {
        self.audit.push(draft);
    }
}

pub(crate) fn envelope(
    src: ActorAddr,
    dst: ActorAddr,
    correlation_id: u64,
    now: Tick,
    payload: &Payload,
) -> Envelope {
    Envelope {
        kind: payload.kind(),
        correlation_id,
        src,
        dst,
        sent_at: now,
        payload: payload.to_bytes(),
    }
}

/// Re-addresses an envelope without touching its payload.
pub(crate) fn relay(env: &Envelope, src: ActorAddr, dst: ActorAddr, now: Tick) -> Envelope {
    Envelope { src, dst, sent_at: now, ..env.clone() }
}

pub(crate) fn random_nonce(rng: &mut dyn RngCore) -> Nonce {
    let mut n = [0u8; 16];
    rng.fill_bytes(&mut n);
    n
}

#[derive(Debug, Clone)]
pub enum Actor {
    Client(ClientState),
    Aco(AcoState),
    Telecom(TelecomState),
    Provider(ProviderState),
    Service(ServiceProviderState),
}

impl Actor {
    pub fn addr(&self) -> ActorAddr {
        match self {
            Actor::Client(s) => s.addr(),
            Actor::Aco(s) => s.addr(),
            Actor::Telecom(_) => ActorAddr::TELECOM,
            Actor::Provider(_) => ActorAddr::ACCESS_PROVIDER,
            Actor::Service(s) => s.addr(),
        }
    }

    pub fn handle(&mut self, now: Tick, input: Input, rng: &mut dyn RngCore) -> Effects {
        match (self, input) {
            (Actor::Client(s), input) => s.step(now, input, rng),
            (Actor::Aco(s), Input::Deliver(env)) => s.step(now, &env, rng),
            (Actor::Telecom(s), Input::Deliver(env)) => s.step(now, &env),
            (Actor::Provider(s), Input::Deliver(env)) => s.step(now, &env, rng),
            (Actor::Service(s), Input::Deliver(env)) => s.step(now, &env),
            // only clients take intents and timers
            _ => Effects::default(),
        }
    }
}
