use super::{relay, Effects};
use crate::payload::Payload;
use crate::wire::{ActorAddr, ActorKind, Envelope};
use crate::Tick;

/// Telecom gateway between clients and the providers. Relays payloads
/// unchanged except for the infrastructure flag on key requests.
#[derive(Debug, Clone, Default)]
pub struct TelecomState {
    /// Inclusive tick ranges during which the infrastructure is faulty.
    infra_faults: Vec<(Tick, Tick)>,
}

impl TelecomState {
    pub fn new(infra_faults: Vec<(Tick, Tick)>) -> Self {
        TelecomState { infra_faults }
    }

    pub fn infra_ok(&self, now: Tick) -> bool {
        !self.infra_faults.iter().any(|&(from, to)| (from..=to).contains(&now))
    }

    pub fn step(&mut self, now: Tick, env: &Envelope) -> Effects {
        let mut fx = Effects::default();
        match env.src.kind() {
            ActorKind::MobileClient => {
                let mut out = relay(env, ActorAddr::TELECOM, ActorAddr::ACCESS_PROVIDER, now);
                if let Ok(Payload::KeyRequest { client, infra_ok, digest, sealed_tag }) =
                    Payload::decode(env.kind, &env.payload)
                {
                    let infra_ok = infra_ok && self.infra_ok(now);
                    out.payload = Payload::KeyRequest { client, infra_ok, digest, sealed_tag }.to_bytes();
                }
                fx.send(out);
            }
            ActorKind::AccessProvider | ActorKind::ServiceProvider => {
                if let Some(client) = Payload::decode(env.kind, &env.payload).ok().and_then(|p| p.client()) {
                    fx.send(relay(env, ActorAddr::TELECOM, client, now));
                }
            }
            _ => {}
        }
        fx
    }
}
