use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use super::{envelope, random_nonce, relay, Effects};
use crate::crypto::{seal, SecretKey, IV_LEN};
use crate::payload::{ErrorCode, Nonce, Payload, TokenTag};
use crate::wire::{ActorAddr, ActorKind, Envelope, MessageKind};
use crate::Tick;

/// Access-controlled object: issues sealed challenges and fronts its
/// service provider.
#[derive(Debug, Clone)]
pub struct AcoState {
    addr: ActorAddr,
    /// Shared with the access provider.
    key: SecretKey,
    service_provider: ActorAddr,
    tariff: BTreeMap<u16, u32>,
    /// Challenge already sent per (correlation, client nonce), replayed for duplicates.
    challenges: BTreeMap<(u64, Nonce), Vec<u8>>,
    issued: BTreeSet<Nonce>,
    used_ivs: BTreeSet<[u8; IV_LEN]>,
}

impl AcoState {
    pub fn new(index: u16, key: SecretKey, service_provider: ActorAddr, tariff: BTreeMap<u16, u32>) -> Self {
        AcoState {
            addr: ActorAddr::aco(index),
            key,
            service_provider,
            tariff,
            challenges: BTreeMap::new(),
            issued: BTreeSet::new(),
            used_ivs: BTreeSet::new(),
        }
    }

    pub fn addr(&self) -> ActorAddr {
        self.addr
    }

    pub fn issued_nonces(&self) -> &BTreeSet<Nonce> {
        &self.issued
    }

    pub fn step(&mut self, now: Tick, env: &Envelope, rng: &mut dyn RngCore) -> Effects {
        let mut fx = Effects::default();
        let Ok(payload) = Payload::decode(env.kind, &env.payload) else {
            return fx;
        };
        match (env.src.kind(), payload) {
            (ActorKind::MobileClient, Payload::AccessRequest { service_type, client_nonce }) => {
                if let Some(bytes) = self.challenges.get(&(env.correlation_id, client_nonce)) {
                    fx.send(Envelope {
                        kind: MessageKind::ChallengeToken,
                        correlation_id: env.correlation_id,
                        src: self.addr,
                        dst: env.src,
                        sent_at: now,
                        payload: bytes.clone(),
                    });
                    return fx;
                }
                let reply = match self.tariff.get(&service_type) {
                    Some(&price) => self.issue_challenge(now, service_type, price, rng),
                    None => Payload::ErrorMsg { client: env.src, code: ErrorCode::UnknownServiceType },
                };
                let out = envelope(self.addr, env.src, env.correlation_id, now, &reply);
                if reply.kind() == MessageKind::ChallengeToken {
                    self.challenges.insert((env.correlation_id, client_nonce), out.payload.clone());
                }
                fx.send(out);
            }
            (ActorKind::MobileClient, p @ (Payload::ServiceAccessRequest { .. } | Payload::ServiceUse { .. })) => {
                // forward only what the sender may speak for
                if p.client() == Some(env.src) {
                    fx.send(relay(env, self.addr, self.service_provider, now));
                }
            }
            (
                ActorKind::ServiceProvider,
                p @ (Payload::ServicePermit { .. } | Payload::ServiceReply { .. } | Payload::ErrorMsg { .. }),
            ) if env.src == self.service_provider => {
                if let Some(client) = p.client() {
                    fx.send(relay(env, self.addr, client, now));
                }
            }
            _ => {}
        }
        fx
    }

    fn issue_challenge(&mut self, now: Tick, service_type: u16, price: u32, rng: &mut dyn RngCore) -> Payload {
        let token_nonce = loop {
            let n = random_nonce(rng);
            if self.issued.insert(n) {
                break n;
            }
        };
        let iv = loop {
            let iv = random_nonce(rng);
            if self.used_ivs.insert(iv) {
                break iv;
            }
        };
        let tag = TokenTag { service_type, issued_at: now, event_place: self.addr, token_nonce, price };
        let sealed_tag = seal(&self.key, iv, &tag.to_bytes()).expect("token tag is non-empty");
        Payload::ChallengeToken { token_nonce, sealed_tag }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::open;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn aco() -> AcoState {
        AcoState::new(0, SecretKey::new(1, [3; 16]), ActorAddr::service_provider(0), [(7, 250)].into())
    }

    fn access_request(corr: u64, service_type: u16, client_nonce: Nonce) -> Envelope {
        envelope(
            ActorAddr::client(0),
            ActorAddr::aco(0),
            corr,
            10,
            &Payload::AccessRequest { service_type, client_nonce },
        )
    }

    fn challenge(fx: &Effects) -> (Nonce, TokenTag) {
        let env = &fx.envelopes[0];
        match Payload::decode(env.kind, &env.payload).unwrap() {
            Payload::ChallengeToken { token_nonce, sealed_tag } => {
                let tag = TokenTag::from_bytes(&open(&SecretKey::new(1, [3; 16]), &sealed_tag).unwrap()).unwrap();
                (token_nonce, tag)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn challenge_carries_price_and_place() {
        let mut a = aco();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fx = a.step(12, &access_request(1, 7, [0; 16]), &mut rng);
        assert_eq!(fx.envelopes[0].dst, ActorAddr::client(0));
        let (nonce, tag) = challenge(&fx);
        assert_eq!(tag.price, 250);
        assert_eq!(tag.event_place, ActorAddr::aco(0));
        assert_eq!(tag.issued_at, 12);
        assert_eq!(tag.service_type, 7);
        assert_eq!(tag.token_nonce, nonce);
    }

    #[test]
    fn fresh_nonces_and_idempotent_duplicates() {
        let mut a = aco();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let first = a.step(1, &access_request(1, 7, [0; 16]), &mut rng);
        let second = a.step(2, &access_request(2, 7, [1; 16]), &mut rng);
        assert_ne!(challenge(&first).0, challenge(&second).0);
        let dup = a.step(3, &access_request(1, 7, [0; 16]), &mut rng);
        assert_eq!(dup.envelopes[0].payload, first.envelopes[0].payload);
        assert_eq!(a.issued_nonces().len(), 2);
    }

    #[test]
    fn unknown_service_type() {
        let mut a = aco();
        let fx = a.step(1, &access_request(1, 99, [0; 16]), &mut ChaCha8Rng::seed_from_u64(1));
        let env = &fx.envelopes[0];
        assert_eq!(
            Payload::decode(env.kind, &env.payload).unwrap(),
            Payload::ErrorMsg { client: ActorAddr::client(0), code: ErrorCode::UnknownServiceType }
        );
    }

    #[test]
    fn relays_between_client_and_service_provider() {
        let mut a = aco();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ActorAddr::client(0);
        let usage = Payload::ServiceUse { client: c, use_seq: 0, flags: 0, data: vec![1] };
        let fx = a.step(5, &envelope(c, a.addr(), 9, 4, &usage), &mut rng);
        assert_eq!(fx.envelopes[0].dst, ActorAddr::service_provider(0));
        assert_eq!(fx.envelopes[0].payload, usage.to_bytes());

        // a client cannot speak for another client
        let spoof = Payload::ServiceUse { client: ActorAddr::client(1), use_seq: 0, flags: 0, data: vec![] };
        assert!(a.step(5, &envelope(c, a.addr(), 9, 4, &spoof), &mut rng).envelopes.is_empty());

        let reply = Payload::ServiceReply { client: c, use_seq: 0, data: vec![2] };
        let fx = a.step(6, &envelope(ActorAddr::service_provider(0), a.addr(), 9, 5, &reply), &mut rng);
        assert_eq!(fx.envelopes[0].dst, c);
        assert_eq!(fx.envelopes[0].src, a.addr());
    }
}
