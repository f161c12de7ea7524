use std::collections::{BTreeMap, BTreeSet};

use super::{envelope, Effects};
use crate::crypto::{open, SealedBox, SecretKey};
use crate::payload::{nonce_hex, AccessGrant, ErrorCode, Nonce, Payload, USE_FLAG_END};
use crate::store::{AuditDraft, AuditKind};
use crate::wire::{ActorAddr, ActorKind, Envelope};
use crate::Tick;

#[derive(Debug, Clone)]
struct Session {
    client: ActorAddr,
    key: SealedBox,
    permit: Envelope,
}

/// Service provider behind one or more ACOs. Re-authenticates access keys,
/// serves requests and bans clients whose use caused a service fault.
#[derive(Debug, Clone)]
pub struct ServiceProviderState {
    addr: ActorAddr,
    /// Shared with the access provider.
    key: SecretKey,
    /// Key nonce -> correlation id of the session it opened.
    consumed: BTreeMap<Nonce, u64>,
    prohibited: BTreeSet<ActorAddr>,
    sessions: BTreeMap<u64, Session>,
    /// Replies already sent, replayed for duplicates.
    answered_uses: BTreeMap<(u64, u32), Envelope>,
    refused_keys: BTreeMap<(u64, SealedBox), Envelope>,
    faults: BTreeSet<(ActorAddr, u32)>,
}

impl ServiceProviderState {
    /// `faults` lists (client, use_seq) pairs whose use fails.
    pub fn new(index: u16, key: SecretKey, faults: impl IntoIterator<Item = (ActorAddr, u32)>) -> Self {
        ServiceProviderState {
            addr: ActorAddr::service_provider(index),
            key,
            consumed: BTreeMap::new(),
            prohibited: BTreeSet::new(),
            sessions: BTreeMap::new(),
            answered_uses: BTreeMap::new(),
            refused_keys: BTreeMap::new(),
            faults: faults.into_iter().collect(),
        }
    }

    pub fn addr(&self) -> ActorAddr {
        self.addr
    }

    pub fn is_prohibited(&self, client: ActorAddr) -> bool {
        self.prohibited.contains(&client)
    }

    pub fn active_sessions(&self) -> impl Iterator<Item = (u64, ActorAddr)> + '_ {
        self.sessions.iter().map(|(&corr, s)| (corr, s.client))
    }

    pub fn step(&mut self, now: Tick, env: &Envelope) -> Effects {
        let mut fx = Effects::default();
        if env.src.kind() != ActorKind::Aco {
            return fx;
        }
        match Payload::decode(env.kind, &env.payload) {
            Ok(Payload::ServiceAccessRequest { client, service_type, access_key }) => {
                self.on_access(now, env, client, service_type, access_key, &mut fx)
            }
            Ok(Payload::ServiceUse { client, use_seq, flags, data }) => {
                self.on_use(now, env, client, use_seq, flags, &data, &mut fx)
            }
            _ => {}
        }
        fx
    }

    fn reply(&self, env: &Envelope, now: Tick, payload: &Payload) -> Envelope {
        envelope(self.addr, env.src, env.correlation_id, now, payload)
    }

    fn resend(cached: &Envelope, env: &Envelope, now: Tick) -> Envelope {
        Envelope { dst: env.src, sent_at: now, ..cached.clone() }
    }

    fn error_record(&self, corr: u64, client: ActorAddr, code: ErrorCode) -> AuditDraft {
        AuditDraft::new(self.addr, corr, AuditKind::ServiceError)
            .with("client", client)
            .with("reason", code.name())
    }

    fn on_access(
        &mut self,
        now: Tick,
        env: &Envelope,
        client: ActorAddr,
        service_type: u16,
        access_key: SealedBox,
        fx: &mut Effects,
    ) {
        let corr = env.correlation_id;
        // duplicates are answered from cache and not audited again
        if let Some(s) = self.sessions.get(&corr).filter(|s| s.key == access_key && s.client == client) {
            fx.send(Self::resend(&s.permit, env, now));
            return;
        }
        if let Some(cached) = self.refused_keys.get(&(corr, access_key.clone())) {
            fx.send(Self::resend(cached, env, now));
            return;
        }

        let grant = open(&self.key, &access_key).ok().and_then(|pt| AccessGrant::from_bytes(&pt));
        let refusal = match &grant {
            None => Some(ErrorCode::KeyInvalid),
            Some(g) if self.consumed.contains_key(&g.token_nonce) => Some(ErrorCode::KeyConsumed),
            Some(g) if now >= g.expires_at => Some(ErrorCode::KeyExpired),
            Some(_) if self.prohibited.contains(&client) => Some(ErrorCode::ClientProhibited),
            Some(g) if g.client != client || g.aco != env.src || g.service_type != service_type => {
                Some(ErrorCode::NotAuthorized)
            }
            Some(_) => None,
        };

        if let Some(code) = refusal {
            let mut rec = self.error_record(corr, client, code);
            if let Some(g) = &grant {
                rec = rec.with("nonce", nonce_hex(&g.token_nonce));
            }
            fx.record(rec);
            let out = self.reply(env, now, &Payload::ErrorMsg { client, code });
            self.refused_keys.insert((corr, access_key), out.clone());
            fx.send(out);
            return;
        }

        let grant = grant.expect("checked above");
        self.consumed.insert(grant.token_nonce, corr);
        fx.record(
            AuditDraft::new(self.addr, corr, AuditKind::ServiceGrant)
                .with("client", client)
                .with("aco", grant.aco)
                .with("service_type", grant.service_type)
                .with("nonce", nonce_hex(&grant.token_nonce)),
        );
        let out = self.reply(
            env,
            now,
            &Payload::ServicePermit { client, service_type, expires_at: grant.expires_at },
        );
        self.sessions.insert(corr, Session { client, key: access_key, permit: out.clone() });
        fx.send(out);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_use(
        &mut self,
        now: Tick,
        env: &Envelope,
        client: ActorAddr,
        use_seq: u32,
        flags: u8,
        data: &[u8],
        fx: &mut Effects,
    ) {
        let corr = env.correlation_id;
        if flags & USE_FLAG_END != 0 {
            if self.sessions.get(&corr).is_some_and(|s| s.client == client) {
                self.sessions.remove(&corr);
            }
            return;
        }
        if let Some(cached) = self.answered_uses.get(&(corr, use_seq)) {
            fx.send(Self::resend(cached, env, now));
            return;
        }

        let in_session = self.sessions.get(&corr).is_some_and(|s| s.client == client);
        let failure = if self.prohibited.contains(&client) {
            Some(ErrorCode::ClientProhibited)
        } else if !in_session {
            Some(ErrorCode::NoSession)
        } else if self.faults.contains(&(client, use_seq)) {
            Some(ErrorCode::ServiceFault)
        } else {
            None
        };

        let out = match failure {
            Some(code) => {
                let rec = self.error_record(corr, client, code).with("use_seq", use_seq);
                fx.record(rec);
                if code == ErrorCode::ServiceFault {
                    self.prohibited.insert(client);
                    self.sessions.retain(|_, s| s.client != client);
                }
                self.reply(env, now, &Payload::ErrorMsg { client, code })
            }
            None => {
                fx.record(
                    AuditDraft::new(self.addr, corr, AuditKind::ServiceUse)
                        .with("client", client)
                        .with("use_seq", use_seq)
                        .with("bytes", data.len()),
                );
                let mut answer = b"OK ".to_vec();
                answer.extend_from_slice(data);
                self.reply(env, now, &Payload::ServiceReply { client, use_seq, data: answer })
            }
        };
        self.answered_uses.insert((corr, use_seq), out.clone());
        fx.send(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seal;

    const SP_KEY: [u8; 16] = [4; 16];
    const C: ActorAddr = ActorAddr::client(0);
    const ACO: ActorAddr = ActorAddr::aco(0);

    fn sp() -> ServiceProviderState {
        ServiceProviderState::new(0, SecretKey::new(2, SP_KEY), [(C, 2)])
    }

    fn key(nonce: u8, expires_at: Tick) -> SealedBox {
        let grant = AccessGrant { client: C, aco: ACO, service_type: 7, token_nonce: [nonce; 16], expires_at };
        seal(&SecretKey::new(2, SP_KEY), [nonce; 16], &grant.to_bytes()).unwrap()
    }

    fn access(sp: &mut ServiceProviderState, now: Tick, corr: u64, key: SealedBox) -> Effects {
        let p = Payload::ServiceAccessRequest { client: C, service_type: 7, access_key: key };
        sp.step(now, &envelope(ACO, sp.addr(), corr, now, &p))
    }

    fn use_(sp: &mut ServiceProviderState, now: Tick, corr: u64, use_seq: u32, flags: u8) -> Effects {
        let p = Payload::ServiceUse { client: C, use_seq, flags, data: b"cmd".to_vec() };
        sp.step(now, &envelope(ACO, sp.addr(), corr, now, &p))
    }

    fn reason(fx: &Effects) -> &str {
        assert_eq!(fx.audit.len(), 1);
        assert_eq!(fx.audit[0].kind, AuditKind::ServiceError);
        &fx.audit[0].detail["reason"]
    }

    #[test]
    fn grant_then_single_use() {
        let mut s = sp();
        let fx = access(&mut s, 10, 1, key(1, 1000));
        assert_eq!(fx.audit[0].kind, AuditKind::ServiceGrant);
        assert_eq!(fx.envelopes[0].kind, crate::wire::MessageKind::ServicePermit);
        assert_eq!(fx.envelopes[0].dst, ACO);

        // duplicate within the session: same permit, no new record
        let dup = access(&mut s, 11, 1, key(1, 1000));
        assert!(dup.audit.is_empty());
        assert_eq!(dup.envelopes[0].payload, fx.envelopes[0].payload);

        use_(&mut s, 12, 1, 0, USE_FLAG_END);
        assert_eq!(reason(&access(&mut s, 13, 1, key(1, 1000))), "KeyConsumed");
        assert_eq!(reason(&access(&mut s, 13, 5, key(1, 1000))), "KeyConsumed");
    }

    #[test]
    fn refusals() {
        let mut s = sp();
        assert_eq!(reason(&access(&mut s, 1000, 1, key(1, 1000))), "KeyExpired");

        let mut forged = key(2, 1000);
        forged.ciphertext[3] ^= 0x10;
        assert_eq!(reason(&access(&mut s, 10, 2, forged)), "KeyInvalid");

        let p = Payload::ServiceAccessRequest { client: C, service_type: 8, access_key: key(3, 1000) };
        let fx = s.step(10, &envelope(ACO, s.addr(), 3, 10, &p));
        assert_eq!(reason(&fx), "NotAuthorized");

        // presented at another ACO
        let p = Payload::ServiceAccessRequest { client: C, service_type: 7, access_key: key(4, 1000) };
        let fx = s.step(10, &envelope(ActorAddr::aco(1), s.addr(), 4, 10, &p));
        assert_eq!(reason(&fx), "NotAuthorized");
    }

    #[test]
    fn uses_and_prohibition() {
        let mut s = sp();
        access(&mut s, 10, 1, key(1, 1000));
        let fx = use_(&mut s, 20, 1, 0, 0);
        assert_eq!(fx.audit[0].kind, AuditKind::ServiceUse);
        match Payload::decode(fx.envelopes[0].kind, &fx.envelopes[0].payload).unwrap() {
            Payload::ServiceReply { data, .. } => assert_eq!(data, b"OK cmd"),
            other => panic!("{other:?}"),
        }
        assert!(use_(&mut s, 21, 1, 0, 0).audit.is_empty(), "duplicate use is not re-audited");
        use_(&mut s, 22, 1, 1, 0);

        // use_seq 2 is the injected fault
        assert_eq!(reason(&use_(&mut s, 30, 1, 2, 0)), "ServiceFault");
        assert!(s.is_prohibited(C));
        assert_eq!(s.active_sessions().count(), 0);
        for seq in 3..13 {
            assert_eq!(reason(&use_(&mut s, 40 + Tick::from(seq), 1, seq, 0)), "ClientProhibited");
        }
        // even with a fresh key
        assert_eq!(reason(&access(&mut s, 60, 9, key(9, 1000))), "ClientProhibited");
    }

    #[test]
    fn use_without_session() {
        let mut s = sp();
        assert_eq!(reason(&use_(&mut s, 5, 77, 0, 0)), "NoSession");
    }
}
