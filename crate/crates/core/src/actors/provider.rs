use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use super::{envelope, random_nonce, Effects};
use crate::accounts::{AccountError, DenialReason, Ledger, PaymentOutcome};
use crate::crypto::{commit, open, seal, verify_commitment, Digest, SealedBox, SecretKey, IV_LEN};
use crate::payload::{nonce_hex, AccessGrant, Decision, DenyReason, Nonce, Payload, TokenTag};
use crate::store::{AuditDraft, AuditKind};
use crate::wire::{ActorAddr, Envelope, MessageKind};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthVerdict {
    Granted(TokenTag),
    /// The tag is present when the token itself was genuine.
    Denied(DenyReason, Option<TokenTag>),
}

/// Access provider: authenticates key requests, charges the account and
/// issues access keys sealed for the service providers.
#[derive(Debug, Clone)]
pub struct ProviderState {
    /// key_id -> (key shared with one ACO, that ACO)
    aco_keys: BTreeMap<u16, (SecretKey, ActorAddr)>,
    service_key: SecretKey,
    /// Server-side password records, needed to recompute nonce-bound digests.
    directory: BTreeMap<ActorAddr, Vec<u8>>,
    issued: BTreeSet<Nonce>,
    consumed: BTreeSet<Nonce>,
    ledger: Ledger,
    token_ttl: Tick,
    key_ttl: Tick,
    /// Decision already sent per correlation id, replayed for duplicates.
    decisions: BTreeMap<u64, Vec<u8>>,
    used_ivs: BTreeSet<[u8; IV_LEN]>,
}

impl ProviderState {
    pub fn new(
        aco_keys: impl IntoIterator<Item = (SecretKey, ActorAddr)>,
        service_key: SecretKey,
        directory: BTreeMap<ActorAddr, Vec<u8>>,
        ledger: Ledger,
        token_ttl: Tick,
        key_ttl: Tick,
    ) -> Self {
        ProviderState {
            aco_keys: aco_keys.into_iter().map(|(k, aco)| (k.key_id, (k, aco))).collect(),
            service_key,
            directory,
            issued: BTreeSet::new(),
            consumed: BTreeSet::new(),
            ledger,
            token_ttl,
            key_ttl,
            decisions: BTreeMap::new(),
            used_ivs: BTreeSet::new(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn consumed(&self) -> &BTreeSet<Nonce> {
        &self.consumed
    }

    pub fn issued(&self) -> &BTreeSet<Nonce> {
        &self.issued
    }

    /// Opens the token, checks freshness, then compares the client's digest
    /// with one recomputed from the stored password and the token nonce.
    pub fn authenticate(&self, now: Tick, client: ActorAddr, digest: &Digest, sealed_tag: &SealedBox) -> AuthVerdict {
        let tag = self
            .aco_keys
            .get(&sealed_tag.key_id)
            .and_then(|(key, aco)| {
                let tag = TokenTag::from_bytes(&open(key, sealed_tag).ok()?)?;
                (tag.event_place == *aco).then_some(tag)
            });
        let Some(tag) = tag else {
            return AuthVerdict::Denied(DenyReason::TokenInvalid, None);
        };
        let expired = now >= tag.issued_at.saturating_add(self.token_ttl);
        if self.consumed.contains(&tag.token_nonce) || expired {
            return AuthVerdict::Denied(DenyReason::TokenReplayOrExpired, Some(tag));
        }
        let credential_ok = self
            .directory
            .get(&client)
            .and_then(|password| commit(password, &tag.token_nonce).ok())
            .is_some_and(|expected| verify_commitment(&expected, digest));
        if !credential_ok {
            return AuthVerdict::Denied(DenyReason::BadCredential, Some(tag));
        }
        AuthVerdict::Granted(tag)
    }

    pub fn step(&mut self, now: Tick, env: &Envelope, rng: &mut dyn RngCore) -> Effects {
        let mut fx = Effects::default();
        if env.kind != MessageKind::KeyRequest {
            return fx;
        }
        if let Some(bytes) = self.decisions.get(&env.correlation_id) {
            fx.send(Envelope {
                kind: MessageKind::AuthDecision,
                correlation_id: env.correlation_id,
                src: ActorAddr::ACCESS_PROVIDER,
                dst: env.src,
                sent_at: now,
                payload: bytes.clone(),
            });
            return fx;
        }
        let Ok(Payload::KeyRequest { client, infra_ok, digest, sealed_tag }) =
            Payload::decode(env.kind, &env.payload)
        else {
            return fx;
        };
        let corr = env.correlation_id;
        let auth = |outcome: &str| {
            AuditDraft::new(ActorAddr::ACCESS_PROVIDER, corr, AuditKind::AuthResult)
                .with("client", client)
                .with("outcome", outcome)
        };

        let verdict = self.authenticate(now, client, &digest, &sealed_tag);
        let decision = match verdict {
            AuthVerdict::Denied(reason, tag) => {
                let mut rec = auth("denied").with("reason", reason.name());
                if let Some(tag) = tag {
                    rec = rec.with("nonce", nonce_hex(&tag.token_nonce));
                    if reason == DenyReason::BadCredential {
                        self.spend(tag.token_nonce);
                    }
                }
                fx.record(rec);
                Decision::Denied { reason }
            }
            AuthVerdict::Granted(tag) => {
                self.spend(tag.token_nonce);
                fx.record(auth("granted").with("nonce", nonce_hex(&tag.token_nonce)));
                self.charge(now, client, &tag, infra_ok, corr, rng, &mut fx)
            }
        };

        let reply = Payload::AuthDecision { client, decision };
        let out = envelope(ActorAddr::ACCESS_PROVIDER, env.src, corr, now, &reply);
        self.decisions.insert(corr, out.payload.clone());
        fx.send(out);
        fx
    }

    fn spend(&mut self, nonce: Nonce) {
        self.issued.insert(nonce);
        let fresh = self.consumed.insert(nonce);
        debug_assert!(fresh, "nonce consumed twice");
    }

    #[allow(clippy::too_many_arguments)]
    fn charge(
        &mut self,
        now: Tick,
        client: ActorAddr,
        tag: &TokenTag,
        infra_ok: bool,
        corr: u64,
        rng: &mut dyn RngCore,
        fx: &mut Effects,
    ) -> Decision {
        let payment = AuditDraft::new(ActorAddr::ACCESS_PROVIDER, corr, AuditKind::PaymentResult)
            .with("client", client)
            .with("price", tag.price);
        let check = self
            .ledger
            .check_payment_possibility(client, tag.event_place, tag.service_type, tag.price, infra_ok);
        let outcome = match check {
            Ok(None) => self.ledger.execute_payment(client, tag.price),
            Ok(Some(reason)) => Ok(PaymentOutcome::Denied(reason)),
            Err(e) => Err(e),
        };
        let (account, balance) = match self.ledger.get(client) {
            Some(a) => (a.kind.name(), a.balance.to_string()),
            None => ("none", "-".to_string()),
        };
        let payment = payment.with("account", account).with("balance", balance);

        match outcome {
            Ok(PaymentOutcome::Paid(amount)) => {
                fx.record(payment.with("outcome", "paid").with("amount", amount));
                let grant = AccessGrant {
                    client,
                    aco: tag.event_place,
                    service_type: tag.service_type,
                    token_nonce: tag.token_nonce,
                    expires_at: now.saturating_add(self.key_ttl),
                };
                let iv = loop {
                    let iv = random_nonce(rng);
                    if self.used_ivs.insert(iv) {
                        break iv;
                    }
                };
                let access_key = seal(&self.service_key, iv, &grant.to_bytes()).expect("grant is non-empty");
                Decision::Granted { amount, access_key }
            }
            Ok(PaymentOutcome::Denied(reason)) => {
                fx.record(payment.with("outcome", "denied").with("reason", DenyReason::from(reason).name()));
                Decision::Denied { reason: reason.into() }
            }
            // unreachable after scenario validation; treated as an unprivileged client
            Err(AccountError::UnknownAccount(_) | AccountError::PreconditionViolated { .. }) | Err(_) => {
                let reason = DenyReason::from(DenialReason::NoPrivilege);
                fx.record(payment.with("outcome", "denied").with("reason", reason.name()));
                Decision::Denied { reason }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounts::{Account, AccountKind, AccountStatus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ACO_KEY: [u8; 16] = [3; 16];
    const SP_KEY: [u8; 16] = [4; 16];

    fn provider(balance: i64) -> ProviderState {
        let ledger = Ledger::new([Account {
            client: ActorAddr::client(0),
            kind: AccountKind::Prepaid,
            balance,
            status: AccountStatus::Open,
            privileges: [(ActorAddr::aco(0), 7)].into(),
        }]);
        ProviderState::new(
            [(SecretKey::new(1, ACO_KEY), ActorAddr::aco(0))],
            SecretKey::new(2, SP_KEY),
            [(ActorAddr::client(0), b"pw".to_vec())].into(),
            ledger,
            500,
            1000,
        )
    }

    fn token(nonce: u8, issued_at: Tick) -> SealedBox {
        let tag = TokenTag {
            service_type: 7,
            issued_at,
            event_place: ActorAddr::aco(0),
            token_nonce: [nonce; 16],
            price: 250,
        };
        seal(&SecretKey::new(1, ACO_KEY), [nonce; 16], &tag.to_bytes()).unwrap()
    }

    fn key_request(corr: u64, nonce: u8, password: &[u8]) -> Envelope {
        let p = Payload::KeyRequest {
            client: ActorAddr::client(0),
            infra_ok: true,
            digest: commit(password, &[nonce; 16]).unwrap(),
            sealed_tag: token(nonce, 0),
        };
        envelope(ActorAddr::TELECOM, ActorAddr::ACCESS_PROVIDER, corr, 10, &p)
    }

    fn decision(fx: &Effects) -> Decision {
        let env = fx.envelopes.last().unwrap();
        assert_eq!(env.dst, ActorAddr::TELECOM);
        match Payload::decode(env.kind, &env.payload).unwrap() {
            Payload::AuthDecision { decision, .. } => decision,
            other => panic!("{other:?}"),
        }
    }

    fn kinds(fx: &Effects) -> Vec<(AuditKind, String)> {
        fx.audit.iter().map(|r| (r.kind, r.detail["outcome"].clone())).collect()
    }

    #[test]
    fn authenticate_verdicts() {
        let p = provider(1000);
        let digest = commit(b"pw", &[1; 16]).unwrap();
        assert!(matches!(p.authenticate(10, ActorAddr::client(0), &digest, &token(1, 0)), AuthVerdict::Granted(_)));

        let wrong = commit(b"nope", &[1; 16]).unwrap();
        assert!(matches!(
            p.authenticate(10, ActorAddr::client(0), &wrong, &token(1, 0)),
            AuthVerdict::Denied(DenyReason::BadCredential, Some(_))
        ));
        assert!(matches!(
            p.authenticate(500, ActorAddr::client(0), &digest, &token(1, 0)),
            AuthVerdict::Denied(DenyReason::TokenReplayOrExpired, Some(_))
        ));
        let mut tampered = token(1, 0);
        tampered.ciphertext[0] ^= 1;
        assert_eq!(
            p.authenticate(10, ActorAddr::client(0), &digest, &tampered),
            AuthVerdict::Denied(DenyReason::TokenInvalid, None)
        );
        // sealed under a key the provider does not hold
        let foreign = seal(&SecretKey::new(9, ACO_KEY), [0; 16], b"x").unwrap();
        assert!(matches!(
            p.authenticate(10, ActorAddr::client(0), &digest, &foreign),
            AuthVerdict::Denied(DenyReason::TokenInvalid, None)
        ));
    }

    #[test]
    fn granted_and_paid() {
        let mut p = provider(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fx = p.step(10, &key_request(1, 1, b"pw"), &mut rng);
        assert_eq!(
            kinds(&fx),
            [(AuditKind::AuthResult, "granted".into()), (AuditKind::PaymentResult, "paid".into())]
        );
        assert_eq!(fx.audit[1].detail["amount"], "250");
        assert_eq!(fx.audit[1].detail["balance"], "750");
        let Decision::Granted { amount, access_key } = decision(&fx) else { panic!() };
        assert_eq!(amount, 250);
        let grant = AccessGrant::from_bytes(&open(&SecretKey::new(2, SP_KEY), &access_key).unwrap()).unwrap();
        assert_eq!(grant.expires_at, 1010);
        assert_eq!(grant.token_nonce, [1; 16]);
        assert_eq!(p.ledger().get(ActorAddr::client(0)).unwrap().balance, 750);
    }

    #[test]
    fn bad_credential_short_circuits() {
        let mut p = provider(1000);
        let fx = p.step(10, &key_request(1, 1, b"wrong"), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(kinds(&fx), [(AuditKind::AuthResult, "denied".into())]);
        assert_eq!(fx.audit[0].detail["reason"], "BadCredential");
        assert_eq!(decision(&fx), Decision::Denied { reason: DenyReason::BadCredential });
    }

    #[test]
    fn insufficient_funds() {
        let mut p = provider(100);
        let fx = p.step(10, &key_request(1, 1, b"pw"), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(
            kinds(&fx),
            [(AuditKind::AuthResult, "granted".into()), (AuditKind::PaymentResult, "denied".into())]
        );
        assert_eq!(fx.audit[1].detail["reason"], "InsufficientFunds");
        assert_eq!(decision(&fx), Decision::Denied { reason: DenyReason::InsufficientFunds });
    }

    #[test]
    fn replay_and_duplicate() {
        let mut p = provider(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = p.step(10, &key_request(1, 1, b"pw"), &mut rng);
        // same correlation: duplicate, answered from cache without a second verdict
        let dup = p.step(11, &key_request(1, 1, b"pw"), &mut rng);
        assert!(dup.audit.is_empty());
        assert_eq!(dup.envelopes[0].payload, first.envelopes[0].payload);
        // new correlation, same token: replay
        let replay = p.step(12, &key_request(2, 1, b"pw"), &mut rng);
        assert_eq!(replay.audit[0].detail["reason"], "TokenReplayOrExpired");
        assert_eq!(decision(&replay), Decision::Denied { reason: DenyReason::TokenReplayOrExpired });
        assert_eq!(p.ledger().get(ActorAddr::client(0)).unwrap().balance, 750);
        assert!(p.consumed().is_subset(p.issued()));
    }
}
