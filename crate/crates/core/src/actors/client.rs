//! Mobile client.
//!
//! The client holds only its password. Challenges and access keys are
//! opaque sealed boxes that it forwards untouched.

use rand::RngCore;

use super::{envelope, random_nonce, Effects, Input, Intent, TimerRequest};
use crate::crypto::{commit, SealedBox};
use crate::payload::{Decision, DenyReason, ErrorCode, Nonce, Payload, USE_FLAG_END};
use crate::store::{AuditDraft, AuditKind};
use crate::wire::{ActorAddr, Envelope};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    Timeout,
    Denied(DenyReason),
    Error(ErrorCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    AwaitingToken,
    AwaitingDecision,
    HoldingKey,
    AwaitingPermit,
    InService,
    /// Absorbing once entered.
    Prohibited,
    Failed(FailReason),
}

impl Phase {
    fn is_waiting(self) -> bool {
        matches!(self, Phase::AwaitingToken | Phase::AwaitingDecision | Phase::AwaitingPermit)
    }

    fn holds_key(self) -> bool {
        matches!(self, Phase::HoldingKey | Phase::AwaitingPermit | Phase::InService)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutAction {
    Retransmit,
    Fail,
}

/// Retransmission policy for phases that wait on a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub interval: Tick,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3, interval: 50 }
    }
}

impl RetryPolicy {
    /// Decides what the `retransmitted + 1`-th timeout in `phase` does.
    /// Returns `None` for phases that do not wait.
    pub fn on_timeout(&self, phase: Phase, retransmitted: u32) -> Option<TimeoutAction> {
        if !phase.is_waiting() {
            return None;
        }
        Some(if retransmitted < self.retries { TimeoutAction::Retransmit } else { TimeoutAction::Fail })
    }
}

#[derive(Debug, Clone)]
struct Flow {
    correlation_id: u64,
    aco: ActorAddr,
    service_type: u16,
    key: Option<SealedBox>,
    next_use: u32,
}

#[derive(Debug, Clone)]
struct SpentKey {
    correlation_id: u64,
    aco: ActorAddr,
    service_type: u16,
    key: SealedBox,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    addr: ActorAddr,
    password: Vec<u8>,
    policy: RetryPolicy,
    phase: Phase,
    flow: Option<Flow>,
    flows_started: u32,
    /// Token nonce of the challenge currently being answered.
    pending_nonce: Option<Nonce>,
    last_sent: Option<Envelope>,
    retransmitted: u32,
    timer_generation: u64,
    last_key_request: Option<(ActorAddr, u16, Payload)>,
    spent: Option<SpentKey>,
}

impl ClientState {
    pub fn new(index: u16, password: impl Into<Vec<u8>>, policy: RetryPolicy) -> Self {
        ClientState {
            addr: ActorAddr::client(index),
            password: password.into(),
            policy,
            phase: Phase::Idle,
            flow: None,
            flows_started: 0,
            pending_nonce: None,
            last_sent: None,
            retransmitted: 0,
            timer_generation: 0,
            last_key_request: None,
            spent: None,
        }
    }

    pub fn addr(&self) -> ActorAddr {
        self.addr
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn cached_key(&self) -> Option<&SealedBox> {
        self.flow.as_ref().and_then(|f| f.key.as_ref())
    }

    pub fn correlation_id(&self) -> Option<u64> {
        self.flow.as_ref().map(|f| f.correlation_id)
    }

    pub fn pending_nonce(&self) -> Option<Nonce> {
        self.pending_nonce
    }

    pub fn step(&mut self, now: Tick, input: Input, rng: &mut dyn RngCore) -> Effects {
        let mut fx = Effects::default();
        match input {
            Input::Intent(intent) => self.on_intent(now, intent, rng, &mut fx),
            Input::Deliver(env) => self.on_message(now, &env, &mut fx),
            Input::Timer { generation } => self.on_timer(now, generation, &mut fx),
        }
        debug_assert_eq!(self.cached_key().is_some(), self.phase.holds_key());
        fx
    }

    fn set_phase(&mut self, phase: Phase) {
        if self.phase != Phase::Prohibited {
            self.phase = phase;
        }
        if !self.phase.holds_key() {
            if let Some(f) = self.flow.as_mut() {
                f.key = None;
            }
        }
        // any phase change cancels the outstanding timer
        self.timer_generation += 1;
        self.retransmitted = 0;
    }

    fn next_correlation(&mut self) -> u64 {
        self.flows_started += 1;
        (u64::from(self.addr.index()) << 32) | u64::from(self.flows_started)
    }

    fn can_start_flow(&self) -> bool {
        matches!(self.phase, Phase::Idle | Phase::Failed(_))
    }

    /// Sends a request and arms the retransmission timer.
    fn send_awaiting(&mut self, now: Tick, env: Envelope, fx: &mut Effects) {
        self.last_sent = Some(env.clone());
        fx.send(env);
        fx.timer = Some(TimerRequest {
            due_at: now + self.policy.interval,
            generation: self.timer_generation,
        });
    }

    fn on_intent(&mut self, now: Tick, intent: Intent, rng: &mut dyn RngCore, fx: &mut Effects) {
        match intent {
            Intent::RequestAccess { aco, service_type } if self.can_start_flow() => {
                let correlation_id = self.next_correlation();
                self.flow = Some(Flow { correlation_id, aco, service_type, key: None, next_use: 0 });
                self.pending_nonce = None;
                self.set_phase(Phase::AwaitingToken);
                let req = Payload::AccessRequest { service_type, client_nonce: random_nonce(rng) };
                self.send_awaiting(now, envelope(self.addr, aco, correlation_id, now, &req), fx);
            }
            Intent::UseService => match self.phase {
                Phase::HoldingKey => {
                    let flow = self.flow.as_ref().expect("key implies flow");
                    let req = Payload::ServiceAccessRequest {
                        client: self.addr,
                        service_type: flow.service_type,
                        access_key: flow.key.clone().expect("HoldingKey implies key"),
                    };
                    let env = envelope(self.addr, flow.aco, flow.correlation_id, now, &req);
                    self.set_phase(Phase::AwaitingPermit);
                    self.send_awaiting(now, env, fx);
                }
                // A prohibited client keeps talking; refusal is the service provider's job.
                Phase::InService | Phase::Prohibited => {
                    if let Some(flow) = self.flow.as_mut() {
                        let use_seq = flow.next_use;
                        flow.next_use += 1;
                        let req = Payload::ServiceUse {
                            client: self.addr,
                            use_seq,
                            flags: 0,
                            data: format!("cmd-{use_seq}").into_bytes(),
                        };
                        fx.send(envelope(self.addr, flow.aco, flow.correlation_id, now, &req));
                    }
                }
                _ => {}
            },
            Intent::EndSession if self.phase == Phase::InService => {
                let flow = self.flow.take().expect("InService implies flow");
                let req = Payload::ServiceUse {
                    client: self.addr,
                    use_seq: flow.next_use,
                    flags: USE_FLAG_END,
                    data: Vec::new(),
                };
                fx.send(envelope(self.addr, flow.aco, flow.correlation_id, now, &req));
                self.spent = Some(SpentKey {
                    correlation_id: flow.correlation_id,
                    aco: flow.aco,
                    service_type: flow.service_type,
                    key: flow.key.expect("InService implies key"),
                });
                self.set_phase(Phase::Idle);
            }
            Intent::ReplayToken if self.can_start_flow() => {
                let Some((aco, service_type, req)) = self.last_key_request.clone() else {
                    return;
                };
                let correlation_id = self.next_correlation();
                self.flow = Some(Flow { correlation_id, aco, service_type, key: None, next_use: 0 });
                self.set_phase(Phase::AwaitingDecision);
                let env = envelope(self.addr, ActorAddr::TELECOM, correlation_id, now, &req);
                self.send_awaiting(now, env, fx);
            }
            Intent::ReplayKey if self.can_start_flow() => {
                let Some(spent) = self.spent.clone() else {
                    return;
                };
                let req = Payload::ServiceAccessRequest {
                    client: self.addr,
                    service_type: spent.service_type,
                    access_key: spent.key.clone(),
                };
                self.flow = Some(Flow {
                    correlation_id: spent.correlation_id,
                    aco: spent.aco,
                    service_type: spent.service_type,
                    key: Some(spent.key),
                    next_use: 0,
                });
                self.set_phase(Phase::AwaitingPermit);
                let env = envelope(self.addr, spent.aco, spent.correlation_id, now, &req);
                self.send_awaiting(now, env, fx);
            }
            _ => {}
        }
    }

    fn on_message(&mut self, now: Tick, env: &Envelope, fx: &mut Effects) {
        let Some(flow) = self.flow.as_ref() else {
            return;
        };
        // stale traffic from an abandoned or finished flow
        if env.correlation_id != flow.correlation_id || matches!(self.phase, Phase::Failed(_) | Phase::Idle) {
            return;
        }
        let correlation_id = flow.correlation_id;
        let Ok(payload) = Payload::decode(env.kind, &env.payload) else {
            return;
        };

        use Phase::*;
        match (self.phase, payload) {
            (AwaitingToken, Payload::ChallengeToken { token_nonce, sealed_tag }) => {
                let Ok(digest) = commit(&self.password, &token_nonce) else {
                    return;
                };
                let req = Payload::KeyRequest { client: self.addr, infra_ok: true, digest, sealed_tag };
                self.last_key_request = Some((flow.aco, flow.service_type, req.clone()));
                self.pending_nonce = Some(token_nonce);
                self.set_phase(AwaitingDecision);
                let env = envelope(self.addr, ActorAddr::TELECOM, correlation_id, now, &req);
                self.send_awaiting(now, env, fx);
            }
            // duplicates of messages already acted on
            (_, Payload::ChallengeToken { .. }) => {}
            (HoldingKey | AwaitingPermit | InService | Prohibited, Payload::AuthDecision { .. }) => {}
            (InService | Prohibited, Payload::ServicePermit { .. }) => {}
            (Prohibited, Payload::ServiceReply { .. }) => {}

            (AwaitingDecision, Payload::AuthDecision { decision, .. }) => match decision {
                Decision::Granted { access_key, .. } => {
                    self.set_phase(HoldingKey);
                    self.flow.as_mut().unwrap().key = Some(access_key);
                }
                Decision::Denied { reason } => self.set_phase(Failed(FailReason::Denied(reason))),
            },
            (AwaitingPermit, Payload::ServicePermit { .. }) => self.set_phase(InService),
            (InService, Payload::ServiceReply { .. }) => {}
            (Prohibited, Payload::ErrorMsg { .. }) => {}
            (_, Payload::ErrorMsg { code, .. }) => {
                if code.prohibits() {
                    self.set_phase(Prohibited);
                } else {
                    self.set_phase(Failed(FailReason::Error(code)));
                }
            }
            (phase, payload) => {
                fx.record(
                    AuditDraft::new(self.addr, correlation_id, AuditKind::ServiceError)
                        .with("client", self.addr)
                        .with("reason", "UnexpectedMessage")
                        .with("message", payload.kind())
                        .with("phase", format!("{phase:?}").replace(['(', ')'], "_")),
                );
            }
        }
    }

    fn on_timer(&mut self, now: Tick, generation: u64, fx: &mut Effects) {
        if generation != self.timer_generation {
            return;
        }
        match self.policy.on_timeout(self.phase, self.retransmitted) {
            Some(TimeoutAction::Retransmit) => {
                let Some(last) = self.last_sent.as_ref() else {
                    return;
                };
                self.retransmitted += 1;
                fx.send(Envelope { sent_at: now, ..last.clone() });
                fx.timer = Some(TimerRequest {
                    due_at: now + self.policy.interval,
                    generation: self.timer_generation,
                });
            }
            Some(TimeoutAction::Fail) => self.set_phase(Phase::Failed(FailReason::Timeout)),
            None => {}
        }
    }
}
