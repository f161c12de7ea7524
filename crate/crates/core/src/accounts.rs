//! Prepaid/postpaid account ledger.
//!
//! Amounts are integer minor currency units. Prepaid accounts hold a
//! balance that payments draw down; postpaid accounts accumulate a charge.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::payload::DenyReason;
use crate::wire::ActorAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountKind {
    Prepaid,
    Postpaid,
}

impl AccountKind {
    pub fn name(self) -> &'static str {
        match self {
            AccountKind::Prepaid => "prepaid",
            AccountKind::Postpaid => "postpaid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Account {
    pub client: ActorAddr,
    pub kind: AccountKind,
    /// Prepaid: remaining funds. Postpaid: cumulative charge.
    pub balance: i64,
    pub status: AccountStatus,
    pub privileges: BTreeSet<(ActorAddr, u16)>,
}

/// The four ways a payment check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DenialReason {
    InsufficientFunds,
    NoPrivilege,
    AccountClosed,
    InfraError,
}

impl From<DenialReason> for DenyReason {
    fn from(r: DenialReason) -> DenyReason {
        match r {
            DenialReason::InsufficientFunds => DenyReason::InsufficientFunds,
            DenialReason::NoPrivilege => DenyReason::NoPrivilege,
            DenialReason::AccountClosed => DenyReason::AccountClosed,
            DenialReason::InfraError => DenyReason::InfraError,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentOutcome {
    Paid(u32),
    Denied(DenialReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccountError {
    #[error("no account for {0}")]
    UnknownAccount(ActorAddr),
    #[error("payment of {price} for {client} was not preceded by an approved check")]
    PreconditionViolated { client: ActorAddr, price: u32 },
    #[error("{0} is not a prepaid account")]
    NotPrepaid(ActorAddr),
    #[error("top-up amount must be positive")]
    NonPositiveAmount,
    #[error("balance overflow on {0}")]
    Overflow(ActorAddr),
}

/// All accounts of a run plus the checks approved but not yet paid.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    accounts: BTreeMap<ActorAddr, Account>,
    approved: BTreeMap<ActorAddr, Vec<u32>>,
}

impl Ledger {
    pub fn new(accounts: impl IntoIterator<Item = Account>) -> Self {
        Ledger {
            accounts: accounts.into_iter().map(|a| (a.client, a)).collect(),
            approved: BTreeMap::new(),
        }
    }

    pub fn get(&self, client: ActorAddr) -> Option<&Account> {
        self.accounts.get(&client)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    /// Returns `Ok(None)` when the payment may go ahead, `Ok(Some(reason))`
    /// when it must be refused. Privilege is checked before the
    /// account-kind-specific conditions.
    pub fn check_payment_possibility(
        &mut self,
        client: ActorAddr,
        aco: ActorAddr,
        service_type: u16,
        price: u32,
        infra_ok: bool,
    ) -> Result<Option<DenialReason>, AccountError> {
        let acct = self.accounts.get(&client).ok_or(AccountError::UnknownAccount(client))?;
        let denial = if !acct.privileges.contains(&(aco, service_type)) {
            Some(DenialReason::NoPrivilege)
        } else {
            match acct.kind {
                AccountKind::Prepaid if acct.balance < i64::from(price) => {
                    Some(DenialReason::InsufficientFunds)
                }
                AccountKind::Prepaid => None,
                AccountKind::Postpaid if acct.status == AccountStatus::Closed => {
                    Some(DenialReason::AccountClosed)
                }
                AccountKind::Postpaid if !infra_ok => Some(DenialReason::InfraError),
                AccountKind::Postpaid => None,
            }
        };
        if denial.is_none() {
            self.approved.entry(client).or_default().push(price);
        }
        Ok(denial)
    }

    pub fn execute_payment(
        &mut self,
        client: ActorAddr,
        price: u32,
    ) -> Result<PaymentOutcome, AccountError> {
        let pending = self.approved.get_mut(&client);
        let slot = pending
            .as_ref()
            .and_then(|p| p.iter().position(|&x| x == price))
            .ok_or(AccountError::PreconditionViolated { client, price })?;
        let acct = self.accounts.get_mut(&client).ok_or(AccountError::UnknownAccount(client))?;
        let amount = i64::from(price);
        acct.balance = match acct.kind {
            AccountKind::Prepaid if acct.balance < amount => {
                return Err(AccountError::PreconditionViolated { client, price })
            }
            AccountKind::Prepaid => acct.balance - amount,
            AccountKind::Postpaid => {
                acct.balance.checked_add(amount).ok_or(AccountError::Overflow(client))?
            }
        };
        if let Some(p) = self.approved.get_mut(&client) {
            p.remove(slot);
        }
        Ok(PaymentOutcome::Paid(price))
    }

    pub fn top_up(&mut self, client: ActorAddr, amount: i64) -> Result<&Account, AccountError> {
        let acct = self.accounts.get_mut(&client).ok_or(AccountError::UnknownAccount(client))?;
        if acct.kind != AccountKind::Prepaid {
            return Err(AccountError::NotPrepaid(client));
        }
        if amount <= 0 {
            return Err(AccountError::NonPositiveAmount);
        }
        acct.balance = acct.balance.checked_add(amount).ok_or(AccountError::Overflow(client))?;
        Ok(acct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ACO: ActorAddr = ActorAddr::aco(0);

    fn account(kind: AccountKind, balance: i64, status: AccountStatus, privileged: bool) -> Account {
        Account {
            client: ActorAddr::client(0),
            kind,
            balance,
            status,
            privileges: if privileged { [(ACO, 7)].into() } else { BTreeSet::new() },
        }
    }

    fn check(ledger: &mut Ledger, price: u32, infra_ok: bool) -> Option<DenialReason> {
        ledger.check_payment_possibility(ActorAddr::client(0), ACO, 7, price, infra_ok).unwrap()
    }

    #[test]
    fn table_of_denials() {
        use AccountKind::*;
        use AccountStatus::*;
        let cases = [
            (account(Prepaid, 100, Open, true), 250, true, Some(DenialReason::InsufficientFunds)),
            (account(Prepaid, 1000, Open, false), 250, true, Some(DenialReason::NoPrivilege)),
            (account(Postpaid, 0, Open, false), 250, true, Some(DenialReason::NoPrivilege)),
            (account(Postpaid, 0, Closed, true), 250, true, Some(DenialReason::AccountClosed)),
            (account(Postpaid, 0, Open, true), 250, false, Some(DenialReason::InfraError)),
            (account(Postpaid, 0, Closed, true), 250, false, Some(DenialReason::AccountClosed)),
            (account(Prepaid, 250, Open, true), 250, true, None),
            // infra faults and closure are postpaid-only conditions
            (account(Prepaid, 250, Closed, true), 250, false, None),
            (account(Postpaid, 0, Open, true), 250, true, None),
        ];
        for (acct, price, infra_ok, expected) in cases {
            let mut ledger = Ledger::new([acct.clone()]);
            assert_eq!(check(&mut ledger, price, infra_ok), expected, "{acct:?}");
        }
    }

    #[test]
    fn no_privilege_precedes_funds() {
        let mut ledger = Ledger::new([account(AccountKind::Prepaid, 0, AccountStatus::Open, false)]);
        assert_eq!(check(&mut ledger, 250, true), Some(DenialReason::NoPrivilege));
    }

    #[test]
    fn payments() {
        let c = ActorAddr::client(0);
        let mut ledger = Ledger::new([account(AccountKind::Prepaid, 1000, AccountStatus::Open, true)]);
        assert_eq!(check(&mut ledger, 250, true), None);
        assert_eq!(ledger.execute_payment(c, 250), Ok(PaymentOutcome::Paid(250)));
        assert_eq!(ledger.get(c).unwrap().balance, 750);

        let mut ledger = Ledger::new([account(AccountKind::Postpaid, 0, AccountStatus::Open, true)]);
        assert_eq!(check(&mut ledger, 250, true), None);
        assert_eq!(ledger.execute_payment(c, 250), Ok(PaymentOutcome::Paid(250)));
        assert_eq!(ledger.get(c).unwrap().balance, 250);

        let mut ledger = Ledger::new([account(AccountKind::Prepaid, 40, AccountStatus::Open, true)]);
        assert_eq!(check(&mut ledger, 0, true), None);
        assert_eq!(ledger.execute_payment(c, 0), Ok(PaymentOutcome::Paid(0)));
        assert_eq!(ledger.get(c).unwrap().balance, 40);
    }

    #[test]
    fn payment_requires_prior_check() {
        let c = ActorAddr::client(0);
        let mut ledger = Ledger::new([account(AccountKind::Prepaid, 1000, AccountStatus::Open, true)]);
        assert_eq!(
            ledger.execute_payment(c, 250),
            Err(AccountError::PreconditionViolated { client: c, price: 250 })
        );
        check(&mut ledger, 250, true);
        ledger.execute_payment(c, 250).unwrap();
        // the approval is used up
        assert!(ledger.execute_payment(c, 250).is_err());
        // a denied check approves nothing
        assert_eq!(check(&mut ledger, 5000, true), Some(DenialReason::InsufficientFunds));
        assert!(ledger.execute_payment(c, 5000).is_err());
        assert_eq!(
            ledger.execute_payment(ActorAddr::client(9), 1),
            Err(AccountError::PreconditionViolated { client: ActorAddr::client(9), price: 1 })
        );
    }

    #[test]
    fn top_ups() {
        let c = ActorAddr::client(0);
        let mut ledger = Ledger::new([account(AccountKind::Prepaid, 0, AccountStatus::Open, true)]);
        assert_eq!(ledger.top_up(c, 500).unwrap().balance, 500);
        assert_eq!(ledger.top_up(c, 0), Err(AccountError::NonPositiveAmount));
        assert_eq!(ledger.top_up(ActorAddr::client(3), 5), Err(AccountError::UnknownAccount(ActorAddr::client(3))));

        let mut ledger = Ledger::new([account(AccountKind::Postpaid, 0, AccountStatus::Open, true)]);
        assert_eq!(ledger.top_up(c, 500), Err(AccountError::NotPrepaid(c)));
    }

    #[derive(Debug, Clone)]
    enum Op {
        TopUp(i64),
        Buy(u32),
    }

    proptest! {
        #[test]
        fn prepaid_conservation(
            initial in 0i64..5000,
            ops in proptest::collection::vec(
                prop_oneof![(1i64..500).prop_map(Op::TopUp), (0u32..800).prop_map(Op::Buy)],
                0..40,
            ),
        ) {
            let c = ActorAddr::client(0);
            let mut ledger = Ledger::new([account(AccountKind::Prepaid, initial, AccountStatus::Open, true)]);
            let (mut topped, mut paid) = (0i64, 0i64);
            for op in ops {
                match op {
                    Op::TopUp(a) => {
                        ledger.top_up(c, a).unwrap();
                        topped += a;
                    }
                    Op::Buy(price) => {
                        if check(&mut ledger, price, true).is_none() {
                            ledger.execute_payment(c, price).unwrap();
                            paid += i64::from(price);
                        }
                    }
                }
                prop_assert!(ledger.get(c).unwrap().balance >= 0);
            }
            prop_assert_eq!(ledger.get(c).unwrap().balance, initial + topped - paid);
        }
    }
}
