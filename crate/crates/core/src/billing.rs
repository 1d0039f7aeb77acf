//! Prepaid balances over an append-only ledger.
//!
//! The ledger is the source of truth. Balances are a cache rebuilt by
//! [`replay`] on open, and every mutation appends its entries and adjusts the
//! cached balances under one lock so readers never see one without the other.
//!
//! Money moves from `debit_account` to `credit_account`. Deposits come from the
//! `external` account and settlements go back to it, so
//! `-balance(external) == deposits - settled` and the sum over all accounts is
//! always zero.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::naming::ServiceName;
use crate::store::{Journal, StoreError};

/// Fee rates are expressed in basis points of the call price.
pub const BPS_DENOMINATOR: u64 = 10_000;

#[derive(Debug, Error)]
pub enum BillingError {
    #[error("unknown account `{0}`")]
    UnknownAccount(AccountId),
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("insufficient funds: balance {balance}, price {price}")]
    InsufficientFunds { balance: i64, price: u64 },
    #[error("unknown meter event `{0}`")]
    UnknownEvent(String),
    #[error("meter event `{0}` already refunded")]
    AlreadyRefunded(String),
    #[error("meter event `{0}` already charged")]
    DuplicateEvent(String),
    #[error("amount overflows the balance range")]
    Overflow,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccountId {
    Agent(String),
    /// Earnings of the vendor organization.
    Vendor(String),
    Platform,
    /// Source of deposits and sink of settlements.
    External,
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccountId::Agent(id) => write!(f, "agent:{id}"),
            AccountId::Vendor(id) => write!(f, "vendor:{id}"),
            AccountId::Platform => f.write_str("platform"),
            AccountId::External => f.write_str("external"),
        }
    }
}

impl FromStr for AccountId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("agent", id)) if !id.is_empty() => Ok(AccountId::Agent(id.to_string())),
            Some(("vendor", id)) if !id.is_empty() => Ok(AccountId::Vendor(id.to_string())),
            None if s == "platform" => Ok(AccountId::Platform),
            None if s == "external" => Ok(AccountId::External),
            _ => Err(format!("bad account id `{s}`")),
        }
    }
}

impl Serialize for AccountId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AccountId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryReason {
    Deposit,
    /// Vendor share of a proxied call.
    Call,
    /// Platform share of a proxied call (only with a non-zero fee rate).
    Fee,
    Refund,
    Settlement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub entry_id: u64,
    pub timestamp: Timestamp,
    pub debit_account: AccountId,
    pub credit_account: AccountId,
    pub amount: u64,
    pub reason: EntryReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meter_event_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admission {
    pub vendor_amount: u64,
    pub fee_amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub org_id: String,
    pub amount: u64,
    pub entry_id: Option<u64>,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone)]
struct CallLegs {
    entries: Vec<(AccountId, AccountId, u64, EntryReason)>,
    refunded: bool,
}

#[derive(Default)]
struct LedgerState {
    balances: HashMap<AccountId, i64>,
    accounts: HashSet<AccountId>,
    entries: Vec<LedgerEntry>,
    calls: HashMap<String, CallLegs>,
}

impl LedgerState {
    fn apply(&mut self, e: &LedgerEntry) {
        let amt = e.amount as i64;
        self.accounts.insert(e.debit_account.clone());
        self.accounts.insert(e.credit_account.clone());
        *self.balances.entry(e.debit_account.clone()).or_default() -= amt;
        *self.balances.entry(e.credit_account.clone()).or_default() += amt;
        if let Some(ev) = &e.meter_event_id {
            match e.reason {
                EntryReason::Call | EntryReason::Fee => {
                    self.calls
                        .entry(ev.clone())
                        .or_insert_with(|| CallLegs {
                            entries: Vec::new(),
                            refunded: false,
                        })
                        .entries
                        .push((e.debit_account.clone(), e.credit_account.clone(), e.amount, e.reason));
                }
                EntryReason::Refund => {
                    if let Some(c) = self.calls.get_mut(ev) {
                        c.refunded = true;
                    }
                }
                _ => {}
            }
        }
        self.entries.push(e.clone());
    }

    fn balance(&self, a: &AccountId) -> i64 {
        self.balances.get(a).copied().unwrap_or(0)
    }
}

/// Recomputes every balance from an entry sequence, starting at zero.
pub fn replay<'a>(entries: impl IntoIterator<Item = &'a LedgerEntry>) -> HashMap<AccountId, i64> {
    let mut balances: HashMap<AccountId, i64> = HashMap::new();
    for e in entries {
        *balances.entry(e.debit_account.clone()).or_default() -= e.amount as i64;
        *balances.entry(e.credit_account.clone()).or_default() += e.amount as i64;
    }
    balances
}

pub struct Billing {
    state: Mutex<LedgerState>,
    journal: Journal<LedgerEntry>,
    fee_bps: u64,
}

impl Billing {
    pub fn in_memory(fee_bps: u64) -> Self {
        Self::from_parts(Journal::in_memory(), Vec::new(), fee_bps)
    }

    pub fn open(path: &Path, fee_bps: u64) -> Result<Self, BillingError> {
        let (journal, entries) = Journal::open(path)?;
        Ok(Self::from_parts(journal, entries, fee_bps))
    }

    fn from_parts(journal: Journal<LedgerEntry>, entries: Vec<LedgerEntry>, fee_bps: u64) -> Self {
        let mut state = LedgerState::default();
        state.accounts.insert(AccountId::Platform);
        state.accounts.insert(AccountId::External);
        for e in &entries {
            state.apply(e);
        }
        Self {
            state: Mutex::new(state),
            journal,
            fee_bps: fee_bps.min(BPS_DENOMINATOR),
        }
    }

    pub fn sync(&self) -> Result<(), BillingError> {
        Ok(self.journal.sync()?)
    }

    pub fn fee_bps(&self) -> u64 {
        self.fee_bps
    }

    /// Makes an account known. Idempotent.
    pub fn open_account(&self, account: AccountId) {
        self.state.lock().accounts.insert(account);
    }

    pub fn has_account(&self, account: &AccountId) -> bool {
        self.state.lock().accounts.contains(account)
    }

    pub fn balance(&self, account: &AccountId) -> Result<i64, BillingError> {
        let state = self.state.lock();
        if !state.accounts.contains(account) {
            return Err(BillingError::UnknownAccount(account.clone()));
        }
        Ok(state.balance(account))
    }

    pub fn balances(&self) -> HashMap<AccountId, i64> {
        let state = self.state.lock();
        state
            .accounts
            .iter()
            .map(|a| (a.clone(), state.balance(a)))
            .collect()
    }

    fn append(
        &self,
        state: &mut LedgerState,
        now: Timestamp,
        legs: &[(AccountId, AccountId, u64, EntryReason)],
        meter_event_id: Option<&str>,
    ) -> Result<Vec<u64>, BillingError> {
        let mut ids = Vec::with_capacity(legs.len());
        for (debit, credit, amount, reason) in legs {
            let entry = LedgerEntry {
                entry_id: state.entries.last().map_or(1, |e| e.entry_id + 1),
                timestamp: now,
                debit_account: debit.clone(),
                credit_account: credit.clone(),
                amount: *amount,
                reason: *reason,
                meter_event_id: meter_event_id.map(str::to_string),
            };
            self.journal.append(&entry)?;
            state.apply(&entry);
            ids.push(entry.entry_id);
        }
        Ok(ids)
    }

    pub fn deposit(&self, agent_id: &str, amount: u64, now: Timestamp) -> Result<i64, BillingError> {
        if amount == 0 {
            return Err(BillingError::NonPositiveAmount);
        }
        if amount > i64::MAX as u64 / 4 {
            return Err(BillingError::Overflow);
        }
        let account = AccountId::Agent(agent_id.to_string());
        let mut state = self.state.lock();
        if !state.accounts.contains(&account) {
            return Err(BillingError::UnknownAccount(account));
        }
        if state.balance(&account).checked_add(amount as i64).is_none() {
            return Err(BillingError::Overflow);
        }
        self.append(
            &mut state,
            now,
            &[(AccountId::External, account.clone(), amount, EntryReason::Deposit)],
            None,
        )?;
        Ok(state.balance(&account))
    }

    /// Splits a price into (vendor, platform) shares; the rounding remainder goes to the platform.
    pub fn split(&self, price: u64) -> (u64, u64) {
        let vendor = (price as u128 * (BPS_DENOMINATOR - self.fee_bps) as u128
            / BPS_DENOMINATOR as u128) as u64;
        (vendor, price - vendor)
    }

    /// Atomic check-and-deduct for one proxied call.
    pub fn debit_for_call(
        &self,
        agent_id: &str,
        service: &ServiceName,
        price: u64,
        meter_event_id: &str,
        now: Timestamp,
    ) -> Result<Admission, BillingError> {
        let agent = AccountId::Agent(agent_id.to_string());
        let vendor = AccountId::Vendor(service.org().to_string());
        let mut state = self.state.lock();
        if !state.accounts.contains(&agent) {
            return Err(BillingError::UnknownAccount(agent));
        }
        if state.calls.contains_key(meter_event_id) {
            return Err(BillingError::DuplicateEvent(meter_event_id.to_string()));
        }
        let balance = state.balance(&agent);
        if balance < 0 || (balance as u64) < price {
            return Err(BillingError::InsufficientFunds { balance, price });
        }
        let (vendor_amount, fee_amount) = self.split(price);
        state.accounts.insert(vendor.clone());
        let mut legs = Vec::new();
        if vendor_amount > 0 {
            legs.push((agent.clone(), vendor, vendor_amount, EntryReason::Call));
        }
        if fee_amount > 0 {
            legs.push((agent, AccountId::Platform, fee_amount, EntryReason::Fee));
        }
        self.append(&mut state, now, &legs, Some(meter_event_id))?;
        Ok(Admission {
            vendor_amount,
            fee_amount,
        })
    }

    /// Reverses every leg charged for `meter_event_id`, once.
    pub fn refund(&self, meter_event_id: &str, now: Timestamp) -> Result<(), BillingError> {
        let mut state = self.state.lock();
        let call = state
            .calls
            .get(meter_event_id)
            .cloned()
            .ok_or_else(|| BillingError::UnknownEvent(meter_event_id.to_string()))?;
        if call.refunded {
            return Err(BillingError::AlreadyRefunded(meter_event_id.to_string()));
        }
        let legs: Vec<_> = call
            .entries
            .iter()
            .map(|(debit, credit, amount, _)| (credit.clone(), debit.clone(), *amount, EntryReason::Refund))
            .collect();
        self.append(&mut state, now, &legs, Some(meter_event_id))?;
        Ok(())
    }

    /// Pays out the vendor's accumulated earnings.
    pub fn settle(&self, org_id: &str, now: Timestamp) -> Result<SettlementReport, BillingError> {
        let vendor = AccountId::Vendor(org_id.to_string());
        let mut state = self.state.lock();
        if !state.accounts.contains(&vendor) {
            return Err(BillingError::UnknownAccount(vendor));
        }
        let earned = state.balance(&vendor);
        if earned <= 0 {
            return Ok(SettlementReport {
                org_id: org_id.to_string(),
                amount: 0,
                entry_id: None,
                timestamp: now,
            });
        }
        let ids = self.append(
            &mut state,
            now,
            &[(vendor, AccountId::External, earned as u64, EntryReason::Settlement)],
            None,
        )?;
        Ok(SettlementReport {
            org_id: org_id.to_string(),
            amount: earned as u64,
            entry_id: ids.first().copied(),
            timestamp: now,
        })
    }

    /// Entries touching `owner` with `from <= timestamp <= to`.
    pub fn statement(
        &self,
        owner: &AccountId,
        from: Option<Timestamp>,
        to: Option<Timestamp>,
    ) -> Result<Vec<LedgerEntry>, BillingError> {
        let state = self.state.lock();
        if !state.accounts.contains(owner) {
            return Err(BillingError::UnknownAccount(owner.clone()));
        }
        Ok(state
            .entries
            .iter()
            .filter(|e| &e.debit_account == owner || &e.credit_account == owner)
            .filter(|e| from.is_none_or(|f| e.timestamp >= f))
            .filter(|e| to.is_none_or(|t| e.timestamp <= t))
            .cloned()
            .collect())
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.state.lock().entries.clone()
    }

    /// JSON Lines export, one entry per line in `entry_id` order.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in self.state.lock().entries.iter() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
