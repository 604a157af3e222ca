//! Per-chain world state: accounts, delegation indicator semantics, token
//! ledgers, receipts, and the flat deterministic gas model.
//!
//! A `ChainState` has a single-writer contract: all mutations to one chain
//! are serialized by the caller. Distinct chains may be mutated in parallel.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{keccak256, Address, Hash32, DELEGATION_PREFIX};
use crate::exec::{ContractBehavior, TokenLedger};
use crate::guard::ScopeState;
use crate::txproc::Receipt;
use crate::wei;

/// keccak256 of empty input: the code hash of a pure EOA.
pub const EMPTY_CODE_HASH: Hash32 = Hash32([
    0xc5, 0xd2, 0x46, 0x01, 0x86, 0xf7, 0x23, 0x3c, 0x92, 0x7e, 0x7d, 0xb2, 0xdc, 0xc7, 0x03, 0xc0,
    0xe5, 0x00, 0xb6, 0x53, 0xca, 0x82, 0x27, 0x3b, 0x7b, 0xfa, 0xd8, 0x04, 0x5d, 0x85, 0xa4, 0x70,
]);

// Flat deterministic gas model. Real gas markets are environment artifacts;
// these constants make every residual reproducible.
pub const FIXED_TX_COST: u64 = 21_000;
pub const PER_TUPLE_COST: u64 = 12_500;
pub const FIXED_CALL_COST: u64 = 5_000;
pub const GAS_PRICE_WEI: u128 = 10 * wei::WEI_PER_GWEI;
pub const DEFAULT_GAS_LIMIT: u64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("insufficient balance: {have} wei available, {need} wei required")]
    InsufficientBalance { have: u128, need: u128 },
}

/// Account record: nonce, wei balance, raw code bytes.
///
/// Code is either empty (pure EOA), a 23-byte delegation indicator, or a
/// 32-byte behavior marker for registered native contracts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub nonce: u64,
    #[serde(rename = "balance_wei", with = "wei::dec_string")]
    pub balance: u128,
    #[serde(rename = "code_hex", with = "code_hex")]
    pub code: Vec<u8>,
}

mod code_hex {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text.strip_prefix("0x").unwrap_or(&text)).map_err(de::Error::custom)
    }
}

/// The 23-byte `0xef0100 || target` code value that redirects an account's
/// execution to a delegate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelegationIndicator {
    pub target: Address,
}

impl DelegationIndicator {
    pub fn to_code(self) -> Vec<u8> {
        let mut code = Vec::with_capacity(23);
        code.extend_from_slice(&DELEGATION_PREFIX);
        code.extend_from_slice(&self.target.0);
        code
    }

    /// Parses code bytes; `Some` iff the code is exactly a 23-byte indicator.
    pub fn parse(code: &[u8]) -> Option<DelegationIndicator> {
        if code.len() != 23 || code[..3] != DELEGATION_PREFIX {
            return None;
        }
        let mut target = [0u8; 20];
        target.copy_from_slice(&code[3..]);
        Some(DelegationIndicator {
            target: Address(target),
        })
    }
}

/// World state of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    chain_id: u64,
    height: u64,
    pub(crate) accounts: BTreeMap<Address, Account>,
    #[serde(default)]
    pub(crate) tokens: BTreeMap<Address, TokenLedger>,
    #[serde(default)]
    pub(crate) behaviors: BTreeMap<Address, ContractBehavior>,
    #[serde(default)]
    pub(crate) scopes: BTreeMap<Address, ScopeState>,
    #[serde(with = "wei::dec_string")]
    burned_wei: u128,
    #[serde(skip)]
    receipts: Vec<Receipt>,
}

impl ChainState {
    pub fn new(chain_id: u64) -> Self {
        ChainState {
            chain_id,
            height: 0,
            accounts: BTreeMap::new(),
            tokens: BTreeMap::new(),
            behaviors: BTreeMap::new(),
            scopes: BTreeMap::new(),
            burned_wei: 0,
            receipts: Vec::new(),
        }
    }

    pub fn chain_id(&self) -> u64 {
        self.chain_id
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub(crate) fn bump_height(&mut self) {
        self.height += 1;
    }

    /// Reads of absent accounts yield a zero account.
    pub fn account(&self, addr: Address) -> Account {
        self.accounts.get(&addr).cloned().unwrap_or_default()
    }

    pub(crate) fn account_mut(&mut self, addr: Address) -> &mut Account {
        self.accounts.entry(addr).or_default()
    }

    pub fn balance(&self, addr: Address) -> u128 {
        self.accounts.get(&addr).map(|a| a.balance).unwrap_or(0)
    }

    pub fn nonce(&self, addr: Address) -> u64 {
        self.accounts.get(&addr).map(|a| a.nonce).unwrap_or(0)
    }

    pub(crate) fn bump_nonce(&mut self, addr: Address) {
        self.account_mut(addr).nonce += 1;
    }

    pub fn credit(&mut self, addr: Address, amount: u128) {
        self.account_mut(addr).balance += amount;
    }

    pub fn debit(&mut self, addr: Address, amount: u128) -> Result<(), StateError> {
        let acct = self.account_mut(addr);
        if acct.balance < amount {
            return Err(StateError::InsufficientBalance {
                have: acct.balance,
                need: amount,
            });
        }
        acct.balance -= amount;
        Ok(())
    }

    /// Atomic value move; total supply is conserved. A self-transfer with
    /// sufficient balance is a no-op.
    pub fn transfer_value(
        &mut self,
        from: Address,
        to: Address,
        amount: u128,
    ) -> Result<(), StateError> {
        let have = self.balance(from);
        if have < amount {
            return Err(StateError::InsufficientBalance { have, need: amount });
        }
        if from != to {
            self.account_mut(from).balance -= amount;
            self.account_mut(to).balance += amount;
        }
        Ok(())
    }

    /// Install `0xef0100 || target` in the authority's code slot,
    /// materializing the account if absent. Last write wins. Any scope
    /// constraints recorded for a previous delegation are dropped.
    pub fn write_delegation(&mut self, authority: Address, target: Address) {
        debug_assert!(
            !target.is_zero(),
            "zero target is a revocation; use clear_delegation"
        );
        self.account_mut(authority).code = DelegationIndicator { target }.to_code();
        self.scopes.remove(&authority);
    }

    /// Revocation: reset the authority's code to empty (code hash becomes
    /// the empty-code hash). Idempotent.
    pub fn clear_delegation(&mut self, authority: Address) {
        self.account_mut(authority).code = Vec::new();
        self.scopes.remove(&authority);
    }

    /// `Some(target)` iff the account's code is exactly a delegation
    /// indicator.
    pub fn is_delegated(&self, addr: Address) -> Option<Address> {
        self.accounts
            .get(&addr)
            .and_then(|a| DelegationIndicator::parse(&a.code))
            .map(|d| d.target)
    }

    /// The set of active delegations: every (authority, target) pair whose
    /// code slot currently holds an indicator.
    pub fn active_delegations(&self) -> Vec<(Address, Address)> {
        self.accounts
            .iter()
            .filter_map(|(addr, acct)| {
                DelegationIndicator::parse(&acct.code).map(|d| (*addr, d.target))
            })
            .collect()
    }

    /// EXTCODESIZE/EXTCODEHASH view: size and hash of the stored code bytes.
    /// For a delegated account this reflects the 23-byte indicator, never the
    /// delegate's code.
    pub fn code_introspection(&self, addr: Address) -> (u64, Hash32) {
        match self.accounts.get(&addr) {
            Some(acct) if !acct.code.is_empty() => (acct.code.len() as u64, keccak256(&acct.code)),
            _ => (0, EMPTY_CODE_HASH),
        }
    }

    pub fn behavior_at(&self, addr: Address) -> Option<&ContractBehavior> {
        self.behaviors.get(&addr)
    }

    pub fn token_ledger(&self, token: Address) -> Option<&TokenLedger> {
        self.tokens.get(&token)
    }

    pub fn scope_of(&self, authority: Address) -> Option<&ScopeState> {
        self.scopes.get(&authority)
    }

    pub(crate) fn set_scope(&mut self, authority: Address, scope: ScopeState) {
        self.scopes.insert(authority, scope);
    }

    pub(crate) fn scope_mut(&mut self, authority: Address) -> Option<&mut ScopeState> {
        self.scopes.get_mut(&authority)
    }

    pub fn burned_wei(&self) -> u128 {
        self.burned_wei
    }

    pub(crate) fn burn(&mut self, amount: u128) {
        self.burned_wei += amount;
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub(crate) fn push_receipt(&mut self, receipt: Receipt) {
        self.receipts.push(receipt);
    }

    /// Sum of all balances plus burned gas. Constant across any operation
    /// sequence that does not mint value from outside.
    pub fn total_wei(&self) -> u128 {
        self.accounts.values().map(|a| a.balance).sum::<u128>() + self.burned_wei
    }

    /// Balances-and-tokens snapshot for revert isolation of call frames.
    pub(crate) fn value_snapshot(&self) -> ValueSnapshot {
        ValueSnapshot {
            balances: self
                .accounts
                .iter()
                .map(|(a, acct)| (*a, acct.balance))
                .collect(),
            tokens: self.tokens.clone(),
        }
    }

    pub(crate) fn restore_value_snapshot(&mut self, snap: ValueSnapshot) {
        // accounts materialized after the snapshot roll back to zero balance
        for acct in self.accounts.values_mut() {
            acct.balance = 0;
        }
        for (addr, balance) in snap.balances {
            self.account_mut(addr).balance = balance;
        }
        self.tokens = snap.tokens;
    }

    /// Exact JSON document of the chain (receipts excluded; those are
    /// exported separately as traces).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub(crate) struct ValueSnapshot {
    balances: BTreeMap<Address, u128>,
    tokens: BTreeMap<Address, TokenLedger>,
}
