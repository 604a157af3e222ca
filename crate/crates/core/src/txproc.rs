//! Validation and processing of type-0x04 set-code transactions, plus the
//! plain call transactions the trigger scenarios use.
//!
//! Processing order is load-bearing: the authorization list is applied
//! before the outer call executes, and delegation writes, authority nonce
//! increments, and gas charges survive an outer-call revert.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, keccak256, Address, Hash32, RlpItem};
use crate::exec::{dispatch_call, CallFrame, ExecContext, TraceEvent};
use crate::guard::{self, GuardPolicy, ScopedTupleExtension};
use crate::signing::{recover_authority, RecoverableSignature, SigningError};
use crate::state::{ChainState, FIXED_CALL_COST, FIXED_TX_COST, GAS_PRICE_WEI, PER_TUPLE_COST};
use crate::wei;

/// EIP-2718 type tag of a set-code transaction.
pub const SET_CODE_TX_TYPE: u8 = 0x04;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("sender cannot fund gas limit plus value: need {need} wei, have {have} wei")]
    InsufficientGasFunds { need: u128, have: u128 },
    #[error("set-code transaction requires at least one authorization tuple")]
    EmptyAuthList,
}

/// Why a tuple was not applied. Protocol-level reasons come from
/// [`validate_tuple`]; the policy variants come from guard admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ChainMismatch,
    NonceMismatch,
    NonCanonicalSignature,
    RecoveryFailure,
    ChainAgnosticForbidden,
    ScopeRequired,
}

/// A signed delegation intent: `(chain_id, target, nonce, y_parity, r, s)`.
/// `chain_id == 0` is chain-agnostic. Value semantics; fields never change
/// after construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationTuple {
    pub chain_id: u64,
    pub target: Address,
    pub nonce: u64,
    #[serde(flatten)]
    pub signature: RecoverableSignature,
}

/// A type-0x04 transaction: outer call fields plus the authorization list.
///
/// The simulator trusts the declared `sender` instead of verifying an outer
/// signature; tuple signatures are always verified for real. `scopes` is
/// client metadata riding alongside the list (same length when present,
/// never part of any signed payload or the tx hash).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCodeTransaction {
    pub sender: Address,
    pub tx_nonce: u64,
    pub to: Address,
    #[serde(rename = "value_wei", with = "wei::dec_string")]
    pub value: u128,
    #[serde(rename = "data_hex", with = "data_hex")]
    pub data: Vec<u8>,
    pub gas_limit: u64,
    #[serde(rename = "max_fee_wei", with = "wei::dec_string")]
    pub max_fee: u128,
    pub auth_list: Vec<AuthorizationTuple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scopes: Vec<Option<ScopedTupleExtension>>,
    pub tx_chain_id: u64,
}

mod data_hex {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text.strip_prefix("0x").unwrap_or(&text)).map_err(de::Error::custom)
    }
}

/// Per-tuple outcome recorded in the receipt, same order as the auth list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleOutcome {
    pub authority: Option<Address>,
    pub target: Address,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
}

/// What one processed transaction did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_hash: Hash32,
    pub height: u64,
    /// Outcome of the outer execution only; tuple application is recorded
    /// per entry and survives outer failure.
    pub success: bool,
    pub tuples_applied: Vec<TupleOutcome>,
    pub gas_used: u64,
    pub trace: Vec<TraceEvent>,
}

impl AuthorizationTuple {
    /// The digest this tuple's signature covers.
    pub fn signing_digest(&self) -> Hash32 {
        codec::auth_message(self.chain_id, self.target, self.nonce)
    }
}

/// Protocol-level tuple validity against the current chain state: chain
/// binding (0 = chain-agnostic), canonical signature, authority recovery,
/// and nonce freshness. Returns the recovered authority on success.
pub fn validate_tuple(
    tuple: &AuthorizationTuple,
    state: &ChainState,
) -> Result<Address, RejectReason> {
    let (_, result) = check_tuple(tuple, state);
    result
}

/// Like [`validate_tuple`] but also reports the recovered authority for
/// rejects that happen after recovery (nonce mismatches).
fn check_tuple(
    tuple: &AuthorizationTuple,
    state: &ChainState,
) -> (Option<Address>, Result<Address, RejectReason>) {
    if tuple.chain_id != 0 && tuple.chain_id != state.chain_id() {
        return (None, Err(RejectReason::ChainMismatch));
    }
    let authority = match recover_authority(&tuple.signing_digest(), &tuple.signature) {
        Ok(a) => a,
        Err(SigningError::NonCanonicalSignature) => {
            return (None, Err(RejectReason::NonCanonicalSignature));
        }
        Err(_) => return (None, Err(RejectReason::RecoveryFailure)),
    };
    if state.nonce(authority) != tuple.nonce {
        return (Some(authority), Err(RejectReason::NonceMismatch));
    }
    (Some(authority), Ok(authority))
}

/// Outer call fields for [`build_auth_tx`].
#[derive(Debug, Clone)]
pub struct OuterCall {
    pub to: Address,
    pub value: u128,
    pub data: Vec<u8>,
    pub gas_limit: u64,
    pub max_fee: u128,
}

impl OuterCall {
    /// Zero-value self-ping with default gas parameters.
    pub fn self_ping(sender: Address) -> Self {
        OuterCall {
            to: sender,
            value: 0,
            data: Vec::new(),
            gas_limit: crate::state::DEFAULT_GAS_LIMIT,
            max_fee: GAS_PRICE_WEI,
        }
    }
}

/// Convenience constructor for a structurally valid type-0x04 transaction.
pub fn build_auth_tx(
    state: &ChainState,
    sender: Address,
    tuples: Vec<AuthorizationTuple>,
    scopes: Vec<Option<ScopedTupleExtension>>,
    outer: OuterCall,
) -> Result<SetCodeTransaction, TxError> {
    if tuples.is_empty() {
        return Err(TxError::EmptyAuthList);
    }
    debug_assert!(scopes.is_empty() || scopes.len() == tuples.len());
    Ok(SetCodeTransaction {
        sender,
        tx_nonce: state.nonce(sender),
        to: outer.to,
        value: outer.value,
        data: outer.data,
        gas_limit: outer.gas_limit,
        max_fee: outer.max_fee,
        auth_list: tuples,
        scopes,
        tx_chain_id: state.chain_id(),
    })
}

/// Stable transaction identity: keccak over the type tag and the RLP of all
/// protocol fields in declaration order (scope metadata excluded).
pub fn set_code_tx_hash(tx: &SetCodeTransaction) -> Hash32 {
    let auth_items: Vec<RlpItem> = tx
        .auth_list
        .iter()
        .map(|t| {
            RlpItem::List(vec![
                RlpItem::uint(t.chain_id as u128),
                RlpItem::address(t.target),
                RlpItem::uint(t.nonce as u128),
                RlpItem::uint(t.signature.y_parity as u128),
                RlpItem::Bytes(t.signature.r.to_vec()),
                RlpItem::Bytes(t.signature.s.to_vec()),
            ])
        })
        .collect();
    let body = codec::rlp_encode(&RlpItem::List(vec![
        RlpItem::address(tx.sender),
        RlpItem::uint(tx.tx_nonce as u128),
        RlpItem::address(tx.to),
        RlpItem::uint(tx.value),
        RlpItem::Bytes(tx.data.clone()),
        RlpItem::uint(tx.gas_limit as u128),
        RlpItem::uint(tx.max_fee),
        RlpItem::List(auth_items),
        RlpItem::uint(tx.tx_chain_id as u128),
    ]));
    let mut payload = Vec::with_capacity(1 + body.len());
    payload.push(SET_CODE_TX_TYPE);
    payload.extend_from_slice(&body);
    keccak256(&payload)
}

fn call_tx_hash(
    chain_id: u64,
    sender: Address,
    nonce: u64,
    to: Address,
    value: u128,
    data: &[u8],
    gas_limit: u64,
) -> Hash32 {
    let body = codec::rlp_encode(&RlpItem::List(vec![
        RlpItem::address(sender),
        RlpItem::uint(nonce as u128),
        RlpItem::address(to),
        RlpItem::uint(value),
        RlpItem::Bytes(data.to_vec()),
        RlpItem::uint(gas_limit as u128),
        RlpItem::uint(chain_id as u128),
    ]));
    let mut payload = Vec::with_capacity(1 + body.len());
    payload.push(0x02);
    payload.extend_from_slice(&body);
    keccak256(&payload)
}

/// Process a set-code transaction.
///
/// In order: funding check, gas withhold, sender nonce increment, per-tuple
/// validation + policy admission + delegation write/clear (authority nonce
/// increments per accepted tuple), flat gas accrual for every listed tuple
/// irrespective of validity, outer call dispatch, gas settlement, height
/// increment. An outer-call revert rolls back value and call effects only.
pub fn process_set_code_tx(
    state: &mut ChainState,
    tx: &SetCodeTransaction,
    policy: &GuardPolicy,
) -> Result<Receipt, TxError> {
    if tx.auth_list.is_empty() {
        return Err(TxError::EmptyAuthList);
    }
    let need = tx.gas_limit as u128 * tx.max_fee + tx.value;
    let have = state.balance(tx.sender);
    if have < need {
        return Err(TxError::InsufficientGasFunds { need, have });
    }

    let withheld = tx.gas_limit as u128 * tx.max_fee;
    state
        .debit(tx.sender, withheld)
        .expect("funding checked above");
    state.bump_nonce(tx.sender);

    let tuple_policy = policy.tuple_policy();
    let mut outcomes = Vec::with_capacity(tx.auth_list.len());
    for (i, tuple) in tx.auth_list.iter().enumerate() {
        let extension = tx.scopes.get(i).and_then(|o| o.as_ref());
        let (authority, verdict) = check_tuple(tuple, state);
        let outcome = match verdict {
            Ok(authority) => match guard::admit_tuple(tuple, extension, &tuple_policy, state) {
                Ok(scope) => {
                    if tuple.target.is_zero() {
                        state.clear_delegation(authority);
                    } else {
                        state.write_delegation(authority, tuple.target);
                        if let Some(scope) = scope {
                            state.set_scope(authority, scope);
                        }
                    }
                    state.bump_nonce(authority);
                    TupleOutcome {
                        authority: Some(authority),
                        target: tuple.target,
                        accepted: true,
                        reject_reason: None,
                    }
                }
                Err(reason) => TupleOutcome {
                    authority: Some(authority),
                    target: tuple.target,
                    accepted: false,
                    reject_reason: Some(reason),
                },
            },
            Err(reason) => TupleOutcome {
                authority,
                target: tuple.target,
                accepted: false,
                reject_reason: Some(reason),
            },
        };
        outcomes.push(outcome);
    }

    let mut ctx = ExecContext::default();
    let success = dispatch_call(
        state,
        &mut ctx,
        CallFrame {
            caller: tx.sender,
            callee: tx.to,
            value: tx.value,
            data: tx.data.clone(),
            depth: 0,
        },
    )
    .is_ok();

    let gas_used = FIXED_TX_COST
        + PER_TUPLE_COST * tx.auth_list.len() as u64
        + FIXED_CALL_COST * ctx.internal_calls;
    settle_gas(state, tx.sender, withheld, gas_used as u128 * tx.max_fee);

    state.bump_height();
    let receipt = Receipt {
        tx_hash: set_code_tx_hash(tx),
        height: state.height(),
        success,
        tuples_applied: outcomes,
        gas_used,
        trace: ctx.trace,
    };
    state.push_receipt(receipt.clone());
    Ok(receipt)
}

/// Process an ordinary (non-set-code) transaction: one outer call under the
/// flat gas model. Gas withholding saturates at the sender's balance so
/// zero-funded accounts can still emit zero-value calls; the value transfer
/// itself reverts the call if unfunded.
pub fn process_call_tx(
    state: &mut ChainState,
    sender: Address,
    to: Address,
    value: u128,
    data: Vec<u8>,
    gas_limit: u64,
) -> Receipt {
    let tx_nonce = state.nonce(sender);
    let withheld = (gas_limit as u128 * GAS_PRICE_WEI).min(state.balance(sender));
    state
        .debit(sender, withheld)
        .expect("withhold capped at balance");
    state.bump_nonce(sender);

    let mut ctx = ExecContext::default();
    let success = dispatch_call(
        state,
        &mut ctx,
        CallFrame {
            caller: sender,
            callee: to,
            value,
            data: data.clone(),
            depth: 0,
        },
    )
    .is_ok();

    let gas_used = FIXED_TX_COST + FIXED_CALL_COST * ctx.internal_calls;
    settle_gas(state, sender, withheld, gas_used as u128 * GAS_PRICE_WEI);

    state.bump_height();
    let receipt = Receipt {
        tx_hash: call_tx_hash(
            state.chain_id(),
            sender,
            tx_nonce,
            to,
            value,
            &data,
            gas_limit,
        ),
        height: state.height(),
        success,
        tuples_applied: Vec::new(),
        gas_used,
        trace: ctx.trace,
    };
    state.push_receipt(receipt.clone());
    receipt
}

fn settle_gas(state: &mut ChainState, sender: Address, withheld: u128, cost: u128) {
    let burn = cost.min(withheld);
    state.credit(sender, withheld - burn);
    state.burn(burn);
}
