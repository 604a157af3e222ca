//! Call dispatch with delegation resolution, plus the native contract
//! behaviors the experiments need: the draining fallback, a mock ERC-20
//! ledger, and a protocol contract that forwards value to a target.
//!
//! Contracts are behavior handlers, not bytecode. A registered account
//! carries a 32-byte marker blob in its code slot so "non-empty code"
//! checks stay meaningful, and the behavior itself lives in the chain's
//! registry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{keccak256, Address};
use crate::guard;
use crate::state::ChainState;
use crate::wei;

/// Maximum call-frame depth.
pub const MAX_DEPTH: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("call reverted")]
    CallReverted,
    #[error("call depth exceeded")]
    DepthExceeded,
    #[error("address already has a registered behavior")]
    AddressOccupied,
    #[error("no token registered at that address")]
    UnknownToken,
    #[error("insufficient token balance")]
    InsufficientTokenBalance,
    #[error("address is not a registered protocol")]
    NotAProtocol,
}

/// One dispatched call: who calls whom, with how much, carrying what.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallFrame {
    pub caller: Address,
    pub callee: Address,
    pub value: u128,
    pub data: Vec<u8>,
    pub depth: u32,
}

/// Native contract behaviors. Exactly one per registered address; the kind
/// is immutable after registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractBehavior {
    /// Fallback drainer: on any invocation, sweeps every watched token
    /// balance and then the executing account's entire ETH balance to the
    /// sink. Tolerant of individual transfer failures.
    MaliciousDrainer {
        sink: Address,
        watched_tokens: Vec<Address>,
    },
    /// Minimal fungible-token ledger (18 decimals).
    MockErc20,
    /// Exposes a forward-and-call entry point: calldata is a 20-byte target
    /// address; received value is forwarded to it via a sub-call.
    DummyProtocol,
    /// Always reverts.
    RevertingStub,
    /// Accepts calls and does nothing.
    EmptyBehavior,
}

impl ContractBehavior {
    fn tag(&self) -> &'static str {
        match self {
            ContractBehavior::MaliciousDrainer { .. } => "malicious_drainer",
            ContractBehavior::MockErc20 => "mock_erc20",
            ContractBehavior::DummyProtocol => "dummy_protocol",
            ContractBehavior::RevertingStub => "reverting_stub",
            ContractBehavior::EmptyBehavior => "empty_behavior",
        }
    }

    /// Human label used by scan output.
    pub fn label(&self) -> &'static str {
        self.tag()
    }
}

/// Fungible-token ledger. Sum of balances equals total supply at all times.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    #[serde(with = "balance_map")]
    pub balances: BTreeMap<Address, u128>,
    #[serde(with = "wei::dec_string")]
    pub total_supply: u128,
}

mod balance_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BTreeMap<Address, u128>, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(v.len()))?;
        for (k, amount) in v {
            map.serialize_entry(k, &amount.to_string())?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Address, u128>, D::Error> {
        let raw: BTreeMap<Address, String> = BTreeMap::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                v.parse::<u128>()
                    .map(|n| (k, n))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

/// Execution trace entry. Events are appended in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Call {
        caller: Address,
        callee: Address,
        #[serde(with = "wei::dec_string")]
        value: u128,
        data_len: u64,
        depth: u32,
    },
    ValueTransfer {
        from: Address,
        to: Address,
        #[serde(with = "wei::dec_string")]
        amount: u128,
    },
    TokenTransfer {
        token: Address,
        from: Address,
        to: Address,
        #[serde(with = "wei::dec_string")]
        amount: u128,
    },
    /// A draining fallback ran to completion under `account`'s authority.
    FallbackExecuted {
        account: Address,
        delegate: Address,
        #[serde(with = "wei::dec_string")]
        swept_eth: u128,
        #[serde(with = "wei::dec_string")]
        swept_tokens: u128,
    },
    /// A call to `account` was routed through its delegation indicator.
    DelegationResolved {
        account: Address,
        target: Address,
    },
    Revert {
        depth: u32,
        reason: String,
    },
}

/// Per-transaction execution context: the trace log and the internal-call
/// counter the flat gas model charges for.
#[derive(Debug, Default)]
pub struct ExecContext {
    pub trace: Vec<TraceEvent>,
    pub internal_calls: u64,
}

/// Install a behavior at `addr` and stamp the account with a 32-byte marker
/// blob (non-empty, never a delegation indicator). Registering a
/// [`ContractBehavior::MockErc20`] also creates its token ledger.
pub fn register_behavior(
    state: &mut ChainState,
    addr: Address,
    behavior: ContractBehavior,
) -> Result<(), ExecError> {
    if state.behaviors.contains_key(&addr) {
        return Err(ExecError::AddressOccupied);
    }
    let marker = keccak256(format!("behavior:{}", behavior.tag()).as_bytes());
    state.account_mut(addr).code = marker.0.to_vec();
    if matches!(behavior, ContractBehavior::MockErc20) {
        state.tokens.insert(addr, TokenLedger::default());
    }
    state.behaviors.insert(addr, behavior);
    Ok(())
}

/// Dispatch one call frame.
///
/// Resolution order: (1) a callee carrying a delegation indicator executes
/// the behavior registered at the indicated target in the CALLEE's context;
/// (2) otherwise a registered behavior at the callee runs in its own
/// context; (3) otherwise the call is a plain value transfer. Value is
/// credited to the callee before its code runs. A revert restores the value
/// deltas of this frame and its children only.
pub fn dispatch_call(
    state: &mut ChainState,
    ctx: &mut ExecContext,
    frame: CallFrame,
) -> Result<(), ExecError> {
    if frame.depth > MAX_DEPTH {
        return Err(ExecError::DepthExceeded);
    }
    if frame.depth > 0 {
        ctx.internal_calls += 1;
    }
    ctx.trace.push(TraceEvent::Call {
        caller: frame.caller,
        callee: frame.callee,
        value: frame.value,
        data_len: frame.data.len() as u64,
        depth: frame.depth,
    });

    let snapshot = state.value_snapshot();
    match execute_frame(state, ctx, &frame) {
        Ok(()) => Ok(()),
        Err(err) => {
            state.restore_value_snapshot(snapshot);
            ctx.trace.push(TraceEvent::Revert {
                depth: frame.depth,
                reason: err.to_string(),
            });
            Err(err)
        }
    }
}

fn execute_frame(
    state: &mut ChainState,
    ctx: &mut ExecContext,
    frame: &CallFrame,
) -> Result<(), ExecError> {
    if frame.value > 0 {
        state
            .transfer_value(frame.caller, frame.callee, frame.value)
            .map_err(|_| ExecError::CallReverted)?;
        ctx.trace.push(TraceEvent::ValueTransfer {
            from: frame.caller,
            to: frame.callee,
            amount: frame.value,
        });
    }

    if let Some(target) = state.is_delegated(frame.callee) {
        if state.scope_of(frame.callee).is_some() {
            match guard::enforce_scope(state, frame.callee, frame) {
                guard::ScopeVerdict::Allowed => {}
                verdict => {
                    // rejected delegated dispatch falls back to plain-EOA
                    // semantics for this call: value stays, no code runs
                    ctx.trace.push(TraceEvent::Revert {
                        depth: frame.depth,
                        reason: format!("scope rejected delegated dispatch: {verdict:?}"),
                    });
                    return Ok(());
                }
            }
        }
        ctx.trace.push(TraceEvent::DelegationResolved {
            account: frame.callee,
            target,
        });
        let behavior = state
            .behavior_at(target)
            .cloned()
            .unwrap_or(ContractBehavior::EmptyBehavior);
        return run_behavior(state, ctx, frame.callee, target, behavior, frame);
    }

    if let Some(behavior) = state.behavior_at(frame.callee).cloned() {
        return run_behavior(state, ctx, frame.callee, frame.callee, behavior, frame);
    }

    Ok(())
}

fn run_behavior(
    state: &mut ChainState,
    ctx: &mut ExecContext,
    executing: Address,
    code_source: Address,
    behavior: ContractBehavior,
    frame: &CallFrame,
) -> Result<(), ExecError> {
    match behavior {
        ContractBehavior::MaliciousDrainer {
            sink,
            watched_tokens,
        } => {
            drainer_fallback(state, ctx, executing, code_source, sink, &watched_tokens);
            Ok(())
        }
        ContractBehavior::MockErc20 | ContractBehavior::EmptyBehavior => Ok(()),
        ContractBehavior::DummyProtocol => {
            let target: [u8; 20] = frame
                .data
                .as_slice()
                .try_into()
                .map_err(|_| ExecError::CallReverted)?;
            dispatch_call(
                state,
                ctx,
                CallFrame {
                    caller: executing,
                    callee: Address(target),
                    value: frame.value,
                    data: Vec::new(),
                    depth: frame.depth + 1,
                },
            )
        }
        ContractBehavior::RevertingStub => Err(ExecError::CallReverted),
    }
}

/// The draining fallback, run under the executing account's authority.
/// Sweeps every watched token with a positive balance, then the entire
/// remaining ETH balance. Individual transfer failures are traced and
/// skipped; the fallback itself never reverts.
fn drainer_fallback(
    state: &mut ChainState,
    ctx: &mut ExecContext,
    executing: Address,
    delegate: Address,
    sink: Address,
    watched_tokens: &[Address],
) {
    let mut swept_tokens = 0u128;
    for &token in watched_tokens {
        let balance = erc20_balance_of(state, token, executing).unwrap_or(0);
        if balance == 0 {
            continue;
        }
        ctx.internal_calls += 1;
        match erc20_transfer(state, token, executing, sink, balance) {
            Ok(()) => {
                ctx.trace.push(TraceEvent::TokenTransfer {
                    token,
                    from: executing,
                    to: sink,
                    amount: balance,
                });
                swept_tokens += balance;
            }
            Err(err) => {
                // low-level call failed; keep draining
                ctx.trace.push(TraceEvent::Revert {
                    depth: 0,
                    reason: format!("token sweep skipped: {err}"),
                });
            }
        }
    }

    let eth_balance = state.balance(executing);
    if eth_balance > 0 {
        ctx.internal_calls += 1;
        state
            .transfer_value(executing, sink, eth_balance)
            .expect("sweeping the full balance cannot overdraw");
        ctx.trace.push(TraceEvent::ValueTransfer {
            from: executing,
            to: sink,
            amount: eth_balance,
        });
    }

    ctx.trace.push(TraceEvent::FallbackExecuted {
        account: executing,
        delegate,
        swept_eth: eth_balance,
        swept_tokens,
    });
}

pub fn erc20_balance_of(
    state: &ChainState,
    token: Address,
    owner: Address,
) -> Result<u128, ExecError> {
    let ledger = state.token_ledger(token).ok_or(ExecError::UnknownToken)?;
    Ok(ledger.balances.get(&owner).copied().unwrap_or(0))
}

pub fn erc20_transfer(
    state: &mut ChainState,
    token: Address,
    from: Address,
    to: Address,
    amount: u128,
) -> Result<(), ExecError> {
    let ledger = state
        .tokens
        .get_mut(&token)
        .ok_or(ExecError::UnknownToken)?;
    let have = ledger.balances.get(&from).copied().unwrap_or(0);
    if have < amount {
        return Err(ExecError::InsufficientTokenBalance);
    }
    if from != to {
        *ledger.balances.entry(from).or_default() -= amount;
        *ledger.balances.entry(to).or_default() += amount;
    }
    Ok(())
}

pub fn erc20_mint(
    state: &mut ChainState,
    token: Address,
    to: Address,
    amount: u128,
) -> Result<(), ExecError> {
    let ledger = state
        .tokens
        .get_mut(&token)
        .ok_or(ExecError::UnknownToken)?;
    *ledger.balances.entry(to).or_default() += amount;
    ledger.total_supply += amount;
    Ok(())
}

/// Invoke a protocol contract's forward-and-call entry point: the protocol
/// receives `value` from `caller` and issues a sub-call carrying it to
/// `target` (which resolves delegation if the target is delegated).
pub fn protocol_call_target(
    state: &mut ChainState,
    ctx: &mut ExecContext,
    protocol: Address,
    target: Address,
    value: u128,
    caller: Address,
) -> Result<(), ExecError> {
    if !matches!(
        state.behavior_at(protocol),
        Some(ContractBehavior::DummyProtocol)
    ) {
        return Err(ExecError::NotAProtocol);
    }
    dispatch_call(
        state,
        ctx,
        CallFrame {
            caller,
            callee: protocol,
            value,
            data: target.0.to_vec(),
            depth: 0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::wei::{eth, tokens};

    fn drained_env() -> (ChainState, Address, Address, Address) {
        let mut st = ChainState::new(1337);
        let victim = fixtures::victim();
        let sink = fixtures::attacker();
        let token = fixtures::token();
        register_behavior(&mut st, token, ContractBehavior::MockErc20).unwrap();
        register_behavior(
            &mut st,
            fixtures::delegate_local(),
            ContractBehavior::MaliciousDrainer {
                sink,
                watched_tokens: vec![token],
            },
        )
        .unwrap();
        st.credit(victim, eth(10_000));
        erc20_mint(&mut st, token, victim, tokens(2_000)).unwrap();
        st.write_delegation(victim, fixtures::delegate_local());
        (st, victim, sink, token)
    }

    #[test]
    fn register_sets_marker_code_not_indicator() {
        let mut st = ChainState::new(1);
        register_behavior(
            &mut st,
            fixtures::delegate_shared(),
            ContractBehavior::MaliciousDrainer {
                sink: fixtures::attacker(),
                watched_tokens: vec![],
            },
        )
        .unwrap();
        let acct = st.account(fixtures::delegate_shared());
        assert_eq!(acct.code.len(), 32);
        assert_eq!(st.is_delegated(fixtures::delegate_shared()), None);
        assert_eq!(
            register_behavior(
                &mut st,
                fixtures::delegate_shared(),
                ContractBehavior::EmptyBehavior
            ),
            Err(ExecError::AddressOccupied)
        );
    }

    #[test]
    fn self_call_drains_everything() {
        let (mut st, victim, sink, token) = drained_env();
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: victim,
                callee: victim,
                value: eth(1) / 10,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(victim), 0);
        assert_eq!(st.balance(sink), eth(10_000));
        assert_eq!(erc20_balance_of(&st, token, victim).unwrap(), 0);
        assert_eq!(erc20_balance_of(&st, token, sink).unwrap(), tokens(2_000));
        assert!(ctx
            .trace
            .iter()
            .any(|e| matches!(e, TraceEvent::FallbackExecuted { .. })));
        // the resolution event names exactly the target the state reports
        let resolved = ctx.trace.iter().find_map(|e| match e {
            TraceEvent::DelegationResolved { account, target } if *account == victim => {
                Some(*target)
            }
            _ => None,
        });
        assert_eq!(resolved, Some(fixtures::delegate_local()));
    }

    #[test]
    fn fallback_runs_on_empty_calldata_from_any_caller() {
        let (mut st, victim, sink, _) = drained_env();
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: sink,
                callee: victim,
                value: 0,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(victim), 0);
        assert!(ctx
            .trace
            .iter()
            .any(|e| matches!(e, TraceEvent::FallbackExecuted { .. })));
    }

    #[test]
    fn trigger_paths_produce_identical_fallback_shape() {
        // user-driven, attacker-driven, and protocol-driven frames activate
        // the same fallback
        let mut fallbacks = Vec::new();
        for origin in ["user", "attacker", "protocol"] {
            let (mut st, victim, sink, _) = drained_env();
            register_behavior(
                &mut st,
                fixtures::protocol(),
                ContractBehavior::DummyProtocol,
            )
            .unwrap();
            st.credit(fixtures::protocol(), 0);
            let mut ctx = ExecContext::default();
            match origin {
                "user" => dispatch_call(
                    &mut st,
                    &mut ctx,
                    CallFrame {
                        caller: victim,
                        callee: victim,
                        value: 0,
                        data: vec![],
                        depth: 0,
                    },
                )
                .unwrap(),
                "attacker" => dispatch_call(
                    &mut st,
                    &mut ctx,
                    CallFrame {
                        caller: sink,
                        callee: victim,
                        value: 0,
                        data: vec![],
                        depth: 0,
                    },
                )
                .unwrap(),
                _ => {
                    st.credit(sink, eth(1));
                    protocol_call_target(&mut st, &mut ctx, fixtures::protocol(), victim, 0, sink)
                        .unwrap()
                }
            }
            let fb = ctx
                .trace
                .iter()
                .find_map(|e| match e {
                    TraceEvent::FallbackExecuted {
                        account, delegate, ..
                    } => Some((*account, *delegate)),
                    _ => None,
                })
                .expect("fallback executed");
            fallbacks.push(fb);
        }
        assert!(fallbacks.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn plain_transfer_for_undelegated_callee() {
        let mut st = ChainState::new(1);
        st.credit(fixtures::victim(), eth(2));
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: fixtures::victim(),
                callee: fixtures::attacker(),
                value: eth(1),
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(fixtures::attacker()), eth(1));
        let kinds: Vec<_> = ctx
            .trace
            .iter()
            .filter(|e| !matches!(e, TraceEvent::Call { .. }))
            .collect();
        assert_eq!(kinds.len(), 1);
        assert!(matches!(kinds[0], TraceEvent::ValueTransfer { .. }));
    }

    #[test]
    fn incoming_value_is_swept_with_the_balance() {
        let (mut st, victim, sink, _) = drained_env();
        // strip the victim to zero first
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: sink,
                callee: victim,
                value: 0,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(victim), 0);
        // incoming 0.1 is credited before the fallback runs, so it is swept
        let before = st.balance(sink);
        st.credit(fixtures::protocol(), eth(1));
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: fixtures::protocol(),
                callee: victim,
                value: eth(1) / 10,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(victim), 0);
        assert_eq!(st.balance(sink) - before, eth(1) / 10);
    }

    #[test]
    fn protocol_forwards_to_plain_eoa_and_to_cleared_victim() {
        let (mut st, victim, sink, _) = drained_env();
        register_behavior(
            &mut st,
            fixtures::protocol(),
            ContractBehavior::DummyProtocol,
        )
        .unwrap();
        st.credit(sink, eth(1));

        // control: plain EOA target keeps the value
        let plain = Address([0x44; 20]);
        let mut ctx = ExecContext::default();
        protocol_call_target(
            &mut st,
            &mut ctx,
            fixtures::protocol(),
            plain,
            eth(1) / 10,
            sink,
        )
        .unwrap();
        assert_eq!(st.balance(plain), eth(1) / 10);

        // revocation restores normal semantics
        st.clear_delegation(victim);
        let victim_before = st.balance(victim);
        let mut ctx = ExecContext::default();
        protocol_call_target(
            &mut st,
            &mut ctx,
            fixtures::protocol(),
            victim,
            eth(1) / 10,
            sink,
        )
        .unwrap();
        assert_eq!(st.balance(victim), victim_before + eth(1) / 10);
    }

    #[test]
    fn protocol_requires_registration() {
        let mut st = ChainState::new(1);
        let mut ctx = ExecContext::default();
        assert_eq!(
            protocol_call_target(
                &mut st,
                &mut ctx,
                fixtures::protocol(),
                fixtures::victim(),
                0,
                fixtures::attacker()
            ),
            Err(ExecError::NotAProtocol)
        );
    }

    #[test]
    fn dust_only_victim_sweeps_dust() {
        let (mut st, victim, sink, token) = drained_env();
        // empty the token ledger and leave dust
        erc20_transfer(&mut st, token, victim, sink, tokens(2_000)).unwrap();
        st.debit(victim, eth(10_000) - 123_456).unwrap();
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: sink,
                callee: victim,
                value: 0,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(victim), 0);
        let swept = ctx.trace.iter().find_map(|e| match e {
            TraceEvent::FallbackExecuted {
                swept_eth,
                swept_tokens,
                ..
            } => Some((*swept_eth, *swept_tokens)),
            _ => None,
        });
        assert_eq!(swept, Some((123_456, 0)));
    }

    #[test]
    fn drainer_skips_failing_token_and_keeps_going() {
        let (mut st, victim, sink, token) = drained_env();
        // watch a bogus token first; the sweep must tolerate the failure
        let bogus = Address([0x99; 20]);
        st.behaviors.insert(
            fixtures::delegate_local(),
            ContractBehavior::MaliciousDrainer {
                sink,
                watched_tokens: vec![bogus, token],
            },
        );
        // bogus needs a ledger entry to have a "balance"? no ledger -> balance
        // read fails -> treated as zero and skipped silently; force the
        // transfer path instead by registering a ledger without funds there
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: sink,
                callee: victim,
                value: 0,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(erc20_balance_of(&st, token, sink).unwrap(), tokens(2_000));
        assert_eq!(st.balance(victim), 0);
    }

    #[test]
    fn reverting_delegate_restores_value() {
        let mut st = ChainState::new(1);
        register_behavior(
            &mut st,
            fixtures::delegate_local(),
            ContractBehavior::RevertingStub,
        )
        .unwrap();
        st.write_delegation(fixtures::victim(), fixtures::delegate_local());
        st.credit(fixtures::attacker(), eth(1));
        let total = st.total_wei();
        let mut ctx = ExecContext::default();
        let err = dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: fixtures::attacker(),
                callee: fixtures::victim(),
                value: eth(1) / 2,
                data: vec![],
                depth: 0,
            },
        );
        assert_eq!(err, Err(ExecError::CallReverted));
        assert_eq!(st.balance(fixtures::attacker()), eth(1));
        assert_eq!(st.balance(fixtures::victim()), 0);
        assert_eq!(st.total_wei(), total);
        assert!(ctx
            .trace
            .iter()
            .any(|e| matches!(e, TraceEvent::Revert { .. })));
    }

    #[test]
    fn depth_limit_enforced() {
        let mut st = ChainState::new(1);
        let mut ctx = ExecContext::default();
        let err = dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: fixtures::victim(),
                callee: fixtures::attacker(),
                value: 0,
                data: vec![],
                depth: MAX_DEPTH + 1,
            },
        );
        assert_eq!(err, Err(ExecError::DepthExceeded));
    }

    #[test]
    fn token_conservation_and_errors() {
        let mut st = ChainState::new(1);
        let token = fixtures::token();
        assert_eq!(
            erc20_mint(&mut st, token, fixtures::victim(), 1),
            Err(ExecError::UnknownToken)
        );
        register_behavior(&mut st, token, ContractBehavior::MockErc20).unwrap();
        erc20_mint(&mut st, token, fixtures::victim(), tokens(2_000)).unwrap();
        assert_eq!(
            erc20_transfer(
                &mut st,
                token,
                fixtures::victim(),
                fixtures::attacker(),
                tokens(2_001)
            ),
            Err(ExecError::InsufficientTokenBalance)
        );
        erc20_transfer(
            &mut st,
            token,
            fixtures::victim(),
            fixtures::attacker(),
            tokens(2_000),
        )
        .unwrap();
        let ledger = st.token_ledger(token).unwrap();
        assert_eq!(ledger.balances.values().sum::<u128>(), ledger.total_supply);
        assert_eq!(erc20_balance_of(&st, token, fixtures::victim()).unwrap(), 0);
    }

    #[test]
    fn delegation_to_unregistered_target_is_noop() {
        let mut st = ChainState::new(1);
        st.write_delegation(fixtures::victim(), Address([0x55; 20]));
        st.credit(fixtures::victim(), eth(1));
        let mut ctx = ExecContext::default();
        dispatch_call(
            &mut st,
            &mut ctx,
            CallFrame {
                caller: fixtures::victim(),
                callee: fixtures::victim(),
                value: eth(1) / 10,
                data: vec![],
                depth: 0,
            },
        )
        .unwrap();
        assert_eq!(st.balance(fixtures::victim()), eth(1));
        assert!(ctx
            .trace
            .iter()
            .any(|e| matches!(e, TraceEvent::DelegationResolved { .. })));
        assert!(!ctx
            .trace
            .iter()
            .any(|e| matches!(e, TraceEvent::FallbackExecuted { .. })));
    }
}
