//! Minimal account-abstraction pipeline: user operations, an entry-point
//! model with validate/execute phases, a bundler relay, and optional
//! paymaster sponsorship.
//!
//! The structural hazard this reproduces: the entry point issues an internal
//! call to the operation's sender during *validation*, so a delegated
//! sender's code runs before the bundle is even accepted, and again during
//! execution if the call target is delegated. No victim participation is
//! required anywhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{keccak256, Address, Hash32, RlpItem};
use crate::exec::{dispatch_call, CallFrame, ExecContext, TraceEvent};
use crate::guard::{bundler_filter, entrypoint_static_check, paymaster_filter, FilterVerdict};
use crate::state::{ChainState, FIXED_CALL_COST, FIXED_TX_COST, GAS_PRICE_WEI};
use crate::txproc::Receipt;
use crate::wei;

/// Calldata marker for the validation-phase internal call. A fallback-style
/// delegate runs regardless of its content.
pub const VALIDATION_CALL_MARKER: &[u8] = b"validateUserOp";

/// The unit of execution relayed by bundlers instead of a signed
/// transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserOperation {
    pub sender: Address,
    pub op_nonce: u64,
    pub call_target: Address,
    #[serde(rename = "call_value_wei", with = "wei::dec_string")]
    pub call_value: u128,
    #[serde(rename = "call_data_hex", with = "op_data_hex")]
    pub call_data: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paymaster: Option<Address>,
    pub gas_budget: u64,
}

mod op_data_hex {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text.strip_prefix("0x").unwrap_or(&text)).map_err(de::Error::custom)
    }
}

/// Stable operation identity for receipts.
pub fn user_op_hash(op: &UserOperation) -> Hash32 {
    let body = crate::codec::rlp_encode(&RlpItem::List(vec![
        RlpItem::address(op.sender),
        RlpItem::uint(op.op_nonce as u128),
        RlpItem::address(op.call_target),
        RlpItem::uint(op.call_value),
        RlpItem::Bytes(op.call_data.clone()),
        RlpItem::address(op.paymaster.unwrap_or(Address::ZERO)),
        RlpItem::uint(op.gas_budget as u128),
    ]));
    let mut payload = vec![0xaa];
    payload.extend_from_slice(&body);
    keccak256(&payload)
}

/// Singleton entry point of a chain: routes validation and execution calls,
/// tracks flat per-sender operation nonces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryPointModel {
    pub address: Address,
    pub processed_ops: u64,
    op_nonces: BTreeMap<Address, u64>,
}

impl EntryPointModel {
    pub fn new(address: Address) -> Self {
        EntryPointModel {
            address,
            processed_ops: 0,
            op_nonces: BTreeMap::new(),
        }
    }

    pub fn expected_nonce(&self, sender: Address) -> u64 {
        self.op_nonces.get(&sender).copied().unwrap_or(0)
    }
}

/// Filter switches for the pipeline defenses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub bundler_filter_enabled: bool,
    pub paymaster_filter_enabled: bool,
    pub entrypoint_static_check_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OpOutcome {
    RejectedByBundlerFilter { reason: String },
    RejectedByEntryPointCheck { reason: String },
    SponsorshipRefused { reason: String },
    OpNonceMismatch { expected: u64 },
    ValidationReverted,
    ExecutionFailed,
    Executed,
}

impl OpOutcome {
    pub fn executed(&self) -> bool {
        matches!(self, OpOutcome::Executed)
    }

    /// True when the op never reached the validation dispatch.
    pub fn filtered(&self) -> bool {
        matches!(
            self,
            OpOutcome::RejectedByBundlerFilter { .. }
                | OpOutcome::RejectedByEntryPointCheck { .. }
                | OpOutcome::SponsorshipRefused { .. }
        )
    }
}

/// Per-operation result with phase-separated traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpReceipt {
    pub op_hash: Hash32,
    pub outcome: OpOutcome,
    pub validation_trace: Vec<TraceEvent>,
    pub execution_trace: Vec<TraceEvent>,
    pub gas_used: u64,
    /// Chain height after the op, for ops that reached the chain.
    pub height: Option<u64>,
}

struct Phase {
    trace: Vec<TraceEvent>,
    internal_calls: u64,
}

/// Validation phase: the entry point issues a zero-value internal call to
/// the op's sender. If the sender is delegated, the delegate's code runs
/// here, before any execution-phase event.
pub fn validate_user_op(
    state: &mut ChainState,
    entry_point: &mut EntryPointModel,
    op: &UserOperation,
) -> Result<Vec<TraceEvent>, OpOutcome> {
    run_validation(state, entry_point, op).map(|p| p.trace)
}

fn run_validation(
    state: &mut ChainState,
    entry_point: &mut EntryPointModel,
    op: &UserOperation,
) -> Result<Phase, OpOutcome> {
    let expected = entry_point.expected_nonce(op.sender);
    if op.op_nonce != expected {
        return Err(OpOutcome::OpNonceMismatch { expected });
    }
    let mut ctx = ExecContext::default();
    let frame = CallFrame {
        caller: entry_point.address,
        callee: op.sender,
        value: 0,
        data: VALIDATION_CALL_MARKER.to_vec(),
        depth: 1,
    };
    if dispatch_call(state, &mut ctx, frame).is_err() {
        return Err(OpOutcome::ValidationReverted);
    }
    entry_point.op_nonces.insert(op.sender, expected + 1);
    Ok(Phase {
        trace: ctx.trace,
        internal_calls: ctx.internal_calls,
    })
}

/// Execution phase: the entry point performs the operation's low-level call.
/// Delegation resolution applies to the call target. The entry point must
/// already hold `call_value` (the bundler fronts it).
pub fn execute_user_op(
    state: &mut ChainState,
    entry_point: &EntryPointModel,
    op: &UserOperation,
) -> Result<Vec<TraceEvent>, OpOutcome> {
    run_execution(state, entry_point, op).map(|p| p.trace)
}

fn run_execution(
    state: &mut ChainState,
    entry_point: &EntryPointModel,
    op: &UserOperation,
) -> Result<Phase, OpOutcome> {
    let mut ctx = ExecContext::default();
    let frame = CallFrame {
        caller: entry_point.address,
        callee: op.call_target,
        value: op.call_value,
        data: op.call_data.clone(),
        depth: 1,
    };
    if dispatch_call(state, &mut ctx, frame).is_err() {
        return Err(OpOutcome::ExecutionFailed);
    }
    Ok(Phase {
        trace: ctx.trace,
        internal_calls: ctx.internal_calls,
    })
}

/// Relay a batch: apply enabled guard filters, then run validate and execute
/// for each surviving operation. The bundler pays flat gas per on-chain op;
/// a sponsoring paymaster reimburses the burn after successful execution.
///
/// Filter rejections happen off-chain: no gas, no height, no receipt in the
/// chain log.
pub fn bundler_submit(
    state: &mut ChainState,
    entry_point: &mut EntryPointModel,
    bundler: Address,
    ops: &[UserOperation],
    config: PipelineConfig,
    allowlist: &[Address],
) -> Vec<OpReceipt> {
    ops.iter()
        .map(|op| submit_one(state, entry_point, bundler, op, config, allowlist))
        .collect()
}

fn submit_one(
    state: &mut ChainState,
    entry_point: &mut EntryPointModel,
    bundler: Address,
    op: &UserOperation,
    config: PipelineConfig,
    allowlist: &[Address],
) -> OpReceipt {
    let op_hash = user_op_hash(op);
    let rejected = |outcome: OpOutcome| OpReceipt {
        op_hash,
        outcome,
        validation_trace: Vec::new(),
        execution_trace: Vec::new(),
        gas_used: 0,
        height: None,
    };

    if config.bundler_filter_enabled {
        if let FilterVerdict::Reject { reason } = bundler_filter(op, state) {
            return rejected(OpOutcome::RejectedByBundlerFilter { reason });
        }
    }
    if config.entrypoint_static_check_enabled {
        if let FilterVerdict::Reject { reason } = entrypoint_static_check(op, state, allowlist) {
            return rejected(OpOutcome::RejectedByEntryPointCheck { reason });
        }
    }
    if config.paymaster_filter_enabled {
        if let FilterVerdict::Reject { reason } = paymaster_filter(op, state) {
            return rejected(OpOutcome::SponsorshipRefused { reason });
        }
    }

    // on-chain from here: the bundler carries the op as one transaction
    let withheld = (op.gas_budget as u128 * GAS_PRICE_WEI).min(state.balance(bundler));
    state
        .debit(bundler, withheld)
        .expect("withhold capped at balance");
    state.bump_nonce(bundler);

    let mut validation_trace = Vec::new();
    let mut execution_trace = Vec::new();
    let mut internal_calls = 0;

    let outcome = match run_validation(state, entry_point, op) {
        Err(outcome) => outcome,
        Ok(validation) => {
            validation_trace = validation.trace;
            internal_calls += validation.internal_calls;
            entry_point.processed_ops += 1;

            // front the call value through the entry point
            if op.call_value > 0
                && state
                    .transfer_value(bundler, entry_point.address, op.call_value)
                    .is_err()
            {
                OpOutcome::ExecutionFailed
            } else {
                match run_execution(state, entry_point, op) {
                    Ok(execution) => {
                        execution_trace = execution.trace;
                        internal_calls += execution.internal_calls;
                        OpOutcome::Executed
                    }
                    Err(outcome) => {
                        // unwind the fronted value; the dispatch restored the
                        // entry point's copy of it
                        if op.call_value > 0 {
                            let _ =
                                state.transfer_value(entry_point.address, bundler, op.call_value);
                        }
                        outcome
                    }
                }
            }
        }
    };

    let gas_used = FIXED_TX_COST + FIXED_CALL_COST * internal_calls;
    let cost = (gas_used as u128 * GAS_PRICE_WEI).min(withheld);
    state.credit(bundler, withheld - cost);
    state.burn(cost);

    // gas sponsorship: the paymaster makes the bundler whole
    if outcome.executed() {
        if let Some(paymaster) = op.paymaster {
            let _ = state.transfer_value(paymaster, bundler, cost);
        }
    }

    state.bump_height();
    let mut trace = validation_trace.clone();
    trace.extend(execution_trace.iter().cloned());
    let receipt = Receipt {
        tx_hash: op_hash,
        height: state.height(),
        success: outcome.executed(),
        tuples_applied: Vec::new(),
        gas_used,
        trace,
    };
    state.push_receipt(receipt);

    OpReceipt {
        op_hash,
        outcome,
        validation_trace,
        execution_trace,
        gas_used,
        height: Some(state.height()),
    }
}

/// The composite activation: a third party relays a sponsored user
/// operation whose sender and call target are the (already delegated)
/// victim. Neither the victim nor the attacker signs anything; the victim
/// is re-funded first so there is something to take, and the operation
/// carries `call_value = 1 wei` so the execution phase reproduces the
/// 1-wei internal-transfer shape through the delegate.
pub fn run_composite_attack(env: &mut crate::harness::SimEnv) -> crate::harness::ScenarioReport {
    // the re-fund is setup, not attack: it precedes the measurement window
    let refunded = env.refund_victim(crate::harness::REFUND_VALUE_WEI);
    let start = env.begin_window();
    let victim = env.actors.victim;
    let op = UserOperation {
        sender: victim,
        op_nonce: env.entry_point.expected_nonce(victim),
        call_target: victim,
        call_value: 1,
        call_data: Vec::new(),
        paymaster: Some(env.paymaster),
        gas_budget: env.gas_limit,
    };
    let config = env.policy.pipeline_config();
    let allowlist = env.policy.allowlist.clone();
    let bundler = env.bundler;
    bundler_submit(
        &mut env.chain,
        &mut env.entry_point,
        bundler,
        &[op],
        config,
        &allowlist,
    );
    env.finish_report(
        crate::harness::ScenarioId::Composite,
        start,
        refunded,
        0,
        Some("4337-pipeline".to_string()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{register_behavior, ContractBehavior};
    use crate::fixtures;
    use crate::wei::eth;

    fn pipeline_env() -> (ChainState, EntryPointModel) {
        let mut st = ChainState::new(1337);
        let ep = EntryPointModel::new(fixtures::entry_point());
        register_behavior(&mut st, fixtures::token(), ContractBehavior::MockErc20).unwrap();
        register_behavior(
            &mut st,
            fixtures::delegate_local(),
            ContractBehavior::MaliciousDrainer {
                sink: fixtures::attacker(),
                watched_tokens: vec![fixtures::token()],
            },
        )
        .unwrap();
        st.credit(fixtures::bundler(), eth(100));
        st.credit(fixtures::paymaster(), eth(100));
        (st, ep)
    }

    fn op_against(sender: Address, target: Address, value: u128, nonce: u64) -> UserOperation {
        UserOperation {
            sender,
            op_nonce: nonce,
            call_target: target,
            call_value: value,
            call_data: vec![],
            paymaster: None,
            gas_budget: 100_000,
        }
    }

    #[test]
    fn delegated_sender_code_runs_during_validation() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        st.write_delegation(v, fixtures::delegate_local());
        st.credit(v, eth(1));

        let trace = validate_user_op(&mut st, &mut ep, &op_against(v, v, 0, 0)).unwrap();
        assert!(trace
            .iter()
            .any(|e| matches!(e, TraceEvent::FallbackExecuted { .. })));
        assert_eq!(st.balance(v), 0);
        assert_eq!(ep.expected_nonce(v), 1);
    }

    #[test]
    fn plain_sender_validates_without_code_running() {
        let (mut st, mut ep) = pipeline_env();
        let trace = validate_user_op(
            &mut st,
            &mut ep,
            &op_against(fixtures::victim(), fixtures::victim(), 0, 0),
        )
        .unwrap();
        assert!(!trace
            .iter()
            .any(|e| matches!(e, TraceEvent::FallbackExecuted { .. })));
    }

    #[test]
    fn reverting_delegate_fails_validation() {
        let (mut st, mut ep) = pipeline_env();
        let stub = Address([0x31; 20]);
        register_behavior(&mut st, stub, ContractBehavior::RevertingStub).unwrap();
        let v = fixtures::victim();
        st.write_delegation(v, stub);
        assert_eq!(
            validate_user_op(&mut st, &mut ep, &op_against(v, v, 0, 0)),
            Err(OpOutcome::ValidationReverted)
        );
    }

    #[test]
    fn op_nonce_discipline() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        assert_eq!(
            validate_user_op(&mut st, &mut ep, &op_against(v, v, 0, 3)),
            Err(OpOutcome::OpNonceMismatch { expected: 0 })
        );
        validate_user_op(&mut st, &mut ep, &op_against(v, v, 0, 0)).unwrap();
        assert_eq!(
            validate_user_op(&mut st, &mut ep, &op_against(v, v, 0, 0)),
            Err(OpOutcome::OpNonceMismatch { expected: 1 })
        );
    }

    #[test]
    fn execute_routes_value_through_delegate() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        st.write_delegation(v, fixtures::delegate_local());
        let sink_before = st.balance(fixtures::attacker());

        let op = op_against(v, v, 1, 0);
        validate_user_op(&mut st, &mut ep, &op).unwrap();
        st.credit(ep.address, 1);
        let trace = execute_user_op(&mut st, &ep, &op).unwrap();

        // the 1-wei internal transfer leaves through the delegate to the sink
        assert!(trace.iter().any(|e| matches!(
            e,
            TraceEvent::ValueTransfer { from, to, amount: 1 }
                if *from == v && *to == fixtures::attacker()
        )));
        assert_eq!(st.balance(fixtures::attacker()) - sink_before, 1);
    }

    #[test]
    fn execute_against_token_contract_and_revoked_victim() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        st.write_delegation(v, fixtures::delegate_local());

        // a call_target that is an ordinary contract executes its behavior
        let op = op_against(v, fixtures::token(), 0, 0);
        validate_user_op(&mut st, &mut ep, &op).unwrap();
        execute_user_op(&mut st, &ep, &op).unwrap();

        // after revocation the target receives a plain transfer
        st.clear_delegation(v);
        let op = op_against(v, v, 5, 1);
        validate_user_op(&mut st, &mut ep, &op).unwrap();
        st.credit(ep.address, 5);
        execute_user_op(&mut st, &ep, &op).unwrap();
        assert_eq!(st.balance(v), 5);
    }

    #[test]
    fn bundle_drains_refunded_victim_with_no_victim_involvement() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        st.write_delegation(v, fixtures::delegate_local());
        st.credit(v, eth(1));
        let bundler = fixtures::bundler();
        let sink_before = st.balance(fixtures::attacker());

        let mut op = op_against(v, v, 1, 0);
        op.paymaster = Some(fixtures::paymaster());
        let receipts = bundler_submit(
            &mut st,
            &mut ep,
            bundler,
            &[op],
            PipelineConfig::default(),
            &[],
        );
        assert_eq!(receipts.len(), 1);
        assert!(receipts[0].outcome.executed());
        // validation swept the 1 ETH; execution swept the fronted wei
        assert_eq!(st.balance(v), 0);
        assert_eq!(st.balance(fixtures::attacker()) - sink_before, eth(1) + 1);
        // hazard ordering: fallback fired in the validation phase
        assert!(receipts[0]
            .validation_trace
            .iter()
            .any(|e| matches!(e, TraceEvent::FallbackExecuted { .. })));
        // paymaster reimbursed the bundler's burn
        assert_eq!(
            st.balance(bundler),
            eth(100) - 1, // only the fronted wei left the bundler for good
        );
        assert_eq!(st.height(), 1);
        assert_eq!(st.receipts().len(), 1);
    }

    #[test]
    fn repeated_ops_drain_again_after_refund() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        st.write_delegation(v, fixtures::delegate_local());
        st.credit(fixtures::attacker(), eth(10));

        for round in 0..3u64 {
            st.transfer_value(fixtures::attacker(), v, eth(1)).unwrap();
            let receipts = bundler_submit(
                &mut st,
                &mut ep,
                fixtures::bundler(),
                &[op_against(v, v, 0, round)],
                PipelineConfig::default(),
                &[],
            );
            assert!(receipts[0].outcome.executed());
            assert_eq!(st.balance(v), 0);
        }
        assert_eq!(ep.processed_ops, 3);
    }

    #[test]
    fn filters_stop_the_pipeline_before_validation() {
        let (mut st, mut ep) = pipeline_env();
        let v = fixtures::victim();
        st.write_delegation(v, fixtures::delegate_local());
        st.credit(v, eth(1));

        let mut op = op_against(v, v, 0, 0);
        op.paymaster = Some(fixtures::paymaster());
        let all = PipelineConfig {
            bundler_filter_enabled: true,
            paymaster_filter_enabled: true,
            entrypoint_static_check_enabled: true,
        };
        let receipts = bundler_submit(&mut st, &mut ep, fixtures::bundler(), &[op], all, &[]);
        assert!(matches!(
            receipts[0].outcome,
            OpOutcome::RejectedByBundlerFilter { .. }
        ));
        assert!(receipts[0].validation_trace.is_empty());
        assert_eq!(st.balance(v), eth(1));
        assert_eq!(st.height(), 0);

        // empty batch
        let receipts = bundler_submit(&mut st, &mut ep, fixtures::bundler(), &[], all, &[]);
        assert!(receipts.is_empty());
    }

    #[test]
    fn user_operation_json_document_roundtrip() {
        let op = UserOperation {
            sender: fixtures::victim(),
            op_nonce: 3,
            call_target: fixtures::token(),
            call_value: 1,
            call_data: vec![0xde, 0xad],
            paymaster: Some(fixtures::paymaster()),
            gas_budget: 100_000,
        };
        let json = serde_json::to_string(&op).unwrap();
        assert!(json.contains("\"call_value_wei\":\"1\""));
        let back: UserOperation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, op);
        // unsponsored form omits the paymaster field
        let bare = UserOperation {
            paymaster: None,
            ..op
        };
        assert!(!serde_json::to_string(&bare).unwrap().contains("paymaster"));
    }

    #[test]
    fn composite_attack_requires_no_victim_signature() {
        let mut env = crate::harness::setup_environment(
            &crate::harness::EnvConfig::default(),
            crate::guard::GuardPolicy::permissive(),
        );
        crate::harness::run_phase1_install(&mut env).unwrap();
        crate::harness::run_scenario_a(&mut env);
        crate::harness::run_scenario_b(&mut env); // victim at exactly zero
        let signatures_after_install = env.sign_count(env.actors.victim);

        let report = run_composite_attack(&mut env);
        assert_eq!(env.sign_count(env.actors.victim), signatures_after_install);
        assert_eq!(report.trigger_origin.as_deref(), Some("4337-pipeline"));
        assert!(report.fallback_executed);
        assert!(report.drain_satisfied);
        // the re-funded ETH and the 1-wei execution transfer both left
        assert_eq!(report.victim_refunded, eth(1));
        assert_eq!(report.attacker_gain_eth, eth(1) + 1);
        assert_eq!(env.chain.balance(env.actors.victim), 0);
    }

    #[test]
    fn composite_attack_blocked_by_all_filters() {
        let mut env = crate::harness::setup_environment(
            &crate::harness::EnvConfig::default(),
            crate::guard::GuardPolicy::all_filters(),
        );
        crate::harness::run_phase1_install(&mut env).unwrap();
        let report = run_composite_attack(&mut env);
        assert!(!report.fallback_executed);
        assert!(!report.drain_satisfied);
        // the refund stayed with the victim
        assert_eq!(env.chain.balance(env.actors.victim), eth(10_000) + eth(1));
    }

    #[test]
    fn filters_pass_undelegated_traffic() {
        let (mut st, mut ep) = pipeline_env();
        st.credit(fixtures::victim(), eth(1));
        let mut op = op_against(fixtures::victim(), fixtures::attacker(), 0, 0);
        op.paymaster = Some(fixtures::paymaster());
        let all = PipelineConfig {
            bundler_filter_enabled: true,
            paymaster_filter_enabled: true,
            entrypoint_static_check_enabled: true,
        };
        let receipts = bundler_submit(&mut st, &mut ep, fixtures::bundler(), &[op], all, &[]);
        assert!(receipts[0].outcome.executed());
    }
}
