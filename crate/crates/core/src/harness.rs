//! Orchestration of the full attack lifecycle: environment setup, the
//! one-time delegation install, the three trigger scenarios, drain
//! evaluation, and structured reports.
//!
//! The victim signs exactly one authorization tuple per environment. Every
//! later event (user-driven, attacker-driven, ambient, or pipeline-relayed)
//! runs without any further victim signature; the environment counts
//! signing operations per key so tests can assert that.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aa4337::EntryPointModel;
use crate::codec::{auth_message, Address, Hash32};
use crate::exec::{register_behavior, ContractBehavior, TraceEvent};
use crate::fixtures;
use crate::guard::GuardPolicy;
use crate::signing::{sign_digest, PrivateKey};
use crate::state::{ChainState, DEFAULT_GAS_LIMIT, GAS_PRICE_WEI};
use crate::txproc::{
    build_auth_tx, process_call_tx, process_set_code_tx, AuthorizationTuple, OuterCall, Receipt,
    RejectReason, TxError,
};
use crate::wei::{self, eth};

/// Default economically-meaningful-loss threshold: far above gas dust, far
/// below any experiment's drain.
pub const DEFAULT_DRAIN_DELTA_WEI: u128 = eth(1) / 100;

/// Residual the drain assertions tolerate on a "drained" account under the
/// flat gas model.
pub const DUST_THRESHOLD_WEI: u128 = eth(1) / 100;

/// Value of the user-driven self-send trigger.
pub const SELF_SEND_VALUE_WEI: u128 = eth(1) / 10;

/// Value the protocol forwards in the ambient trigger.
pub const AMBIENT_VALUE_WEI: u128 = eth(1) / 10;

/// Re-funding amount for the persistence checks.
pub const REFUND_VALUE_WEI: u128 = eth(1);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("install transaction failed: {0}")]
    InstallTx(#[from] TxError),
    #[error("install tuple rejected: {0:?}")]
    InstallRejected(RejectReason),
}

/// The cast of one environment.
#[derive(Debug, Clone)]
pub struct ActorSet {
    pub victim_key: PrivateKey,
    pub attacker_key: PrivateKey,
    pub victim: Address,
    pub attacker: Address,
    pub delegate: Address,
    pub token: Address,
    pub protocol: Address,
}

/// Environment construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub chain_id: u64,
    /// Initial balance for victim and attacker, each.
    #[serde(with = "wei::dec_string")]
    pub funding_wei: u128,
    /// Token base units minted to the victim.
    #[serde(with = "wei::dec_string")]
    pub token_units: u128,
    /// Float for the bundler and paymaster accounts, each.
    #[serde(with = "wei::dec_string")]
    pub infra_float_wei: u128,
    /// Where the draining delegate is registered.
    pub delegate: Address,
    pub gas_limit: u64,
    #[serde(with = "wei::dec_string")]
    pub drain_delta_wei: u128,
    /// Chain id the install tuple is signed for; `None` means the
    /// environment's own chain id (chain-specific tuple).
    pub install_chain_id: Option<u64>,
    /// Key overrides as 0x-prefixed hex; `None` selects the stock devnet
    /// fixtures. Must be valid key material (validate with
    /// [`PrivateKey::from_hex`] before building the config).
    pub victim_key_hex: Option<String>,
    pub attacker_key_hex: Option<String>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            chain_id: 1337,
            funding_wei: eth(10_000),
            token_units: wei::tokens(2_000),
            infra_float_wei: eth(100),
            delegate: fixtures::delegate_local(),
            gas_limit: DEFAULT_GAS_LIMIT,
            drain_delta_wei: DEFAULT_DRAIN_DELTA_WEI,
            install_chain_id: None,
            victim_key_hex: None,
            attacker_key_hex: None,
        }
    }
}

/// Success window for the drain condition: victim balance strictly
/// decreases and the attacker receives at least `delta` through at least
/// one delegated dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainCriterion {
    #[serde(with = "wei::dec_string")]
    pub delta: u128,
    pub window_start: u64,
    pub window_end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    A,
    B,
    C,
    Pipeline,
    Crosschain,
    Composite,
}

impl ScenarioId {
    pub fn file_stem(&self) -> &'static str {
        match self {
            ScenarioId::A => "a",
            ScenarioId::B => "b",
            ScenarioId::C => "c",
            ScenarioId::Pipeline => "pipeline",
            ScenarioId::Crosschain => "crosschain",
            ScenarioId::Composite => "composite",
        }
    }
}

/// Before/after accounting for one scenario window. All amounts are exact
/// integers; attacker gains are the values received by the sink within the
/// window's traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario_id: ScenarioId,
    pub chain_id: u64,
    pub window_start: u64,
    pub window_end: u64,
    #[serde(with = "wei::dec_string")]
    pub eth_before: u128,
    #[serde(with = "wei::dec_string")]
    pub eth_after: u128,
    #[serde(with = "wei::dec_string")]
    pub tokens_before: u128,
    #[serde(with = "wei::dec_string")]
    pub tokens_after: u128,
    #[serde(with = "wei::dec_string")]
    pub attacker_gain_eth: u128,
    #[serde(with = "wei::dec_string")]
    pub attacker_gain_tokens: u128,
    /// Wei moved to the victim through the bookkeeping faucet inside this
    /// window (re-funding between calls).
    #[serde(with = "wei::dec_string")]
    pub victim_refunded: u128,
    /// Gas burned by transactions the victim itself sent in this window.
    #[serde(with = "wei::dec_string")]
    pub victim_gas: u128,
    pub fallback_executed: bool,
    pub tx_hashes: Vec<Hash32>,
    pub drain_satisfied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger_origin: Option<String>,
}

/// One chain, its actors, policy, entry point, and the single phished
/// tuple.
pub struct SimEnv {
    pub chain: ChainState,
    pub actors: ActorSet,
    pub policy: GuardPolicy,
    pub entry_point: EntryPointModel,
    pub bundler: Address,
    pub paymaster: Address,
    pub gas_limit: u64,
    pub drain_delta: u128,
    install_chain_id: Option<u64>,
    phase1_tuple: Option<AuthorizationTuple>,
    sign_counts: BTreeMap<Address, u64>,
    initial_total_wei: u128,
}

/// Build a funded chain: victim and attacker funded per config, token
/// minted to the victim, drainer and protocol registered, entry point and
/// relay accounts in place.
pub fn setup_environment(config: &EnvConfig, policy: GuardPolicy) -> SimEnv {
    let victim_key = match &config.victim_key_hex {
        Some(hex) => PrivateKey::from_hex(hex).expect("invalid victim key in config"),
        None => fixtures::victim_key(),
    };
    let attacker_key = match &config.attacker_key_hex {
        Some(hex) => PrivateKey::from_hex(hex).expect("invalid attacker key in config"),
        None => fixtures::attacker_key(),
    };
    let actors = ActorSet {
        victim: victim_key.address(),
        attacker: attacker_key.address(),
        victim_key,
        attacker_key,
        delegate: config.delegate,
        token: fixtures::token(),
        protocol: fixtures::protocol(),
    };
    assert_ne!(actors.victim, actors.attacker);

    let mut chain = ChainState::new(config.chain_id);
    chain.credit(actors.victim, config.funding_wei);
    chain.credit(actors.attacker, config.funding_wei);
    chain.credit(fixtures::bundler(), config.infra_float_wei);
    chain.credit(fixtures::paymaster(), config.infra_float_wei);

    register_behavior(&mut chain, actors.token, ContractBehavior::MockErc20).expect("fresh chain");
    crate::exec::erc20_mint(&mut chain, actors.token, actors.victim, config.token_units)
        .expect("token just registered");
    register_behavior(
        &mut chain,
        actors.delegate,
        ContractBehavior::MaliciousDrainer {
            sink: actors.attacker,
            watched_tokens: vec![actors.token],
        },
    )
    .expect("fresh chain");
    register_behavior(&mut chain, actors.protocol, ContractBehavior::DummyProtocol)
        .expect("fresh chain");

    let initial_total_wei = chain.total_wei();
    SimEnv {
        chain,
        actors,
        policy,
        entry_point: EntryPointModel::new(fixtures::entry_point()),
        bundler: fixtures::bundler(),
        paymaster: fixtures::paymaster(),
        gas_limit: config.gas_limit,
        drain_delta: config.drain_delta_wei,
        install_chain_id: config.install_chain_id,
        phase1_tuple: None,
        sign_counts: BTreeMap::new(),
        initial_total_wei,
    }
}

impl SimEnv {
    /// Sign a digest with a key, counting the event for that key's address.
    pub fn sign(
        &mut self,
        key: &PrivateKey,
        digest: &Hash32,
    ) -> crate::signing::RecoverableSignature {
        *self.sign_counts.entry(key.address()).or_default() += 1;
        sign_digest(key, digest)
    }

    /// How many signing operations this environment performed with the
    /// key bound to `addr`.
    pub fn sign_count(&self, addr: Address) -> u64 {
        self.sign_counts.get(&addr).copied().unwrap_or(0)
    }

    /// The one tuple the victim is phished into signing: delegate the
    /// account to the drainer, chain-specific unless configured agnostic.
    pub fn phished_tuple(&mut self) -> AuthorizationTuple {
        if let Some(tuple) = self.phase1_tuple {
            return tuple;
        }
        let chain_id = self.install_chain_id.unwrap_or(self.chain.chain_id());
        let nonce = self.chain.nonce(self.actors.victim);
        let digest = auth_message(chain_id, self.actors.delegate, nonce);
        let key = self.actors.victim_key.clone();
        let signature = self.sign(&key, &digest);
        let tuple = AuthorizationTuple {
            chain_id,
            target: self.actors.delegate,
            nonce,
            signature,
        };
        self.phase1_tuple = Some(tuple);
        tuple
    }

    /// Bookkeeping faucet: move value to the victim from the attacker's
    /// reserves without dispatching a call (a dispatched transfer would
    /// itself trigger the delegated sweep). Returns the amount moved.
    pub fn refund_victim(&mut self, amount: u128) -> u128 {
        let amount = amount.min(self.chain.balance(self.actors.attacker));
        self.chain
            .transfer_value(self.actors.attacker, self.actors.victim, amount)
            .expect("capped at balance");
        amount
    }

    fn assert_conservation(&self) {
        assert_eq!(
            self.chain.total_wei(),
            self.initial_total_wei,
            "wei conservation violated"
        );
    }

    pub(crate) fn begin_window(&self) -> WindowStart {
        WindowStart {
            height: self.chain.height(),
            victim_eth: self.chain.balance(self.actors.victim),
            victim_tokens: crate::exec::erc20_balance_of(
                &self.chain,
                self.actors.token,
                self.actors.victim,
            )
            .unwrap_or(0),
        }
    }

    pub(crate) fn finish_report(
        &self,
        scenario_id: ScenarioId,
        start: WindowStart,
        victim_refunded: u128,
        victim_gas: u128,
        trigger_origin: Option<String>,
    ) -> ScenarioReport {
        self.assert_conservation();
        let window = (start.height, self.chain.height());
        let (gain_eth, gain_tokens, fallback) =
            window_gains(&self.chain, self.actors.attacker, window);
        let eth_after = self.chain.balance(self.actors.victim);
        let criterion = DrainCriterion {
            delta: self.drain_delta,
            window_start: window.0,
            window_end: window.1,
        };
        let drain_satisfied = drain_condition(
            &self.chain,
            start.victim_eth,
            eth_after,
            self.actors.victim,
            self.actors.attacker,
            &criterion,
        );
        ScenarioReport {
            scenario_id,
            chain_id: self.chain.chain_id(),
            window_start: window.0,
            window_end: window.1,
            eth_before: start.victim_eth,
            eth_after,
            tokens_before: start.victim_tokens,
            tokens_after: crate::exec::erc20_balance_of(
                &self.chain,
                self.actors.token,
                self.actors.victim,
            )
            .unwrap_or(0),
            attacker_gain_eth: gain_eth,
            attacker_gain_tokens: gain_tokens,
            victim_refunded,
            victim_gas,
            fallback_executed: fallback,
            tx_hashes: window_hashes(&self.chain, window),
            drain_satisfied,
            trigger_origin,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowStart {
    pub height: u64,
    pub victim_eth: u128,
    pub victim_tokens: u128,
}

fn in_window(height: u64, window: (u64, u64)) -> bool {
    height > window.0 && height <= window.1
}

fn window_receipts(chain: &ChainState, window: (u64, u64)) -> impl Iterator<Item = &Receipt> {
    chain
        .receipts()
        .iter()
        .filter(move |r| in_window(r.height, window))
}

fn window_hashes(chain: &ChainState, window: (u64, u64)) -> Vec<Hash32> {
    window_receipts(chain, window).map(|r| r.tx_hash).collect()
}

/// Sum of (eth, tokens) received by `sink` in the window's traces, plus
/// whether any fallback executed.
fn window_gains(chain: &ChainState, sink: Address, window: (u64, u64)) -> (u128, u128, bool) {
    let mut gain_eth = 0u128;
    let mut gain_tokens = 0u128;
    let mut fallback = false;
    for receipt in window_receipts(chain, window) {
        for event in &receipt.trace {
            match event {
                TraceEvent::ValueTransfer { to, amount, .. } if *to == sink => gain_eth += amount,
                TraceEvent::TokenTransfer { to, amount, .. } if *to == sink => {
                    gain_tokens += amount
                }
                TraceEvent::FallbackExecuted { .. } => fallback = true,
                _ => {}
            }
        }
    }
    (gain_eth, gain_tokens, fallback)
}

fn drain_condition(
    chain: &ChainState,
    victim_eth_before: u128,
    victim_eth_after: u128,
    victim: Address,
    attacker: Address,
    criterion: &DrainCriterion,
) -> bool {
    let window = (criterion.window_start, criterion.window_end);
    let (received, _, _) = window_gains(chain, attacker, window);
    let delegated_dispatch = window_receipts(chain, window).any(|r| {
        r.trace.iter().any(
            |e| matches!(e, TraceEvent::DelegationResolved { account, .. } if *account == victim),
        )
    });
    victim_eth_after < victim_eth_before && received >= criterion.delta && delegated_dispatch
}

/// The drain condition over two state snapshots: the victim's balance
/// strictly decreased, the attacker received at least `criterion.delta`
/// within the window, and at least one trace in the window dereferenced the
/// victim's delegation indicator. The receipt log of `after` covers the
/// window.
pub fn check_drain(
    before: &ChainState,
    after: &ChainState,
    victim: Address,
    attacker: Address,
    criterion: &DrainCriterion,
) -> bool {
    drain_condition(
        after,
        before.balance(victim),
        after.balance(victim),
        victim,
        attacker,
        criterion,
    )
}

/// Phase 1: craft the phished tuple (once per environment), embed it in a
/// set-code transaction broadcast by the attacker, and process it. The
/// outer call is an attacker self-ping; the delegation write is what
/// matters, and it survives outer-call failure.
pub fn run_phase1_install(env: &mut SimEnv) -> Result<Receipt, HarnessError> {
    let tuple = env.phished_tuple();
    let outer = OuterCall {
        gas_limit: env.gas_limit,
        ..OuterCall::self_ping(env.actors.attacker)
    };
    let tx = build_auth_tx(&env.chain, env.actors.attacker, vec![tuple], vec![], outer)?;
    let receipt = process_set_code_tx(&mut env.chain, &tx, &env.policy)?;
    match &receipt.tuples_applied[0] {
        outcome if outcome.accepted => Ok(receipt),
        outcome => Err(HarnessError::InstallRejected(
            outcome
                .reject_reason
                .expect("rejected outcome carries a reason"),
        )),
    }
}

/// Scenario A, the user-driven trigger: the victim sends 0.1 ETH to its own
/// address (value clamped to what the account can spend after the gas
/// withhold, so degenerate zero-funding environments still dispatch).
pub fn run_scenario_a(env: &mut SimEnv) -> ScenarioReport {
    let start = env.begin_window();
    let victim = env.actors.victim;
    let withhold = (env.gas_limit as u128 * GAS_PRICE_WEI).min(env.chain.balance(victim));
    let spendable = env.chain.balance(victim) - withhold;
    let value = SELF_SEND_VALUE_WEI.min(spendable);
    let receipt = process_call_tx(
        &mut env.chain,
        victim,
        victim,
        value,
        Vec::new(),
        env.gas_limit,
    );
    let victim_gas = receipt.gas_used as u128 * GAS_PRICE_WEI;
    env.finish_report(ScenarioId::A, start, 0, victim_gas, None)
}

/// Scenario B, the attacker-driven trigger: one empty-calldata call sweeps the
/// residual to exactly zero; the victim is then re-funded 1 ETH through the
/// bookkeeping faucet and a second call sweeps that too.
pub fn run_scenario_b(env: &mut SimEnv) -> ScenarioReport {
    let start = env.begin_window();
    let (attacker, victim) = (env.actors.attacker, env.actors.victim);
    process_call_tx(
        &mut env.chain,
        attacker,
        victim,
        0,
        Vec::new(),
        env.gas_limit,
    );
    let refunded = env.refund_victim(REFUND_VALUE_WEI);
    process_call_tx(
        &mut env.chain,
        attacker,
        victim,
        0,
        Vec::new(),
        env.gas_limit,
    );
    env.finish_report(ScenarioId::B, start, refunded, 0, None)
}

/// Scenario C, the ambient trigger: the protocol contract forwards 0.1 ETH to
/// the victim via its forward-and-call entry point, funded by the attacker
/// acting as an ordinary protocol caller.
pub fn run_scenario_c(env: &mut SimEnv) -> ScenarioReport {
    let start = env.begin_window();
    let (attacker, victim, protocol) =
        (env.actors.attacker, env.actors.victim, env.actors.protocol);
    let value = AMBIENT_VALUE_WEI.min(
        env.chain
            .balance(attacker)
            .saturating_sub(env.gas_limit as u128 * GAS_PRICE_WEI),
    );
    process_call_tx(
        &mut env.chain,
        attacker,
        protocol,
        value,
        victim.0.to_vec(),
        env.gas_limit,
    );
    env.finish_report(ScenarioId::C, start, 0, 0, None)
}

/// The full lifecycle: install, then scenarios A, B, C in order. Returns
/// the three scenario reports plus an aggregate report spanning the whole
/// window.
pub fn run_full_pipeline(env: &mut SimEnv) -> Result<Vec<ScenarioReport>, HarnessError> {
    let start = env.begin_window();
    run_phase1_install(env)?;
    let a = run_scenario_a(env);
    let b = run_scenario_b(env);
    let c = run_scenario_c(env);
    let refunded = b.victim_refunded;
    let victim_gas = a.victim_gas;
    let aggregate = env.finish_report(ScenarioId::Pipeline, start, refunded, victim_gas, None);
    Ok(vec![a, b, c, aggregate])
}

// ---------------------------------------------------------------------------
// Run directory emission
// ---------------------------------------------------------------------------

/// Artifacts of one run, ready to be laid out on disk.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub reports: Vec<ScenarioReport>,
    pub before_state_json: String,
    pub after_state_json: String,
    pub traces: Vec<(Hash32, Vec<TraceEvent>)>,
}

impl RunOutput {
    pub fn collect_traces(chain: &ChainState) -> Vec<(Hash32, Vec<TraceEvent>)> {
        chain
            .receipts()
            .iter()
            .map(|r| (r.tx_hash, r.trace.clone()))
            .collect()
    }
}

/// Write `reports/{scenario}.json`, `traces/{txhash}.jsonl`, and
/// `state/{before,after}.json` under `dir`.
pub fn write_run_dir(dir: &Path, output: &RunOutput) -> std::io::Result<()> {
    let reports = dir.join("reports");
    let traces = dir.join("traces");
    let state = dir.join("state");
    std::fs::create_dir_all(&reports)?;
    std::fs::create_dir_all(&traces)?;
    std::fs::create_dir_all(&state)?;

    for report in &output.reports {
        let path = reports.join(format!("{}.json", report.scenario_id.file_stem()));
        std::fs::write(
            path,
            serde_json::to_string_pretty(report).expect("report serializes"),
        )?;
    }
    for (hash, events) in &output.traces {
        let mut lines = String::new();
        for event in events {
            lines.push_str(&serde_json::to_string(event).expect("event serializes"));
            lines.push('\n');
        }
        std::fs::write(traces.join(format!("{}.jsonl", hash.to_hex())), lines)?;
    }
    std::fs::write(state.join("before.json"), &output.before_state_json)?;
    std::fs::write(state.join("after.json"), &output.after_state_json)?;
    Ok(())
}
