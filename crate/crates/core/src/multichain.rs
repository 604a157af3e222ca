//! N independent chains sharing one EOA keyspace, and the chain-agnostic
//! replay experiment: a single chainId=0 tuple, signed once, installed on
//! every chain, each drained by a routine victim self-call.
//!
//! No state is shared between chains; nonce spaces and balances are fully
//! disjoint. One writer per chain, so the per-chain phases may fan out
//! across threads.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{auth_message, Hash32};
use crate::exec::TraceEvent;
use crate::fixtures;
use crate::guard::GuardPolicy;
use crate::harness::{
    run_scenario_a, setup_environment, EnvConfig, RunOutput, ScenarioId, ScenarioReport, SimEnv,
};
use crate::txproc::{
    build_auth_tx, process_set_code_tx, AuthorizationTuple, OuterCall, Receipt, RejectReason,
};
use crate::wei;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MultiChainError {
    #[error("duplicate chain id {0}")]
    DuplicateChainId(u64),
    #[error("at least two chains required")]
    TooFewChains,
}

/// Construction parameters for a multi-chain environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiChainConfig {
    pub chain_ids: Vec<u64>,
    /// Per-chain funding and registration template (its `chain_id` and
    /// `install_chain_id` fields are ignored).
    pub base: EnvConfig,
    /// Process chains concurrently (one writer per chain); output is
    /// identical to the sequential order.
    pub parallel: bool,
}

impl Default for MultiChainConfig {
    fn default() -> Self {
        MultiChainConfig {
            chain_ids: vec![1337, 2337, 3337],
            base: EnvConfig {
                delegate: fixtures::delegate_shared(),
                ..EnvConfig::default()
            },
            parallel: false,
        }
    }
}

/// Independent chains with identical funding and contract registration,
/// sharing the actor keyspace.
pub struct MultiChainEnv {
    pub envs: Vec<SimEnv>,
    parallel: bool,
    shared_tuple: Option<AuthorizationTuple>,
}

/// Identical setup on every chain: same funding, the drainer registered at
/// the same shared address, the token at the same address.
pub fn setup_multichain(
    config: &MultiChainConfig,
    policy: GuardPolicy,
) -> Result<MultiChainEnv, MultiChainError> {
    if config.chain_ids.len() < 2 {
        return Err(MultiChainError::TooFewChains);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &id in &config.chain_ids {
        if !seen.insert(id) {
            return Err(MultiChainError::DuplicateChainId(id));
        }
    }
    let envs = config
        .chain_ids
        .iter()
        .map(|&chain_id| {
            let env_config = EnvConfig {
                chain_id,
                ..config.base.clone()
            };
            setup_environment(&env_config, policy.clone())
        })
        .collect();
    Ok(MultiChainEnv {
        envs,
        parallel: config.parallel,
        shared_tuple: None,
    })
}

impl MultiChainEnv {
    pub fn env_mut(&mut self, chain_id: u64) -> Option<&mut SimEnv> {
        self.envs
            .iter_mut()
            .find(|e| e.chain.chain_id() == chain_id)
    }

    /// The single chain-agnostic tuple of the experiment: signed once by
    /// the victim, nonce 0, targeting the shared delegate address.
    pub fn shared_tuple(&mut self) -> AuthorizationTuple {
        if let Some(tuple) = self.shared_tuple {
            return tuple;
        }
        let target = self.envs[0].actors.delegate;
        let digest = auth_message(0, target, 0);
        let key = self.envs[0].actors.victim_key.clone();
        let signature = self.envs[0].sign(&key, &digest);
        let tuple = AuthorizationTuple {
            chain_id: 0,
            target,
            nonce: 0,
            signature,
        };
        self.shared_tuple = Some(tuple);
        tuple
    }
}

/// Submit the identical tuple in a fresh attacker-broadcast set-code
/// transaction on every chain. Per-chain receipts carry individual
/// accept/reject outcomes; the operation never fails as a whole.
pub fn replay_tuple(env: &mut MultiChainEnv, tuple: AuthorizationTuple) -> Vec<Receipt> {
    let run = |e: &mut SimEnv| -> Receipt {
        let outer = OuterCall {
            gas_limit: e.gas_limit,
            ..OuterCall::self_ping(e.actors.attacker)
        };
        let tx = build_auth_tx(&e.chain, e.actors.attacker, vec![tuple], vec![], outer)
            .expect("one tuple present");
        process_set_code_tx(&mut e.chain, &tx, &e.policy).expect("attacker funds gas")
    };
    if env.parallel {
        fan_out(&mut env.envs, run)
    } else {
        env.envs.iter_mut().map(run).collect()
    }
}

fn fan_out<T: Send>(envs: &mut [SimEnv], f: impl Fn(&mut SimEnv) -> T + Sync) -> Vec<T> {
    let mut slots: Vec<Option<T>> = Vec::new();
    slots.resize_with(envs.len(), || None);
    std::thread::scope(|scope| {
        for (env, slot) in envs.iter_mut().zip(slots.iter_mut()) {
            scope.spawn(|| *slot = Some(f(env)));
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("thread completed"))
        .collect()
}

/// Victim-side view of one chain, Before/After style.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub chain_id: u64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
    #[serde(with = "wei::dec_string")]
    pub eth_before: u128,
    #[serde(with = "wei::dec_string")]
    pub eth_after: u128,
    #[serde(with = "wei::dec_string")]
    pub tokens_before: u128,
    #[serde(with = "wei::dec_string")]
    pub tokens_after: u128,
}

/// Per-chain rows plus the totals row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    pub delegation_writes: u64,
    #[serde(with = "wei::dec_string")]
    pub total_eth_before: u128,
    #[serde(with = "wei::dec_string")]
    pub total_eth_drained: u128,
    #[serde(with = "wei::dec_string")]
    pub total_tokens_before: u128,
    #[serde(with = "wei::dec_string")]
    pub total_tokens_drained: u128,
}

/// Per-chain trace bundle: (tx hash, events) pairs keyed by chain id.
pub type ChainTraces = (u64, Vec<(Hash32, Vec<TraceEvent>)>);

/// Everything a cross-chain run produces, ready for disk emission.
pub struct CrosschainRun {
    pub replay_receipts: Vec<Receipt>,
    pub reports: Vec<ScenarioReport>,
    pub aggregate: AggregateReport,
    pub before_states: Vec<(u64, String)>,
    pub after_states: Vec<(u64, String)>,
    pub traces: Vec<ChainTraces>,
}

/// The replay experiment end to end: craft the single tuple, replay it on
/// every chain, fire the user-driven trigger per chain, aggregate.
pub fn run_crosschain_experiment(env: &mut MultiChainEnv) -> CrosschainRun {
    let before_states: Vec<(u64, String)> = env
        .envs
        .iter()
        .map(|e| (e.chain.chain_id(), e.chain.to_json()))
        .collect();

    let tuple = env.shared_tuple();
    let replay_receipts = replay_tuple(env, tuple);

    let trigger = |e: &mut SimEnv| -> ScenarioReport {
        let mut report = run_scenario_a(e);
        report.scenario_id = ScenarioId::Crosschain;
        report
    };
    let mut reports = if env.parallel {
        fan_out(&mut env.envs, trigger)
    } else {
        env.envs.iter_mut().map(trigger).collect::<Vec<_>>()
    };

    let mut rows = Vec::new();
    for (i, report) in reports.iter_mut().enumerate() {
        let outcome = &replay_receipts[i].tuples_applied[0];
        rows.push(AggregateRow {
            chain_id: report.chain_id,
            accepted: outcome.accepted,
            reject_reason: outcome.reject_reason,
            eth_before: report.eth_before,
            eth_after: report.eth_after,
            tokens_before: report.tokens_before,
            tokens_after: report.tokens_after,
        });
    }
    let aggregate = AggregateReport {
        delegation_writes: rows.iter().filter(|r| r.accepted).count() as u64,
        total_eth_before: rows.iter().map(|r| r.eth_before).sum(),
        total_eth_drained: reports.iter().map(|r| r.attacker_gain_eth).sum(),
        total_tokens_before: rows.iter().map(|r| r.tokens_before).sum(),
        total_tokens_drained: reports.iter().map(|r| r.attacker_gain_tokens).sum(),
        rows,
    };

    let after_states = env
        .envs
        .iter()
        .map(|e| (e.chain.chain_id(), e.chain.to_json()))
        .collect();
    let traces = env
        .envs
        .iter()
        .map(|e| (e.chain.chain_id(), RunOutput::collect_traces(&e.chain)))
        .collect();

    CrosschainRun {
        replay_receipts,
        reports,
        aggregate,
        before_states,
        after_states,
        traces,
    }
}

/// Layout: `reports/chain_{id}/crosschain.json`, `reports/aggregate.json`,
/// `state/chain_{id}/{before,after}.json`, `traces/chain_{id}/{hash}.jsonl`.
pub fn write_crosschain_dir(dir: &Path, run: &CrosschainRun) -> std::io::Result<()> {
    for report in &run.reports {
        let chain_dir = dir
            .join("reports")
            .join(format!("chain_{}", report.chain_id));
        std::fs::create_dir_all(&chain_dir)?;
        std::fs::write(
            chain_dir.join("crosschain.json"),
            serde_json::to_string_pretty(report).expect("report serializes"),
        )?;
    }
    std::fs::create_dir_all(dir.join("reports"))?;
    std::fs::write(
        dir.join("reports/aggregate.json"),
        serde_json::to_string_pretty(&run.aggregate).expect("aggregate serializes"),
    )?;
    for (set, name) in [(&run.before_states, "before"), (&run.after_states, "after")] {
        for (chain_id, json) in set.iter() {
            let state_dir = dir.join("state").join(format!("chain_{chain_id}"));
            std::fs::create_dir_all(&state_dir)?;
            std::fs::write(state_dir.join(format!("{name}.json")), json)?;
        }
    }
    for (chain_id, traces) in &run.traces {
        let trace_dir = dir.join("traces").join(format!("chain_{chain_id}"));
        std::fs::create_dir_all(&trace_dir)?;
        for (hash, events) in traces {
            let mut lines = String::new();
            for event in events {
                lines.push_str(&serde_json::to_string(event).expect("event serializes"));
                lines.push('\n');
            }
            std::fs::write(trace_dir.join(format!("{}.jsonl", hash.to_hex())), lines)?;
        }
    }
    Ok(())
}
