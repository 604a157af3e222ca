//! Command-line front door for the delegation simulator.
//!
//! Machine output is JSON on stdout; diagnostics go to stderr. Exit codes
//! are stable for scripting: 0 success (or an expected policy block),
//! 2 usage error, 3 tuple rejected by the active policy, 4 scenario
//! postcondition failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use sim7702_core::codec::{decode_tuple_hex, encode_tuple_hex, Address};
use sim7702_core::guard::{scan_code, GuardPolicy, ScopedTupleExtension};
use sim7702_core::harness::{self, EnvConfig, RunOutput, ScenarioReport, SimEnv};
use sim7702_core::multichain::{self, run_crosschain_experiment, setup_multichain};
use sim7702_core::state::ChainState;
use sim7702_core::txproc::{
    build_auth_tx, process_set_code_tx, OuterCall, Receipt, RejectReason, SetCodeTransaction,
};
use sim7702_core::wei::format_eth;
use sim7702_core::{aa4337, fixtures};

use config::{resolve_key, resolve_policy, RunConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_POLICY_REJECTION: u8 = 3;
const EXIT_POSTCONDITION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sim7702",
    about = "Desk-scale simulator of EIP-7702 delegation semantics and drain scenarios",
    version
)]
struct Cli {
    /// Run configuration JSON.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for state files and run artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Policy preset (permissive|strict|all-filters) or a JSON file path.
    #[arg(long, global = true, value_name = "NAME|PATH")]
    policy: Option<String>,
    /// Seed recorded for reproducibility of randomized property runs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create the output directory and per-chain state files.
    Init,
    /// Sign an authorization tuple and write it as a .hex file.
    CraftTuple {
        #[arg(long)]
        chain_id: u64,
        /// Delegation target address.
        #[arg(long)]
        target: String,
        #[arg(long)]
        nonce: u64,
        /// Signing key: 0x-hex or a fixture name (victim|attacker).
        #[arg(long)]
        key: String,
        /// Destination file; stdout JSON carries the hex either way.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Build and process a set-code transaction against the persisted chain.
    Authtx {
        /// Tuple .hex file(s), in authorization-list order.
        #[arg(long, value_name = "FILE")]
        tuple: Vec<PathBuf>,
        /// Full transaction document (JSON mirroring the tx fields);
        /// overrides the individual flags.
        #[arg(long, value_name = "FILE")]
        tx: Option<PathBuf>,
        /// Sender: address hex or fixture name (victim|attacker).
        #[arg(long, default_value = "attacker")]
        sender: String,
        /// Outer call destination; defaults to the sender.
        #[arg(long)]
        to: Option<String>,
        /// Outer call value in wei.
        #[arg(long, default_value = "0")]
        value: String,
        /// Attach a scope extension: expiry height.
        #[arg(long)]
        scope_expiry: Option<u64>,
        /// Attach a scope extension: single-use delegation.
        #[arg(long)]
        scope_single_use: bool,
        /// Attach a scope extension: foreground-only delegation.
        #[arg(long)]
        scope_foreground: bool,
    },
    /// Execute a scenario or experiment and write its run directory.
    Run {
        /// a | b | c | pipeline | crosschain | composite
        scenario: String,
    },
    /// List active delegations in a persisted state file.
    Scan {
        /// State file; defaults to the primary chain's persisted state.
        #[arg(long, value_name = "FILE")]
        state: Option<PathBuf>,
        /// Restrict the scan to one address.
        address: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let policy = resolve_policy(cli.policy.as_deref(), &config)?;
    let output_dir = cli
        .output
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Init => cmd_init(&config, &policy, &output_dir),
        Command::CraftTuple {
            chain_id,
            target,
            nonce,
            key,
            out,
        } => cmd_craft_tuple(chain_id, &target, nonce, &key, out.as_deref()),
        Command::Authtx {
            tuple,
            tx,
            sender,
            to,
            value,
            scope_expiry,
            scope_single_use,
            scope_foreground,
        } => {
            let scope = if scope_expiry.is_some() || scope_single_use || scope_foreground {
                Some(ScopedTupleExtension {
                    expiry_height: scope_expiry,
                    single_use: scope_single_use,
                    foreground_only: scope_foreground,
                })
            } else {
                None
            };
            cmd_authtx(
                &config,
                &policy,
                &output_dir,
                &tuple,
                tx.as_deref(),
                &sender,
                to.as_deref(),
                &value,
                scope,
            )
        }
        Command::Run { scenario } => cmd_run(&config, &policy, &output_dir, &scenario),
        Command::Scan { state, address } => {
            cmd_scan(&config, &output_dir, state.as_deref(), address.as_deref())
        }
    }
}

fn state_file(output_dir: &Path, chain_id: u64) -> PathBuf {
    output_dir.join(format!("state_{chain_id}.json"))
}

fn load_chain(output_dir: &Path, chain_id: u64) -> Result<ChainState> {
    let path = state_file(output_dir, chain_id);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading state file {} (run `init` first)", path.display()))?;
    ChainState::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save_chain(output_dir: &Path, chain: &ChainState) -> Result<()> {
    let path = state_file(output_dir, chain.chain_id());
    std::fs::write(&path, chain.to_json())
        .with_context(|| format!("writing state file {}", path.display()))
}

fn cmd_init(config: &RunConfig, policy: &GuardPolicy, output_dir: &Path) -> Result<ExitCode> {
    std::fs::create_dir_all(output_dir)
        .with_context(|| format!("creating {}", output_dir.display()))?;
    let mut files = Vec::new();
    for spec in &config.chains {
        let env_config = EnvConfig {
            chain_id: spec.chain_id,
            funding_wei: spec.funding_wei,
            ..config.env_config(fixtures::delegate_local())
        };
        let env = harness::setup_environment(&env_config, policy.clone());
        save_chain(output_dir, &env.chain)?;
        files.push(state_file(output_dir, spec.chain_id));
        eprintln!(
            "chain {}: victim {} funded {} ETH",
            spec.chain_id,
            env.actors.victim,
            format_eth(spec.funding_wei)
        );
    }
    println!(
        "{}",
        serde_json::json!({
            "initialized": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_craft_tuple(
    chain_id: u64,
    target: &str,
    nonce: u64,
    key: &str,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let target = Address::from_hex(target).map_err(|e| anyhow!("bad target address: {e}"))?;
    let key = resolve_key(Some(key), "victim")?;
    let digest = sim7702_core::codec::auth_message(chain_id, target, nonce);
    let signature = sim7702_core::signing::sign_digest(&key, &digest);
    let tuple = sim7702_core::txproc::AuthorizationTuple {
        chain_id,
        target,
        nonce,
        signature,
    };
    let hex_text = encode_tuple_hex(&tuple);
    let authority = sim7702_core::signing::recover_authority(&digest, &signature)
        .map_err(|e| anyhow!("crafted tuple failed self-check: {e}"))?;

    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, format!("{hex_text}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    println!(
        "{}",
        serde_json::json!({
            "tuple_hex": hex_text,
            "authority": authority,
            "chain_id": chain_id,
            "target": target,
            "nonce": nonce,
        })
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_authtx(
    config: &RunConfig,
    policy: &GuardPolicy,
    output_dir: &Path,
    tuple_files: &[PathBuf],
    tx_file: Option<&Path>,
    sender: &str,
    to: Option<&str>,
    value: &str,
    scope: Option<ScopedTupleExtension>,
) -> Result<ExitCode> {
    let mut chain = load_chain(output_dir, config.primary_chain().chain_id)?;

    let tx: SetCodeTransaction = if let Some(path) = tx_file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading tx document {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        if tuple_files.is_empty() {
            bail!("authtx needs --tuple FILE (repeatable) or --tx FILE");
        }
        let mut tuples = Vec::new();
        for path in tuple_files {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading tuple {}", path.display()))?;
            tuples.push(decode_tuple_hex(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?);
        }
        let sender = resolve_address(sender, config)?;
        let to = match to {
            Some(addr) => resolve_address(addr, config)?,
            None => sender,
        };
        let value: u128 = value
            .parse()
            .map_err(|_| anyhow!("bad --value, expected wei"))?;
        let scopes = match scope {
            Some(ext) => vec![Some(ext); tuples.len()],
            None => Vec::new(),
        };
        build_auth_tx(
            &chain,
            sender,
            tuples,
            scopes,
            OuterCall {
                to,
                value,
                data: Vec::new(),
                gas_limit: config.gas_limit,
                max_fee: sim7702_core::state::GAS_PRICE_WEI,
            },
        )?
    };

    eprintln!(
        "processing type-0x04 transaction ({} tuple(s))",
        tx.auth_list.len()
    );
    let receipt = process_set_code_tx(&mut chain, &tx, policy)?;
    describe_receipt(&chain, &receipt);
    save_chain(output_dir, &chain)?;
    println!("{}", serde_json::to_string_pretty(&receipt)?);

    let policy_rejected = receipt.tuples_applied.iter().any(|o| {
        matches!(
            o.reject_reason,
            Some(RejectReason::ChainAgnosticForbidden) | Some(RejectReason::ScopeRequired)
        )
    });
    if policy_rejected {
        eprintln!("tuple rejected under the active policy");
        return Ok(ExitCode::from(EXIT_POLICY_REJECTION));
    }
    Ok(ExitCode::SUCCESS)
}

fn describe_receipt(chain: &ChainState, receipt: &Receipt) {
    for outcome in &receipt.tuples_applied {
        match (&outcome.authority, outcome.accepted) {
            (Some(authority), true) => {
                eprintln!(
                    "tuple accepted: authority {authority} -> target {}",
                    outcome.target
                );
                if let Some(target) = chain.is_delegated(*authority) {
                    eprintln!("delegation indicator written: 0xef0100 || {target}");
                }
            }
            (authority, false) => eprintln!(
                "tuple rejected ({:?}): authority {:?}",
                outcome.reject_reason, authority
            ),
            _ => {}
        }
    }
    eprintln!(
        "outer call {}, gas used {}",
        if receipt.success {
            "succeeded"
        } else {
            "reverted (delegation writes persist)"
        },
        receipt.gas_used
    );
}

/// Resolve an address spec; actor names follow the configured key
/// material, so overridden keys keep the names meaningful.
fn resolve_address(spec: &str, config: &RunConfig) -> Result<Address> {
    match spec {
        "victim" => Ok(resolve_key(config.actors.victim_key.as_deref(), "victim")?.address()),
        "attacker" => Ok(resolve_key(config.actors.attacker_key.as_deref(), "attacker")?.address()),
        hex => Address::from_hex(hex).map_err(|e| anyhow!("bad address {spec:?}: {e}")),
    }
}

fn cmd_run(
    config: &RunConfig,
    policy: &GuardPolicy,
    output_dir: &Path,
    scenario: &str,
) -> Result<ExitCode> {
    if scenario == "crosschain" {
        return run_crosschain(config, policy, output_dir);
    }

    if !matches!(scenario, "a" | "b" | "c" | "pipeline" | "composite") {
        bail!("unknown scenario {scenario:?}: expected a|b|c|pipeline|crosschain|composite");
    }

    let env_config = config.env_config(fixtures::delegate_local());
    let mut env = harness::setup_environment(&env_config, policy.clone());
    let before_json = env.chain.to_json();

    let mut reports: Vec<ScenarioReport> = Vec::new();
    let mut install_blocked = false;
    if scenario == "pipeline" {
        match harness::run_full_pipeline(&mut env) {
            Ok(pipeline_reports) => reports = pipeline_reports,
            Err(harness::HarnessError::InstallRejected(reason)) => {
                eprintln!("install blocked by policy: {reason:?}");
                install_blocked = true;
            }
            Err(other) => return Err(other.into()),
        }
    } else {
        match harness::run_phase1_install(&mut env) {
            Ok(receipt) => eprintln!("delegation installed (tx {})", receipt.tx_hash),
            Err(harness::HarnessError::InstallRejected(reason)) => {
                eprintln!("install blocked by policy: {reason:?}");
                install_blocked = true;
            }
            Err(other) => return Err(other.into()),
        }
        if !install_blocked {
            match scenario {
                "a" => reports.push(harness::run_scenario_a(&mut env)),
                "b" => {
                    reports.push(harness::run_scenario_a(&mut env));
                    reports.push(harness::run_scenario_b(&mut env));
                }
                "c" => {
                    reports.push(harness::run_scenario_a(&mut env));
                    reports.push(harness::run_scenario_b(&mut env));
                    reports.push(harness::run_scenario_c(&mut env));
                }
                _ => reports.push(aa4337::run_composite_attack(&mut env)),
            }
        }
    }

    let output = RunOutput {
        reports: reports.clone(),
        before_state_json: before_json,
        after_state_json: env.chain.to_json(),
        traces: RunOutput::collect_traces(&env.chain),
    };
    harness::write_run_dir(output_dir, &output)?;
    save_chain(output_dir, &env.chain)?;

    let verdict = evaluate_run(config, policy, scenario, install_blocked, &reports, &env);
    for report in &reports {
        eprintln!(
            "scenario {}: victim {} -> {} ETH, attacker gained {} ETH / {} tokens",
            report.scenario_id.file_stem(),
            format_eth(report.eth_before),
            format_eth(report.eth_after),
            format_eth(report.attacker_gain_eth),
            format_eth(report.attacker_gain_tokens),
        );
    }
    if let Some(primary) = reports.last() {
        println!("{}", serde_json::to_string_pretty(primary)?);
    } else {
        println!(
            "{}",
            serde_json::json!({ "scenario": scenario, "blocked_at_install": true })
        );
    }

    match verdict {
        Ok(outcome) => {
            eprintln!("{outcome}");
            Ok(ExitCode::SUCCESS)
        }
        Err(why) => {
            eprintln!("postcondition failure: {why}");
            Ok(ExitCode::from(EXIT_POSTCONDITION))
        }
    }
}

fn policy_is_restrictive(policy: &GuardPolicy) -> bool {
    policy.forbid_chain_agnostic
        || policy.require_scope
        || policy.foreground_only
        || policy.expiry_blocks.is_some()
        || policy.single_use
        || policy.bundler_filter
        || policy.paymaster_filter
        || policy.entrypoint_check
}

/// Scenario postconditions. A run that did not drain is still a success
/// when an active mitigation explains the block.
fn evaluate_run(
    config: &RunConfig,
    policy: &GuardPolicy,
    scenario: &str,
    install_blocked: bool,
    reports: &[ScenarioReport],
    env: &SimEnv,
) -> std::result::Result<&'static str, String> {
    let restrictive = policy_is_restrictive(policy);
    if install_blocked {
        return if restrictive {
            Ok("blocked at install, as the active policy requires")
        } else {
            Err("install failed under a permissive policy".to_string())
        };
    }
    let drained = reports
        .iter()
        .any(|r| r.attacker_gain_eth > 0 || r.attacker_gain_tokens > 0);
    if !drained {
        return if restrictive {
            Ok("attack blocked by the active policy")
        } else {
            Err("no value reached the sink under a permissive policy".to_string())
        };
    }

    let victim = env.actors.victim;
    let victim_eth = env.chain.balance(victim);
    let victim_tokens =
        sim7702_core::exec::erc20_balance_of(&env.chain, env.actors.token, victim).unwrap_or(0);
    match scenario {
        "a" => {
            let report = reports.last().unwrap();
            if report.tokens_after != 0 {
                return Err(format!("victim tokens {} != 0", report.tokens_after));
            }
            if report.eth_after > harness::DUST_THRESHOLD_WEI {
                return Err(format!(
                    "victim ETH residual {} above dust",
                    report.eth_after
                ));
            }
            if report.attacker_gain_tokens != config.token_units {
                return Err("token drain incomplete".to_string());
            }
        }
        "b" => {
            if victim_eth != 0 {
                return Err(format!("victim ETH {victim_eth} != 0 after sweep"));
            }
        }
        "c" => {
            let report = reports.last().unwrap();
            if report.attacker_gain_eth != harness::AMBIENT_VALUE_WEI {
                return Err(format!(
                    "ambient capture {} != forwarded value",
                    report.attacker_gain_eth
                ));
            }
            if victim_eth != 0 {
                return Err(format!("victim ETH {victim_eth} != 0"));
            }
        }
        "pipeline" => {
            if victim_eth != 0 || victim_tokens != 0 {
                return Err(format!(
                    "victim not zeroed: {victim_eth} wei, {victim_tokens} token units"
                ));
            }
        }
        "composite" => {
            let report = reports.last().unwrap();
            if !report.fallback_executed {
                return Err("delegate never executed in the pipeline".to_string());
            }
            if victim_eth != 0 {
                return Err(format!("victim ETH {victim_eth} != 0"));
            }
        }
        _ => {}
    }
    Ok("scenario postconditions hold")
}

fn run_crosschain(config: &RunConfig, policy: &GuardPolicy, output_dir: &Path) -> Result<ExitCode> {
    let mc_config = config.multichain_config();
    let mut env = setup_multichain(&mc_config, policy.clone())?;
    let run = run_crosschain_experiment(&mut env);
    multichain::write_crosschain_dir(output_dir, &run)?;

    for row in &run.aggregate.rows {
        eprintln!(
            "chain {}: accepted={} victim {} -> {} ETH",
            row.chain_id,
            row.accepted,
            format_eth(row.eth_before),
            format_eth(row.eth_after),
        );
    }
    println!("{}", serde_json::to_string_pretty(&run.aggregate)?);

    let all_drained = run.aggregate.delegation_writes == run.aggregate.rows.len() as u64
        && run.aggregate.rows.iter().all(|r| r.tokens_after == 0);
    if all_drained {
        eprintln!("replay succeeded on every chain");
        Ok(ExitCode::SUCCESS)
    } else if policy_is_restrictive(policy) {
        eprintln!("replay blocked on enforcing chains, as the active policy requires");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("postcondition failure: replay incomplete under a permissive policy");
        Ok(ExitCode::from(EXIT_POSTCONDITION))
    }
}

fn cmd_scan(
    config: &RunConfig,
    output_dir: &Path,
    state: Option<&Path>,
    address: Option<&str>,
) -> Result<ExitCode> {
    let chain = match state {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading state {}", path.display()))?;
            ChainState::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => load_chain(output_dir, config.primary_chain().chain_id)?,
    };

    let filter = address.map(|a| resolve_address(a, config)).transpose()?;
    let mut findings = Vec::new();
    for (authority, target) in chain.active_delegations() {
        if let Some(only) = filter {
            if authority != only {
                continue;
            }
        }
        // scan_code agrees with the state view by construction; use it on
        // the raw code bytes the way an external scanner would
        debug_assert_eq!(scan_code(&chain.account(authority).code), Some(target));
        let behavior = chain
            .behavior_at(target)
            .map(|b| b.label())
            .unwrap_or("unregistered");
        let dangerous = behavior == "malicious_drainer";
        if dangerous {
            eprintln!("warning: {authority} delegates to a draining implementation at {target}");
        }
        findings.push(serde_json::json!({
            "authority": authority,
            "target": target,
            "behavior": behavior,
            "warning": dangerous,
        }));
    }
    if findings.is_empty() {
        eprintln!("no delegations");
    }
    println!("{}", serde_json::json!({ "delegations": findings }));
    Ok(ExitCode::SUCCESS)
}
