//! Run configuration: chain list, actor key material, policy, output
//! directory, and seed. Loaded from `--config` JSON with defaults for
//! every field.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sim7702_core::fixtures;
use sim7702_core::guard::GuardPolicy;
use sim7702_core::harness::EnvConfig;
use sim7702_core::multichain::MultiChainConfig;
use sim7702_core::signing::PrivateKey;
use sim7702_core::wei::{eth, tokens};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSpec {
    pub chain_id: u64,
    #[serde(with = "sim7702_core::wei::dec_string")]
    pub funding_wei: u128,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec {
            chain_id: 1337,
            funding_wei: eth(10_000),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ActorConfig {
    /// 0x-prefixed 64-hex-char key, or a fixture name ("victim").
    pub victim_key: Option<String>,
    /// 0x-prefixed 64-hex-char key, or a fixture name ("attacker").
    pub attacker_key: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub chains: Vec<ChainSpec>,
    pub actors: ActorConfig,
    pub policy: GuardPolicy,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    #[serde(with = "sim7702_core::wei::dec_string")]
    pub token_units: u128,
    pub gas_limit: u64,
    /// Fan cross-chain phases out across threads.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chains: vec![ChainSpec::default()],
            actors: ActorConfig::default(),
            policy: GuardPolicy::permissive(),
            output_dir: None,
            seed: 0,
            token_units: tokens(2_000),
            gas_limit: sim7702_core::state::DEFAULT_GAS_LIMIT,
            parallel: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let config: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                if config.chains.is_empty() {
                    bail!("config must list at least one chain");
                }
                // fail early on malformed key material
                resolve_key(config.actors.victim_key.as_deref(), "victim")?;
                resolve_key(config.actors.attacker_key.as_deref(), "attacker")?;
                Ok(config)
            }
        }
    }

    pub fn primary_chain(&self) -> &ChainSpec {
        &self.chains[0]
    }

    /// Single-chain environment template for the primary chain.
    pub fn env_config(&self, delegate: sim7702_core::Address) -> EnvConfig {
        let spec = self.primary_chain();
        EnvConfig {
            chain_id: spec.chain_id,
            funding_wei: spec.funding_wei,
            token_units: self.token_units,
            delegate,
            gas_limit: self.gas_limit,
            victim_key_hex: normalized_key(self.actors.victim_key.as_deref(), "victim"),
            attacker_key_hex: normalized_key(self.actors.attacker_key.as_deref(), "attacker"),
            ..EnvConfig::default()
        }
    }

    /// Multi-chain template: the configured chains when there are at least
    /// two, the stock three-chain layout otherwise.
    pub fn multichain_config(&self) -> MultiChainConfig {
        let mut config = MultiChainConfig {
            base: EnvConfig {
                funding_wei: self.primary_chain().funding_wei,
                token_units: self.token_units,
                gas_limit: self.gas_limit,
                delegate: fixtures::delegate_shared(),
                victim_key_hex: normalized_key(self.actors.victim_key.as_deref(), "victim"),
                attacker_key_hex: normalized_key(self.actors.attacker_key.as_deref(), "attacker"),
                ..EnvConfig::default()
            },
            parallel: self.parallel,
            ..MultiChainConfig::default()
        };
        if self.chains.len() >= 2 {
            config.chain_ids = self.chains.iter().map(|c| c.chain_id).collect();
        }
        config
    }
}

/// Accepts a fixture name or key hex; errors on anything else.
pub fn resolve_key(spec: Option<&str>, default_fixture: &str) -> Result<PrivateKey> {
    let spec = spec.unwrap_or(default_fixture);
    match spec {
        "victim" => Ok(fixtures::victim_key()),
        "attacker" => Ok(fixtures::attacker_key()),
        hex => PrivateKey::from_hex(hex)
            .map_err(|e| anyhow::anyhow!("invalid key material {spec:?}: {e}")),
    }
}

fn normalized_key(spec: Option<&str>, _default_fixture: &str) -> Option<String> {
    match spec {
        None => None,
        Some("victim") => Some(fixtures::VICTIM_KEY_HEX.to_string()),
        Some("attacker") => Some(fixtures::ATTACKER_KEY_HEX.to_string()),
        Some(hex) => Some(hex.to_string()),
    }
}

/// Resolve `--policy` as a preset name or a JSON file path, falling back to
/// the config block.
pub fn resolve_policy(flag: Option<&str>, config: &RunConfig) -> Result<GuardPolicy> {
    let Some(spec) = flag else {
        return Ok(config.policy.clone());
    };
    if let Some(preset) = GuardPolicy::by_name(spec) {
        return Ok(preset);
    }
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading policy {}", path.display()))?;
        return serde_json::from_str(&text)
            .with_context(|| format!("parsing policy {}", path.display()));
    }
    bail!("unknown policy {spec:?}: expected permissive|strict|all-filters or a JSON file path");
}
