//! The defense layer: delegation scanning, tuple admission policies, scope
//! enforcement at dispatch time, and the three pipeline filters.
//!
//! Scope metadata rides alongside a tuple as client metadata; it is never
//! part of the signed message, so the signing domain stays unchanged.

use serde::{Deserialize, Serialize};

use crate::aa4337::UserOperation;
use crate::codec::Address;
use crate::exec::CallFrame;
use crate::state::ChainState;
use crate::txproc::{AuthorizationTuple, RejectReason};

/// Client-side admission policy for authorization tuples, plus constraints
/// the client imposes on every delegation it accepts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuplePolicy {
    /// Reject tuples with chain_id == 0.
    pub forbid_chain_agnostic: bool,
    /// Reject tuples submitted without a scope extension.
    pub require_scope: bool,
    /// Expire accepted delegations this many blocks after admission.
    pub max_delegation_lifetime: Option<u64>,
    /// Accepted delegations may dispatch delegated code once.
    pub single_use: bool,
    /// Accepted delegations only dispatch for calls initiated by the
    /// authority itself.
    pub foreground_only: bool,
}

/// Optional scope metadata attached alongside a tuple at submission.
/// Absence means the delegation is unscoped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScopedTupleExtension {
    pub expiry_height: Option<u64>,
    pub single_use: bool,
    pub foreground_only: bool,
}

/// Recorded constraints for an active delegation, enforced by dispatch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeState {
    pub expiry_height: Option<u64>,
    pub single_use: bool,
    pub foreground_only: bool,
    /// Delegated dispatches consumed so far (single-use accounting).
    pub uses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeVerdict {
    Allowed,
    RejectedForegroundOnly,
    RejectedExpired,
    RejectedUsedUp,
}

/// `Some(target)` iff `code` is exactly the 23-byte delegation indicator.
/// Agrees with `ChainState::is_delegated` by construction.
pub fn scan_code(code: &[u8]) -> Option<Address> {
    crate::state::DelegationIndicator::parse(code).map(|d| d.target)
}

/// Admission decision for one tuple under a policy. On acceptance, returns
/// the scope constraints to record for the new delegation (`None` when the
/// delegation is unconstrained).
pub fn admit_tuple(
    tuple: &AuthorizationTuple,
    extension: Option<&ScopedTupleExtension>,
    policy: &TuplePolicy,
    state: &ChainState,
) -> Result<Option<ScopeState>, RejectReason> {
    if policy.forbid_chain_agnostic && tuple.chain_id == 0 {
        return Err(RejectReason::ChainAgnosticForbidden);
    }
    if policy.require_scope && extension.is_none() {
        return Err(RejectReason::ScopeRequired);
    }

    let ext = extension.cloned().unwrap_or_default();
    let policy_expiry = policy
        .max_delegation_lifetime
        .map(|blocks| state.height() + blocks);
    let expiry_height = match (ext.expiry_height, policy_expiry) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let scope = ScopeState {
        expiry_height,
        single_use: ext.single_use || policy.single_use,
        foreground_only: ext.foreground_only || policy.foreground_only,
        uses: 0,
    };
    if scope.expiry_height.is_none() && !scope.single_use && !scope.foreground_only {
        return Ok(None);
    }
    Ok(Some(scope))
}

/// Decide whether a delegated dispatch to `authority` is allowed under its
/// recorded scope. An expired delegation is auto-cleared; an allowed
/// dispatch consumes one use.
pub fn enforce_scope(
    state: &mut ChainState,
    authority: Address,
    frame: &CallFrame,
) -> ScopeVerdict {
    let Some(scope) = state.scope_of(authority).cloned() else {
        return ScopeVerdict::Allowed;
    };
    if let Some(expiry) = scope.expiry_height {
        if state.height() > expiry {
            state.clear_delegation(authority);
            return ScopeVerdict::RejectedExpired;
        }
    }
    if scope.foreground_only && frame.caller != authority {
        return ScopeVerdict::RejectedForegroundOnly;
    }
    if scope.single_use && scope.uses >= 1 {
        return ScopeVerdict::RejectedUsedUp;
    }
    if let Some(s) = state.scope_mut(authority) {
        s.uses += 1;
    }
    ScopeVerdict::Allowed
}

/// Verdict of a pipeline filter; the reason string lands in op receipts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FilterVerdict {
    Pass,
    Reject { reason: String },
}

impl FilterVerdict {
    pub fn rejected(&self) -> bool {
        matches!(self, FilterVerdict::Reject { .. })
    }

    fn reject(reason: &str) -> Self {
        FilterVerdict::Reject {
            reason: reason.to_string(),
        }
    }
}

fn delegated(state: &ChainState, addr: Address) -> bool {
    scan_code(&state.account(addr).code).is_some()
}

/// Mempool-side filter: reject operations whose sender or top-level target
/// carries the delegation prefix.
pub fn bundler_filter(op: &UserOperation, state: &ChainState) -> FilterVerdict {
    if delegated(state, op.sender) {
        return FilterVerdict::reject("sender code matches delegation prefix");
    }
    if delegated(state, op.call_target) {
        return FilterVerdict::reject("call target code matches delegation prefix");
    }
    FilterVerdict::Pass
}

/// Sponsorship filter: a paymaster refuses to fund operations that route
/// control to a delegated account. Vacuous for unsponsored operations.
pub fn paymaster_filter(op: &UserOperation, state: &ChainState) -> FilterVerdict {
    if op.paymaster.is_none() {
        return FilterVerdict::Pass;
    }
    if delegated(state, op.sender) || delegated(state, op.call_target) {
        return FilterVerdict::reject("sponsorship refused: operation routes to delegated code");
    }
    FilterVerdict::Pass
}

/// Validation-entry check: a delegated sender is not treated as a wallet
/// unless its delegate target is explicitly allowlisted.
pub fn entrypoint_static_check(
    op: &UserOperation,
    state: &ChainState,
    allowlist: &[Address],
) -> FilterVerdict {
    match state.is_delegated(op.sender) {
        Some(target) if !allowlist.contains(&target) => {
            FilterVerdict::reject("delegated sender's target is not an allowlisted wallet")
        }
        _ => FilterVerdict::Pass,
    }
}

/// Combined policy document consumed by the CLI and the environments:
/// tuple admission rules, client-imposed scope constraints, and pipeline
/// filter switches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardPolicy {
    pub forbid_chain_agnostic: bool,
    pub require_scope: bool,
    pub foreground_only: bool,
    pub expiry_blocks: Option<u64>,
    pub single_use: bool,
    pub bundler_filter: bool,
    pub paymaster_filter: bool,
    pub entrypoint_check: bool,
    pub allowlist: Vec<Address>,
}

impl GuardPolicy {
    /// Everything off: the baseline protocol behavior.
    pub fn permissive() -> Self {
        GuardPolicy::default()
    }

    /// The tuple-admission hardening: no chain-agnostic tuples, no
    /// unscoped delegations.
    pub fn strict() -> Self {
        GuardPolicy {
            forbid_chain_agnostic: true,
            require_scope: true,
            ..GuardPolicy::default()
        }
    }

    /// All three pipeline filters on.
    pub fn all_filters() -> Self {
        GuardPolicy {
            bundler_filter: true,
            paymaster_filter: true,
            entrypoint_check: true,
            ..GuardPolicy::default()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "permissive" => Some(Self::permissive()),
            "strict" => Some(Self::strict()),
            "all-filters" => Some(Self::all_filters()),
            _ => None,
        }
    }

    pub fn tuple_policy(&self) -> TuplePolicy {
        TuplePolicy {
            forbid_chain_agnostic: self.forbid_chain_agnostic,
            require_scope: self.require_scope,
            max_delegation_lifetime: self.expiry_blocks,
            single_use: self.single_use,
            foreground_only: self.foreground_only,
        }
    }

    pub fn pipeline_config(&self) -> crate::aa4337::PipelineConfig {
        crate::aa4337::PipelineConfig {
            bundler_filter_enabled: self.bundler_filter,
            paymaster_filter_enabled: self.paymaster_filter,
            entrypoint_static_check_enabled: self.entrypoint_check,
        }
    }
}
