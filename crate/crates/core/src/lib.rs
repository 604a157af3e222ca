//! Desk-scale simulator of EIP-7702 set-code delegation semantics.
//!
//! The crate models the full lifecycle of a delegation-based account
//! takeover without any external blockchain dependency: byte-exact
//! authorization tuples ([`codec`], [`signing`]), per-chain world state
//! with delegation indicators ([`state`]), type-0x04 transaction
//! processing ([`txproc`]), delegated call dispatch with native contract
//! behaviors ([`exec`]), scenario orchestration ([`harness`]),
//! multi-chain replay ([`multichain`]), a minimal ERC-4337 pipeline
//! ([`aa4337`]), and the mitigation layer ([`guard`]).

pub mod aa4337;
pub mod codec;
pub mod exec;
pub mod fixtures;
pub mod guard;
pub mod harness;
pub mod multichain;
pub mod signing;
pub mod state;
pub mod txproc;
pub mod wei;

pub use codec::{Address, Hash32};
pub use exec::{CallFrame, ContractBehavior, TokenLedger, TraceEvent};
pub use guard::{GuardPolicy, ScopedTupleExtension, TuplePolicy};
pub use harness::{ActorSet, DrainCriterion, EnvConfig, ScenarioReport, SimEnv};
pub use signing::{PrivateKey, RecoverableSignature};
pub use state::{Account, ChainState};
pub use txproc::{AuthorizationTuple, Receipt, SetCodeTransaction};
