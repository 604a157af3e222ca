//! Well-known devnet accounts and the fixed contract addresses used by the
//! stock experiment environments.
//!
//! The two private keys are the first entries of the standard developer-node
//! account set ("test test ... junk" mnemonic); they are public knowledge and
//! carry no real funds. Contract behaviors are registered at fixed addresses
//! rather than derived from deployment nonces.

use crate::codec::Address;
use crate::signing::PrivateKey;

/// Devnet account #0, playing the victim.
pub const VICTIM_KEY_HEX: &str =
    "0xac0974bec39a17e36ba4a6b4d238ff944bacb478cbed5efcae784d7bf4f2ff80";

/// Devnet account #1, playing the attacker / sink.
pub const ATTACKER_KEY_HEX: &str =
    "0x59c6995e998f97a5a0044966f0945389dc9e86dae88c7a8412f4603b6b78690d";

pub fn victim_key() -> PrivateKey {
    PrivateKey::from_hex(VICTIM_KEY_HEX).unwrap()
}

pub fn attacker_key() -> PrivateKey {
    PrivateKey::from_hex(ATTACKER_KEY_HEX).unwrap()
}

pub fn victim() -> Address {
    addr("0xf39fd6e51aad88f6f4ce6ab8827279cfffb92266")
}

pub fn attacker() -> Address {
    addr("0x70997970c51812dc3a010c7d01b50e0d17dc79c8")
}

/// Malicious delegate used by the single-chain experiments.
pub fn delegate_local() -> Address {
    addr("0x5fbdb2315678afecb367f032d93f642f64180aa3")
}

/// Malicious delegate registered at the same address on every chain of a
/// multi-chain environment.
pub fn delegate_shared() -> Address {
    addr("0x8464135c8f25da09e49bc8782676a84730c318bc")
}

/// Mock ERC-20 token (same address on all chains).
pub fn token() -> Address {
    addr("0x71c95911e9a5d330f4d621842ec243ee1343292e")
}

/// Protocol contract exposing the forward-and-call entry point.
pub fn protocol() -> Address {
    addr("0x663f3ad617193148711d28f5334ee4ed07016602")
}

/// Account-abstraction entry point singleton (v0.6.0 address).
pub fn entry_point() -> Address {
    addr("0x5ff137d4b0fdcd49dca30c7cf57e578a026d2789")
}

/// Relay account that batches and submits user operations.
pub fn bundler() -> Address {
    addr("0x3c44cdddb6a900fa2b585dd299e03d12fa4293bc")
}

/// Gas-sponsoring account for user operations.
pub fn paymaster() -> Address {
    addr("0x90f79bf6eb2c4f870365e785982e1f101e93b906")
}

fn addr(s: &str) -> Address {
    Address::from_hex(s).unwrap()
}
