//! ECDSA over secp256k1 with public-key recovery.
//!
//! Deterministic (RFC-6979) signing in canonical low-s form, authority
//! recovery in the ecrecover style, and key-to-address derivation. The
//! curve arithmetic is backed by the `k256` crate; this module owns the
//! canonicality and range rules the transaction layer relies on.

use k256::ecdsa::{RecoveryId, Signature, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{keccak256, Address, Hash32};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigningError {
    #[error("invalid private key: scalar must be nonzero and below the group order")]
    InvalidKey,
    #[error("non-canonical signature: s exceeds half the group order")]
    NonCanonicalSignature,
    #[error("signature recovery failed")]
    RecoveryFailure,
}

/// A secp256k1 private key scalar in `[1, n-1]`.
#[derive(Clone)]
pub struct PrivateKey {
    inner: SigningKey,
}

impl PrivateKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, SigningError> {
        let inner = SigningKey::from_slice(bytes).map_err(|_| SigningError::InvalidKey)?;
        Ok(PrivateKey { inner })
    }

    /// Accepts a 64-hex-char string with optional 0x prefix.
    pub fn from_hex(s: &str) -> Result<Self, SigningError> {
        let raw = s.trim().strip_prefix("0x").unwrap_or(s.trim());
        let bytes = hex::decode(raw).map_err(|_| SigningError::InvalidKey)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| SigningError::InvalidKey)?;
        PrivateKey::from_bytes(&arr)
    }

    pub fn address(&self) -> Address {
        verifying_key_address(self.inner.verifying_key())
    }
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // never print key material
        write!(f, "PrivateKey({})", self.address())
    }
}

/// A recoverable ECDSA signature: parity bit plus the r and s scalars as
/// 32-byte big-endian integers. Canonical form requires `s <= n/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoverableSignature {
    pub y_parity: u8,
    #[serde(with = "hex_32")]
    pub r: [u8; 32],
    #[serde(with = "hex_32")]
    pub s: [u8; 32],
}

mod hex_32 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let raw = text.strip_prefix("0x").unwrap_or(&text);
        let bytes = hex::decode(raw).map_err(de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| de::Error::custom("expected 32 bytes"))
    }
}

/// Half the secp256k1 group order, big-endian. A signature with `s` above
/// this bound has a valid twin `(r, n - s)` and is rejected as malleable.
const HALF_ORDER: [u8; 32] = [
    0x7f, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff,
    0x5d, 0x57, 0x6e, 0x73, 0x57, 0xa4, 0x50, 0x1d, 0xdf, 0xe9, 0x2f, 0x46, 0x68, 0x1b, 0x20, 0xa0,
];

impl RecoverableSignature {
    pub fn is_low_s(&self) -> bool {
        self.s <= HALF_ORDER
    }
}

fn verifying_key_address(vk: &VerifyingKey) -> Address {
    // keccak over the 64-byte uncompressed point, SEC1 0x04 tag stripped
    let point = vk.to_encoded_point(false);
    let digest = keccak256(&point.as_bytes()[1..]);
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest.0[12..]);
    Address(out)
}

/// Address of the key: last 20 bytes of keccak256 of the uncompressed
/// public key (without the SEC1 prefix byte).
pub fn derive_address(key: &PrivateKey) -> Address {
    key.address()
}

/// Deterministic RFC-6979 signature over a 32-byte digest, normalized to
/// canonical low-s form. `recover_authority(digest, sign_digest(k, digest))`
/// always returns `derive_address(k)`.
pub fn sign_digest(key: &PrivateKey, digest: &Hash32) -> RecoverableSignature {
    let (sig, recid) = key
        .inner
        .sign_prehash_recoverable(&digest.0)
        .expect("signing with a validated key over a 32-byte digest cannot fail");
    let (sig, recid) = match sig.normalize_s() {
        Some(normalized) => (
            normalized,
            RecoveryId::from_byte(recid.to_byte() ^ 1).unwrap(),
        ),
        None => (sig, recid),
    };
    RecoverableSignature {
        y_parity: recid.to_byte() & 1,
        r: sig.r().to_bytes().into(),
        s: sig.s().to_bytes().into(),
    }
}

/// Recover the signer's address from a digest and signature, rejecting
/// out-of-range scalars and non-canonical (high-s) signatures before any
/// curve work.
pub fn recover_authority(
    digest: &Hash32,
    sig: &RecoverableSignature,
) -> Result<Address, SigningError> {
    if sig.r == [0u8; 32] || sig.s == [0u8; 32] {
        return Err(SigningError::RecoveryFailure);
    }
    if !sig.is_low_s() {
        return Err(SigningError::NonCanonicalSignature);
    }
    if sig.y_parity > 1 {
        return Err(SigningError::RecoveryFailure);
    }
    let signature =
        Signature::from_scalars(sig.r, sig.s).map_err(|_| SigningError::RecoveryFailure)?;
    let recid = RecoveryId::from_byte(sig.y_parity).ok_or(SigningError::RecoveryFailure)?;
    let vk = VerifyingKey::recover_from_prehash(&digest.0, &signature, recid)
        .map_err(|_| SigningError::RecoveryFailure)?;
    Ok(verifying_key_address(&vk))
}
