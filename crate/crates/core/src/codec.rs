//! Byte-exact serialization primitives.
//!
//! Everything the authorization layer signs or persists goes through this
//! module: canonical RLP encoding/decoding, keccak-256, the domain-separated
//! authorization signing message, and the `.hex` interchange format for
//! signed tuples.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Keccak256};
use thiserror::Error;

use crate::signing::RecoverableSignature;
use crate::txproc::AuthorizationTuple;

/// Domain-separation prefix for authorization signing messages.
///
/// This is the deployed EIP-7702 value. [`auth_message_with_magic`] exists
/// for configurations that pick a different constant.
pub const MAGIC: u8 = 0x05;

/// Marker prefix of a delegation indicator (`0xef0100 || address`).
pub const DELEGATION_PREFIX: [u8; 3] = [0xef, 0x01, 0x00];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed rlp: {0}")]
    MalformedRlp(&'static str),
    #[error("malformed tuple hex: {0}")]
    MalformedTupleHex(&'static str),
    #[error("invalid hex string")]
    BadHex,
    #[error("invalid byte length")]
    BadLength,
}

fn strip_0x(s: &str) -> &str {
    s.strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s)
}

/// A 32-byte digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        let bytes = hex::decode(strip_0x(s)).map_err(|_| CodecError::BadHex)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CodecError::BadLength)?;
        Ok(Hash32(arr))
    }
}

impl std::fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl std::fmt::Display for Hash32 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Hash32::from_hex(&s).map_err(de::Error::custom)
    }
}

/// A 20-byte account address, rendered as 0x-prefixed lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        let bytes = hex::decode(strip_0x(s)).map_err(|_| CodecError::BadHex)?;
        let arr: [u8; 20] = bytes.try_into().map_err(|_| CodecError::BadLength)?;
        Ok(Address(arr))
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 20]
    }
}

impl std::fmt::Debug for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Address::from_hex(&s).map_err(de::Error::custom)
    }
}

/// Keccak-256, the Ethereum variant with original padding (not FIPS SHA-3).
pub fn keccak256(data: &[u8]) -> Hash32 {
    let mut out = [0u8; 32];
    out.copy_from_slice(&Keccak256::digest(data));
    Hash32(out)
}

// ---------------------------------------------------------------------------
// RLP
// ---------------------------------------------------------------------------

/// A recursive RLP item: either a byte string or a list of items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RlpItem {
    Bytes(Vec<u8>),
    List(Vec<RlpItem>),
}

impl RlpItem {
    /// Byte-string item holding the minimal big-endian form of `v`
    /// (zero encodes as the empty string).
    pub fn uint(v: u128) -> RlpItem {
        RlpItem::Bytes(minimal_be(v))
    }

    pub fn address(a: Address) -> RlpItem {
        RlpItem::Bytes(a.0.to_vec())
    }

    pub fn as_bytes(&self) -> Result<&[u8], CodecError> {
        match self {
            RlpItem::Bytes(b) => Ok(b),
            RlpItem::List(_) => Err(CodecError::MalformedRlp("expected byte string, found list")),
        }
    }

    pub fn as_list(&self) -> Result<&[RlpItem], CodecError> {
        match self {
            RlpItem::List(items) => Ok(items),
            RlpItem::Bytes(_) => Err(CodecError::MalformedRlp("expected list, found byte string")),
        }
    }
}

/// Minimal big-endian byte representation; zero is the empty string.
pub fn minimal_be(v: u128) -> Vec<u8> {
    if v == 0 {
        return Vec::new();
    }
    let bytes = v.to_be_bytes();
    let first = bytes.iter().position(|&b| b != 0).unwrap();
    bytes[first..].to_vec()
}

/// Read a byte string as an unsigned integer, up to `max_bytes` significant
/// bytes. Leading zeros are tolerated: pre-existing artifacts encode zero
/// fields as a literal 0x00 byte rather than the canonical empty string.
fn uint_from_bytes(b: &[u8], max_bytes: usize) -> Result<u128, CodecError> {
    let trimmed = match b.iter().position(|&x| x != 0) {
        Some(i) => &b[i..],
        None => &[],
    };
    if trimmed.len() > max_bytes {
        return Err(CodecError::MalformedTupleHex("oversized integer field"));
    }
    let mut v: u128 = 0;
    for &byte in trimmed {
        v = (v << 8) | byte as u128;
    }
    Ok(v)
}

/// Canonical RLP encoding.
pub fn rlp_encode(item: &RlpItem) -> Vec<u8> {
    match item {
        RlpItem::Bytes(b) => {
            if b.len() == 1 && b[0] < 0x80 {
                return b.clone();
            }
            let mut out = length_prefix(b.len(), 0x80);
            out.extend_from_slice(b);
            out
        }
        RlpItem::List(items) => {
            let payload: Vec<u8> = items.iter().flat_map(rlp_encode).collect();
            let mut out = length_prefix(payload.len(), 0xc0);
            out.extend_from_slice(&payload);
            out
        }
    }
}

fn length_prefix(len: usize, base: u8) -> Vec<u8> {
    if len <= 55 {
        vec![base + len as u8]
    } else {
        let len_be = minimal_be(len as u128);
        let mut out = vec![base + 55 + len_be.len() as u8];
        out.extend_from_slice(&len_be);
        out
    }
}

/// Decode a complete canonical RLP payload.
///
/// Rejects truncated input, trailing bytes, non-minimal length prefixes, and
/// single bytes below 0x80 wrapped in a string header; any payload that
/// would not re-encode to the same bytes.
pub fn rlp_decode(data: &[u8]) -> Result<RlpItem, CodecError> {
    let (item, consumed) = decode_item(data)?;
    if consumed != data.len() {
        return Err(CodecError::MalformedRlp("trailing bytes"));
    }
    Ok(item)
}

fn decode_item(data: &[u8]) -> Result<(RlpItem, usize), CodecError> {
    let first = *data
        .first()
        .ok_or(CodecError::MalformedRlp("empty input"))?;
    match first {
        0x00..=0x7f => Ok((RlpItem::Bytes(vec![first]), 1)),
        0x80..=0xb7 => {
            let len = (first - 0x80) as usize;
            let body = slice(data, 1, len)?;
            if len == 1 && body[0] < 0x80 {
                return Err(CodecError::MalformedRlp("non-canonical single byte"));
            }
            Ok((RlpItem::Bytes(body.to_vec()), 1 + len))
        }
        0xb8..=0xbf => {
            let (len, header) = long_length(data, first - 0xb7)?;
            if len <= 55 {
                return Err(CodecError::MalformedRlp("non-canonical long string length"));
            }
            let body = slice(data, header, len)?;
            Ok((RlpItem::Bytes(body.to_vec()), header + len))
        }
        0xc0..=0xf7 => {
            let len = (first - 0xc0) as usize;
            let body = slice(data, 1, len)?;
            Ok((RlpItem::List(decode_list_payload(body)?), 1 + len))
        }
        0xf8..=0xff => {
            let (len, header) = long_length(data, first - 0xf7)?;
            if len <= 55 {
                return Err(CodecError::MalformedRlp("non-canonical long list length"));
            }
            let body = slice(data, header, len)?;
            Ok((RlpItem::List(decode_list_payload(body)?), header + len))
        }
    }
}

fn long_length(data: &[u8], len_of_len: u8) -> Result<(usize, usize), CodecError> {
    let len_of_len = len_of_len as usize;
    let len_bytes = slice(data, 1, len_of_len)?;
    if len_bytes[0] == 0 {
        return Err(CodecError::MalformedRlp("length has leading zero"));
    }
    let mut len: u64 = 0;
    for &b in len_bytes {
        len = (len << 8) | b as u64;
    }
    // anything longer than the input cannot decode; this also keeps the
    // arithmetic below overflow-free
    let len = usize::try_from(len)
        .ok()
        .filter(|l| *l <= data.len())
        .ok_or(CodecError::MalformedRlp("truncated payload"))?;
    Ok((len, 1 + len_of_len))
}

fn slice(data: &[u8], start: usize, len: usize) -> Result<&[u8], CodecError> {
    start
        .checked_add(len)
        .and_then(|end| data.get(start..end))
        .ok_or(CodecError::MalformedRlp("truncated payload"))
}

fn decode_list_payload(mut body: &[u8]) -> Result<Vec<RlpItem>, CodecError> {
    let mut items = Vec::new();
    while !body.is_empty() {
        let (item, consumed) = decode_item(body)?;
        items.push(item);
        body = &body[consumed..];
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Authorization signing message
// ---------------------------------------------------------------------------

/// The digest an authority signs to endorse a delegation:
/// `keccak256(MAGIC || rlp([chain_id, target, nonce]))`.
///
/// Integers use canonical minimal big-endian form (zero = empty string);
/// `chain_id == 0` means chain-agnostic.
pub fn auth_message(chain_id: u64, target: Address, nonce: u64) -> Hash32 {
    auth_message_with_magic(MAGIC, chain_id, target, nonce)
}

/// [`auth_message`] under a caller-chosen domain-separation byte.
pub fn auth_message_with_magic(magic: u8, chain_id: u64, target: Address, nonce: u64) -> Hash32 {
    let body = rlp_encode(&RlpItem::List(vec![
        RlpItem::uint(chain_id as u128),
        RlpItem::address(target),
        RlpItem::uint(nonce as u128),
    ]));
    let mut msg = Vec::with_capacity(1 + body.len());
    msg.push(magic);
    msg.extend_from_slice(&body);
    keccak256(&msg)
}

// ---------------------------------------------------------------------------
// Tuple .hex interchange format
// ---------------------------------------------------------------------------

/// Render a signed tuple as the 6-field RLP list
/// `[chain_id, target, nonce, y_parity, r, s]`, hex-encoded with 0x prefix.
///
/// Integers are written in canonical minimal form; r and s are stripped of
/// leading zeros.
pub fn encode_tuple_hex(tuple: &AuthorizationTuple) -> String {
    let item = RlpItem::List(vec![
        RlpItem::uint(tuple.chain_id as u128),
        RlpItem::address(tuple.target),
        RlpItem::uint(tuple.nonce as u128),
        RlpItem::uint(tuple.signature.y_parity as u128),
        RlpItem::Bytes(trim_leading_zeros(&tuple.signature.r)),
        RlpItem::Bytes(trim_leading_zeros(&tuple.signature.s)),
    ]);
    format!("0x{}", hex::encode(rlp_encode(&item)))
}

fn trim_leading_zeros(b: &[u8; 32]) -> Vec<u8> {
    match b.iter().position(|&x| x != 0) {
        Some(i) => b[i..].to_vec(),
        None => Vec::new(),
    }
}

/// Parse a tuple `.hex` string produced by [`encode_tuple_hex`] or by
/// external tooling. Accepts loose integer encodings (leading zero bytes)
/// but enforces RLP structural canonicality, 6-element arity, and field
/// ranges. Signature range/canonicality is NOT checked here; that is the
/// recovery layer's job.
pub fn decode_tuple_hex(text: &str) -> Result<AuthorizationTuple, CodecError> {
    let raw = hex::decode(strip_0x(text.trim())).map_err(|_| CodecError::BadHex)?;
    let item = rlp_decode(&raw)?;
    let fields = item.as_list()?;
    if fields.len() != 6 {
        return Err(CodecError::MalformedTupleHex("expected 6 fields"));
    }
    let chain_id = uint_from_bytes(fields[0].as_bytes()?, 8)? as u64;
    let target_bytes = fields[1].as_bytes()?;
    let target = Address(
        <[u8; 20]>::try_from(target_bytes)
            .map_err(|_| CodecError::MalformedTupleHex("target must be 20 bytes"))?,
    );
    let nonce = uint_from_bytes(fields[2].as_bytes()?, 8)? as u64;
    let y_parity = uint_from_bytes(fields[3].as_bytes()?, 1)?;
    if y_parity > 1 {
        return Err(CodecError::MalformedTupleHex("y_parity must be 0 or 1"));
    }
    let r = wide_uint_32(fields[4].as_bytes()?)?;
    let s = wide_uint_32(fields[5].as_bytes()?)?;
    Ok(AuthorizationTuple {
        chain_id,
        target,
        nonce,
        signature: RecoverableSignature {
            y_parity: y_parity as u8,
            r,
            s,
        },
    })
}

fn wide_uint_32(b: &[u8]) -> Result<[u8; 32], CodecError> {
    let trimmed = match b.iter().position(|&x| x != 0) {
        Some(i) => &b[i..],
        None => &[],
    };
    if trimmed.len() > 32 {
        return Err(CodecError::MalformedTupleHex("oversized integer field"));
    }
    let mut out = [0u8; 32];
    out[32 - trimmed.len()..].copy_from_slice(trimmed);
    Ok(out)
}

/// Parse hex bytes with optional 0x prefix.
pub fn bytes_from_hex(s: &str) -> Result<Vec<u8>, CodecError> {
    hex::decode(strip_0x(s.trim())).map_err(|_| CodecError::BadHex)
}

/// Render bytes as 0x-prefixed lowercase hex.
pub fn bytes_to_hex(b: &[u8]) -> String {
    format!("0x{}", hex::encode(b))
}
