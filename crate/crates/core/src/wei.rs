//! Exact wei arithmetic helpers and the decimal-string JSON encoding.
//!
//! Machine output never uses floats: balances and token amounts serialize as
//! decimal strings in base units. The human rendering keeps 18-decimal
//! precision exactly (wei / 10^18 always has a finite decimal expansion).

pub const WEI_PER_ETH: u128 = 1_000_000_000_000_000_000;
pub const WEI_PER_GWEI: u128 = 1_000_000_000;

/// Whole-ETH amounts to wei.
pub const fn eth(n: u128) -> u128 {
    n * WEI_PER_ETH
}

/// Whole-token amounts to base units (18 decimals).
pub const fn tokens(n: u128) -> u128 {
    n * WEI_PER_ETH
}

/// Render a wei amount as an exact 18-decimal ETH string, trailing zeros
/// trimmed ("0.1", "9999.999", "0").
pub fn format_eth(wei: u128) -> String {
    let whole = wei / WEI_PER_ETH;
    let frac = wei % WEI_PER_ETH;
    if frac == 0 {
        return whole.to_string();
    }
    let frac = format!("{frac:018}");
    format!("{whole}.{}", frac.trim_end_matches('0'))
}

/// Serde adapter: u128 as a decimal string.
pub mod dec_string {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let text = String::deserialize(d)?;
        text.parse::<u128>().map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eth_formatting_is_exact() {
        assert_eq!(format_eth(0), "0");
        assert_eq!(format_eth(eth(10_000)), "10000");
        assert_eq!(format_eth(eth(1) / 10), "0.1");
        assert_eq!(format_eth(690_000_000_000_000), "0.00069");
        assert_eq!(format_eth(9_999_999_000_000_000_000_000), "9999.999");
        assert_eq!(format_eth(1), "0.000000000000000001");
    }
}
