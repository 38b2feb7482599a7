//! Small shared helpers.

use sha2::{Digest, Sha256};

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// SHA-256 of a byte slice, hex-encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

/// Content hash of a token-sequence dataset: length-prefixed little-endian
/// ids in sample order.
pub fn fingerprint_token_sets<'a>(sets: impl Iterator<Item = &'a [u32]>) -> String {
    let mut h = Sha256::new();
    for tokens in sets {
        h.update((tokens.len() as u64).to_le_bytes());
        for t in tokens {
            h.update(t.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// JSON (de)serialization for f64 fields that may legitimately be ±∞:
/// finite values serialize as numbers, non-finite ones as strings.
pub mod json_f64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            ser.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            ser.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            ser.serialize_str("-inf")
        } else {
            ser.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("bad f64 literal {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_encoding() {
        assert_eq!(hex(&[0x00, 0xff, 0x10]), "00ff10");
    }

    #[test]
    fn dataset_fingerprint_is_order_sensitive() {
        let a: &[u32] = &[1, 2];
        let b: &[u32] = &[3];
        let f1 = fingerprint_token_sets([a, b].into_iter());
        let f2 = fingerprint_token_sets([b, a].into_iter());
        assert_ne!(f1, f2);
        let f3 = fingerprint_token_sets([a, b].into_iter());
        assert_eq!(f1, f3);
    }
}
