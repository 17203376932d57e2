//! Serde adapters that write `f64` values as decimal strings.
//!
//! Rust's `Display` for `f64` prints the shortest string that parses back to
//! the same bits, so emit-then-parse is lossless. Deserialization accepts
//! either a string or a plain number so hand-written config files can use
//! ordinary numeric literals.

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serializer};

pub fn to_string(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn parse(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("invalid decimal string {s:?}: {e}"))
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&to_string(*x))
}

struct DecimalVisitor;

impl Visitor<'_> for DecimalVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a number or a decimal string")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        parse(v).map_err(E::custom)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    d.deserialize_any(DecimalVisitor)
}

/// Same encoding for `Vec<f64>`.
pub mod vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&to_string(*x))?;
        }
        seq.end()
    }

    #[derive(Deserialize)]
    struct Item(#[serde(deserialize_with = "super::deserialize")] f64);

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let items = Vec::<Item>::deserialize(d)?;
        Ok(items.into_iter().map(|i| i.0).collect())
    }
}

/// Same encoding for `Vec<Option<f64>>`; `None` is written as `null`.
pub mod opt_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(xs: &[Option<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&x.map(to_string))?;
        }
        seq.end()
    }

    #[derive(Deserialize)]
    struct Item(#[serde(deserialize_with = "super::deserialize")] f64);

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<f64>>, D::Error> {
        let items = Vec::<Option<Item>>::deserialize(d)?;
        Ok(items.into_iter().map(|i| i.map(|i| i.0)).collect())
    }
}
