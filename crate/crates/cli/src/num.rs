//! Lossless decimal-string encoding for floats in JSON reports.
//!
//! Every number is written with 17 significant digits (`{:.16e}`), which is
//! enough to reproduce any `f64` bit pattern on parse.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Num {
    pub fn encode(v: f64) -> String {
        format!("{v:.16e}")
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num(v)
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&Num::encode(self.0))
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&Num::encode(self.0))
    }
}

struct NumVisitor;

impl Visitor<'_> for NumVisitor {
    type Value = Num;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a decimal string or number")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
        v.parse::<f64>()
            .map(Num)
            .map_err(|_| E::custom(format!("not a number: {v:?}")))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
        Ok(Num(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
        Ok(Num(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
        Ok(Num(v as f64))
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Num, D::Error> {
        d.deserialize_any(NumVisitor)
    }
}

pub fn nums<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<Num> {
    values.into_iter().copied().map(Num).collect()
}

pub fn matrix(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<Num>> {
    m.row_iter()
        .map(|r| r.iter().copied().map(Num).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(Num::encode(2.0 / 3.0), "6.6666666666666663e-1");
        assert_eq!(Num::encode(1.0), "1.0000000000000000e0");
        assert_eq!(
            serde_json::to_string(&Num(-0.5)).unwrap(),
            "\"-5.0000000000000000e-1\""
        );
    }

    #[test]
    fn accepts_plain_numbers() {
        let n: Num = serde_json::from_str("1.5").unwrap();
        assert_eq!(n, Num(1.5));
        assert!(serde_json::from_str::<Num>("\"abc\"").is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_roundtrip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(!v.is_nan());
            let json = serde_json::to_string(&Num(v)).unwrap();
            let back: Num = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.0.to_bits(), v.to_bits());
        }
    }
}
