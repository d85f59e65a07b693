//! Serde adapter for `f64` fields that may hold infinities or NaN: those are
//! written as the strings `"inf"`, `"-inf"` and `"nan"`, since JSON has no
//! literals for them. Finite values stay plain numbers.

use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};
use std::fmt;

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

struct FloatVisitor;

impl Visitor<'_> for FloatVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
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
        match v {
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    d.deserialize_any(FloatVisitor)
}

#[cfg(test)]
mod tests {
    use crate::integrator::{IntegratorConfig, StepStats};

    #[test]
    fn infinities_survive_json() {
        let cfg = IntegratorConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"max_step\":\"inf\""));
        let back: IntegratorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let stats = StepStats {
            min_step: f64::NEG_INFINITY,
            max_step: 0.25,
            ..Default::default()
        };
        let back: StepStats = serde_json::from_str(&serde_json::to_string(&stats).unwrap()).unwrap();
        assert_eq!(back, stats);
        let nan: StepStats =
            serde_json::from_str(r#"{"accepted":0,"rejected":0,"rhs_evals":0,"min_step":"nan","max_step":3}"#).unwrap();
        assert!(nan.min_step.is_nan() && nan.max_step == 3.0);
        assert!(serde_json::from_str::<StepStats>(r#"{"accepted":0,"rejected":0,"rhs_evals":0,"min_step":"big","max_step":3}"#).is_err());
    }
}
