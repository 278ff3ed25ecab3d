use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

/// An action or observation space.
///
/// Box bounds may be unbounded; infinite bounds are written as `null` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpaceSpec {
    Discrete {
        n: u64,
    },
    Box {
        #[serde(with = "bounds::low")]
        low: Vec<f64>,
        #[serde(with = "bounds::high")]
        high: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Discrete,
    Continuous,
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceKind::Discrete => f.write_str("discrete"),
            SpaceKind::Continuous => f.write_str("continuous"),
        }
    }
}

impl SpaceSpec {
    pub fn discrete(n: u64) -> Self {
        SpaceSpec::Discrete { n }
    }

    pub fn bounded(low: Vec<f64>, high: Vec<f64>) -> Self {
        SpaceSpec::Box { low, high }
    }

    pub fn kind(&self) -> SpaceKind {
        match self {
            SpaceSpec::Discrete { .. } => SpaceKind::Discrete,
            SpaceSpec::Box { .. } => SpaceKind::Continuous,
        }
    }

    /// Number of scalar components in one element of the space.
    pub fn dim(&self) -> usize {
        match self {
            SpaceSpec::Discrete { .. } => 1,
            SpaceSpec::Box { low, .. } => low.len(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            SpaceSpec::Discrete { n } if *n == 0 => Err("discrete space needs n >= 1".into()),
            SpaceSpec::Discrete { .. } => Ok(()),
            SpaceSpec::Box { low, high } => {
                if low.len() != high.len() {
                    return Err(format!(
                        "box bounds differ in length ({} vs {})",
                        low.len(),
                        high.len()
                    ));
                }
                if low.is_empty() {
                    return Err("box space has zero dimensions".into());
                }
                for (i, (l, h)) in low.iter().zip(high).enumerate() {
                    if l.is_nan() || h.is_nan() || l > h {
                        return Err(format!("box bound {i}: low {l} > high {h}"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Checks membership and returns the value in canonical form for this space
    /// (integers for discrete spaces, vectors for boxes).
    pub fn coerce(&self, value: &SpaceValue) -> Result<SpaceValue, String> {
        match self {
            SpaceSpec::Discrete { n } => {
                let idx = match value {
                    SpaceValue::Discrete(i) => *i,
                    SpaceValue::Box(v) if v.len() == 1 && v[0].fract() == 0.0 => v[0] as i64,
                    other => return Err(format!("{other} is not a discrete index")),
                };
                if idx < 0 || idx as u64 >= *n {
                    return Err(format!("index {idx} outside 0..{n}"));
                }
                Ok(SpaceValue::Discrete(idx))
            }
            SpaceSpec::Box { low, high } => {
                let v = value.to_vec();
                if v.len() != low.len() {
                    return Err(format!(
                        "expected {} components, got {}",
                        low.len(),
                        v.len()
                    ));
                }
                for (i, x) in v.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(format!("component {i} is not finite"));
                    }
                    if *x < low[i] || *x > high[i] {
                        return Err(format!(
                            "component {i} = {x} outside [{}, {}]",
                            low[i], high[i]
                        ));
                    }
                }
                Ok(SpaceValue::Box(v))
            }
        }
    }

    pub fn contains(&self, value: &SpaceValue) -> bool {
        self.coerce(value).is_ok()
    }
}

/// One element of a space: a discrete index or a real vector.
///
/// JSON integers decode as discrete indices, arrays and non-integral scalars as
/// vectors. Use [`SpaceSpec::coerce`] to put a decoded value in the form a space
/// expects.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceValue {
    Discrete(i64),
    Box(Vec<f64>),
}

impl SpaceValue {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            SpaceValue::Discrete(i) => vec![*i as f64],
            SpaceValue::Box(v) => v.clone(),
        }
    }

    pub fn as_index(&self) -> Option<i64> {
        match self {
            SpaceValue::Discrete(i) => Some(*i),
            SpaceValue::Box(v) if v.len() == 1 && v[0].fract() == 0.0 => Some(v[0] as i64),
            SpaceValue::Box(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            SpaceValue::Discrete(_) => true,
            SpaceValue::Box(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

impl From<i64> for SpaceValue {
    fn from(i: i64) -> Self {
        SpaceValue::Discrete(i)
    }
}

impl From<Vec<f64>> for SpaceValue {
    fn from(v: Vec<f64>) -> Self {
        SpaceValue::Box(v)
    }
}

impl fmt::Display for SpaceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serde_json::to_string(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => Err(fmt::Error),
        }
    }
}

impl Serialize for SpaceValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            SpaceValue::Discrete(i) => serializer.serialize_i64(*i),
            SpaceValue::Box(v) => {
                let mut seq = serializer.serialize_seq(Some(v.len()))?;
                for x in v {
                    seq.serialize_element(x)?;
                }
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for SpaceValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl<'de> Visitor<'de> for ValueVisitor {
            type Value = SpaceValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or an array of numbers")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SpaceValue, E> {
                Ok(SpaceValue::Discrete(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SpaceValue, E> {
                i64::try_from(v)
                    .map(SpaceValue::Discrete)
                    .map_err(|_| E::custom("integer out of range"))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<SpaceValue, E> {
                Ok(SpaceValue::Box(vec![v]))
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<SpaceValue, E> {
                Ok(SpaceValue::Discrete(v as i64))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<SpaceValue, A::Error> {
                let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(x) = seq.next_element::<Scalar>()? {
                    out.push(x.0);
                }
                Ok(SpaceValue::Box(out))
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

/// A number inside an observation array; booleans are accepted as 0/1.
struct Scalar(f64);

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScalarVisitor;

        impl Visitor<'_> for ScalarVisitor {
            type Value = Scalar;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
                Ok(Scalar(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
                Ok(Scalar(v as f64))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Scalar, E> {
                Ok(Scalar(v))
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Scalar, E> {
                Ok(Scalar(if v { 1.0 } else { 0.0 }))
            }
        }

        deserializer.deserialize_any(ScalarVisitor)
    }
}

mod bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    fn write<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v
            .iter()
            .map(|x| if x.is_finite() { Some(*x) } else { None })
            .collect();
        opt.serialize(s)
    }

    fn read<'de, D: Deserializer<'de>>(d: D, fill: f64) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(fill)).collect())
    }

    pub mod low {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            write(v, s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            read(d, f64::NEG_INFINITY)
        }
    }

    pub mod high {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            write(v, s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            read(d, f64::INFINITY)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_decode_as_discrete_and_arrays_as_box() {
        let v: SpaceValue = serde_json::from_str("3").unwrap();
        assert_eq!(v, SpaceValue::Discrete(3));
        let v: SpaceValue = serde_json::from_str("[1, 2.5]").unwrap();
        assert_eq!(v, SpaceValue::Box(vec![1.0, 2.5]));
        let v: SpaceValue = serde_json::from_str("0.5").unwrap();
        assert_eq!(v, SpaceValue::Box(vec![0.5]));
    }

    #[test]
    fn unbounded_box_round_trips_through_null() {
        let spec = SpaceSpec::bounded(vec![f64::NEG_INFINITY, -1.0], vec![f64::INFINITY, 1.0]);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            text,
            r#"{"kind":"box","low":[null,-1.0],"high":[null,1.0]}"#
        );
        let back: SpaceSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn validate_rejects_bad_spaces() {
        assert!(SpaceSpec::discrete(0).validate().is_err());
        assert!(SpaceSpec::bounded(vec![1.0], vec![0.0]).validate().is_err());
        assert!(SpaceSpec::bounded(vec![0.0, 0.0], vec![1.0])
            .validate()
            .is_err());
        assert!(SpaceSpec::bounded(vec![-2.0], vec![2.0]).validate().is_ok());
    }

    #[test]
    fn coerce_checks_membership() {
        let d = SpaceSpec::discrete(4);
        assert_eq!(
            d.coerce(&SpaceValue::Box(vec![3.0])).unwrap(),
            SpaceValue::Discrete(3)
        );
        assert!(d.coerce(&SpaceValue::Discrete(4)).is_err());
        assert!(d.coerce(&SpaceValue::Box(vec![1.5])).is_err());

        let b = SpaceSpec::bounded(vec![-1.0, -1.0], vec![1.0, 1.0]);
        assert!(b.coerce(&SpaceValue::Box(vec![0.0, 1.0])).is_ok());
        assert!(b.coerce(&SpaceValue::Box(vec![0.0, 1.5])).is_err());
        assert!(b.coerce(&SpaceValue::Box(vec![0.0])).is_err());
    }
}
