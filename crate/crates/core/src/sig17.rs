//! JSON number formatting with 17 significant digits, enough to round-trip
//! any `f64` exactly.

use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub fn format(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_slice(xs: &[f64]) -> String {
    let mut s = String::with_capacity(xs.len() * 24 + 2);
    s.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format(*x));
    }
    s.push(']');
    s
}

fn raw<S: Serializer>(text: String, serializer: S) -> Result<S::Ok, S::Error> {
    RawValue::from_string(text)
        .map_err(S::Error::custom)?
        .serialize(serializer)
}

pub fn vec<S: Serializer>(xs: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(S::Error::custom("non-finite value"));
    }
    raw(format_slice(xs), serializer)
}

pub fn nested<S: Serializer>(rows: &[Vec<f64>], serializer: S) -> Result<S::Ok, S::Error> {
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(S::Error::custom("non-finite value"));
    }
    let mut s = String::from("[");
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format_slice(r));
    }
    s.push(']');
    raw(s, serializer)
}
