//! Output number formatting: non-integer values carry 6 significant digits.

use serde::Serialize;
use serde_json::{Number, Value};

/// `x` rounded to 6 significant digits. Zero and non-finite values pass
/// through.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// Rounds every floating-point number in the document in place.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = sig6(n.as_f64().expect("f64 number"));
            *n = Number::from_f64(r).expect("finite");
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with 6-significant-digit floats.
pub fn to_json6<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializes");
    round_json(&mut v);
    serde_json::to_string_pretty(&v).expect("serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_six_digits() {
        assert_eq!(sig6(0.930303030303), 0.930303);
        assert_eq!(sig6(-0.0034567891), -0.00345679);
        assert_eq!(sig6(123456789.0), 123457000.0);
        assert_eq!(sig6(0.0), 0.0);
        let mut v = serde_json::json!({"a": [1.23456789, 7], "b": {"c": 2.0}});
        round_json(&mut v);
        assert_eq!(v.to_string(), r#"{"a":[1.23457,7],"b":{"c":2.0}}"#);
    }
}
