//! Typed cells, literals and column types shared by the store, the contract
//! DSL and the query language.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Column type of a catalog column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ColumnType {
    Int,
    Text,
    Date,
    Real,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Int => "INT",
            ColumnType::Text => "TEXT",
            ColumnType::Date => "DATE",
            ColumnType::Real => "REAL",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColumnType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "INT" => Ok(ColumnType::Int),
            "TEXT" => Ok(ColumnType::Text),
            "DATE" => Ok(ColumnType::Date),
            "REAL" => Ok(ColumnType::Real),
            other => Err(format!("unknown column type `{other}`")),
        }
    }
}

/// Calendar date stored as days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date(pub i32);

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("epoch"),
};

impl Date {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Date> {
        let d = NaiveDate::from_ymd_opt(year, month, day)?;
        Some(Date((d - EPOCH).num_days() as i32))
    }

    pub fn days(self) -> i32 {
        self.0
    }

    fn naive(self) -> NaiveDate {
        EPOCH + chrono::Duration::days(i64::from(self.0))
    }

    /// Parses the strict `YYYY-MM-DD` form.
    pub fn parse(s: &str) -> Option<Date> {
        let b = s.as_bytes();
        if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
            return None;
        }
        let digits = |r: std::ops::Range<usize>| -> Option<u32> {
            let part = &s[r];
            if part.bytes().all(|c| c.is_ascii_digit()) {
                part.parse().ok()
            } else {
                None
            }
        };
        Date::from_ymd(digits(0..4)? as i32, digits(5..7)?, digits(8..10)?)
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.naive().format("%Y-%m-%d"))
    }
}

impl Serialize for Date {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Date {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Date::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad date `{s}`")))
    }
}

/// A typed cell or literal. `Real` is always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Int(i64),
    Text(String),
    Date(Date),
    Real(f64),
}

impl Value {
    /// Type of the value when stored in a column.
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Int(_) => ColumnType::Int,
            Value::Text(_) => ColumnType::Text,
            Value::Date(_) => ColumnType::Date,
            Value::Real(_) => ColumnType::Real,
        }
    }

    /// Whether a literal of this kind may be compared against a column of
    /// type `ty`. Integer literals are accepted for REAL columns.
    pub fn matches(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Value::Int(_), ColumnType::Int)
                | (Value::Int(_), ColumnType::Real)
                | (Value::Real(_), ColumnType::Real)
                | (Value::Text(_), ColumnType::Text)
                | (Value::Date(_), ColumnType::Date)
        )
    }

    /// Type-respecting total order; `None` for incomparable kinds.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Date(a), Value::Date(b)) => Some(a.cmp(b)),
            (Value::Real(a), Value::Real(b)) => a.partial_cmp(b),
            (Value::Int(a), Value::Real(b)) => (*a as f64).partial_cmp(b),
            (Value::Real(a), Value::Int(b)) => a.partial_cmp(&(*b as f64)),
            _ => None,
        }
    }

    /// Parses a CSV cell for a column of the given type.
    pub fn parse_cell(raw: &str, ty: ColumnType) -> Result<Value, String> {
        match ty {
            ColumnType::Int => raw
                .trim()
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| format!("`{raw}` is not an INT")),
            ColumnType::Text => Ok(Value::Text(raw.to_string())),
            ColumnType::Date => Date::parse(raw.trim())
                .map(Value::Date)
                .ok_or_else(|| format!("`{raw}` is not a DATE (YYYY-MM-DD)")),
            ColumnType::Real => match raw.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Value::Real(v)),
                _ => Err(format!("`{raw}` is not a finite REAL")),
            },
        }
    }

    /// Plain JSON rendering used in query results on the wire.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Text(v) => serde_json::Value::from(v.as_str()),
            Value::Date(d) => serde_json::Value::from(d.to_string()),
            Value::Real(v) => serde_json::Value::from(*v),
        }
    }

    /// Renders the value as a literal in the contract/query surface syntax.
    pub fn literal(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Text(s) => quote(s),
            Value::Date(d) => d.to_string(),
            Value::Real(v) => {
                let s = v.to_string();
                if s.contains('.') {
                    s
                } else {
                    format!("{s}.0")
                }
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{d}"),
            Value::Real(v) => write!(f, "{v}"),
        }
    }
}

/// Double-quotes `s`, escaping backslash, quote and control characters.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_round_trip() {
        let d = Date::parse("2025-01-15").unwrap();
        assert_eq!(d.to_string(), "2025-01-15");
        assert_eq!(Date::parse("1970-01-01").unwrap().days(), 0);
        assert_eq!(Date::parse("1969-12-31").unwrap().days(), -1);
        assert!(Date::parse("2025-02-30").is_none());
        assert!(Date::parse("2025-1-01").is_none());
    }

    #[test]
    fn numeric_cross_compare() {
        assert_eq!(
            Value::Int(3).compare(&Value::Real(2.5)),
            Some(Ordering::Greater)
        );
        assert_eq!(Value::Int(3).compare(&Value::Text("3".into())), None);
    }

    #[test]
    fn real_literal_keeps_decimal_point() {
        assert_eq!(Value::Real(2.0).literal(), "2.0");
        assert_eq!(Value::Real(-0.25).literal(), "-0.25");
        assert_eq!(Value::Real(1e20).literal(), "100000000000000000000.0");
    }
}
