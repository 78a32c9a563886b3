//! Spin-system documents (TOML).
//!
//! ```toml
//! name = "citrate"
//! spectrometer_mhz = 500.0      # or: field_tesla = 11.74
//! carrier_ppm = 2.595           # optional
//! shifts_ppm = [2.66, 2.53]
//! j_hz = [[1, 2, -17.23]]       # 1-based pairs; absent pairs are 0 Hz
//! ```

use std::path::Path;

use toml::{Table, Value};

use super::{SpinSystem, PROTON_MHZ_PER_TESLA};
use crate::error::{Error, Result};

const KEYS: &[&str] = &["name", "spectrometer_mhz", "field_tesla", "carrier_ppm", "shifts_ppm", "j_hz"];

pub(crate) fn number(v: &Value, key: &str) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::schema(key, format!("expected a number, found {}", other.type_str()))),
    }
}

fn index(v: &Value, key: &str) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 1 => Ok(*i as usize),
        other => Err(Error::schema(key, format!("expected a 1-based spin index, found {other}"))),
    }
}

impl SpinSystem {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::schema("document", e.message().to_string()))?;
        Self::from_table(&table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn from_table(t: &Table) -> Result<Self> {
        if let Some(k) = t.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::schema(k.as_str(), "unknown key"));
        }
        let name = match t.get("name") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            Some(_) => return Err(Error::schema("name", "expected a non-empty string")),
            None => return Err(Error::schema("name", "missing")),
        };
        let mhz = match (t.get("spectrometer_mhz"), t.get("field_tesla")) {
            (Some(v), None) => number(v, "spectrometer_mhz")?,
            (None, Some(v)) => {
                let b = number(v, "field_tesla")?;
                if !(b > 0.0) {
                    return Err(Error::schema("field_tesla", format!("must be positive, got {b}")));
                }
                b * PROTON_MHZ_PER_TESLA
            }
            (Some(_), Some(_)) => {
                return Err(Error::schema("field_tesla", "give either spectrometer_mhz or field_tesla, not both"))
            }
            (None, None) => return Err(Error::schema("spectrometer_mhz", "missing")),
        };
        let shifts = match t.get("shifts_ppm") {
            Some(Value::Array(a)) => a.iter().map(|v| number(v, "shifts_ppm")).collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(Error::schema("shifts_ppm", "expected an array of numbers")),
            None => return Err(Error::schema("shifts_ppm", "missing")),
        };
        let mut couplings = Vec::new();
        match t.get("j_hz") {
            None => {}
            Some(Value::Array(rows)) => {
                for row in rows {
                    match row {
                        Value::Array(r) if r.len() == 3 => {
                            couplings.push((index(&r[0], "j_hz")?, index(&r[1], "j_hz")?, number(&r[2], "j_hz")?));
                        }
                        _ => return Err(Error::schema("j_hz", "each entry must be [i, j, value]")),
                    }
                }
            }
            Some(_) => return Err(Error::schema("j_hz", "expected an array of [i, j, value]")),
        }
        let carrier = t.get("carrier_ppm").map(|v| number(v, "carrier_ppm")).transpose()?;
        SpinSystem::new(name, shifts, &couplings, mhz, carrier)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn citrate_document() {
        let s = SpinSystem::from_toml_str(
            "name = \"citrate\"\nspectrometer_mhz = 500\nshifts_ppm = [2.66, 2.53]\nj_hz = [[1, 2, -17.23]]\n",
        )
        .unwrap();
        assert_eq!(s.n_spins(), 2);
        assert_eq!(s.coupling(1, 2), -17.23);
        assert_eq!(s.coupling(2, 1), -17.23);
        assert!((s.carrier_ppm() - 2.595).abs() < 1e-12);
    }

    #[test]
    fn field_conversion() {
        let s = SpinSystem::from_toml_str("name = \"a\"\nfield_tesla = 3.0\nshifts_ppm = [1.0]\n").unwrap();
        assert!((s.spectrometer_mhz() - 127.731).abs() < 1e-9);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("name = \"a\"\nshifts_ppm = [1.0]\n", "spectrometer_mhz"),
            ("name = \"a\"\nspectrometer_mhz = -1\nshifts_ppm = [1.0]\n", "spectrometer_mhz"),
            ("name = \"a\"\nspectrometer_mhz = 100\n", "shifts_ppm"),
            ("name = \"a\"\nspectrometer_mhz = 100\nshifts_ppm = [1,2,3,4,5,6,7,8,9]\n", "shifts_ppm"),
            ("name = \"a\"\nspectrometer_mhz = 100\nshifts_ppm = [1.0]\nbogus = 1\n", "bogus"),
            ("name = \"a\"\nspectrometer_mhz = 100\nshifts_ppm = [1.0, 2.0]\nj_hz = [[1, 2]]\n", "j_hz"),
            ("spectrometer_mhz = 100\nshifts_ppm = [1.0]\n", "name"),
            ("name = \"a\"\nspectrometer_mhz = \"x\"\nshifts_ppm = [1.0]\n", "spectrometer_mhz"),
        ];
        for (doc, key) in cases {
            let e = SpinSystem::from_toml_str(doc).unwrap_err().to_string();
            assert!(e.contains(key), "{e} should mention {key}");
        }
        let e = SpinSystem::from_toml_str(
            "name = \"a\"\nspectrometer_mhz = 100\nshifts_ppm = [1.0, 2.0]\nj_hz = [[1, 2, 3.0], [2, 1, 4.0]]\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("asymmetric coupling"));
    }
}
