//! JSON helpers, CSV tables and the binary result cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::semigroup::{CaloricField, HeatKernelResult};

/// Serde helpers writing non-finite reals as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::real_text(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => super::parse_real(&t).ok_or_else(|| serde::de::Error::custom(format!("bad real {t}"))),
        }
    }
}

/// [`real`] for optional reals.
pub mod real_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::real::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<super::Cell>::deserialize(d)?
            .map(|c| c.as_f64().ok_or_else(|| serde::de::Error::custom("expected a real")))
            .transpose()
    }
}

/// [`real`] for maps of reals.
pub mod real_map {
    use std::collections::BTreeMap;

    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(m.len()))?;
        for (k, v) in m {
            map.serialize_entry(k, &super::Cell::Num(*v))?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        let raw = BTreeMap::<String, super::Cell>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, c)| c.as_f64().map(|v| (k, v)).ok_or_else(|| serde::de::Error::custom("expected a real")))
            .collect()
    }
}

pub fn real_text(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn parse_real(t: &str) -> Option<f64> {
    match t {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        _ => t.parse().ok(),
    }
}

/// One table cell: a real or a label.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(t) => parse_real(t),
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => real_text(*v),
            Cell::Text(t) if t.contains(',') || t.contains('"') => format!("\"{}\"", t.replace('"', "\"\"")),
            Cell::Text(t) => t.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&crate::model::Vertex> for Cell {
    fn from(v: &crate::model::Vertex) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Num(v) => real::serialize(v, s),
            Cell::Text(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Num(v) => Cell::Num(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "-inf" | "nan" => Cell::Num(parse_real(&t).unwrap()),
                _ => Cell::Text(t),
            },
        })
    }
}

/// Column-labelled table, written as CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `t, vertex, source, value` rows of a heat kernel.
pub fn heat_kernel_table(h: &HeatKernelResult) -> Table {
    let mut t = Table::new(&["t", "source", "vertex", "value"]);
    for (r, &x) in h.sources.iter().enumerate() {
        for (y, v) in h.values[r].iter().enumerate() {
            t.push(vec![h.t.into(), (&h.vertices[x]).into(), (&h.vertices[y]).into(), (*v).into()]);
        }
    }
    t
}

/// `t, vertex, value` rows of a caloric field.
pub fn caloric_table(field: &CaloricField, vertices: &[crate::model::Vertex]) -> Table {
    let mut t = Table::new(&["t", "vertex", "value"]);
    for (i, row) in field.values.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            t.push(vec![field.times[i].into(), (&vertices[x]).into(), (*v).into()]);
        }
    }
    t
}

/// Cache key: SHA-256 of the model hash and a canonical parameter string.
pub fn cache_key(model_hash: &str, params: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(model_hash.as_bytes());
    h.update(b"\0");
    h.update(serde_json::to_vec(params).expect("parameters serialize"));
    hex::encode(h.finalize())
}

const MAGIC: &[u8; 8] = b"JLCACHE1";

/// Compact little-endian cache of a real vector, keyed by [`cache_key`].
#[derive(Clone, Debug)]
pub struct BinaryCache {
    dir: PathBuf,
}

impl BinaryCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BinaryCache { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn store(&self, key: &str, values: &[f64]) -> Result<()> {
        let tmp = self.dir.join(format!("{key}.tmp"));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            f.write_all(&v.to_le_bytes())?;
        }
        f.sync_all()?;
        fs::rename(tmp, self.path(key))?;
        Ok(())
    }

    pub fn load(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let bytes = match fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let corrupt = || Error::InvalidData(format!("corrupt cache entry {key}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt());
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != 16 + 8 * n {
            return Err(corrupt());
        }
        Ok(Some(
            bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Wrap {
        #[serde(with = "real")]
        v: f64,
    }

    #[test]
    fn non_finite_reals_roundtrip() {
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&Wrap { v }).unwrap();
            assert_eq!(serde_json::from_str::<Wrap>(&s).unwrap(), Wrap { v });
        }
        assert_eq!(serde_json::to_string(&Wrap { v: f64::INFINITY }).unwrap(), r#"{"v":"inf"}"#);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = BinaryCache::new(dir.path()).unwrap();
        let key = cache_key("abc", &("heat", 1.0));
        assert_eq!(cache.load(&key).unwrap(), None);
        cache.store(&key, &[1.0, -2.5, f64::INFINITY]).unwrap();
        assert_eq!(cache.load(&key).unwrap(), Some(vec![1.0, -2.5, f64::INFINITY]));
        assert_ne!(key, cache_key("abd", &("heat", 1.0)));
    }

    #[test]
    fn csv_quotes_labels() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![Cell::Text("(1,2)".into()), 0.5.into()]);
        assert_eq!(t.to_csv(), "a,b\n\"(1,2)\",0.5\n");
    }
}
