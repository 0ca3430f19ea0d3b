use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::{Error, Result};

/// Fixed-width numeric records, one per sampling unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    width: usize,
    values: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major values. Rejects empty, ragged or non-finite input.
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let width = names.len();
        if width == 0 {
            return Err(Error::Data("dataset has no columns".into()));
        }
        if values.is_empty() {
            return Err(Error::Data("dataset has no observations".into()));
        }
        if !values.len().is_multiple_of(width) {
            return Err(Error::Data("records do not all have the same width".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value in record {}", pos / width)));
        }
        Ok(Self { names, width, values })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let width = names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Data(format!("record {i} has width {} (expected {width})", rows[i].len())));
        }
        Self::new(names, rows.iter().flatten().copied().collect())
    }

    /// Unnamed columns `x1..xk`.
    pub fn from_columns_unnamed(width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new((1..=width).map(|i| format!("x{i}")).collect(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.width)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.width != other.width {
            return Err(Error::Data("cannot concatenate datasets of different width".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Dataset { names: self.names.clone(), width: self.width, values })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Data(format!("record {i} has {} fields", rec.len())));
            }
            for field in rec.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("record {i}: cannot parse {field:?} as a number")))?;
                values.push(v);
            }
        }
        Self::new(names, values)
    }

    /// Self-describing JSON: an array of objects sharing the same numeric keys.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let parsed: Value = serde_json::from_str(text)?;
        let records = parsed
            .as_array()
            .ok_or_else(|| Error::Data("JSON dataset must be an array of records".into()))?;
        let first = records
            .first()
            .and_then(Value::as_object)
            .ok_or_else(|| Error::Data("JSON dataset has no records".into()))?;
        let names: Vec<String> = first.keys().cloned().collect();
        let mut values = Vec::with_capacity(records.len() * names.len());
        for (i, rec) in records.iter().enumerate() {
            let obj = rec.as_object().ok_or_else(|| Error::Data(format!("record {i} is not an object")))?;
            if obj.len() != names.len() {
                return Err(Error::Data(format!("record {i} has {} fields", obj.len())));
            }
            for name in &names {
                let v = obj
                    .get(name)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Data(format!("record {i}: field {name:?} missing or not numeric")))?;
                values.push(v);
            }
        }
        Self::new(names, values)
    }

    /// Loads `.json` as a record list, anything else as CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&String::from_utf8_lossy(&bytes)),
            _ => Self::from_csv_reader(bytes.as_slice()),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let d = Dataset::from_rows(vec!["a".into(), "b".into()], &[vec![0.1, -2.5], vec![1e-17, 3.0]]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::from_csv_reader(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn json_records_keep_key_order() {
        let d = Dataset::from_json_str(r#"[{"y1": 1, "y0": 2}, {"y1": 3, "y0": 4.5}]"#).unwrap();
        assert_eq!(d.names(), ["y1", "y0"]);
        assert_eq!(d.row(1), [3.0, 4.5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Dataset::from_csv_reader("a,b\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("a,b\n1,x\n".as_bytes()).is_err());
        assert!(Dataset::from_json_str(r#"[{"a": 1}, {"b": 2}]"#).is_err());
        assert!(Dataset::new(vec!["a".into()], vec![f64::NAN]).is_err());
    }
}
