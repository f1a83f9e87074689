//! Tabular feature schemas, instances and CSV datasets.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous { min: f64, max: f64 },
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous { min, max },
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            FeatureKind::Continuous { min, max } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(Error::InvalidSchema(format!(
                        "feature `{}`: need finite min < max, got [{min}, {max}]",
                        self.name
                    )));
                }
            }
            FeatureKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(Error::InvalidSchema(format!("feature `{}` has no levels", self.name)));
                }
                let mut seen = HashSet::new();
                for l in levels {
                    if !seen.insert(l) {
                        return Err(Error::InvalidSchema(format!(
                            "feature `{}` repeats level `{l}`",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that `v` is a legal value of this feature.
    pub fn check_value(&self, v: f64) -> Result<()> {
        match &self.kind {
            FeatureKind::Continuous { min, max } => {
                if !(v >= *min && v <= *max) {
                    return Err(Error::SchemaViolation(format!(
                        "feature `{}`: {v} outside [{min}, {max}]",
                        self.name
                    )));
                }
            }
            FeatureKind::Categorical { levels } => {
                if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels.len()) {
                    return Err(Error::SchemaViolation(format!(
                        "feature `{}`: {v} is not a level index below {}",
                        self.name,
                        levels.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text form of a value: level string for categorical features, shortest
    /// round-trip decimal otherwise.
    pub fn format_value(&self, v: f64) -> String {
        match &self.kind {
            FeatureKind::Categorical { levels } if v >= 0.0 && (v as usize) < levels.len() => {
                levels[v as usize].clone()
            }
            _ => format!("{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

#[derive(Deserialize)]
struct RawSchema {
    features: Vec<FeatureSpec>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        FeatureSchema::new(raw.features)
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut names = HashSet::new();
        for f in &features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate feature name `{}`", f.name)));
            }
        }
        Ok(FeatureSchema { features })
    }

    /// `arity` continuous features on [0, 1] named `x1..xd`.
    pub fn boolean(arity: usize) -> Self {
        FeatureSchema {
            features: (1..=arity)
                .map(|i| FeatureSpec::continuous(format!("x{i}"), 0.0, 1.0))
                .collect(),
        }
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn arity(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, index: usize) -> Result<&FeatureSpec> {
        self.features.get(index).ok_or(Error::IndexOutOfBounds {
            index,
            arity: self.arity(),
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate_instance(&self, x: &Instance) -> Result<()> {
        if x.len() != self.arity() {
            return Err(Error::ArityMismatch {
                expected: self.arity(),
                got: x.len(),
            });
        }
        for (spec, &v) in self.features.iter().zip(x.values()) {
            spec.check_value(v)?;
        }
        Ok(())
    }
}

/// Range used to normalize cost: `max - min` for continuous features, 1 for
/// categorical ones (any change costs one full range).
pub fn feature_range(schema: &FeatureSchema, index: usize) -> Result<f64> {
    Ok(match &schema.feature(index)?.kind {
        FeatureKind::Continuous { min, max } => max - min,
        FeatureKind::Categorical { .. } => 1.0,
    })
}

/// One value per schema feature; categorical values are level indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance(pub Vec<f64>);

impl Instance {
    pub fn new(values: Vec<f64>) -> Self {
        Instance(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.0.get(i).copied()
    }
}

impl From<Vec<f64>> for Instance {
    fn from(v: Vec<f64>) -> Self {
        Instance(v)
    }
}

impl<const N: usize> From<[f64; N]> for Instance {
    fn from(v: [f64; N]) -> Self {
        Instance(v.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Instance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Instance>, labels: Option<Vec<u8>>) -> Result<Self> {
        for r in &rows {
            schema.validate_instance(r)?;
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::SchemaViolation(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows.len()
                )));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::SchemaViolation("labels must be 0 or 1".into()));
            }
        }
        Ok(Dataset { schema, rows, labels })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Emits the dataset as CSV text; labels, when present, go in a trailing
    /// `label` column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header: Vec<String> = self.schema.features.iter().map(|f| f.name.clone()).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        let mut records = vec![header];
        for (i, row) in self.rows.iter().enumerate() {
            let mut cells: Vec<String> = self
                .schema
                .features
                .iter()
                .zip(row.values())
                .map(|(f, &v)| f.format_value(v))
                .collect();
            if let Some(l) = &self.labels {
                cells.push(l[i].to_string());
            }
            records.push(cells);
        }
        for r in records {
            w.write_record(&r).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory buffer")).expect("utf-8 cells")
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: Option<&FeatureSchema>, label_column: Option<&str>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, schema, label_column)
}

pub fn parse_csv(text: &str, schema: Option<&FeatureSchema>, label_column: Option<&str>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(csv_error)?);
    }
    let Some((header_rec, body)) = records.split_first() else {
        return Err(Error::MalformedCsv {
            line: 1,
            reason: "missing header row".into(),
        });
    };
    let header: Vec<&str> = header_rec.iter().collect();
    let width = header.len();
    let cells: Vec<Vec<&str>> = body.iter().map(|r| r.iter().collect()).collect();

    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| Error::UnknownLabelColumn(name.to_string()))?,
        ),
        None => None,
    };
    let labels = label_idx
        .map(|li| {
            cells
                .iter()
                .map(|row| match row[li] {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::SchemaViolation(format!("label `{other}` is not 0 or 1"))),
                })
                .collect::<Result<Vec<u8>>>()
        })
        .transpose()?;
    let feature_cols: Vec<usize> = (0..width).filter(|&c| Some(c) != label_idx).collect();

    let schema = match schema {
        Some(s) => s.clone(),
        None => infer_schema(&header, &cells, &feature_cols)?,
    };
    // column of each schema feature in the file
    let mut columns = Vec::with_capacity(schema.arity());
    for f in schema.features() {
        let col = feature_cols
            .iter()
            .copied()
            .find(|&c| header[c] == f.name)
            .ok_or_else(|| Error::SchemaViolation(format!("column `{}` missing from header", f.name)))?;
        columns.push(col);
    }
    if columns.len() != feature_cols.len() {
        return Err(Error::SchemaViolation(format!(
            "header has {} feature columns, schema declares {}",
            feature_cols.len(),
            columns.len()
        )));
    }

    let mut rows = Vec::with_capacity(cells.len());
    for (i, row) in cells.iter().enumerate() {
        let mut values = Vec::with_capacity(columns.len());
        for (spec, &col) in schema.features().iter().zip(&columns) {
            let cell = row[col];
            let v = match &spec.kind {
                FeatureKind::Continuous { .. } => parse_number(cell).ok_or_else(|| Error::MalformedCsv {
                    line: i + 2,
                    reason: format!("cannot parse `{cell}` as a number"),
                })?,
                FeatureKind::Categorical { levels } => levels
                    .iter()
                    .position(|l| l == cell)
                    .ok_or_else(|| {
                        Error::SchemaViolation(format!("`{cell}` is not a level of `{}`", spec.name))
                    })? as f64,
            };
            spec.check_value(v)?;
            values.push(v);
        }
        rows.push(Instance(values));
    }
    Dataset::new(schema, rows, labels)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let reason = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("{len} cells, header has {expected_len}")
        }
        _ => e.to_string(),
    };
    Error::MalformedCsv { line, reason }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn infer_schema(header: &[&str], cells: &[Vec<&str>], feature_cols: &[usize]) -> Result<FeatureSchema> {
    let mut features = Vec::with_capacity(feature_cols.len());
    for &c in feature_cols {
        let name = header[c];
        let numeric: Option<Vec<f64>> = cells.iter().map(|r| parse_number(r[c])).collect();
        let spec = match numeric {
            Some(vals) if !vals.is_empty() => {
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if min < max {
                    FeatureSpec::continuous(name, min, max)
                } else {
                    FeatureSpec::categorical(name, [cells[0][c]])
                }
            }
            _ => {
                let levels: BTreeSet<&str> = cells.iter().map(|r| r[c]).collect();
                if levels.is_empty() {
                    return Err(Error::InvalidSchema(format!(
                        "cannot infer a kind for `{name}` from an empty file"
                    )));
                }
                FeatureSpec::categorical(name, levels)
            }
        };
        features.push(spec);
    }
    FeatureSchema::new(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infers_continuous_boolean_columns() {
        let ds = parse_csv("x1,x2\n1,1\n0,1", None, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.schema().features()[0].kind, FeatureKind::Continuous { min: 0.0, max: 1.0 });
        // x2 is constant, which cannot satisfy min < max
        assert!(ds.schema().features()[1].is_categorical());
    }

    #[test]
    fn declared_schema_wins() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::categorical("x1", ["0", "1"]),
            FeatureSpec::categorical("x2", ["0", "1"]),
        ])
        .unwrap();
        let ds = parse_csv("x1,x2\n1,1\n0,1", Some(&schema), None).unwrap();
        assert!(ds.schema().features().iter().all(FeatureSpec::is_categorical));
        assert_eq!(ds.rows()[1], Instance::from([0.0, 1.0]));
    }

    #[test]
    fn ragged_row_is_malformed() {
        let err = parse_csv("x1,x2\n1", None, None).unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 2, .. }), "{err}");
    }

    #[test]
    fn unseen_level_is_schema_violation() {
        let schema = FeatureSchema::new(vec![FeatureSpec::categorical("c", ["a", "b"])]).unwrap();
        let err = parse_csv("c\nz\n", Some(&schema), None).unwrap_err();
        assert_eq!(err.kind(), "SchemaViolation");
    }

    #[test]
    fn out_of_range_value_is_schema_violation() {
        let schema = FeatureSchema::new(vec![FeatureSpec::continuous("age", 18.0, 75.0)]).unwrap();
        let err = parse_csv("age\n90\n", Some(&schema), None).unwrap_err();
        assert_eq!(err.kind(), "SchemaViolation");
        let err = parse_csv("age\nold\n", Some(&schema), None).unwrap_err();
        assert_eq!(err.kind(), "MalformedCsv");
    }

    #[test]
    fn label_column_is_split_off() {
        let ds = parse_csv("a,y,b\n0,1,2\n1,0,3\n", None, Some("y")).unwrap();
        assert_eq!(ds.schema().arity(), 2);
        assert_eq!(ds.labels(), Some(&[1u8, 0][..]));
        assert_eq!(ds.rows()[1], Instance::from([1.0, 3.0]));
        let err = parse_csv("a,b\n0,1\n1,0\n", None, Some("y")).unwrap_err();
        assert_eq!(err.kind(), "UnknownLabelColumn");
        let err = parse_csv("a,y\n0,2\n1,0\n", None, Some("y")).unwrap_err();
        assert_eq!(err.kind(), "SchemaViolation");
    }

    #[test]
    fn quoted_cells_keep_commas() {
        let ds = parse_csv("a,b\n\"x,y\",3\nz,4\n", None, None).unwrap();
        assert_eq!(ds.schema().features()[0].kind, FeatureKind::Categorical { levels: vec!["x,y".into(), "z".into()] });
        assert!(ds.to_csv().starts_with("a,b\n\"x,y\",3\n"));
    }

    #[test]
    fn feature_ranges() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::continuous("age", 18.0, 75.0),
            FeatureSpec::categorical("job", ["a", "b", "c", "d"]),
            FeatureSpec::continuous("z", 0.0, 1.0),
        ])
        .unwrap();
        assert_eq!(feature_range(&schema, 0).unwrap(), 57.0);
        assert_eq!(feature_range(&schema, 1).unwrap(), 1.0);
        assert!(matches!(
            feature_range(&schema, 99),
            Err(Error::IndexOutOfBounds { index: 99, arity: 3 })
        ));
    }

    #[test]
    fn schema_invariants() {
        assert!(FeatureSchema::new(vec![FeatureSpec::continuous("a", 1.0, 1.0)]).is_err());
        assert!(FeatureSchema::new(vec![FeatureSpec::categorical::<&str>("a", [])]).is_err());
        assert!(FeatureSchema::new(vec![FeatureSpec::categorical("a", ["x", "x"])]).is_err());
        assert!(FeatureSchema::new(vec![
            FeatureSpec::continuous("a", 0.0, 1.0),
            FeatureSpec::continuous("a", 0.0, 1.0)
        ])
        .is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::continuous("age", 18.0, 75.0),
            FeatureSpec::categorical("job", ["a", "b"]),
        ])
        .unwrap();
        let text = serde_json::to_string(&schema).unwrap();
        assert_eq!(
            text,
            r#"{"features":[{"name":"age","kind":"continuous","min":18.0,"max":75.0},{"name":"job","kind":"categorical","levels":["a","b"]}]}"#
        );
        let back: FeatureSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, schema);
        assert!(serde_json::from_str::<FeatureSchema>(
            r#"{"features":[{"name":"a","kind":"continuous","min":2,"max":1}]}"#
        )
        .is_err());
    }
}
