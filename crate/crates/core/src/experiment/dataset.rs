//! Labeled text datasets: built-in schemas, CSV and JSONL readers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::template::Example;

/// Environment variable naming a directory with `<dataset>/{train,test}.csv`.
pub const DATA_DIR_ENV: &str = "VERBKIT_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Headerless delimited text: label column first, then the declared columns.
    Csv,
    /// One JSON object per line.
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DataFormat::Jsonl,
            _ => DataFormat::Csv,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::argument(format!("unknown data format {other:?}"))),
        }
    }
}

/// How raw records map onto example fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub label_names: Vec<String>,
    /// Raw column names after the label column (CSV order).
    pub columns: Vec<String>,
    /// Example field → raw columns joined with a single space (empty parts skipped).
    pub fields: BTreeMap<String, Vec<String>>,
}

impl Schema {
    /// Each column becomes a field of the same name.
    pub fn plain(label_names: Vec<String>, columns: Vec<String>) -> Self {
        let fields = columns.iter().map(|c| (c.clone(), vec![c.clone()])).collect();
        Self {
            label_names,
            columns,
            fields,
        }
    }

    pub fn builtin(dataset_id: &str) -> Result<Self> {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let labels = crate::verbalizer::manual_table(dataset_id)?
            .into_iter()
            .map(|(l, _)| l.to_string())
            .collect();
        let (columns, fields): (Vec<String>, Vec<(&str, &[&str])>) = match dataset_id {
            "ag" => (owned(&["title", "description"]), vec![("text", &["title", "description"][..])]),
            "dbpedia" => (
                owned(&["title", "content"]),
                vec![("title", &["title"][..]), ("content", &["content"])],
            ),
            "yahoo" => (
                owned(&["title", "content", "answer"]),
                vec![("text", &["title", "content", "answer"][..])],
            ),
            other => return Err(Error::argument(format!("no built-in schema for dataset {other:?}"))),
        };
        Ok(Self {
            label_names: labels,
            columns,
            fields: fields
                .into_iter()
                .map(|(f, cs)| (f.to_string(), owned(cs)))
                .collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_names.is_empty() {
            return Err(Error::argument("schema has no labels"));
        }
        for (field, cols) in &self.fields {
            if let Some(c) = cols.iter().find(|c| !self.columns.contains(c)) {
                return Err(Error::argument(format!("field {field:?} uses unknown column {c:?}")));
            }
        }
        Ok(())
    }

    fn label_index(&self, raw: &str, one_based: bool, loc: &Location) -> Result<usize> {
        let raw = raw.trim();
        if let Some(i) = self.label_names.iter().position(|l| l == raw) {
            return Ok(i);
        }
        let c = self.label_names.len();
        let parsed = raw.parse::<usize>().ok().and_then(|i| {
            let i = if one_based { i.checked_sub(1)? } else { i };
            (i < c).then_some(i)
        });
        parsed.ok_or_else(|| Error::parse(loc.clone(), format!("unknown label {raw:?}")))
    }

    fn example(&self, id: String, raw: &BTreeMap<&str, &str>, label: usize, loc: &Location) -> Result<Example> {
        let mut fields = BTreeMap::new();
        for (field, cols) in &self.fields {
            let mut parts = Vec::new();
            for c in cols {
                let v = raw
                    .get(c.as_str())
                    .ok_or_else(|| Error::parse(loc.clone(), format!("missing column {c:?}")))?;
                let v = v.trim();
                if !v.is_empty() {
                    parts.push(v);
                }
            }
            fields.insert(field.clone(), parts.join(" "));
        }
        Ok(Example {
            id,
            fields,
            label: Some(label),
        })
    }
}

/// A labeled split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: Schema,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn label_names(&self) -> &[String] {
        &self.schema.label_names
    }

    pub fn num_labels(&self) -> usize {
        self.schema.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples per label index.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels()];
        for x in &self.examples {
            if let Some(y) = x.label {
                counts[y] += 1;
            }
        }
        counts
    }
}

/// Reads `path` as `format` under `schema`. Example ids are `<name>-<row>`.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat, schema: &Schema, name: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::argument(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(BufReader::new(file), format, schema, name, &path.display().to_string())
}

pub fn read_dataset(
    reader: impl Read,
    format: DataFormat,
    schema: &Schema,
    name: &str,
    source: &str,
) -> Result<Dataset> {
    schema.validate()?;
    let examples = match format {
        DataFormat::Csv => read_csv(reader, schema, name, source)?,
        DataFormat::Jsonl => read_jsonl(BufReader::new(reader), schema, name, source)?,
    };
    Ok(Dataset {
        name: name.to_string(),
        schema: schema.clone(),
        examples,
    })
}

fn read_csv(reader: impl Read, schema: &Schema, name: &str, source: &str) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(row + 1, |p| p.line() as usize);
            Error::parse(Location::line(source, line), e.to_string())
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        let loc = Location::line(source, line);
        if record.len() != schema.columns.len() + 1 {
            return Err(Error::parse(
                loc,
                format!("expected {} columns, found {}", schema.columns.len() + 1, record.len()),
            ));
        }
        let label = schema.label_index(&record[0], true, &loc)?;
        let raw: BTreeMap<&str, &str> = schema
            .columns
            .iter()
            .map(String::as_str)
            .zip(record.iter().skip(1))
            .collect();
        out.push(schema.example(format!("{name}-{row}"), &raw, label, &loc)?);
    }
    Ok(out)
}

fn read_jsonl(reader: impl BufRead, schema: &Schema, name: &str, source: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = Location::line(source, i + 1);
        let value: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| Error::parse(loc.clone(), e.to_string()))?;
        let label = match value.get("label") {
            Some(serde_json::Value::String(s)) => schema.label_index(s, false, &loc)?,
            Some(serde_json::Value::Number(n)) => schema.label_index(&n.to_string(), false, &loc)?,
            _ => return Err(Error::parse(loc, "record has no label")),
        };
        let mut raw = BTreeMap::new();
        for c in &schema.columns {
            match value.get(c) {
                Some(serde_json::Value::String(s)) => {
                    raw.insert(c.as_str(), s.as_str());
                }
                _ => return Err(Error::parse(loc, format!("missing text column {c:?}"))),
            }
        }
        let id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => format!("{name}-{}", out.len()),
        };
        out.push(schema.example(id, &raw, label, &loc)?);
    }
    Ok(out)
}

/// Default location of a built-in split: `$VERBKIT_DATA_DIR/<id>/<split>.csv`.
pub fn default_split_path(dataset_id: &str, split: &str) -> Result<PathBuf> {
    let dir = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| {
        Error::argument(format!(
            "no path given for the {split} split of {dataset_id:?} and {DATA_DIR_ENV} is not set"
        ))
    })?;
    Ok(PathBuf::from(dir).join(dataset_id).join(format!("{split}.csv")))
}
