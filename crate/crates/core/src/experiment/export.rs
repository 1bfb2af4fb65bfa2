//! Per-example class-logit files (JSON lines) and offline ensembling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{MemberOutput, Strategy};
use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    pub id: String,
    pub gold: Option<usize>,
    pub logits: Vec<f64>,
}

pub fn write_logits(path: impl AsRef<Path>, records: &[LogitRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<Vec<LogitRecord>> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(Location::line(source.clone(), i + 1), e.to_string()))?,
        );
    }
    Ok(out)
}

/// An ensemble prediction for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: Option<usize>,
    pub predicted: usize,
}

/// Aggregates aligned member exports. Member `i` gets template id `i`.
pub fn ensemble_records(members: &[Vec<LogitRecord>], strategy: Strategy) -> Result<Vec<Prediction>> {
    let first = members.first().ok_or_else(|| Error::argument("no logit files"))?;
    for (m, recs) in members.iter().enumerate() {
        if recs.len() != first.len() {
            return Err(Error::argument(format!(
                "member {m} has {} records, expected {}",
                recs.len(),
                first.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(first.len());
    for (i, head) in first.iter().enumerate() {
        let mut outputs = Vec::with_capacity(members.len());
        for (m, recs) in members.iter().enumerate() {
            let r = &recs[i];
            if r.id != head.id || r.gold != head.gold {
                return Err(Error::argument(format!(
                    "record {i} of member {m} is {:?}, expected {:?}",
                    r.id, head.id
                )));
            }
            outputs.push(MemberOutput::new(m as u32, r.logits.clone()));
        }
        out.push(Prediction {
            id: head.id.clone(),
            gold: head.gold,
            predicted: strategy.aggregate(&outputs)?,
        });
    }
    Ok(out)
}

/// Share of predictions matching their gold label; `None` without labeled predictions.
pub fn accuracy(predictions: &[Prediction]) -> Option<f64> {
    let labeled: Vec<_> = predictions.iter().filter(|p| p.gold.is_some()).collect();
    if labeled.is_empty() {
        return None;
    }
    let correct = labeled.iter().filter(|p| p.gold == Some(p.predicted)).count();
    Some(correct as f64 / labeled.len() as f64)
}
