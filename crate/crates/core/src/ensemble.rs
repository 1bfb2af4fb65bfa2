//! Combining per-template members into one prediction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{argmax, predict_proba, ClassScores};

/// Class logits produced by the model trained on one template.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberOutput {
    pub template_id: u32,
    pub scores: ClassScores,
}

impl MemberOutput {
    pub fn new(template_id: u32, logits: Vec<f64>) -> Self {
        Self {
            template_id,
            scores: ClassScores::new(logits),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Vote,
    Proba,
    #[default]
    Logit,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vote => "vote",
            Strategy::Proba => "proba",
            Strategy::Logit => "logit",
        }
    }

    pub fn aggregate(self, members: &[MemberOutput]) -> Result<usize> {
        match self {
            Strategy::Vote => aggregate_vote(members),
            Strategy::Proba => aggregate_proba(members),
            Strategy::Logit => aggregate_logit(members),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vote" => Ok(Strategy::Vote),
            "proba" => Ok(Strategy::Proba),
            "logit" => Ok(Strategy::Logit),
            other => Err(Error::argument(format!(
                "unknown ensemble strategy {other:?} (expected vote, proba or logit)"
            ))),
        }
    }
}

fn num_classes(members: &[MemberOutput]) -> Result<usize> {
    let first = members
        .first()
        .ok_or_else(|| Error::argument("no ensemble members"))?;
    let c = first.scores.len();
    if c == 0 {
        return Err(Error::argument("member with no class logits"));
    }
    if members.iter().any(|m| m.scores.len() != c) {
        return Err(Error::argument("members disagree on the number of classes"));
    }
    Ok(c)
}

fn mean_proba(members: &[MemberOutput], c: usize) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; c];
    for m in members {
        for (acc, p) in mean.iter_mut().zip(predict_proba(&m.scores)?) {
            *acc += p;
        }
    }
    let n = members.len() as f64;
    Ok(mean.into_iter().map(|x| x / n).collect())
}

/// Majority vote over member argmaxes. Ties go to the tied label with the
/// highest mean probability, then to the lowest index.
pub fn aggregate_vote(members: &[MemberOutput]) -> Result<usize> {
    let c = num_classes(members)?;
    let mut votes = vec![0usize; c];
    for m in members {
        votes[m.scores.argmax()] += 1;
    }
    let top = *votes.iter().max().expect("at least one class");
    let tied: Vec<usize> = (0..c).filter(|&y| votes[y] == top).collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    let mean = mean_proba(members, c)?;
    let mut best = tied[0];
    for &y in &tied[1..] {
        if mean[y] > mean[best] {
            best = y;
        }
    }
    Ok(best)
}

/// Argmax of the mean softmax probability.
pub fn aggregate_proba(members: &[MemberOutput]) -> Result<usize> {
    let c = num_classes(members)?;
    Ok(argmax(&mean_proba(members, c)?))
}

/// Argmax of the mean raw class logit.
pub fn aggregate_logit(members: &[MemberOutput]) -> Result<usize> {
    let c = num_classes(members)?;
    let mut mean = vec![0.0; c];
    for m in members {
        for (acc, x) in mean.iter_mut().zip(m.scores.logits()) {
            *acc += x;
        }
    }
    let n = members.len() as f64;
    let mean: Vec<f64> = mean.into_iter().map(|x| x / n).collect();
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite mean logit".into()));
    }
    Ok(argmax(&mean))
}
