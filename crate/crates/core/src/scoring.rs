//! From MASK-position outputs to class scores.

use crate::error::{Error, Result};
use crate::lm::{LmTokenizer, MaskHiddenState, MaskOutput, TokenId, VocabLogits};
use crate::verbalizer::{SoftVerbalizer, Verbalizer, WeightedVerbalizer};

/// Per-label logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    logits: Vec<f64>,
}

impl ClassScores {
    pub fn new(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Index of the largest logit; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn proba(&self) -> Result<Vec<f64>> {
        predict_proba(self)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A verbalizer whose words are resolved to token ids, with one weight per word.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedVerbalizer {
    labels: Vec<String>,
    words: Vec<Vec<Vec<TokenId>>>,
    weights: Vec<Vec<f64>>,
}

impl ResolvedVerbalizer {
    /// Unit weights.
    pub fn manual(v: &Verbalizer, tokenizer: &LmTokenizer) -> Result<Self> {
        Self::weighted(&WeightedVerbalizer::uniform(v), tokenizer)
    }

    pub fn weighted(v: &WeightedVerbalizer, tokenizer: &LmTokenizer) -> Result<Self> {
        let mut words = Vec::with_capacity(v.num_labels());
        let mut weights = Vec::with_capacity(v.num_labels());
        for y in 0..v.num_labels() {
            let entries = v.entries(y);
            words.push(
                entries
                    .iter()
                    .map(|e| tokenizer.label_word_ids(&e.word))
                    .collect::<Result<Vec<_>>>()?,
            );
            weights.push(entries.iter().map(|e| e.weight).collect());
        }
        Ok(Self {
            labels: v.labels().to_vec(),
            words,
            weights,
        })
    }

    /// Builds directly from token ids and weights.
    pub fn from_ids(labels: Vec<String>, words: Vec<Vec<Vec<TokenId>>>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != words.len() || words.len() != weights.len() {
            return Err(Error::argument("labels, words and weights must align"));
        }
        for (ws, qs) in words.iter().zip(&weights) {
            if ws.is_empty() || ws.len() != qs.len() || ws.iter().any(Vec::is_empty) {
                return Err(Error::argument("every label needs words with one weight each"));
            }
        }
        Ok(Self {
            labels,
            words,
            weights,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn word_ids(&self, label: usize) -> &[Vec<TokenId>] {
        &self.words[label]
    }

    pub fn weights(&self, label: usize) -> &[f64] {
        &self.weights[label]
    }

    pub fn set_weights(&mut self, label: usize, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.words[label].len() {
            return Err(Error::argument("weight count does not match the label's words"));
        }
        self.weights[label] = weights;
        Ok(())
    }
}

/// Class logit = mean of the label words' MASK logits (weights ignored).
pub fn class_logits_mean(vl: &VocabLogits, v: &ResolvedVerbalizer) -> ClassScores {
    ClassScores::new(
        v.words
            .iter()
            .map(|ws| ws.iter().map(|ids| vl.word_logit(ids)).sum::<f64>() / ws.len() as f64)
            .collect(),
    )
}

/// Class logit = `Σ q_w M(w) / Σ q_w` over the label's words.
pub fn class_logits_weighted(vl: &VocabLogits, v: &ResolvedVerbalizer) -> Result<ClassScores> {
    let mut out = Vec::with_capacity(v.num_labels());
    for (y, (ws, qs)) in v.words.iter().zip(&v.weights).enumerate() {
        let num: f64 = ws.iter().zip(qs).map(|(ids, q)| q * vl.word_logit(ids)).sum();
        let den: f64 = qs.iter().sum();
        if den == 0.0 {
            return Err(Error::Numeric(format!(
                "weights of label {:?} sum to zero",
                v.labels[y]
            )));
        }
        out.push(num / den);
    }
    Ok(ClassScores::new(out))
}

/// Class logit = dot product of the MASK hidden state with the label prototype.
pub fn class_logits_soft(h: &MaskHiddenState, sv: &SoftVerbalizer) -> Result<ClassScores> {
    let mut out = Vec::with_capacity(sv.prototypes.len());
    for p in &sv.prototypes {
        if p.len() != h.0.len() {
            return Err(Error::argument(format!(
                "prototype dimension {} differs from hidden size {}",
                p.len(),
                h.0.len()
            )));
        }
        out.push(p.iter().zip(&h.0).map(|(&a, &b)| a as f64 * b as f64).sum());
    }
    Ok(ClassScores::new(out))
}

/// How a verbalizer turns MASK outputs into class logits.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    /// Unweighted mean (manual and automatic verbalizers).
    Mean(ResolvedVerbalizer),
    /// Weighted mean with trainable weights (MaVEN).
    Weighted(ResolvedVerbalizer),
    /// Prototype dot products.
    Soft(SoftVerbalizer),
}

impl Scorer {
    pub fn labels(&self) -> &[String] {
        match self {
            Scorer::Mean(v) | Scorer::Weighted(v) => v.labels(),
            Scorer::Soft(sv) => &sv.labels,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels().len()
    }

    pub fn score(&self, out: &MaskOutput) -> Result<ClassScores> {
        match self {
            Scorer::Mean(v) => Ok(class_logits_mean(&out.logits, v)),
            Scorer::Weighted(v) => class_logits_weighted(&out.logits, v),
            Scorer::Soft(sv) => class_logits_soft(&out.hidden, sv),
        }
    }
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::argument("no class logits"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite class logit".into()));
    }
    Ok(())
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax of the class logits, stabilized by subtracting the maximum.
pub fn predict_proba(cs: &ClassScores) -> Result<Vec<f64>> {
    softmax(cs.logits())
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-log p(gold)`, computed as `logsumexp(logits) - logits[gold]`.
pub fn cross_entropy(cs: &ClassScores, gold: usize) -> Result<f64> {
    let logits = cs.logits();
    if gold >= logits.len() {
        return Err(Error::argument(format!(
            "label {gold} out of range for {} classes",
            logits.len()
        )));
    }
    check_finite(logits)?;
    Ok(log_sum_exp(logits) - logits[gold])
}
