//! Verbalizers and their builders: manual tables, nearest-neighbor enrichment
//! (MaVEN), likelihood-ratio label-word mining (PETAL) and soft prototypes.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::lm::{MaskedLm, TokenId};
use crate::template::{Example, Template};

/// Default neighborhood size for enrichment.
pub const DEFAULT_K: usize = 15;

/// Maps each label to an ordered set of label words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verbalizer {
    labels: Vec<String>,
    words: Vec<Vec<String>>,
}

impl Verbalizer {
    pub fn new(table: Vec<(String, Vec<String>)>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::argument("a verbalizer needs at least one label"));
        }
        let mut seen_labels = HashSet::new();
        for (label, words) in &table {
            if !seen_labels.insert(label) {
                return Err(Error::argument(format!("duplicate label {label:?}")));
            }
            if words.is_empty() {
                return Err(Error::argument(format!("label {label:?} has no label words")));
            }
            let mut seen = HashSet::new();
            for w in words {
                if w.trim().is_empty() {
                    return Err(Error::argument(format!("empty label word for {label:?}")));
                }
                if !seen.insert(w) {
                    return Err(Error::argument(format!("label {label:?} repeats word {w:?}")));
                }
            }
        }
        let (labels, words) = table.into_iter().unzip();
        Ok(Self { labels, words })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn words(&self, label: usize) -> &[String] {
        &self.words[label]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.labels
            .iter()
            .map(String::as_str)
            .zip(self.words.iter().map(Vec::as_slice))
    }
}

/// A label word with its trainable weight `q` and the core word that spawned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedWord {
    pub word: String,
    pub weight: f64,
    pub core: String,
}

/// Enriched verbalizer `v̂` with per-word weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVerbalizer {
    labels: Vec<String>,
    entries: Vec<Vec<WeightedWord>>,
}

impl WeightedVerbalizer {
    pub fn new(labels: Vec<String>, entries: Vec<Vec<WeightedWord>>) -> Result<Self> {
        if labels.len() != entries.len() || labels.is_empty() {
            return Err(Error::argument("one non-empty entry list per label is required"));
        }
        for (label, words) in labels.iter().zip(&entries) {
            if words.is_empty() {
                return Err(Error::argument(format!("label {label:?} has no label words")));
            }
            let mut seen = HashSet::new();
            for w in words {
                if !w.weight.is_finite() {
                    return Err(Error::Numeric(format!("weight of {:?} is not finite", w.word)));
                }
                if !seen.insert(&w.word) {
                    return Err(Error::argument(format!(
                        "label {label:?} repeats word {:?}",
                        w.word
                    )));
                }
            }
        }
        Ok(Self { labels, entries })
    }

    /// All weights 1.0, every word its own core word.
    pub fn uniform(v: &Verbalizer) -> Self {
        let entries = v
            .words
            .iter()
            .map(|ws| {
                ws.iter()
                    .map(|w| WeightedWord {
                        word: w.clone(),
                        weight: 1.0,
                        core: w.clone(),
                    })
                    .collect()
            })
            .collect();
        Self {
            labels: v.labels.clone(),
            entries,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn entries(&self, label: usize) -> &[WeightedWord] {
        &self.entries[label]
    }

    pub fn weights(&self, label: usize) -> Vec<f64> {
        self.entries[label].iter().map(|w| w.weight).collect()
    }

    pub fn set_weights(&mut self, label: usize, weights: &[f64]) -> Result<()> {
        let entries = &mut self.entries[label];
        if weights.len() != entries.len() {
            return Err(Error::argument("weight count does not match the label's words"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        for (e, &w) in entries.iter_mut().zip(weights) {
            e.weight = w;
        }
        Ok(())
    }

    /// The word sets, without weights.
    pub fn to_verbalizer(&self) -> Verbalizer {
        Verbalizer {
            labels: self.labels.clone(),
            words: self
                .entries
                .iter()
                .map(|ws| ws.iter().map(|w| w.word.clone()).collect())
                .collect(),
        }
    }
}

/// Trainable per-label prototype vectors, scored against the MASK hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftVerbalizer {
    pub labels: Vec<String>,
    pub prototypes: Vec<Vec<f32>>,
}

/// Label words shipped for the built-in datasets.
pub fn manual_table(dataset_id: &str) -> Result<Vec<(&'static str, &'static [&'static str])>> {
    Ok(match dataset_id {
        "ag" => vec![
            ("World", &["world", "politics"][..]),
            ("Sports", &["sports"]),
            ("Business", &["business"]),
            ("Sci/Tech", &["science", "technology"]),
        ],
        "dbpedia" => vec![
            ("Company", &["company"][..]),
            ("EducationalInstitution", &["educational", "institution"]),
            ("Artist", &["artist"]),
            ("Athlete", &["athlete", "sport"]),
            ("OfficeHolder", &["office"]),
            // Misspelling kept on purpose.
            ("MeanOfTransportation", &["transportaion"]),
            ("Building", &["building"]),
            ("NaturalPlace", &["natural", "place"]),
            ("Village", &["village"]),
            ("Animal", &["animal"]),
            ("Plant", &["plant"]),
            ("Album", &["album"]),
            ("Film", &["film"]),
            ("WrittenWork", &["written", "work"]),
        ],
        "yahoo" => vec![
            ("Society & Culture", &["society", "culture"][..]),
            ("Science & Mathematics", &["science", "mathematics"]),
            ("Health", &["health"]),
            ("Education & Reference", &["education", "reference"]),
            ("Computers & Internet", &["computers", "internet"]),
            ("Sports", &["sports"]),
            ("Business & Finance", &["business", "finance"]),
            ("Entertainment & Music", &["entertainment", "music"]),
            ("Family & Relationships", &["family", "relationships"]),
            ("Politics & Government", &["politics", "government"]),
        ],
        other => return Err(Error::argument(format!("no manual verbalizer for dataset {other:?}"))),
    })
}

/// Manual verbalizer of a built-in dataset.
pub fn build_manual(dataset_id: &str) -> Result<Verbalizer> {
    Verbalizer::new(
        manual_table(dataset_id)?
            .into_iter()
            .map(|(l, ws)| (l.to_string(), ws.iter().map(|w| w.to_string()).collect()))
            .collect(),
    )
}

/// Which store entry a plain core word maps to when both spellings exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreWordForm {
    /// `"sports"` before `" sports"`.
    #[default]
    Bare,
    /// `" sports"` before `"sports"`.
    MidSentence,
}

impl CoreWordForm {
    pub fn resolve(self, store: &EmbeddingStore, word: &str) -> Option<usize> {
        match self {
            CoreWordForm::Bare => store.resolve_bare_first(word),
            CoreWordForm::MidSentence => store.resolve(word),
        }
    }
}

/// Result of [`enrich_maven`].
#[derive(Debug, Clone, PartialEq)]
pub struct Enriched {
    pub verbalizer: WeightedVerbalizer,
    /// Core words absent from the store; their neighborhood is the word alone.
    pub missing_core_words: Vec<String>,
}

/// Enriches each label's core words with their `k` nearest neighbors in `store`.
///
/// `v̂(y)` is the union over core words `w0` of `{w0} ∪ top-k(w0)`. Each neighbor starts
/// with weight `s(w, w0)`, core words with 1.0. A word reached from two core words of the
/// same label keeps the higher similarity and its provenance. Core words keep their
/// original spelling; neighbors use the store's.
pub fn enrich_maven(v: &Verbalizer, store: &EmbeddingStore, k: usize, form: CoreWordForm) -> Result<Enriched> {
    let mut missing = Vec::new();
    let mut entries = Vec::with_capacity(v.num_labels());
    for (_, cores) in v.iter() {
        let mut label_words: Vec<WeightedWord> = Vec::new();
        for core in cores {
            merge_word(&mut label_words, core, 1.0, core);
            let Some(idx) = form.resolve(store, core) else {
                log::warn!("core word {core:?} is not in the embedding store; using it alone");
                if !missing.contains(core) {
                    missing.push(core.clone());
                }
                continue;
            };
            for n in store.top_k_by_index(idx, k)? {
                merge_word(&mut label_words, &n.word, n.similarity, core);
            }
        }
        entries.push(label_words);
    }
    Ok(Enriched {
        verbalizer: WeightedVerbalizer::new(v.labels().to_vec(), entries)?,
        missing_core_words: missing,
    })
}

fn merge_word(out: &mut Vec<WeightedWord>, word: &str, weight: f64, core: &str) {
    match out.iter_mut().find(|e| e.word == word) {
        Some(e) if e.weight < weight => {
            e.weight = weight;
            e.core = core.to_string();
        }
        Some(_) => {}
        None => out.push(WeightedWord {
            word: word.to_string(),
            weight,
            core: core.to_string(),
        }),
    }
}

/// Prototype of each label: the mean embedding of its words (mid-sentence form first).
pub fn init_soft(v: &Verbalizer, store: &EmbeddingStore) -> Result<SoftVerbalizer> {
    let mut prototypes = Vec::with_capacity(v.num_labels());
    for (_, words) in v.iter() {
        let mut acc = vec![0f64; store.dim()];
        for w in words {
            let idx = store.resolve(w).ok_or_else(|| Error::Lookup(w.clone()))?;
            for (a, &x) in acc.iter_mut().zip(store.row(idx)) {
                *a += x as f64;
            }
        }
        prototypes.push(acc.iter().map(|a| (a / words.len() as f64) as f32).collect());
    }
    Ok(SoftVerbalizer {
        labels: v.labels().to_vec(),
        prototypes,
    })
}

/// Candidate label-word tokens: non-special tokens whose surface form tokenizes back to
/// exactly that token when used as a label word.
pub fn label_word_candidates(lm: &dyn MaskedLm) -> Result<Vec<(TokenId, String)>> {
    let tok = lm.tokenizer();
    let specials: HashSet<TokenId> = [Some(tok.mask_id()), Some(tok.pad_id()), tok.bos_id(), tok.eos_id()]
        .into_iter()
        .flatten()
        .chain(tok.encode("<unk>").ok().filter(|v| v.len() == 1).map(|v| v[0]))
        .collect();
    let mut out = Vec::new();
    for (i, form) in tok.vocab_strings()?.into_iter().enumerate() {
        let id = TokenId(i as u32);
        if specials.contains(&id) || form.trim().is_empty() {
            continue;
        }
        if matches!(tok.label_word_ids(&form), Ok(ids) if ids == [id]) {
            out.push((id, form));
        }
    }
    Ok(out)
}

/// Likelihood-ratio score of every candidate token for one label: the mean MASK
/// log-probability over positive examples minus the mean over negative examples.
pub fn petal_scores(log_probs: &[Vec<f64>], gold: &[usize], label: usize, candidates: &[TokenId]) -> Vec<f64> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (lp, &g) in log_probs.iter().zip(gold) {
        if g == label {
            pos.push(lp);
        } else {
            neg.push(lp);
        }
    }
    let mean = |rows: &[&Vec<f64>], t: TokenId| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r[t.index()]).sum::<f64>() / rows.len() as f64
        }
    };
    candidates
        .iter()
        .map(|&t| mean(&pos, t) - mean(&neg, t))
        .collect()
}

/// Mines `k_auto` label words per label from labeled examples.
pub fn build_petal(
    train: &[Example],
    template: &Template,
    lm: &dyn MaskedLm,
    labels: &[String],
    k_auto: usize,
) -> Result<Verbalizer> {
    if k_auto == 0 {
        return Err(Error::argument("k_auto must be at least 1"));
    }
    let mut gold = Vec::with_capacity(train.len());
    let mut seqs = Vec::with_capacity(train.len());
    for x in train {
        let y = x
            .label
            .filter(|&y| y < labels.len())
            .ok_or_else(|| Error::argument(format!("example {:?} has no valid label", x.id)))?;
        gold.push(y);
        seqs.push(template.render(x, lm.tokenizer(), lm.max_len())?);
    }
    for (y, name) in labels.iter().enumerate() {
        if !gold.contains(&y) {
            return Err(Error::argument(format!("label {name:?} has no positive example")));
        }
    }
    let log_probs: Vec<Vec<f64>> = lm
        .mask_outputs(&seqs)?
        .into_iter()
        .map(|o| o.logits.log_softmax())
        .collect();
    let candidates = label_word_candidates(lm)?;
    if candidates.len() < k_auto {
        return Err(Error::argument(format!(
            "only {} candidate tokens for k_auto = {k_auto}",
            candidates.len()
        )));
    }
    let ids: Vec<TokenId> = candidates.iter().map(|(t, _)| *t).collect();
    let mut table = Vec::with_capacity(labels.len());
    for (y, name) in labels.iter().enumerate() {
        let scores = petal_scores(&log_probs, &gold, y, &ids);
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
        let words = order[..k_auto]
            .iter()
            .map(|&i| candidates[i].1.clone())
            .collect();
        table.push((name.clone(), words));
    }
    Verbalizer::new(table)
}

/// One label of a verbalizer file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerEntry {
    pub label: String,
    pub words: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cores: Option<Vec<String>>,
}

impl From<&Verbalizer> for Vec<VerbalizerEntry> {
    fn from(v: &Verbalizer) -> Self {
        v.iter()
            .map(|(l, ws)| VerbalizerEntry {
                label: l.to_string(),
                words: ws.to_vec(),
                weights: None,
                cores: None,
            })
            .collect()
    }
}

impl From<&WeightedVerbalizer> for Vec<VerbalizerEntry> {
    fn from(v: &WeightedVerbalizer) -> Self {
        v.labels
            .iter()
            .zip(&v.entries)
            .map(|(l, ws)| VerbalizerEntry {
                label: l.clone(),
                words: ws.iter().map(|w| w.word.clone()).collect(),
                weights: Some(ws.iter().map(|w| w.weight).collect()),
                cores: Some(ws.iter().map(|w| w.core.clone()).collect()),
            })
            .collect()
    }
}

/// Contents of a verbalizer file.
#[derive(Debug, Clone, PartialEq)]
pub enum VerbalizerFile {
    Plain(Verbalizer),
    Weighted(WeightedVerbalizer),
}

impl VerbalizerFile {
    pub fn from_entries(entries: Vec<VerbalizerEntry>) -> Result<Self> {
        if !entries.iter().any(|e| e.weights.is_some()) {
            return Ok(Self::Plain(Verbalizer::new(
                entries.into_iter().map(|e| (e.label, e.words)).collect(),
            )?));
        }
        let mut labels = Vec::with_capacity(entries.len());
        let mut all = Vec::with_capacity(entries.len());
        for e in entries {
            let n = e.words.len();
            let weights = e.weights.unwrap_or_else(|| vec![1.0; n]);
            let cores = e.cores.unwrap_or_else(|| e.words.clone());
            if weights.len() != n || cores.len() != n {
                return Err(Error::argument(format!(
                    "label {:?}: words, weights and cores differ in length",
                    e.label
                )));
            }
            all.push(
                e.words
                    .into_iter()
                    .zip(weights)
                    .zip(cores)
                    .map(|((word, weight), core)| WeightedWord { word, weight, core })
                    .collect(),
            );
            labels.push(e.label);
        }
        Ok(Self::Weighted(WeightedVerbalizer::new(labels, all)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries: Vec<VerbalizerEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> Vec<VerbalizerEntry> {
        match self {
            Self::Plain(v) => v.into(),
            Self::Weighted(v) => v.into(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.entries())?)?;
        Ok(())
    }
}
