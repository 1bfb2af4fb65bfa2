//! Word-embedding store with cosine similarity and exhaustive nearest-neighbor search.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

/// Text formats for static embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextFormat {
    /// Header line `count dim`, then `word v1 .. vd` per line.
    Word2VecText,
    /// Headerless `word v1 .. vd` lines.
    GloveText,
}

impl FromStr for TextFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word2vec" | "word2vec_text" => Ok(Self::Word2VecText),
            "glove" | "glove_text" => Ok(Self::GloveText),
            other => Err(Error::argument(format!("unknown embedding format {other:?}"))),
        }
    }
}

/// A word and its cosine similarity to a query word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub word: String,
    pub similarity: f64,
}

/// Vocabulary-indexed embedding matrix.
///
/// Rows are stored as `f32`; norms and similarities are computed in `f64`.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine from a dot product and norms, with `-0.0` folded into `0.0` so that
/// orthogonal entries tie.
fn cosine(dot: f64, na: f64, nb: f64) -> f64 {
    (dot / (na * nb)).clamp(-1.0, 1.0) + 0.0
}

impl EmbeddingStore {
    /// Builds a store from a row-major `vocab.len() × dim` matrix.
    pub fn from_flat(vocab: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        if data.len() != vocab.len() * dim {
            return Err(Error::argument(format!(
                "matrix has {} values, expected {} × {dim}",
                data.len(),
                vocab.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value in the vector of {:?}",
                vocab[pos / dim.max(1)]
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::argument(format!("duplicate word {w:?}")));
            }
        }
        let norms = if dim == 0 {
            vec![0.0; vocab.len()]
        } else {
            data.chunks(dim).map(|r| dot(r, r).sqrt()).collect()
        };
        Ok(Self {
            vocab,
            index,
            dim,
            data,
            norms,
        })
    }

    pub fn from_rows(vocab: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::argument("rows have different dimensions"));
        }
        if rows.len() != vocab.len() {
            return Err(Error::argument("one row per word is required"));
        }
        Self::from_flat(vocab, rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.vocab
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| self.row(i))
    }

    /// Finds the store entry for a label word given as plain text.
    ///
    /// The mid-sentence form (`" sports"`) wins over the bare form (`"sports"`) when both
    /// exist. A word that already starts with a space is looked up verbatim first.
    pub fn resolve(&self, word: &str) -> Option<usize> {
        let bare = word.trim_start_matches(' ');
        self.index_of(&format!(" {bare}"))
            .or_else(|| self.index_of(bare))
            .or_else(|| self.index_of(word))
    }

    /// Like [`resolve`](Self::resolve), but preferring the bare form.
    pub fn resolve_bare_first(&self, word: &str) -> Option<usize> {
        let bare = word.trim_start_matches(' ');
        self.index_of(bare)
            .or_else(|| self.index_of(&format!(" {bare}")))
            .or_else(|| self.index_of(word))
    }

    fn lookup(&self, word: &str) -> Result<usize> {
        self.index_of(word)
            .ok_or_else(|| Error::Lookup(word.to_string()))
    }

    pub fn cosine_by_index(&self, a: usize, b: usize) -> Result<f64> {
        let (na, nb) = (self.norms[a], self.norms[b]);
        if na == 0.0 || nb == 0.0 {
            let w = if na == 0.0 { &self.vocab[a] } else { &self.vocab[b] };
            return Err(Error::Numeric(format!("zero-norm vector for {w:?}")));
        }
        Ok(cosine(dot(self.row(a), self.row(b)), na, nb))
    }

    pub fn cosine_similarity(&self, a: &str, b: &str) -> Result<f64> {
        self.cosine_by_index(self.lookup(a)?, self.lookup(b)?)
    }

    pub fn top_k_neighbors(&self, word: &str, k: usize) -> Result<Vec<Neighbor>> {
        self.top_k_by_index(self.lookup(word)?, k)
    }

    /// The `k` entries most similar to entry `query`, excluding `query` itself, sorted by
    /// decreasing similarity with ties broken by ascending index. Zero-norm rows are
    /// never returned.
    pub fn top_k_by_index(&self, query: usize, k: usize) -> Result<Vec<Neighbor>> {
        if query >= self.len() {
            return Err(Error::argument(format!("index {query} out of range")));
        }
        if k >= self.len() {
            return Err(Error::argument(format!(
                "k = {k} must be smaller than the vocabulary size {}",
                self.len()
            )));
        }
        let qn = self.norms[query];
        if qn == 0.0 {
            return Err(Error::Numeric(format!(
                "zero-norm vector for {:?}",
                self.vocab[query]
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = self.row(query);
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| i != query && self.norms[i] > 0.0)
            .map(|i| (cosine(dot(q, self.row(i)), qn, self.norms[i]), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(similarity, i)| Neighbor {
                word: self.vocab[i].clone(),
                similarity,
            })
            .collect())
    }

    pub fn load_external(path: impl AsRef<Path>, format: TextFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        Self::read(BufReader::new(file), format, &path.display().to_string())
    }

    pub fn read(reader: impl BufRead, format: TextFormat, source: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut expected: Option<(usize, usize)> = None;
        if format == TextFormat::Word2VecText {
            let (n, header) = lines
                .next()
                .ok_or_else(|| Error::parse(Location::file(source), "missing header line"))?;
            let header = header?;
            let at = Location::line(source, n + 1);
            let parts: Vec<&str> = header.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                [c, d] => c.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
                _ => None,
            };
            expected = Some(parsed.ok_or_else(|| {
                Error::parse(at, format!("expected header \"count dim\", got {header:?}"))
            })?);
        }
        let mut dim = expected.map(|(_, d)| d);
        let mut vocab = Vec::new();
        let mut data = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = || Location::line(source, n + 1);
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line");
            let start = data.len();
            for p in parts {
                let v: f32 = p
                    .parse()
                    .map_err(|e| Error::parse(at(), format!("bad value {p:?}: {e}")))?;
                data.push(v);
            }
            let got = data.len() - start;
            match dim {
                Some(d) if d != got => {
                    return Err(Error::parse(
                        at(),
                        format!("vector of {word:?} has {got} values, expected {d}"),
                    ))
                }
                None if got == 0 => {
                    return Err(Error::parse(at(), format!("no values for {word:?}")))
                }
                None => dim = Some(got),
                _ => {}
            }
            vocab.push(word.to_string());
        }
        if let Some((count, _)) = expected {
            if count != vocab.len() {
                return Err(Error::parse(
                    Location::file(source),
                    format!("header declares {count} rows, found {}", vocab.len()),
                ));
            }
        }
        Self::from_flat(vocab, data, dim.unwrap_or(0)).map_err(|e| match e {
            Error::Argument(m) | Error::Numeric(m) => Error::parse(Location::file(source), m),
            other => other,
        })
    }

    pub fn write(&self, mut out: impl Write, format: TextFormat) -> Result<()> {
        if format == TextFormat::Word2VecText {
            writeln!(out, "{} {}", self.len(), self.dim)?;
        }
        for (i, w) in self.vocab.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::argument(format!(
                    "word {w:?} cannot be written in a whitespace-separated format"
                )));
            }
            write!(out, "{w}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, format: TextFormat) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out, format)?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(rows: &[(&str, &[f32])]) -> EmbeddingStore {
        EmbeddingStore::from_rows(
            rows.iter().map(|(w, _)| w.to_string()).collect(),
            rows.iter().map(|(_, v)| v.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 3.0]), ("c", &[2.0, 2.0])]);
        assert!((s.cosine_similarity("c", "c").unwrap() - 1.0).abs() < 1e-6);
        assert!(s.cosine_similarity("a", "b").unwrap().abs() < 1e-9);
        assert!((s.cosine_similarity("a", "c").unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn signed_zero_similarities_tie() {
        let s = store(&[("q", &[-1.0, 0.0]), ("down", &[0.0, -1.0]), ("up", &[0.0, 1.0])]);
        let top = s.top_k_neighbors("q", 1).unwrap();
        assert_eq!(top[0].word, "down");
        assert!(top[0].similarity.is_sign_positive());
    }

    #[test]
    fn lookup_and_zero_norm_errors() {
        let s = store(&[("a", &[1.0, 0.0]), ("z", &[0.0, 0.0])]);
        assert!(matches!(s.cosine_similarity("a", "q"), Err(Error::Lookup(_))));
        assert!(matches!(s.cosine_similarity("a", "z"), Err(Error::Numeric(_))));
        assert!(matches!(s.top_k_neighbors("nope", 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn zero_k_and_too_large_k() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        assert!(s.top_k_neighbors("a", 0).unwrap().is_empty());
        assert!(matches!(s.top_k_neighbors("a", 2), Err(Error::Argument(_))));
    }

    #[test]
    fn ties_break_by_index() {
        let s = store(&[
            ("q", &[1.0, 0.0]),
            ("x", &[1.0, 1.0]),
            ("y", &[1.0, -1.0]),
            ("w", &[2.0, 2.0]),
        ]);
        let n = s.top_k_neighbors("q", 3).unwrap();
        let words: Vec<_> = n.iter().map(|n| n.word.as_str()).collect();
        assert_eq!(words, ["x", "y", "w"]);
    }

    #[test]
    fn zero_rows_are_skipped() {
        let s = store(&[("q", &[1.0, 0.0]), ("z", &[0.0, 0.0]), ("b", &[-1.0, 0.0])]);
        let n = s.top_k_neighbors("q", 2).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].word, "b");
    }

    #[test]
    fn leading_space_form_preferred() {
        let s = store(&[("sports", &[1.0, 0.0]), (" sports", &[0.0, 1.0]), ("news", &[1.0, 1.0])]);
        assert_eq!(s.resolve("sports"), Some(1));
        assert_eq!(s.resolve(" sports"), Some(1));
        assert_eq!(s.resolve_bare_first("sports"), Some(0));
        assert_eq!(s.resolve("news"), Some(2));
        assert_eq!(s.resolve("other"), None);
    }

    #[test]
    fn glove_fixture() {
        let text = "a 1 0 0 0\nb 0 1 0 0\nc 0 0 1 0.5\n";
        let s = EmbeddingStore::read(text.as_bytes(), TextFormat::GloveText, "t").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.vector("c").unwrap(), &[0.0, 0.0, 1.0, 0.5]);
    }

    #[test]
    fn word2vec_row_count_mismatch() {
        let mut text = String::from("10 2\n");
        for i in 0..9 {
            text.push_str(&format!("w{i} 1 {i}\n"));
        }
        let err = EmbeddingStore::read(text.as_bytes(), TextFormat::Word2VecText, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let text = "2 3\na 1 2 3\nb 1 2\n";
        match EmbeddingStore::read(text.as_bytes(), TextFormat::Word2VecText, "t") {
            Err(Error::Parse { location, .. }) => assert_eq!(location.line, Some(3)),
            other => panic!("unexpected {other:?}"),
        }
        let text = "a 1 2\nb 1 x\n";
        match EmbeddingStore::read(text.as_bytes(), TextFormat::GloveText, "t") {
            Err(Error::Parse { location, .. }) => assert_eq!(location.line, Some(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_words_rejected() {
        let text = "a 1 2\na 3 4\n";
        assert!(EmbeddingStore::read(text.as_bytes(), TextFormat::GloveText, "t").is_err());
    }
}
