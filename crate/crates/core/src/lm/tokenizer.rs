use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use serde_json::json;
use tokenizers::Tokenizer;

use super::TokenId;
use crate::error::{Error, Result};

const MASK_CANDIDATES: [&str; 2] = ["<mask>", "[MASK]"];
const BOS_CANDIDATES: [&str; 2] = ["<s>", "[CLS]"];
const EOS_CANDIDATES: [&str; 2] = ["</s>", "[SEP]"];
const PAD_CANDIDATES: [&str; 2] = ["<pad>", "[PAD]"];

/// Tokenizer of a masked language model together with its special tokens.
#[derive(Clone)]
pub struct LmTokenizer {
    inner: Tokenizer,
    mask_token: String,
    mask_id: TokenId,
    bos_id: Option<TokenId>,
    eos_id: Option<TokenId>,
    pad_id: TokenId,
}

impl std::fmt::Debug for LmTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmTokenizer")
            .field("vocab_size", &self.vocab_size())
            .field("mask_token", &self.mask_token)
            .finish()
    }
}

fn tok_err(e: impl std::fmt::Display) -> Error {
    Error::Tokenizer(e.to_string())
}

impl LmTokenizer {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let inner = Tokenizer::from_file(path)
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", path.display())))?;
        Self::new(inner)
    }

    pub fn new(inner: Tokenizer) -> Result<Self> {
        let find = |candidates: &[&str]| {
            candidates
                .iter()
                .find_map(|t| inner.token_to_id(t).map(|id| (t.to_string(), TokenId(id))))
        };
        let (mask_token, mask_id) =
            find(&MASK_CANDIDATES).ok_or_else(|| Error::Tokenizer("no mask token".into()))?;
        let pad_id = find(&PAD_CANDIDATES)
            .map(|(_, id)| id)
            .ok_or_else(|| Error::Tokenizer("no padding token".into()))?;
        Ok(Self {
            bos_id: find(&BOS_CANDIDATES).map(|(_, id)| id),
            eos_id: find(&EOS_CANDIDATES).map(|(_, id)| id),
            inner,
            mask_token,
            mask_id,
            pad_id,
        })
    }

    /// Word-level tokenizer over `words`, laid out like RoBERTa's special tokens:
    /// `<s>`=0, `<pad>`=1, `</s>`=2, `<unk>`=3, then `words` in order, then `<mask>`.
    pub fn word_level<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let specials = ["<s>", "<pad>", "</s>", "<unk>"];
        let mut vocab = serde_json::Map::new();
        let mut seen = HashSet::new();
        for (i, s) in specials.iter().enumerate() {
            vocab.insert(s.to_string(), json!(i));
            seen.insert(s.to_string());
        }
        for w in words {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::argument(format!("invalid vocabulary word {w:?}")));
            }
            if !seen.insert(w.to_string()) {
                return Err(Error::argument(format!("duplicate vocabulary word {w:?}")));
            }
            vocab.insert(w.to_string(), json!(vocab.len()));
        }
        let mask_id = vocab.len();
        vocab.insert("<mask>".into(), json!(mask_id));
        let added = |id: usize, content: &str, lstrip: bool| {
            json!({
                "id": id, "content": content, "single_word": false, "lstrip": lstrip,
                "rstrip": false, "normalized": false, "special": true
            })
        };
        let mut added_tokens: Vec<_> = specials
            .iter()
            .enumerate()
            .map(|(i, s)| added(i, s, false))
            .collect();
        added_tokens.push(added(mask_id, "<mask>", true));
        let spec = json!({
            "version": "1.0",
            "truncation": null,
            "padding": null,
            "added_tokens": added_tokens,
            "normalizer": null,
            "pre_tokenizer": {"type": "Whitespace"},
            "post_processor": null,
            "decoder": null,
            "model": {"type": "WordLevel", "vocab": vocab, "unk_token": "<unk>"}
        });
        let inner = Tokenizer::from_str(&spec.to_string()).map_err(tok_err)?;
        Self::new(inner)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.inner.save(path, false).map_err(tok_err)
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }

    pub fn mask_token(&self) -> &str {
        &self.mask_token
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn bos_id(&self) -> Option<TokenId> {
        self.bos_id
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.eos_id
    }

    /// Encodes `text` without adding the model's special tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let enc = self.inner.encode(text, false).map_err(tok_err)?;
        Ok(enc.get_ids().iter().map(|&id| TokenId(id)).collect())
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let raw: Vec<u32> = ids.iter().map(|t| t.0).collect();
        self.inner.decode(&raw, false).map_err(tok_err)
    }

    /// Surrounds `ids` with the beginning/end-of-sequence tokens, when the model has them.
    pub fn wrap(&self, ids: &[TokenId]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.extend(self.bos_id);
        out.extend_from_slice(ids);
        out.extend(self.eos_id);
        out
    }

    pub fn raw_token(&self, id: TokenId) -> Option<String> {
        self.inner.id_to_token(id.0)
    }

    /// Surface form of every vocabulary entry, indexed by token id.
    ///
    /// Byte-level BPE tokens are decoded, so `Ġsports` becomes `" sports"`. Entries whose
    /// decoded form is not unique (partial UTF-8 bytes, for instance) keep their raw token
    /// string instead, so that the result has no duplicates.
    pub fn vocab_strings(&self) -> Result<Vec<String>> {
        let n = self.vocab_size();
        let mut decoded = Vec::with_capacity(n);
        for id in 0..n as u32 {
            let raw = self
                .inner
                .id_to_token(id)
                .unwrap_or_else(|| format!("<unused:{id}>"));
            let text = self.inner.decode(&[id], false).map_err(tok_err)?;
            decoded.push((raw, text));
        }
        let mut counts = std::collections::HashMap::<&str, usize>::new();
        for (_, text) in &decoded {
            *counts.entry(text.as_str()).or_default() += 1;
        }
        let mut out = Vec::with_capacity(n);
        let mut used = HashSet::with_capacity(n);
        for (id, (raw, text)) in decoded.iter().enumerate() {
            let candidate = if !text.is_empty() && !text.contains('\u{FFFD}') && counts[text.as_str()] == 1
            {
                text.clone()
            } else {
                raw.clone()
            };
            let word = if used.contains(&candidate) {
                format!("<dup:{id}:{raw}>")
            } else {
                candidate
            };
            used.insert(word.clone());
            out.push(word);
        }
        Ok(out)
    }

    /// Token ids of a label word, tokenized as it would appear mid-sentence (with a leading
    /// space). Words that already start with a space are taken verbatim.
    pub fn label_word_ids(&self, word: &str) -> Result<Vec<TokenId>> {
        if word.trim().is_empty() {
            return Err(Error::argument("label word must be non-empty"));
        }
        let text = if word.starts_with(' ') {
            word.to_string()
        } else {
            format!(" {word}")
        };
        let ids = self.encode(&text)?;
        if ids.is_empty() {
            return Err(Error::Tokenizer(format!("label word {word:?} encodes to no tokens")));
        }
        Ok(ids)
    }
}
