//! Masked language model backends.
//!
//! [`MaskedLm`] is the inference contract used by scoring, label-word mining and
//! evaluation. [`RobertaMaskedLm`] is the concrete, trainable backend.

mod checkpoint;
mod roberta;
mod tokenizer;

pub use checkpoint::{resolve_checkpoint, CheckpointFiles};
pub use roberta::{Dropout, RobertaConfig, RobertaMaskedLm};
pub use tokenizer::LmTokenizer;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

/// Index into a model vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Token sequence holding exactly one MASK slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedSequence {
    ids: Vec<TokenId>,
    mask_pos: usize,
}

impl MaskedSequence {
    pub fn new(ids: Vec<TokenId>, mask_id: TokenId) -> Result<Self> {
        let mut slots = ids.iter().enumerate().filter(|(_, &t)| t == mask_id);
        let mask_pos = match (slots.next(), slots.next()) {
            (Some((pos, _)), None) => pos,
            (None, _) => return Err(Error::Structural("sequence has no MASK slot".into())),
            (Some(_), Some(_)) => {
                return Err(Error::Structural("sequence has more than one MASK slot".into()))
            }
        };
        Ok(Self { ids, mask_pos })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn mask_position(&self) -> usize {
        self.mask_pos
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Unnormalized vocabulary logits at the MASK position.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabLogits(pub Vec<f32>);

impl VocabLogits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Logit of a (possibly multi-token) word: the mean over its tokens.
    pub fn word_logit(&self, ids: &[TokenId]) -> f64 {
        let sum: f64 = ids.iter().map(|t| self.0[t.index()] as f64).sum();
        sum / ids.len() as f64
    }

    /// Log-softmax over the vocabulary, in f64.
    pub fn log_softmax(&self) -> Vec<f64> {
        let max = self.0.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let lse = max + self.0.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
        self.0.iter().map(|&x| x as f64 - lse).collect()
    }
}

/// Final-layer hidden state at the MASK position.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHiddenState(pub Vec<f32>);

/// Everything the model produces at the MASK position for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutput {
    pub logits: VocabLogits,
    pub hidden: MaskHiddenState,
}

/// Inference surface of a masked language model.
///
/// Implementations must be deterministic: equal inputs give equal outputs.
pub trait MaskedLm: Send + Sync {
    fn tokenizer(&self) -> &LmTokenizer;

    fn hidden_size(&self) -> usize;

    /// Longest sequence (including special tokens) the model accepts.
    fn max_len(&self) -> usize;

    /// MASK-position outputs for a batch of sequences.
    fn mask_outputs(&self, seqs: &[MaskedSequence]) -> Result<Vec<MaskOutput>>;

    fn embedding_matrix(&self) -> Result<EmbeddingStore>;

    fn vocab_size(&self) -> usize {
        self.tokenizer().vocab_size()
    }

    fn mask_logits(&self, seq: &MaskedSequence) -> Result<VocabLogits> {
        let mut out = self.mask_outputs(std::slice::from_ref(seq))?;
        Ok(out.remove(0).logits)
    }

    fn mask_hidden_state(&self, seq: &MaskedSequence) -> Result<MaskHiddenState> {
        let mut out = self.mask_outputs(std::slice::from_ref(seq))?;
        Ok(out.remove(0).hidden)
    }

    fn tokenize_label_word(&self, word: &str) -> Result<Vec<TokenId>> {
        self.tokenizer().label_word_ids(word)
    }

    /// Checks the length and vocabulary range of `seq` against this model.
    fn check_sequence(&self, seq: &MaskedSequence) -> Result<()> {
        if seq.len() > self.max_len() {
            return Err(Error::Structural(format!(
                "sequence of {} tokens exceeds the maximum of {}",
                seq.len(),
                self.max_len()
            )));
        }
        let vocab = self.vocab_size();
        if let Some(bad) = seq.ids().iter().find(|t| t.index() >= vocab) {
            return Err(Error::Structural(format!(
                "token id {} outside vocabulary of size {vocab}",
                bad.0
            )));
        }
        Ok(())
    }
}
