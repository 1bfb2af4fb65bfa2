//! Prompt-based few-shot text classification with masked language models.
//!
//! An input is wrapped in a cloze [`Template`](template::Template); the model's
//! logits at the MASK slot are mapped to class scores through a verbalizer
//! (manual, mined, soft, or enriched with embedding-space neighbors), and
//! per-template models are combined by an [`ensemble`] strategy.

pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod lm;
pub mod scoring;
pub mod template;
pub mod train;
pub mod verbalizer;

pub use embedding::{EmbeddingStore, Neighbor, TextFormat};
pub use ensemble::{aggregate_logit, aggregate_proba, aggregate_vote, MemberOutput, Strategy};
pub use error::{Error, Location, Result};
pub use lm::{LmTokenizer, MaskHiddenState, MaskOutput, MaskedLm, MaskedSequence, RobertaMaskedLm, TokenId, VocabLogits};
pub use scoring::{
    class_logits_mean, class_logits_soft, class_logits_weighted, cross_entropy, predict_proba, ClassScores,
    ResolvedVerbalizer, Scorer,
};
pub use template::{builtin_templates, Example, Segment, Template};
pub use verbalizer::{
    build_manual, build_petal, enrich_maven, init_soft, CoreWordForm, SoftVerbalizer, Verbalizer, VerbalizerFile,
    WeightedVerbalizer, WeightedWord,
};
