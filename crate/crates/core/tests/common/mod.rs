#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use verbkit::experiment::{Dataset, Schema};
use verbkit::lm::{LmTokenizer, RobertaConfig, RobertaMaskedLm};
use verbkit::Example;

/// Topic words per AG-shaped class.
pub const TOPICS: [&[&str]; 4] = [
    &["war", "election", "minister", "treaty", "embassy", "rebels"],
    &["match", "goal", "team", "coach", "league", "season"],
    &["market", "stock", "profit", "bank", "shares", "merger"],
    &["software", "research", "computer", "internet", "space", "chip"],
];

const FILLER: [&str; 8] = ["the", "a", "of", "in", "on", "today", "report", "new"];

const SCAFFOLD: [&str; 10] = ["news", ":", "This", "topic", "is", "about", ".", "[", "Category", "]"];

const LABEL_WORDS: [&str; 6] = ["world", "politics", "sports", "business", "science", "technology"];

pub fn toy_vocab() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for w in LABEL_WORDS
        .iter()
        .chain(SCAFFOLD.iter())
        .chain(FILLER.iter())
        .chain(TOPICS.iter().flat_map(|t| t.iter()))
        .chain(["Topic", "x1"].iter())
    {
        if !words.iter().any(|x| x == w) {
            words.push(w.to_string());
        }
    }
    words
}

pub fn toy_tokenizer() -> LmTokenizer {
    LmTokenizer::word_level(&toy_vocab()).unwrap()
}

pub fn tiny_lm(seed: u64) -> RobertaMaskedLm {
    let tok = toy_tokenizer();
    let config = RobertaConfig::tiny(tok.vocab_size());
    RobertaMaskedLm::random(config, tok, seed).unwrap()
}

/// A headline-like text for class `y`.
pub fn toy_text(y: usize, rng: &mut ChaCha8Rng) -> String {
    let mut words = Vec::new();
    for i in 0..6 {
        if i % 2 == 0 {
            words.push(*TOPICS[y].choose(rng).unwrap());
        } else {
            words.push(*FILLER.choose(rng).unwrap());
        }
    }
    words.join(" ")
}

/// Balanced AG-shaped split with ids `<name>-<i>`.
pub fn toy_ag(name: &str, per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for i in 0..per_class * 4 {
        let y = i % 4;
        examples.push(Example::new(
            format!("{name}-{i}"),
            [("text", toy_text(y, &mut rng))],
            Some(y),
        ));
    }
    Dataset {
        name: name.to_string(),
        schema: Schema::builtin("ag").unwrap(),
        examples,
    }
}

/// Masked LM whose MASK logits are noise plus `+shift` on the planted token of the
/// example's class and `-shift` on the planted tokens of other classes. The class is
/// read from a marker token `c<y>` in the input.
pub struct StubLm {
    pub tokenizer: LmTokenizer,
    pub planted: Vec<verbkit::TokenId>,
    pub markers: Vec<verbkit::TokenId>,
    pub shift: f32,
    pub seed: u64,
}

impl StubLm {
    /// `classes` markers `c0..`, `words` candidate tokens `w0..`, planted tokens chosen by `seed`.
    pub fn new(classes: usize, words: usize, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut vocab: Vec<String> = (0..classes).map(|y| format!("c{y}")).collect();
        vocab.extend((0..words).map(|i| format!("w{i}")));
        vocab.push("is".into());
        let tokenizer = LmTokenizer::word_level(&vocab).unwrap();
        let markers = (0..classes)
            .map(|y| tokenizer.label_word_ids(&format!("c{y}")).unwrap()[0])
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..words).collect();
        idx.shuffle(&mut rng);
        let planted = idx[..classes]
            .iter()
            .map(|i| tokenizer.label_word_ids(&format!("w{i}")).unwrap()[0])
            .collect();
        Self {
            tokenizer,
            planted,
            markers,
            shift: 10.0,
            seed,
        }
    }

    pub fn example(&self, id: usize, y: usize) -> Example {
        Example::new(id.to_string(), [("text", format!("c{y}"))], Some(y))
    }
}

fn noise(seed: u64, ids: &[verbkit::TokenId], v: usize) -> f32 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (seed, ids, v).hash(&mut h);
    (h.finish() % 2001) as f32 / 1000.0 - 1.0
}

impl verbkit::MaskedLm for StubLm {
    fn tokenizer(&self) -> &LmTokenizer {
        &self.tokenizer
    }

    fn hidden_size(&self) -> usize {
        4
    }

    fn max_len(&self) -> usize {
        64
    }

    fn mask_outputs(&self, seqs: &[verbkit::MaskedSequence]) -> verbkit::Result<Vec<verbkit::MaskOutput>> {
        seqs.iter()
            .map(|s| {
                self.check_sequence(s)?;
                let y = self
                    .markers
                    .iter()
                    .position(|m| s.ids().contains(m))
                    .expect("class marker");
                let mut logits: Vec<f32> = (0..self.vocab_size()).map(|v| noise(self.seed, s.ids(), v)).collect();
                for (c, t) in self.planted.iter().enumerate() {
                    logits[t.index()] += if c == y { self.shift } else { -self.shift };
                }
                Ok(verbkit::MaskOutput {
                    logits: verbkit::VocabLogits(logits),
                    hidden: verbkit::MaskHiddenState(vec![y as f32; 4]),
                })
            })
            .collect()
    }

    fn embedding_matrix(&self) -> verbkit::Result<verbkit::EmbeddingStore> {
        let words = self.tokenizer.vocab_strings()?;
        let rows = (0..words.len())
            .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 11) as f32 - 5.0 + 0.5).collect())
            .collect();
        verbkit::EmbeddingStore::from_rows(words, rows)
    }
}
