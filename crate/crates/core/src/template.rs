//! Cloze templates: text patterns with one MASK slot and input-field placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmTokenizer, MaskedSequence, TokenId};

/// An input to classify: named text fields plus an optional gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Example {
    pub fn new<K, V>(id: impl Into<String>, fields: impl IntoIterator<Item = (K, V)>, label: Option<usize>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            id: id.into(),
            fields: fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            label,
        }
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SegmentRepr", into = "SegmentRepr")]
pub enum Segment {
    Literal(String),
    Field(String),
    Mask,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentRepr {
    Lit { lit: String },
    Field { field: String },
    Mask { mask: bool },
}

impl TryFrom<SegmentRepr> for Segment {
    type Error = String;

    fn try_from(r: SegmentRepr) -> Result<Self, String> {
        match r {
            SegmentRepr::Lit { lit } => Ok(Segment::Literal(lit)),
            SegmentRepr::Field { field } => Ok(Segment::Field(field)),
            SegmentRepr::Mask { mask: true } => Ok(Segment::Mask),
            SegmentRepr::Mask { mask: false } => Err("`mask` segments must be `true`".into()),
        }
    }
}

impl From<Segment> for SegmentRepr {
    fn from(s: Segment) -> Self {
        match s {
            Segment::Literal(lit) => SegmentRepr::Lit { lit },
            Segment::Field(field) => SegmentRepr::Field { field },
            Segment::Mask => SegmentRepr::Mask { mask: true },
        }
    }
}

#[derive(Deserialize)]
struct RawTemplate {
    id: u32,
    segments: Vec<Segment>,
}

/// A cloze template `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct Template {
    id: u32,
    segments: Vec<Segment>,
}

impl TryFrom<RawTemplate> for Template {
    type Error = Error;

    fn try_from(raw: RawTemplate) -> Result<Self> {
        Template::new(raw.id, raw.segments)
    }
}

impl Template {
    pub fn new(id: u32, segments: Vec<Segment>) -> Result<Self> {
        let masks = segments.iter().filter(|s| matches!(s, Segment::Mask)).count();
        if masks != 1 {
            return Err(Error::argument(format!(
                "template {id} has {masks} MASK slots, expected exactly one"
            )));
        }
        Ok(Self { id, segments })
    }

    /// Parses a pattern such as `"{text} This topic is about {mask}."`.
    ///
    /// `{mask}` is the MASK slot, any other `{name}` is a field placeholder and
    /// `{{` / `}}` are literal braces.
    pub fn parse(id: u32, pattern: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let mut chars = pattern.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let name: String = chars.by_ref().take_while(|&c| c != '}').collect();
                    if name.is_empty() {
                        return Err(Error::argument(format!("empty placeholder in {pattern:?}")));
                    }
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut lit)));
                    }
                    segments.push(if name == "mask" {
                        Segment::Mask
                    } else {
                        Segment::Field(name)
                    });
                }
                '}' => return Err(Error::argument(format!("unbalanced '}}' in {pattern:?}"))),
                c => lit.push(c),
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        Self::new(id, segments)
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Field names referenced by the template, in order of first use.
    pub fn fields(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if let Segment::Field(f) = s {
                if !out.contains(&f.as_str()) {
                    out.push(f);
                }
            }
        }
        out
    }

    fn check_fields(&self, x: &Example) -> Result<()> {
        for f in self.fields() {
            if x.field(f).is_none() {
                return Err(Error::argument(format!(
                    "template {} uses field {f:?}, which example {:?} lacks",
                    self.id, x.id
                )));
            }
        }
        Ok(())
    }

    fn assemble(&self, values: &BTreeMap<&str, String>, mask_token: &str) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Literal(t) => out.push_str(t),
                Segment::Field(f) => out.push_str(&values[f.as_str()]),
                Segment::Mask => out.push_str(mask_token),
            }
        }
        out
    }

    /// The cloze text, with `mask_token` in the MASK slot.
    pub fn render_text(&self, x: &Example, mask_token: &str) -> Result<String> {
        self.check_fields(x)?;
        let values = self
            .fields()
            .into_iter()
            .map(|f| (f, x.field(f).unwrap_or_default().to_string()))
            .collect();
        Ok(self.assemble(&values, mask_token))
    }

    /// Renders `x` into a masked token sequence of at most `max_len` tokens.
    ///
    /// When the sequence is too long, field text is cut from its tail (longest field
    /// first); literal text and the MASK slot are never dropped.
    pub fn render(&self, x: &Example, tokenizer: &LmTokenizer, max_len: usize) -> Result<MaskedSequence> {
        self.check_fields(x)?;
        let mut values: BTreeMap<&str, String> = self
            .fields()
            .into_iter()
            .map(|f| (f, x.field(f).unwrap_or_default().to_string()))
            .collect();
        for _ in 0..64 {
            let text = self.assemble(&values, tokenizer.mask_token());
            let ids = tokenizer.wrap(&tokenizer.encode(&text)?);
            if ids.len() <= max_len {
                return MaskedSequence::new(ids, tokenizer.mask_id());
            }
            let excess = ids.len() - max_len;
            let mut longest: Option<(&str, Vec<TokenId>)> = None;
            for (&f, v) in &values {
                let toks = tokenizer.encode(v)?;
                if longest.as_ref().is_none_or(|(_, t)| toks.len() > t.len()) {
                    longest = Some((f, toks));
                }
            }
            let Some((field, toks)) = longest.filter(|(_, t)| !t.is_empty()) else {
                return Err(Error::Structural(format!(
                    "template {} exceeds {max_len} tokens without any input text",
                    self.id
                )));
            };
            let uses = self
                .segments
                .iter()
                .filter(|s| matches!(s, Segment::Field(f) if f == field))
                .count();
            let keep = toks.len().saturating_sub(excess.div_ceil(uses));
            values.insert(field, tokenizer.decode(&toks[..keep])?);
        }
        Err(Error::Structural(format!(
            "could not truncate input to {max_len} tokens"
        )))
    }
}

/// Datasets that ship with built-in templates and verbalizers.
pub const BUILTIN_DATASETS: [&str; 3] = ["ag", "dbpedia", "yahoo"];

/// The four templates `T0..T3` for a built-in dataset, in order.
pub fn builtin_templates(dataset_id: &str) -> Result<Vec<Template>> {
    let patterns: [&str; 4] = match dataset_id {
        "ag" => [
            "{mask} news: {text}",
            "{text} This topic is about {mask}.",
            "[Category: {mask}] {text}",
            "[Topic: {mask}] {text}",
        ],
        "dbpedia" => [
            "{title} {content} In this sentence, {title} is {mask}.",
            "{title} {content} {title} is {mask}.",
            "{title} {content} The category of {title} is {mask}.",
            "{title} {content} The type of {title} is {mask}.",
        ],
        "yahoo" => [
            "{mask} question: {text}.",
            "{text} This topic is about {mask}.",
            "[Topic: {mask}] {text}.",
            "[Category: {mask}] {text}.",
        ],
        other => return Err(Error::argument(format!("no built-in templates for dataset {other:?}"))),
    };
    patterns
        .iter()
        .enumerate()
        .map(|(i, p)| Template::parse(i as u32, p))
        .collect()
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<Template>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_templates(path: impl AsRef<Path>, templates: &[Template]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(templates)?)?;
    Ok(())
}
