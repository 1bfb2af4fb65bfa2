//! C ABI over verbkit.
//!
//! Every function returns a [`VkStatus`]. On failure the message is kept per thread and
//! can be read with [`vk_last_error_message`]. Handles are opaque and must be released
//! with their `_free` function. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use verbkit::ensemble::MemberOutput;
use verbkit::experiment::{read_logits, LogitRecord};
use verbkit::lm::LmTokenizer;
use verbkit::scoring::{class_logits_weighted, cross_entropy, softmax, ClassScores, ResolvedVerbalizer};
use verbkit::verbalizer::VerbalizerFile;
use verbkit::{enrich_maven, CoreWordForm, EmbeddingStore, Error, Strategy, TextFormat, VocabLogits, WeightedVerbalizer};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Lookup = 3,
    Numeric = 4,
    Parse = 5,
    Io = 6,
    BufferTooSmall = 7,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VkStrategy {
    Vote = 0,
    Proba = 1,
    Logit = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VkTextFormat {
    Word2vec = 0,
    Glove = 1,
}

/// Embedding matrix with cosine neighbor search.
pub struct VkEmbeddingStore(EmbeddingStore);

/// Label words with per-word weights.
pub struct VkVerbalizer(WeightedVerbalizer);

/// A verbalizer bound to a tokenizer, scoring MASK logits.
pub struct VkScorer(ResolvedVerbalizer);

/// Records read from a logit export.
pub struct VkLogitFile(Vec<LogitRecord>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Argument(_) | Error::Structural(_) | Error::Training(_) => VkStatus::InvalidArgument,
            Error::Lookup(_) => VkStatus::Lookup,
            Error::Numeric(_) => VkStatus::Numeric,
            Error::Parse { .. } | Error::Json(_) | Error::Tokenizer(_) => VkStatus::Parse,
            Error::Io(_) => VkStatus::Io,
            Error::Model(_) => VkStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: VkStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VkStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(VkStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(VkStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(VkStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(VkStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(VkStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(VkStatus::NullPointer, format!("{what} is null")))
}

/// Copies `s` plus a NUL into `buf`. `out_len` receives the length without the NUL,
/// also when the buffer is too small.
unsafe fn copy_str(s: &str, buf: *mut c_char, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    *out_ptr(out_len, "out_len")? = s.len();
    if cap < s.len() + 1 {
        return Err(fail(VkStatus::BufferTooSmall, format!("need {} bytes", s.len() + 1)));
    }
    let dst = slice_out(buf as *mut u8, cap, "buf")?;
    dst[..s.len()].copy_from_slice(s.as_bytes());
    dst[s.len()] = 0;
    Ok(())
}

fn strategy(s: VkStrategy) -> Strategy {
    match s {
        VkStrategy::Vote => Strategy::Vote,
        VkStrategy::Proba => Strategy::Proba,
        VkStrategy::Logit => Strategy::Logit,
    }
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn vk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn vk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// Embedding store

/// Loads a word2vec or GloVe text file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vk_store_load(
    path: *const c_char,
    format: VkTextFormat,
    out: *mut *mut VkEmbeddingStore,
) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let format = match format {
            VkTextFormat::Word2vec => TextFormat::Word2VecText,
            VkTextFormat::Glove => TextFormat::GloveText,
        };
        let store = EmbeddingStore::load_external(PathBuf::from(str_arg(path, "path")?), format)?;
        *out = Box::into_raw(Box::new(VkEmbeddingStore(store)));
        Ok(())
    })
}

/// Builds a store from `n` words and a row-major `n x dim` matrix.
///
/// # Safety
/// `words` must hold `n` C strings and `data` `n * dim` floats.
#[no_mangle]
pub unsafe extern "C" fn vk_store_from_rows(
    words: *const *const c_char,
    n: usize,
    data: *const f32,
    dim: usize,
    out: *mut *mut VkEmbeddingStore,
) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let vocab = slice_arg(words, n, "words")?
            .iter()
            .map(|&w| str_arg(w, "word").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| fail(VkStatus::InvalidArgument, "n * dim overflows"))?;
        let data = slice_arg(data, total, "data")?.to_vec();
        *out = Box::into_raw(Box::new(VkEmbeddingStore(EmbeddingStore::from_flat(vocab, data, dim)?)));
        Ok(())
    })
}

/// # Safety
/// `store` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn vk_store_free(store: *mut VkEmbeddingStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vk_store_len(store: *const VkEmbeddingStore, out: *mut usize) -> VkStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(store, "store")?.0.len();
        Ok(())
    })
}

/// Copies word `index` into `buf`.
///
/// # Safety
/// `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn vk_store_word(
    store: *const VkEmbeddingStore,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> VkStatus {
    guard(|| {
        let store = &handle(store, "store")?.0;
        let word = store
            .words()
            .get(index)
            .ok_or_else(|| fail(VkStatus::InvalidArgument, format!("index {index} out of range")))?;
        copy_str(word, buf, cap, out_len)
    })
}

/// The `k` nearest neighbors of `word`: store indices and cosine similarities in
/// decreasing order. `out_len` receives the number written.
///
/// # Safety
/// `indices` and `similarities` must hold `k` elements.
#[no_mangle]
pub unsafe extern "C" fn vk_store_top_k(
    store: *const VkEmbeddingStore,
    word: *const c_char,
    k: usize,
    indices: *mut usize,
    similarities: *mut f64,
    out_len: *mut usize,
) -> VkStatus {
    guard(|| {
        let store = &handle(store, "store")?.0;
        let out_len = out_ptr(out_len, "out_len")?;
        let neighbors = store.top_k_neighbors(str_arg(word, "word")?, k)?;
        let idx = slice_out(indices, k, "indices")?;
        let sims = slice_out(similarities, k, "similarities")?;
        for (i, n) in neighbors.iter().enumerate() {
            idx[i] = store.index_of(&n.word).expect("neighbor is in the store");
            sims[i] = n.similarity;
        }
        *out_len = neighbors.len();
        Ok(())
    })
}

// Verbalizers

/// Loads a verbalizer file. Plain files get unit weights.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_load(path: *const c_char, out: *mut *mut VkVerbalizer) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let wv = match VerbalizerFile::load(str_arg(path, "path")?)? {
            VerbalizerFile::Plain(v) => WeightedVerbalizer::uniform(&v),
            VerbalizerFile::Weighted(w) => w,
        };
        *out = Box::into_raw(Box::new(VkVerbalizer(wv)));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid C strings or handles.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_save(verbalizer: *const VkVerbalizer, path: *const c_char) -> VkStatus {
    guard(|| {
        let v = &handle(verbalizer, "verbalizer")?.0;
        VerbalizerFile::Weighted(v.clone()).save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `verbalizer` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_free(verbalizer: *mut VkVerbalizer) {
    if !verbalizer.is_null() {
        drop(Box::from_raw(verbalizer));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_num_labels(verbalizer: *const VkVerbalizer, out: *mut usize) -> VkStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(verbalizer, "verbalizer")?.0.num_labels();
        Ok(())
    })
}

/// Number of words of `label`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_num_words(
    verbalizer: *const VkVerbalizer,
    label: usize,
    out: *mut usize,
) -> VkStatus {
    guard(|| {
        let v = &handle(verbalizer, "verbalizer")?.0;
        if label >= v.num_labels() {
            return Err(fail(VkStatus::InvalidArgument, format!("label {label} out of range")));
        }
        *out_ptr(out, "out")? = v.entries(label).len();
        Ok(())
    })
}

/// Copies the weights of `label` into `weights`, which holds `cap` values.
///
/// # Safety
/// `weights` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_weights(
    verbalizer: *const VkVerbalizer,
    label: usize,
    weights: *mut f64,
    cap: usize,
) -> VkStatus {
    guard(|| {
        let v = &handle(verbalizer, "verbalizer")?.0;
        if label >= v.num_labels() {
            return Err(fail(VkStatus::InvalidArgument, format!("label {label} out of range")));
        }
        let w = v.weights(label);
        if cap < w.len() {
            return Err(fail(VkStatus::BufferTooSmall, format!("need {} values", w.len())));
        }
        slice_out(weights, w.len(), "weights")?.copy_from_slice(&w);
        Ok(())
    })
}

/// Copies word `index` of `label` into `buf`.
///
/// # Safety
/// `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_word(
    verbalizer: *const VkVerbalizer,
    label: usize,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> VkStatus {
    guard(|| {
        let v = &handle(verbalizer, "verbalizer")?.0;
        let word = (label < v.num_labels())
            .then(|| v.entries(label).get(index))
            .flatten()
            .ok_or_else(|| fail(VkStatus::InvalidArgument, format!("word ({label}, {index}) out of range")))?;
        copy_str(&word.word, buf, cap, out_len)
    })
}

/// Adds the `k` nearest neighbors of every core word, weighted by cosine similarity.
///
/// # Safety
/// Pointers must be valid handles.
#[no_mangle]
pub unsafe extern "C" fn vk_verbalizer_enrich(
    verbalizer: *const VkVerbalizer,
    store: *const VkEmbeddingStore,
    k: usize,
    out: *mut *mut VkVerbalizer,
) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let v = handle(verbalizer, "verbalizer")?.0.to_verbalizer();
        let store = &handle(store, "store")?.0;
        let enriched = enrich_maven(&v, store, k, CoreWordForm::default())?;
        *out = Box::into_raw(Box::new(VkVerbalizer(enriched.verbalizer)));
        Ok(())
    })
}

// Scoring

/// Binds `verbalizer` to the tokenizer in `tokenizer_path` (a `tokenizer.json`).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vk_scorer_new(
    verbalizer: *const VkVerbalizer,
    tokenizer_path: *const c_char,
    out: *mut *mut VkScorer,
) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let v = &handle(verbalizer, "verbalizer")?.0;
        let tok = LmTokenizer::from_file(str_arg(tokenizer_path, "tokenizer_path")?)?;
        *out = Box::into_raw(Box::new(VkScorer(ResolvedVerbalizer::weighted(v, &tok)?)));
        Ok(())
    })
}

/// # Safety
/// `scorer` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn vk_scorer_free(scorer: *mut VkScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

/// Weighted class logits from one row of MASK logits over the vocabulary.
/// With unit weights this is the per-label mean of word logits.
///
/// # Safety
/// `vocab_logits` must hold `vocab_len` floats and `out` `num_labels` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_scorer_class_logits(
    scorer: *const VkScorer,
    vocab_logits: *const f32,
    vocab_len: usize,
    out: *mut f64,
    num_labels: usize,
) -> VkStatus {
    guard(|| {
        let v = &handle(scorer, "scorer")?.0;
        if num_labels != v.num_labels() {
            return Err(fail(
                VkStatus::InvalidArgument,
                format!("scorer has {} labels, output holds {num_labels}", v.num_labels()),
            ));
        }
        let logits = slice_arg(vocab_logits, vocab_len, "vocab_logits")?;
        let max_id = (0..v.num_labels())
            .flat_map(|y| v.word_ids(y).iter().flatten())
            .map(|t| t.index())
            .max()
            .unwrap_or(0);
        if max_id >= vocab_len {
            return Err(fail(
                VkStatus::InvalidArgument,
                format!("token id {max_id} outside a vocabulary of {vocab_len}"),
            ));
        }
        let cs = class_logits_weighted(&VocabLogits(logits.to_vec()), v)?;
        slice_out(out, num_labels, "out")?.copy_from_slice(cs.logits());
        Ok(())
    })
}

/// # Safety
/// `logits` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_softmax(logits: *const f64, n: usize, out: *mut f64) -> VkStatus {
    guard(|| {
        let p = softmax(slice_arg(logits, n, "logits")?)?;
        slice_out(out, n, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `logits` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_cross_entropy(logits: *const f64, n: usize, gold: usize, out: *mut f64) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = cross_entropy(&ClassScores::new(slice_arg(logits, n, "logits")?.to_vec()), gold)?;
        Ok(())
    })
}

/// Aggregates `members` rows of `classes` class logits (row-major) into one class.
///
/// # Safety
/// `logits` must hold `members * classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_aggregate(
    strategy: VkStrategy,
    logits: *const f64,
    members: usize,
    classes: usize,
    out: *mut usize,
) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if classes == 0 {
            return Err(fail(VkStatus::InvalidArgument, "no classes"));
        }
        let total = members
            .checked_mul(classes)
            .ok_or_else(|| fail(VkStatus::InvalidArgument, "members * classes overflows"))?;
        let rows: Vec<MemberOutput> = slice_arg(logits, total, "logits")?
            .chunks(classes)
            .enumerate()
            .map(|(t, row)| MemberOutput::new(t as u32, row.to_vec()))
            .collect();
        *out = self::strategy(strategy).aggregate(&rows)?;
        Ok(())
    })
}

// Logit exports

/// Reads a JSONL logit export.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vk_logits_read(path: *const c_char, out: *mut *mut VkLogitFile) -> VkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let records = read_logits(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(VkLogitFile(records)));
        Ok(())
    })
}

/// # Safety
/// `file` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn vk_logits_free(file: *mut VkLogitFile) {
    if !file.is_null() {
        drop(Box::from_raw(file));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vk_logits_len(file: *const VkLogitFile, out: *mut usize) -> VkStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(file, "file")?.0.len();
        Ok(())
    })
}

unsafe fn record<'a>(file: *const VkLogitFile, index: usize) -> Result<&'a LogitRecord, Failure> {
    handle(file, "file")?
        .0
        .get(index)
        .ok_or_else(|| fail(VkStatus::InvalidArgument, format!("record {index} out of range")))
}

/// Copies the class logits of record `index`; `out_len` receives the class count.
///
/// # Safety
/// `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_logits_row(
    file: *const VkLogitFile,
    index: usize,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> VkStatus {
    guard(|| {
        let r = record(file, index)?;
        *out_ptr(out_len, "out_len")? = r.logits.len();
        if cap < r.logits.len() {
            return Err(fail(VkStatus::BufferTooSmall, format!("need {} values", r.logits.len())));
        }
        slice_out(out, r.logits.len(), "out")?.copy_from_slice(&r.logits);
        Ok(())
    })
}

/// Gold label of record `index`, or -1 when unlabeled.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vk_logits_gold(file: *const VkLogitFile, index: usize, out: *mut i64) -> VkStatus {
    guard(|| {
        let r = record(file, index)?;
        *out_ptr(out, "out")? = r.gold.map_or(-1, |g| g as i64);
        Ok(())
    })
}

/// Copies the example id of record `index` into `buf`.
///
/// # Safety
/// `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn vk_logits_id(
    file: *const VkLogitFile,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> VkStatus {
    guard(|| copy_str(&record(file, index)?.id, buf, cap, out_len))
}
