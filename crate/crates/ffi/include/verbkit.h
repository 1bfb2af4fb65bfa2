#ifndef VERBKIT_H
#define VERBKIT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VkStatus {
  VK_STATUS_OK = 0,
  VK_STATUS_NULL_POINTER = 1,
  VK_STATUS_INVALID_ARGUMENT = 2,
  VK_STATUS_LOOKUP = 3,
  VK_STATUS_NUMERIC = 4,
  VK_STATUS_PARSE = 5,
  VK_STATUS_IO = 6,
  VK_STATUS_BUFFER_TOO_SMALL = 7,
  VK_STATUS_INTERNAL = 99,
} VkStatus;

typedef enum VkTextFormat {
  VK_TEXT_FORMAT_WORD2VEC = 0,
  VK_TEXT_FORMAT_GLOVE = 1,
} VkTextFormat;

typedef enum VkStrategy {
  VK_STRATEGY_VOTE = 0,
  VK_STRATEGY_PROBA = 1,
  VK_STRATEGY_LOGIT = 2,
} VkStrategy;

// Embedding matrix with cosine neighbor search.
typedef struct VkEmbeddingStore VkEmbeddingStore;

// Records read from a logit export.
typedef struct VkLogitFile VkLogitFile;

// A verbalizer bound to a tokenizer, scoring MASK logits.
typedef struct VkScorer VkScorer;

// Label words with per-word weights.
typedef struct VkVerbalizer VkVerbalizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *vk_last_error_message(void);

const char *vk_version(void);

// Loads a word2vec or GloVe text file.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum VkStatus vk_store_load(const char *path,
                            enum VkTextFormat format,
                            struct VkEmbeddingStore **out);

// Builds a store from `n` words and a row-major `n x dim` matrix.
//
// # Safety
// `words` must hold `n` C strings and `data` `n * dim` floats.
enum VkStatus vk_store_from_rows(const char *const *words,
                                 uintptr_t n,
                                 const float *data,
                                 uintptr_t dim,
                                 struct VkEmbeddingStore **out);

// # Safety
// `store` must come from this library or be null.
void vk_store_free(struct VkEmbeddingStore *store);

// # Safety
// Pointers must be valid.
enum VkStatus vk_store_len(const struct VkEmbeddingStore *store, uintptr_t *out);

// Copies word `index` into `buf`.
//
// # Safety
// `buf` must hold `cap` bytes.
enum VkStatus vk_store_word(const struct VkEmbeddingStore *store,
                            uintptr_t index,
                            char *buf,
                            uintptr_t cap,
                            uintptr_t *out_len);

// The `k` nearest neighbors of `word`: store indices and cosine similarities in
// decreasing order. `out_len` receives the number written.
//
// # Safety
// `indices` and `similarities` must hold `k` elements.
enum VkStatus vk_store_top_k(const struct VkEmbeddingStore *store,
                             const char *word,
                             uintptr_t k,
                             uintptr_t *indices,
                             double *similarities,
                             uintptr_t *out_len);

// Loads a verbalizer file. Plain files get unit weights.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum VkStatus vk_verbalizer_load(const char *path, struct VkVerbalizer **out);

// # Safety
// Pointers must be valid C strings or handles.
enum VkStatus vk_verbalizer_save(const struct VkVerbalizer *verbalizer, const char *path);

// # Safety
// `verbalizer` must come from this library or be null.
void vk_verbalizer_free(struct VkVerbalizer *verbalizer);

// # Safety
// Pointers must be valid.
enum VkStatus vk_verbalizer_num_labels(const struct VkVerbalizer *verbalizer, uintptr_t *out);

// Number of words of `label`.
//
// # Safety
// Pointers must be valid.
enum VkStatus vk_verbalizer_num_words(const struct VkVerbalizer *verbalizer,
                                      uintptr_t label,
                                      uintptr_t *out);

// Copies the weights of `label` into `weights`, which holds `cap` values.
//
// # Safety
// `weights` must hold `cap` doubles.
enum VkStatus vk_verbalizer_weights(const struct VkVerbalizer *verbalizer,
                                    uintptr_t label,
                                    double *weights,
                                    uintptr_t cap);

// Copies word `index` of `label` into `buf`.
//
// # Safety
// `buf` must hold `cap` bytes.
enum VkStatus vk_verbalizer_word(const struct VkVerbalizer *verbalizer,
                                 uintptr_t label,
                                 uintptr_t index,
                                 char *buf,
                                 uintptr_t cap,
                                 uintptr_t *out_len);

// Adds the `k` nearest neighbors of every core word, weighted by cosine similarity.
//
// # Safety
// Pointers must be valid handles.
enum VkStatus vk_verbalizer_enrich(const struct VkVerbalizer *verbalizer,
                                   const struct VkEmbeddingStore *store,
                                   uintptr_t k,
                                   struct VkVerbalizer **out);

// Binds `verbalizer` to the tokenizer in `tokenizer_path` (a `tokenizer.json`).
//
// # Safety
// Pointers must be valid.
enum VkStatus vk_scorer_new(const struct VkVerbalizer *verbalizer,
                            const char *tokenizer_path,
                            struct VkScorer **out);

// # Safety
// `scorer` must come from this library or be null.
void vk_scorer_free(struct VkScorer *scorer);

// Weighted class logits from one row of MASK logits over the vocabulary.
// With unit weights this is the per-label mean of word logits.
//
// # Safety
// `vocab_logits` must hold `vocab_len` floats and `out` `num_labels` doubles.
enum VkStatus vk_scorer_class_logits(const struct VkScorer *scorer,
                                     const float *vocab_logits,
                                     uintptr_t vocab_len,
                                     double *out,
                                     uintptr_t num_labels);

// # Safety
// `logits` and `out` must hold `n` doubles.
enum VkStatus vk_softmax(const double *logits, uintptr_t n, double *out);

// # Safety
// `logits` must hold `n` doubles.
enum VkStatus vk_cross_entropy(const double *logits, uintptr_t n, uintptr_t gold, double *out);

// Aggregates `members` rows of `classes` class logits (row-major) into one class.
//
// # Safety
// `logits` must hold `members * classes` doubles.
enum VkStatus vk_aggregate(enum VkStrategy strategy,
                           const double *logits,
                           uintptr_t members,
                           uintptr_t classes,
                           uintptr_t *out);

// Reads a JSONL logit export.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum VkStatus vk_logits_read(const char *path, struct VkLogitFile **out);

// # Safety
// `file` must come from this library or be null.
void vk_logits_free(struct VkLogitFile *file);

// # Safety
// Pointers must be valid.
enum VkStatus vk_logits_len(const struct VkLogitFile *file, uintptr_t *out);

// Copies the class logits of record `index`; `out_len` receives the class count.
//
// # Safety
// `out` must hold `cap` doubles.
enum VkStatus vk_logits_row(const struct VkLogitFile *file,
                            uintptr_t index,
                            double *out,
                            uintptr_t cap,
                            uintptr_t *out_len);

// Gold label of record `index`, or -1 when unlabeled.
//
// # Safety
// Pointers must be valid.
enum VkStatus vk_logits_gold(const struct VkLogitFile *file, uintptr_t index, int64_t *out);

// Copies the example id of record `index` into `buf`.
//
// # Safety
// `buf` must hold `cap` bytes.
enum VkStatus vk_logits_id(const struct VkLogitFile *file,
                           uintptr_t index,
                           char *buf,
                           uintptr_t cap,
                           uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VERBKIT_H */
