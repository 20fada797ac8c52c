#ifndef MEMSIG_H
#define MEMSIG_H

/*
 * C interface to the memory-signature toolkit: corpus preparation,
 * character-level LM training (LSTM / GRU / factorized-kernel LSTM),
 * n-gram baselines, recall probes over frozen recurrent state, and
 * signature compilation / diffing / rendering.
 *
 * Conventions:
 *   - Every fallible call returns memsig_status; non-OK leaves a message
 *     in memsig_last_error() (thread-local, valid until the next call on
 *     the same thread).
 *   - Out-parameters are written only on MEMSIG_OK.
 *   - Objects are opaque; free with the matching *_free (NULL is a no-op).
 *   - Strings returned through char** are NUL-terminated, heap-allocated,
 *     and released with memsig_string_free.
 *   - All randomness flows from explicit seeds; identical inputs and seeds
 *     give byte-identical artifacts.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MEMSIG_API __declspec(dllexport)
#else
#define MEMSIG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum memsig_status {
    MEMSIG_OK = 0,
    MEMSIG_ERR_USAGE = 1,   /* bad arguments or configuration */
    MEMSIG_ERR_DATA = 2,    /* input data cannot support the request */
    MEMSIG_ERR_NUMERIC = 3, /* training diverged / non-finite values */
    MEMSIG_ERR_IO = 4,      /* file system failure */
    MEMSIG_ERR_FORMAT = 5,  /* malformed artifact file */
    MEMSIG_ERR_INTERNAL = 6 /* unexpected failure; message has details */
} memsig_status;

typedef struct memsig_corpus memsig_corpus;
typedef struct memsig_checkpoint memsig_checkpoint;
typedef struct memsig_ngram memsig_ngram;
typedef struct memsig_probe_run memsig_probe_run;
typedef struct memsig_signature memsig_signature;
typedef struct memsig_diff memsig_diff;

MEMSIG_API const char* memsig_version(void);
MEMSIG_API const char* memsig_last_error(void);
MEMSIG_API void memsig_string_free(char* s);

/* FNV-1a over raw file bytes; for manifest input hashes. */
MEMSIG_API memsig_status memsig_hash_file(const char* path, uint64_t* out);

/* ---- corpus ------------------------------------------------------------ */

/*
 * Reads a text file (one segment per non-empty line, lowercased), encodes
 * it over `alphabet`, and splits segments into train/dev/eval by ratio
 * under `seed`. `digit_fold` nonzero folds digits into '#' (the alphabet
 * must then contain '#'). alphabet NULL uses the standard set — letters,
 * space, period, comma, '#', apostrophe, digits folded — and ignores
 * `digit_fold`.
 */
MEMSIG_API memsig_status memsig_corpus_prepare(const char* text_path, const char* alphabet,
                                               int32_t digit_fold, double train_ratio,
                                               double dev_ratio, double eval_ratio, uint64_t seed,
                                               memsig_corpus** out);

MEMSIG_API memsig_status memsig_corpus_save(const memsig_corpus* c, const char* path);
MEMSIG_API memsig_status memsig_corpus_load(const char* path, memsig_corpus** out);
MEMSIG_API void memsig_corpus_free(memsig_corpus* c);

/* Content hash of the encoded segments (split-independent). */
MEMSIG_API memsig_status memsig_corpus_content_id(const memsig_corpus* c, uint64_t* out);

/* JSON: alphabet, vocab, seed, per-part segment and symbol counts. */
MEMSIG_API memsig_status memsig_corpus_stats_json(const memsig_corpus* c, char** out);

/* Same corpus with the train partition subsampled to `fraction`. */
MEMSIG_API memsig_status memsig_corpus_sample_train(const memsig_corpus* c, double fraction,
                                                    uint64_t seed, memsig_corpus** out);

/* ---- recurrent language models ------------------------------------------ */

typedef struct memsig_train_config {
    double lr;
    double beta1;
    double beta2;
    double eps;
    int32_t batch;
    int32_t window;     /* truncated-BPTT window length */
    int32_t max_epochs; /* 0 = return the initial model untrained */
    int32_t patience;   /* epochs without dev improvement before stopping */
    double keep_state;  /* dropout keep prob on recurrent-state outputs */
    double keep_hidden; /* dropout keep prob on decoder hidden layers */
    double clip_norm;   /* global gradient-norm clip */
    uint64_t seed;
} memsig_train_config;

MEMSIG_API void memsig_train_config_init(memsig_train_config* cfg);

/*
 * Trains a character LM on the corpus's train part, early-stopped on dev
 * perplexity. `arch` is "lstm", "gru", or "lstm-factorized"; a factorized
 * kernel gets one rank-one basis per symbol bigram with lambda set to the
 * train-part bigram frequencies. Divergence returns MEMSIG_ERR_NUMERIC.
 */
MEMSIG_API memsig_status memsig_lm_train(const memsig_corpus* corpus, const char* arch,
                                         int32_t layers, int32_t state_size,
                                         const memsig_train_config* cfg, memsig_checkpoint** out);

/*
 * Domain adaptation: continues training from `base` weights on a new corpus
 * with fresh optimizer state. Factorized kernels get lambda re-derived from
 * the new corpus's train-part bigram frequencies.
 */
MEMSIG_API memsig_status memsig_lm_retrain(const memsig_checkpoint* base,
                                           const memsig_corpus* corpus,
                                           const memsig_train_config* cfg,
                                           memsig_checkpoint** out);

/* exp(mean NLL) over `part` ("train" | "dev" | "eval"). */
MEMSIG_API memsig_status memsig_lm_eval(const memsig_checkpoint* ckpt, const memsig_corpus* corpus,
                                        const char* part, double* perplexity);

MEMSIG_API memsig_status memsig_checkpoint_save(const memsig_checkpoint* ckpt, const char* path);
MEMSIG_API memsig_status memsig_checkpoint_load(const char* path, memsig_checkpoint** out);
MEMSIG_API void memsig_checkpoint_free(memsig_checkpoint* ckpt);

/* Hash of all trainable parameters (frozen-model identity). */
MEMSIG_API memsig_status memsig_checkpoint_param_hash(const memsig_checkpoint* ckpt,
                                                      uint64_t* out);

/* JSON: arch, shape, alphabet, parameter count/hash, training history. */
MEMSIG_API memsig_status memsig_checkpoint_describe_json(const memsig_checkpoint* ckpt,
                                                         char** out);

/* ---- n-gram language models ---------------------------------------------- */

MEMSIG_API memsig_status memsig_ngram_train(const memsig_corpus* corpus, int32_t order,
                                            double add_k, memsig_ngram** out);

MEMSIG_API memsig_status memsig_ngram_eval(const memsig_ngram* m, const memsig_corpus* corpus,
                                           const char* part, double* perplexity);

MEMSIG_API memsig_status memsig_ngram_save(const memsig_ngram* m, const char* path);
MEMSIG_API memsig_status memsig_ngram_load(const char* path, memsig_ngram** out);
MEMSIG_API void memsig_ngram_free(memsig_ngram* m);

/* JSON: order, add_k, alphabet, table sizes. */
MEMSIG_API memsig_status memsig_ngram_describe_json(const memsig_ngram* m, char** out);

/* ---- recall probes ------------------------------------------------------- */

typedef struct memsig_probe_config {
    int32_t max_delta;       /* probe look-back distances 1..max_delta */
    const int32_t* layers;   /* NULL = every traced layer */
    int32_t layer_count;
    int32_t use_cell_state;  /* nonzero probes LSTM cell state, else outputs */
    int32_t decoder_depth;   /* hidden layers per decoder */
    int32_t sweep;           /* nonzero sweeps dropout keep over keep_grid */
    const double* keep_grid; /* NULL = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0} */
    int32_t keep_grid_len;
    memsig_train_config train;
    uint64_t max_positions; /* per-part trace cap; 0 = uncapped */
    int32_t jobs;           /* decoder worker pool size */
} memsig_probe_config;

MEMSIG_API void memsig_probe_config_init(memsig_probe_config* cfg);

/*
 * Trains one back-prediction decoder per (delta, layer) on frozen states
 * traced from the corpus's train part, scored on the eval part. Decoder
 * widths are sized so parameter counts reach the probed layer's kernel +
 * input-projection count.
 */
MEMSIG_API memsig_status memsig_probe_checkpoint(const memsig_checkpoint* ckpt,
                                                 const memsig_corpus* corpus,
                                                 const memsig_probe_config* cfg,
                                                 memsig_probe_run** out);

/* Same probe over the n-gram's strictly-before context encoding (layer 0). */
MEMSIG_API memsig_status memsig_probe_ngram(const memsig_ngram* m, const memsig_corpus* corpus,
                                            const memsig_probe_config* cfg,
                                            memsig_probe_run** out);

MEMSIG_API memsig_status memsig_probe_cell_count(const memsig_probe_run* run, int32_t* out);

/* Cell coordinates, for naming fan-out files. */
MEMSIG_API memsig_status memsig_probe_cell_coords(const memsig_probe_run* run, int32_t index,
                                                  int32_t* delta, int32_t* layer);

/* Self-contained JSON evaluation record for one cell. */
MEMSIG_API memsig_status memsig_probe_cell_json(const memsig_probe_run* run, int32_t index,
                                                char** out);

MEMSIG_API void memsig_probe_run_free(memsig_probe_run* run);

/* ---- signatures ----------------------------------------------------------- */

/*
 * Compiles cell evaluation files (memsig_probe_cell_json outputs) into a
 * delta-by-symbol signature. All files must come from one probe run and
 * cover delta 1..max contiguously; layer -1 requires the files to cover
 * exactly one layer.
 */
MEMSIG_API memsig_status memsig_signature_compile(const char* const* eval_paths, int32_t count,
                                                  int32_t layer, memsig_signature** out);

MEMSIG_API memsig_status memsig_signature_save_csv(const memsig_signature* sig, const char* path);
MEMSIG_API memsig_status memsig_signature_load_csv(const char* path, memsig_signature** out);
MEMSIG_API void memsig_signature_free(memsig_signature* sig);

MEMSIG_API memsig_status memsig_signature_shape(const memsig_signature* sig, int32_t* max_delta,
                                                int32_t* vocab);

/*
 * Marginal recall per delta (support-weighted unless `unweighted`), written
 * to out[0..max_delta-1]; NaN where a whole delta row is absent. `cap` is
 * the out capacity; the needed length is reported through `len`.
 */
MEMSIG_API memsig_status memsig_signature_marginals(const memsig_signature* sig,
                                                    int32_t unweighted, double* out, int32_t cap,
                                                    int32_t* len);

/* Standalone SVG heatmap; palette "purple" or "green" (lighter = higher). */
MEMSIG_API memsig_status memsig_signature_render(const memsig_signature* sig, const char* palette,
                                                 const char* svg_path);

/* ---- signature diffs ------------------------------------------------------ */

MEMSIG_API memsig_status memsig_signature_diff(const memsig_signature* a,
                                               const memsig_signature* b, memsig_diff** out);

MEMSIG_API memsig_status memsig_diff_save_csv(const memsig_diff* d, const char* path);
MEMSIG_API memsig_status memsig_diff_load_csv(const char* path, memsig_diff** out);
MEMSIG_API void memsig_diff_free(memsig_diff* d);

/* Sum of |a - b| over cells present in both operands. */
MEMSIG_API memsig_status memsig_diff_l1(const memsig_diff* d, double* out);

/* Diverging red-blue SVG heatmap (red = first operand recalls better). */
MEMSIG_API memsig_status memsig_diff_render(const memsig_diff* d, const char* svg_path);

/*
 * Renders any signature or diff CSV, sniffing which by header. `palette`
 * NULL picks purple for signatures and the diverging scale for diffs;
 * naming a sequential palette for a diff (or vice versa) is an error.
 */
MEMSIG_API memsig_status memsig_render_csv(const char* csv_path, const char* palette,
                                           const char* svg_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MEMSIG_H */
