#ifndef CLOSER_H
#define CLOSER_H

#include <stddef.h>
#include <stdint.h>

// Result codes of every fallible entry point.
typedef enum CloserStatus {
  CLOSER_STATUS_OK = 0,
  CLOSER_STATUS_NULL_POINTER = 1,
  CLOSER_STATUS_SHAPE_MISMATCH = 2,
  CLOSER_STATUS_INVALID_ARGUMENT = 3,
  CLOSER_STATUS_DEGENERATE_INPUT = 4,
  CLOSER_STATUS_NOT_IN_LEMMA_REGIME = 5,
  CLOSER_STATUS_IO = 6,
  CLOSER_STATUS_ENCODER_CHANGED = 7,
  CLOSER_STATUS_CLASS_OVERLAP = 8,
  CLOSER_STATUS_NON_FINITE = 9,
  CLOSER_STATUS_PANIC = 10,
  CLOSER_STATUS_OTHER = 11,
} CloserStatus;

// Trained feature extractor.
typedef struct CloserEncoder CloserEncoder;

// Class prototypes bound to one encoder.
typedef struct CloserPrototypeBank CloserPrototypeBank;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *closer_last_error(void);

// Library version as a static NUL-terminated string.
const char *closer_version(void);

// Randomly initialized encoder with layer widths `dims[0..n_dims]`
// (input first, embedding last).
//
// # Safety
// `dims` must point to `n_dims` values and `out` to writable storage.
enum CloserStatus closer_encoder_new(const size_t *dims,
                                     size_t n_dims,
                                     uint64_t seed,
                                     struct CloserEncoder **out_encoder);

// Loads an encoder checkpoint (JSON).
//
// # Safety
// `path` must be a NUL-terminated string and `out_encoder` writable.
enum CloserStatus closer_encoder_load(const char *path, struct CloserEncoder **out_encoder);

// Writes an encoder checkpoint (JSON).
//
// # Safety
// `encoder` must be a live handle and `path` NUL-terminated.
enum CloserStatus closer_encoder_save(const struct CloserEncoder *encoder, const char *path);

// Releases an encoder. Null is ignored.
//
// # Safety
// `encoder` must come from this library and not be used afterwards.
void closer_encoder_free(struct CloserEncoder *encoder);

// Input and embedding widths of an encoder.
//
// # Safety
// `encoder` must be a live handle; out-pointers writable.
enum CloserStatus closer_encoder_dims(const struct CloserEncoder *encoder,
                                      size_t *out_input_dim,
                                      size_t *out_embed_dim);

// Embeds `rows` inputs of width `cols` into unit vectors written to
// `out_features` (`rows * embed_dim` values).
//
// # Safety
// Buffers must hold the stated number of elements.
enum CloserStatus closer_encoder_embed(const struct CloserEncoder *encoder,
                                       const double *x,
                                       size_t rows,
                                       size_t cols,
                                       double *out_features,
                                       size_t out_len);

// Classifier replacement: one class-mean prototype per distinct label.
//
// # Safety
// `x` holds `rows * cols` values, `labels` holds `rows` values.
enum CloserStatus closer_bank_new(const struct CloserEncoder *encoder,
                                  const double *x,
                                  const size_t *labels,
                                  size_t rows,
                                  size_t cols,
                                  struct CloserPrototypeBank **out_bank);

// Adds prototypes for new classes. Fails without modifying the bank if a
// class already has a prototype or the encoder differs from the one that
// built the bank.
//
// # Safety
// Handles must be live; buffers sized as stated.
enum CloserStatus closer_bank_update(struct CloserPrototypeBank *bank,
                                     const struct CloserEncoder *encoder,
                                     const double *x,
                                     const size_t *labels,
                                     size_t rows,
                                     size_t cols);

// Number of prototypes in the bank.
//
// # Safety
// `bank` must be a live handle.
enum CloserStatus closer_bank_len(const struct CloserPrototypeBank *bank, size_t *out_len);

// Predicts the class of one input. `out_scores` (optional, may be null)
// receives one cosine score per prototype in bank order.
//
// # Safety
// `x` holds `cols` values; `out_scores`, if non-null, `scores_len` values.
enum CloserStatus closer_bank_classify(const struct CloserPrototypeBank *bank,
                                       const struct CloserEncoder *encoder,
                                       const double *x,
                                       size_t cols,
                                       size_t *out_class,
                                       double *out_scores,
                                       size_t scores_len);

// Releases a bank. Null is ignored.
//
// # Safety
// `bank` must come from this library and not be used afterwards.
void closer_bank_free(struct CloserPrototypeBank *bank);

// Cosine-softmax cross-entropy of `n` features (`n * d`) against a `c * d`
// classifier, with temperature `tau` and additive margin `margin`.
//
// # Safety
// Buffers sized as stated.
enum CloserStatus closer_sce_loss(const double *features,
                                  const size_t *labels,
                                  size_t n,
                                  size_t d,
                                  const double *classifier,
                                  size_t c,
                                  double tau,
                                  double margin,
                                  double *out_loss);

// Contrastive loss over `2 * b` stacked rows where row `i` and row `b + i`
// are two views of the same sample.
//
// # Safety
// `features` holds `2 * b * d` values.
enum CloserStatus closer_ssc_loss(const double *features,
                                  size_t b,
                                  size_t d,
                                  double tau,
                                  double *out_loss);

// Negative mean cosine over different-class pairs.
//
// # Safety
// Buffers sized as stated.
enum CloserStatus closer_inter_loss(const double *features,
                                    const size_t *labels,
                                    size_t n,
                                    size_t d,
                                    double *out_loss);

// Negative mean cosine over same-class pairs.
//
// # Safety
// Buffers sized as stated.
enum CloserStatus closer_intra_loss(const double *features,
                                    const size_t *labels,
                                    size_t n,
                                    size_t d,
                                    double *out_loss);

// Transferability of `n` new-class features against `p` base prototypes.
//
// # Safety
// `prototypes` holds `p * d` values and `features` `n * d`.
enum CloserStatus closer_transferability(const double *prototypes,
                                         size_t p,
                                         const double *features,
                                         size_t n,
                                         size_t d,
                                         double *out_value);

// Closed-form information-bottleneck bound from covariance
// log-determinants. Returns `CLOSER_STATUS_NOT_IN_LEMMA_REGIME` when
// the bound does not apply.
//
// # Safety
// `log_det_within` holds `classes` values.
enum CloserStatus closer_ib_lower_bound(size_t dim,
                                        const double *log_det_within,
                                        size_t classes,
                                        double log_det_total,
                                        double *out_bound);

// Runs a full experiment from a JSON config and writes its reports to
// `out_dir`.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum CloserStatus closer_run_config(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOSER_H */
