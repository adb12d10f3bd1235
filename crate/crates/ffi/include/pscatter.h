#ifndef PSCATTER_H
#define PSCATTER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsInit {
  PS_INIT_TIGHT_FRAME = 0,
  PS_INIT_RANDOM = 1,
} PsInit;

typedef enum PsParameterization {
  PS_PARAMETERIZATION_CANONICAL = 0,
  PS_PARAMETERIZATION_EQUIVARIANT = 1,
  PS_PARAMETERIZATION_PIXELWISE = 2,
} PsParameterization;

// Result of every fallible call. Values 2 to 4 match the CLI exit codes.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an unknown enum value.
  PS_STATUS_INVALID_ARGUMENT = 1,
  PS_STATUS_CONFIG = 2,
  PS_STATUS_DATA = 3,
  PS_STATUS_DIVERGENCE = 4,
  // The output buffer is smaller than required.
  PS_STATUS_BUFFER_TOO_SMALL = 5,
  PS_STATUS_INTERNAL = 6,
} PsStatus;

// Opaque filterbank handle.
typedef struct PsBank PsBank;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ps_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length
// excluding the terminator.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
uintptr_t ps_last_error(char *buf, uintptr_t len);

// Number of scattering channels for `j` scales and `l` orientations.
uintptr_t ps_channel_count(uintptr_t j, uintptr_t l);

// Creates a filterbank. On success `*out` owns a handle to free with
// `ps_bank_free`.
//
// # Safety
// `out` must be a valid pointer.
enum PsStatus ps_bank_new(uintptr_t j,
                          uintptr_t l,
                          uintptr_t n,
                          enum PsParameterization parameterization,
                          enum PsInit init,
                          uint64_t seed,
                          struct PsBank **out);

// Reads a filterbank from its JSON document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum PsStatus ps_bank_from_json(const char *json, struct PsBank **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `bank` must be null or a handle not yet freed.
void ps_bank_free(struct PsBank *bank);

// Serializes a bank. `*out` receives a string to release with
// `ps_string_free`.
//
// # Safety
// `bank` must be a live handle and `out` a valid pointer.
enum PsStatus ps_bank_to_json(const struct PsBank *bank, char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from `ps_bank_to_json` not yet freed.
void ps_string_free(char *s);

// Number of wavelet filters; 0 for a null handle.
//
// # Safety
// `bank` must be null or a live handle.
uintptr_t ps_bank_num_filters(const struct PsBank *bank);

// Image side length; 0 for a null handle.
//
// # Safety
// `bank` must be null or a live handle.
uintptr_t ps_bank_side(const struct PsBank *bank);

// Writes `(sigma, theta, xi, gamma)` for every filter into `out`, which must
// hold `4 * ps_bank_num_filters(bank)` values.
//
// # Safety
// `bank` must be a live handle and `out` valid for `len` doubles.
enum PsStatus ps_bank_params(const struct PsBank *bank, double *out, uintptr_t len);

// Number of doubles `ps_forward` writes for `batch` images:
// `batch * channels * (n / 2^J)^2`. 0 for a null handle.
//
// # Safety
// `bank` must be null or a live handle.
uintptr_t ps_output_len(const struct PsBank *bank, uintptr_t batch);

// Scatters `batch` images of `n * n` doubles each. The output layout is
// `[batch][channel][row][col]`.
//
// # Safety
// `bank` must be a live handle, `images` valid for `batch * n * n` doubles
// and `out` valid for `out_len` doubles.
enum PsStatus ps_forward(const struct PsBank *bank,
                         const double *images,
                         uintptr_t batch,
                         double *out,
                         uintptr_t out_len);

// Minimum-cost matching distance between two banks of equal size.
//
// # Safety
// `a` and `b` must be live handles and `out` a valid pointer.
enum PsStatus ps_bank_distance(const struct PsBank *a, const struct PsBank *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSCATTER_H */
