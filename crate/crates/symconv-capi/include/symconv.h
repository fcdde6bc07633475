/* C ABI for the symconv symmetric-kernel CNN library. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum ScStatus {
  ScOk = 0,
  ScNullPointer = 1,
  ScInvalidArgument = 2,
  ScParseError = 3,
  ScIoError = 4,
  ScInternalError = 5,
} ScStatus;

// Kernel symmetry families.
typedef enum ScSymmetryClass {
  ScClassR = 0,
  ScClassT1 = 1,
  ScClassT2a = 2,
  ScClassT2b = 3,
} ScSymmetryClass;

// T2B gradient-folding mode used by networks created over the ABI.
typedef enum ScT2bMode {
  ScT2bLiteral = 0,
  ScT2bConsistent = 1,
} ScT2bMode;

// Opaque kernel handle.
typedef struct ScKernel ScKernel;

// Opaque network handle.
typedef struct ScNetwork ScNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *sc_last_error(void);

// Library version as a static NUL-terminated string.
const char *sc_version(void);

// Number of free weights for a kernel class at an odd size >= 3.
enum ScStatus sc_parameter_count(enum ScSymmetryClass class_, size_t kernel_size, size_t *out);

// Create a kernel with Gaussian canonical weights (std = 1/sqrt(fan_in)).
enum ScStatus sc_kernel_new_random(enum ScSymmetryClass class_,
                                   size_t kernel_size,
                                   size_t fan_in,
                                   uint64_t seed,
                                   struct ScKernel **out);

// Create a kernel from explicit canonical weights.
enum ScStatus sc_kernel_from_canonical(enum ScSymmetryClass class_,
                                       size_t kernel_size,
                                       const double *values,
                                       size_t len,
                                       struct ScKernel **out);

// Length of the kernel's canonical weight vector.
enum ScStatus sc_kernel_canonical_len(const struct ScKernel *kernel, size_t *out);

// Expand to the full row-major `kernel_size x kernel_size` filter.
// `buf` must hold `kernel_size * kernel_size` doubles.
enum ScStatus sc_kernel_expand(const struct ScKernel *kernel, double *buf, size_t buf_len);

void sc_kernel_free(struct ScKernel *kernel);

// Build the 4-layer digit classifier for a condition name like "L-T2B-R".
enum ScStatus sc_network_new(const char *condition,
                             enum ScT2bMode t2b_mode,
                             uint64_t seed,
                             struct ScNetwork **out);

// Load a network from a JSON checkpoint file.
enum ScStatus sc_network_load(const char *path, struct ScNetwork **out);

// Save a network to a JSON checkpoint file.
enum ScStatus sc_network_save(const struct ScNetwork *network, const char *path);

// Side length of the square input expected by the network.
enum ScStatus sc_network_input_size(const struct ScNetwork *network, size_t *out);

// Number of output classes.
enum ScStatus sc_network_num_classes(const struct ScNetwork *network, size_t *out);

// Free-parameter counts: canonical conv weights vs dense weights+biases.
enum ScStatus sc_network_param_counts(const struct ScNetwork *network,
                                      size_t *features,
                                      size_t *classifier);

// Class probabilities for a row-major square image of
// `input_size * input_size` doubles. `probs` must hold one double per
// class.
enum ScStatus sc_network_predict(const struct ScNetwork *network,
                                 const double *image,
                                 size_t image_len,
                                 double *probs,
                                 size_t probs_len);

void sc_network_free(struct ScNetwork *network);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
