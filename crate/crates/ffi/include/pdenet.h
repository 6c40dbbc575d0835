#ifndef PDENET_H
#define PDENET_H

#include <stddef.h>
#include <stdint.h>

/*
 Result codes of every fallible call.
 */
typedef enum PdenetStatus {
  PDENET_STATUS_OK = 0,
  PDENET_STATUS_NULL_POINTER = 1,
  PDENET_STATUS_INVALID_ARGUMENT = 2,
  PDENET_STATUS_SHAPE = 3,
  PDENET_STATUS_DEGENERATE = 4,
  PDENET_STATUS_DIVERGENCE = 5,
  PDENET_STATUS_CONFIG = 6,
  PDENET_STATUS_IO = 7,
  PDENET_STATUS_PARSE = 8,
  PDENET_STATUS_PANIC = 9,
} PdenetStatus;

/*
 Opaque model handle.
 */
typedef struct PdenetModel PdenetModel;

/*
 Message for the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *pdenet_last_error(void);

/*
 Loads a model checkpoint written by the `pdenet` CLI.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdenetStatus pdenet_model_load(const char *path, struct PdenetModel **out);

/*
 Parses a model from checkpoint JSON text.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdenetStatus pdenet_model_from_json(const char *json, struct PdenetModel **out);

/*
 Builds the model that represents the config's true PDE exactly.

 # Safety
 `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdenetStatus pdenet_model_exact(const char *config_json, struct PdenetModel **out);

/*
 Releases a model. NULL is ignored.

 # Safety
 `model` must come from a pdenet constructor and not be used afterwards.
 */
void pdenet_model_free(struct PdenetModel *model);

/*
 Number of components and grid size of a model.

 # Safety
 Pointers must be valid.
 */
enum PdenetStatus pdenet_model_shape(const struct PdenetModel *model,
                                     size_t *components,
                                     size_t *nx,
                                     size_t *ny);

/*
 Time step of one block.

 # Safety
 Pointers must be valid.
 */
enum PdenetStatus pdenet_model_dt(const struct PdenetModel *model, double *dt);

/*
 One block: `output = input + dt·F(D input)`. Both buffers hold `len`
 values; they may not overlap.

 # Safety
 Buffers must hold `len` values.
 */
enum PdenetStatus pdenet_model_step(const struct PdenetModel *model,
                                    const double *input,
                                    double *output,
                                    size_t len);

/*
 `n_steps` chained blocks from `input` (`len` values). `output` receives
 the `n_steps` predicted states back to back (`n_steps·len` values). On
 divergence the states before it are written, the rest is NaN and the
 status is `Divergence`.

 # Safety
 `input` must hold `len` values and `output` `n_steps·len` values.
 */
enum PdenetStatus pdenet_model_rollout(const struct PdenetModel *model,
                                       const double *input,
                                       size_t len,
                                       size_t n_steps,
                                       double *output);

/*
 The recovered right-hand side of `component`, e.g.
 `u_t = -0.98*u*u_x + …`, omitting terms below `threshold`. Release the
 string with [`pdenet_string_free`].

 # Safety
 `model` and `out` must be valid.
 */
enum PdenetStatus pdenet_model_equation(const struct PdenetModel *model,
                                        size_t component,
                                        double threshold,
                                        char **out);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void pdenet_string_free(char *s);

/*
 Mean-centred relative error `‖pred − truth‖² / ‖truth − mean(truth)‖²`
 summed over components of `nx×ny` grids.

 # Safety
 Both buffers must hold `components·nx·ny` values.
 */
enum PdenetStatus pdenet_relative_error(const double *truth,
                                        const double *pred,
                                        size_t components,
                                        size_t nx,
                                        size_t ny,
                                        double *out);

/*
 Simulates one clean coarse trajectory of the config's PDE from a random
 initial condition drawn with `seed`. `output` receives `n_steps + 1`
 states (`(n_steps+1)·components·n²` values, `n` the coarse size).

 # Safety
 `config_json` must be NUL-terminated; `output` must hold `len` values.
 */
enum PdenetStatus pdenet_simulate(const char *config_json,
                                  uint64_t seed,
                                  size_t n_steps,
                                  double *output,
                                  size_t len);

#endif  /* PDENET_H */
