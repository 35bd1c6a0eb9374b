/* C API for the dragforge pulse-shaping library.
 *
 * Conventions:
 *   - Objects are opaque pointers; create with the dragforge_*_ constructors
 *     and release with the matching dragforge_*_free. Freeing NULL is a no-op.
 *   - Fallible calls return a dragforge_status (DRAGFORGE_OK on success) and
 *     write results through out-pointers, untouched on error.
 *   - dragforge_last_error() returns the message for the most recent error
 *     on the calling thread; the pointer is owned by the library.
 *   - Strings are NUL-terminated UTF-8.
 */

#ifndef DRAGFORGE_H
#define DRAGFORGE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dragforge_status {
  DRAGFORGE_OK = 0,
  DRAGFORGE_NULL_POINTER = 1,     /* a required pointer argument was NULL */
  DRAGFORGE_INVALID_ARGUMENT = 2, /* argument failed validation */
  DRAGFORGE_INVALID_REGIME = 3,   /* construction outside its validity regime */
  DRAGFORGE_NUMERICAL_FAILURE = 4,/* non-convergence or singular system */
  DRAGFORGE_INTERNAL_PANIC = 5    /* caught panic; state may be stale */
} dragforge_status;

typedef struct dragforge_envelope dragforge_envelope; /* opaque */
typedef struct dragforge_pulse dragforge_pulse;       /* opaque */
typedef struct dragforge_model dragforge_model;       /* opaque */
typedef struct dragforge_unitary dragforge_unitary;   /* opaque */

/* Most recent error message on this thread ("" if none). Do not free. */
const char *dragforge_last_error(void);

/* --- envelopes --------------------------------------------------------- */

/* Truncated Gaussian with `flatness` vanishing endpoint derivatives,
 * area-normalized so the pulse implements a rotation by `theta` radians. */
dragforge_status dragforge_envelope_gaussian(double sigma, double duration,
                                             uint32_t flatness, double theta,
                                             dragforge_envelope **out);
void dragforge_envelope_free(dragforge_envelope *env);
dragforge_status dragforge_envelope_value(const dragforge_envelope *env,
                                          double t, double *out);

/* --- pulses ------------------------------------------------------------ */

/* Plain envelope, no correction. */
dragforge_status dragforge_pulse_bare(const dragforge_envelope *env,
                                      dragforge_pulse **out);

/* First-order multiplet: one spectral hole per offsets[i], derivative
 * orders 1..n_offsets. */
dragforge_status dragforge_pulse_multiplet(const dragforge_envelope *env,
                                           const double *offsets,
                                           size_t n_offsets,
                                           dragforge_pulse **out);

/* Exact doublet for a spectator at `delta` with coupling `lambda2`. */
dragforge_status dragforge_pulse_doublet_exact(const dragforge_envelope *env,
                                               double delta, double lambda2,
                                               dragforge_pulse **out);

/* Anharmonic-ladder correction, order 1..3. */
dragforge_status dragforge_pulse_ladder(const dragforge_envelope *env,
                                        double delta, double lambda,
                                        uint32_t order, dragforge_pulse **out);

/* Beyond-rotating-wave correction for a carrier at omega_d. */
dragforge_status dragforge_pulse_rwa(const dragforge_envelope *env,
                                     double omega_d, dragforge_pulse **out);

void dragforge_pulse_free(dragforge_pulse *pulse);

/* Control samples at time t; out-pointers may be NULL to skip a component. */
dragforge_status dragforge_pulse_sample(const dragforge_pulse *pulse, double t,
                                        double *re_omega, double *im_omega,
                                        double *detuning);

double dragforge_pulse_duration(const dragforge_pulse *pulse); /* NaN if NULL */
double dragforge_pulse_theta(const dragforge_pulse *pulse);    /* NaN if NULL */

/* |windowed Fourier transform| of the pulse at offset delta. */
dragforge_status dragforge_pulse_spectral_magnitude(const dragforge_pulse *pulse,
                                                    double delta, double *out);

/* --- models ------------------------------------------------------------ */

/* Disjoint qubits: entry 0 is the driven transition (offset 0, coupling 1);
 * the rest are spectators. */
dragforge_status dragforge_model_disjoint(const double *offsets,
                                          const double *couplings, size_t n,
                                          dragforge_model **out);

/* Anharmonic ladder with d levels, anharmonicity delta, and per-rung
 * couplings (entry 0 conventionally 1). */
dragforge_status dragforge_model_ladder(size_t d, double delta,
                                        const double *couplings,
                                        size_t n_couplings,
                                        dragforge_model **out);

void dragforge_model_free(dragforge_model *model);

/* --- propagation -------------------------------------------------------- */

/* method: 0 = exponential midpoint (2nd order), 1 = 4th-order Magnus.
 * steps_per_unit_time <= 0 and tolerance <= 0 select the defaults
 * (32 and 1e-10). */
dragforge_status dragforge_evolve(const dragforge_model *model,
                                  const dragforge_pulse *pulse, int32_t method,
                                  int64_t steps_per_unit_time, double tolerance,
                                  dragforge_unitary **out);

void dragforge_unitary_free(dragforge_unitary *u);
size_t dragforge_unitary_dimension(const dragforge_unitary *u); /* 0 if NULL */
double dragforge_unitary_defect(const dragforge_unitary *u);    /* NaN if NULL */
dragforge_status dragforge_unitary_entry(const dragforge_unitary *u, size_t row,
                                         size_t col, double *re, double *im);

/* --- experiment driver --------------------------------------------------- */

/* Run a named experiment ("sweep-time", "sweep-lambda", "sweep-epsilon",
 * "spectrum", "simulate", "rwa") against INI-format config text; *out_csv
 * receives the CSV report. Free it with dragforge_string_free. */
dragforge_status dragforge_run(const char *subcommand, const char *config_text,
                               char **out_csv);
void dragforge_string_free(char *s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DRAGFORGE_H */
