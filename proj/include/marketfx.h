/* marketfx - treatment-effect estimation under market-price interference.
 *
 * C interface to the simulation and estimation toolkit: opaque handles,
 * integer status codes, JSON strings for structured results.  All functions
 * return MFX_OK on success; on failure mfx_last_error() describes the
 * problem for the calling thread.  Strings returned through char** must be
 * released with mfx_string_free(); handles with their *_free() function.
 */

#ifndef MARKETFX_H
#define MARKETFX_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define MFX_OK 0
#define MFX_ERR_RUNTIME 1 /* computational failure (solver, singularity, I/O) */
#define MFX_ERR_INVALID 2 /* invalid arguments or configuration */

typedef struct mfx_scenario mfx_scenario;
typedef struct mfx_dataset mfx_dataset;

/* Thread-local message describing the last error on this thread. */
const char* mfx_last_error(void);

void mfx_string_free(char* s);

/* --- scenarios ---------------------------------------------------------- */

/* id: "tech-intervention", "goat-hay-subsidy" or "smooth-logistic".
 * params_json: scenario parameter overrides as a JSON object, or NULL. */
int mfx_scenario_create(const char* id, const char* params_json, mfx_scenario** out);
void mfx_scenario_free(mfx_scenario* sc);

/* Basic scenario facts (box, goods count, treatment kind) as JSON. */
int mfx_scenario_describe(const mfx_scenario* sc, char** json_out);

/* --- experiment design --------------------------------------------------- */

typedef struct mfx_design {
  double pi;          /* treatment probability, strictly in (0,1) */
  double h_scale;     /* h_n = h_scale * n^(-h_exponent) */
  double h_exponent;  /* strictly inside (1/4, 1/2) */
  double xi_scale;    /* continuous designs: xi_n = xi_scale * n^(-xi_exponent) */
  double xi_exponent; /* strictly inside (1/4, 1/2) */
  double eta;         /* continuous designs: policy level */
  int continuous;     /* 0 = binary treatment, 1 = continuous */
} mfx_design;

/* Defaults appropriate for the given scenario's treatment kind. */
int mfx_design_default(const mfx_scenario* sc, mfx_design* out);

/* --- mean-field oracle --------------------------------------------------- */

/* Solves the mean-field equilibrium and evaluates effects, price
 * sensitivities, variance oracles and the contraction diagnostic.  For
 * continuous scenarios `eta_override` replaces the scenario's policy level
 * unless NaN.  Result fields: p_star, z_jacobian, dpdpi, tau_ade_star,
 * tau_aie_star, tau_mpe_star, tau_dpe_star, tau_ipe_star, grad_y, gamma,
 * sigma2_D, sigma2_I, residual_var, clearing_residual, contraction. */
int mfx_mean_field(const mfx_scenario* sc, double pi, double eta_override, char** json_out);

/* --- single experiment --------------------------------------------------- */

int mfx_experiment_run(const mfx_scenario* sc, int n, const mfx_design* design, uint64_t seed,
                       mfx_dataset** out);
void mfx_dataset_free(mfx_dataset* ds);

/* CSV columns: i, W, U_1..U_J, Y, D_1..D_J, S_1..S_J, Z_1..Z_J. */
int mfx_dataset_write_csv(const mfx_dataset* ds, const char* path);

/* Sidecar metadata (p_tilde, h_n, pi, seed, clearing residual). */
int mfx_dataset_metadata(const mfx_dataset* ds, char** json_out);

/* All estimators of Eqs. 7-11 (and the MPE rescaling for continuous
 * designs) with full-precision intermediates. */
int mfx_estimate(const mfx_dataset* ds, double level, char** json_out);

/* --- Monte Carlo replication -------------------------------------------- */

/* Runs `reps` seeded experiments and aggregates mean/sd/bias/coverage per
 * estimand against the mean-field oracle.  threads = 0 uses all cores; the
 * result is identical for any thread count.  Optional artifacts:
 *   per_rep_csv_path   - per-replication estimates, one row per replication
 *   density_csv_path   - kernel-density curve (grid, density columns)
 *   density_estimand   - which estimand to run the density on (e.g. "MPE";
 *                        defaults to "ADE"/"MPE" by treatment kind)
 * summary_csv_out may be NULL if only JSON is wanted. */
int mfx_replicate(const mfx_scenario* sc, const mfx_design* design, int n, int reps,
                  uint64_t base_seed, int threads, double level, const char* per_rep_csv_path,
                  const char* density_csv_path, const char* density_estimand, char** summary_json_out,
                  char** summary_csv_out);

/* --- sufficient-statistic calculator ------------------------------------- */

/* tau_AIE = kappa_s * tau_ADE / (kappa_d - kappa_s). */
int mfx_aie_from_elasticities(double kappa_s, double kappa_d, double tau_ade, double* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MARKETFX_H */
