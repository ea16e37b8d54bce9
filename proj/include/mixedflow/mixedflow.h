/* C interface to the mixedflow library. All entry points return an
 * mf_status; on failure mf_last_error() holds a message for the calling
 * thread. Handles are opaque and must be released with their destroy call. */
#ifndef MIXEDFLOW_MIXEDFLOW_H
#define MIXEDFLOW_MIXEDFLOW_H

#include <stdint.h>

#if defined(_WIN32)
#define MF_API __declspec(dllexport)
#else
#define MF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mf_status {
    MF_OK = 0,
    MF_ERR_CONFIG = 2,  /* bad configuration, arguments, or checkpoint mismatch */
    MF_ERR_RUNTIME = 3, /* invariant failure at runtime, incl. collisions */
    MF_ERR_IO = 4,      /* missing or malformed files */
    MF_ERR_DOMAIN = 5   /* numeric routine handed out-of-domain inputs */
} mf_status;

/* Message for the most recent failure on this thread; "" when none. The
 * pointer stays valid until the next failing call on the same thread. */
MF_API const char* mf_last_error(void);

/* Release a string returned through a char** out-parameter. */
MF_API void mf_string_free(char* s);

/* --- configuration -------------------------------------------------------- */

typedef struct mf_config mf_config;

MF_API mf_status mf_config_create(mf_config** out);
MF_API mf_status mf_config_from_json(const char* json_text, mf_config** out);
MF_API mf_status mf_config_from_file(const char* path, mf_config** out);
MF_API mf_status mf_config_apply_preset(mf_config* cfg, const char* preset);
/* Dotted snake_case key, e.g. "scenario.density_vpm_lane", "dqn.hidden". */
MF_API mf_status mf_config_set(mf_config* cfg, const char* key, const char* value);
MF_API mf_status mf_config_dump(const mf_config* cfg, char** json_out);
MF_API mf_status mf_config_scenario_slug(const mf_config* cfg, char** slug_out);
MF_API void mf_config_destroy(mf_config* cfg);

/* --- simulation ------------------------------------------------------------ */

typedef struct mf_sim mf_sim;

typedef struct mf_vehicle_view {
    int32_t id;
    int32_t klass; /* 1 = human-driven, 2 = automated */
    int32_t lane;  /* 0 = rightmost */
    double pos_m;  /* front bumper arc position */
    double speed_mps;
    double max_speed_mps;
    double length_m;
    int64_t lane_changes;
} mf_vehicle_view;

enum {
    MF_ACTION_CHANGE_LEFT = 0,
    MF_ACTION_CHANGE_RIGHT = 1,
    MF_ACTION_KEEP_LANE = 2
};

MF_API mf_status mf_sim_create(const mf_config* cfg, uint64_t seed, mf_sim** out);
MF_API void mf_sim_destroy(mf_sim* sim);

MF_API int32_t mf_sim_vehicle_count(const mf_sim* sim);
MF_API double mf_sim_time(const mf_sim* sim);

/* Copies up to `cap` vehicle states into `out`; *n_out gets the fleet size. */
MF_API mf_status mf_sim_vehicles(const mf_sim* sim, mf_vehicle_view* out, int32_t cap,
                                 int32_t* n_out);

/* Advance one tick. av_ids/av_actions give lane-change commands for automated
 * vehicles (n entries, MF_ACTION_*); ids not listed keep their lane. Human
 * drivers decide for themselves. A collision fails with MF_ERR_RUNTIME and
 * leaves the simulation unusable. */
MF_API mf_status mf_sim_step(mf_sim* sim, const int32_t* av_ids, const int32_t* av_actions,
                             int32_t n);

/* --- bargaining equilibrium ------------------------------------------------- */

/* Solves the road-sharing game at per-lane class densities (veh/km) and the
 * given surplus split (lambda < 0 uses the configured value); writes a JSON
 * description to *json_out. */
MF_API mf_status mf_equilibrium_json(const mf_config* cfg, double rho1_vpkm, double rho2_vpkm,
                                     double lambda, char** json_out);

/* --- run drivers ------------------------------------------------------------- */
/* These write artifact directories under out_root (see README). verbose != 0
 * streams progress to stderr. */

MF_API mf_status mf_run_train(const mf_config* cfg, uint64_t seed, const char* out_root,
                              const char* resume_checkpoint /* NULL = fresh */, int verbose);
MF_API mf_status mf_run_evaluate(const mf_config* cfg, uint64_t seed, const char* out_root,
                                 const char* checkpoint /* NULL = <out_root> default */,
                                 int verbose);
MF_API mf_status mf_run_baseline(const mf_config* cfg, uint64_t seed, const char* out_root,
                                 int verbose);
MF_API mf_status mf_run_compare(const mf_config* cfg, const char* runs_root,
                                const char* out_root,
                                double lambda_override /* < 0 = estimate */, int verbose);
MF_API mf_status mf_estimate_lambda(const mf_config* cfg, const char* runs_root,
                                    const char* out_root, int verbose);
MF_API mf_status mf_lambda_regression(const mf_config* cfg, const char* runs_root,
                                      const char* out_root, int verbose);
/* mode: "train", "evaluate", "baseline", or "all". threads <= 0 reads
 * MIXEDFLOW_THREADS (default 1). */
MF_API mf_status mf_run_matrix(const mf_config* cfg, uint64_t seed, const char* mode,
                               const char* out_root, int threads, int verbose);

#ifdef __cplusplus
}
#endif

#endif /* MIXEDFLOW_MIXEDFLOW_H */
