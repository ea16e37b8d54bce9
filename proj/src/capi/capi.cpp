#include "mixedflow/mixedflow.h"

#include <cstring>
#include <iostream>
#include <map>
#include <new>
#include <string>

#include "core/config.hpp"
#include "core/harness.hpp"
#include "core/sim.hpp"

using namespace mixedflow;

struct mf_config {
    Config cfg;
};

struct mf_sim {
    Config cfg;
    Simulator sim;
    bool dead = false; // a collision leaves the state unusable
};

namespace {

thread_local std::string g_lastError;

mf_status failure(mf_status code, const char* what) {
    g_lastError = what ? what : "unknown error";
    return code;
}

// Runs `fn` and maps the error taxonomy onto status codes.
template <typename Fn> mf_status guarded(Fn&& fn) {
    try {
        fn();
        g_lastError.clear();
        return MF_OK;
    } catch (const ConfigError& e) {
        return failure(MF_ERR_CONFIG, e.what());
    } catch (const IoError& e) {
        return failure(MF_ERR_IO, e.what());
    } catch (const DomainError& e) {
        return failure(MF_ERR_DOMAIN, e.what());
    } catch (const InvariantError& e) {
        return failure(MF_ERR_RUNTIME, e.what());
    } catch (const Error& e) {
        return failure(MF_ERR_RUNTIME, e.what());
    } catch (const std::bad_alloc&) {
        return failure(MF_ERR_RUNTIME, "out of memory");
    } catch (const std::exception& e) {
        return failure(MF_ERR_RUNTIME, e.what());
    }
}

char* copyString(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

mf_status requireArg(const void* p, const char* name) {
    if (p) return MF_OK;
    return failure(MF_ERR_CONFIG, (std::string(name) + " must not be null").c_str());
}

std::ostream* logFor(int verbose) { return verbose ? &std::cerr : nullptr; }

} // namespace

extern "C" {

const char* mf_last_error(void) { return g_lastError.c_str(); }

void mf_string_free(char* s) { delete[] s; }

/* --- configuration -------------------------------------------------------- */

mf_status mf_config_create(mf_config** out) {
    if (mf_status st = requireArg(out, "out"); st != MF_OK) return st;
    return guarded([&] { *out = new mf_config{Config{}}; });
}

mf_status mf_config_from_json(const char* json_text, mf_config** out) {
    if (mf_status st = requireArg(json_text, "json_text"); st != MF_OK) return st;
    if (mf_status st = requireArg(out, "out"); st != MF_OK) return st;
    return guarded([&] { *out = new mf_config{Config::fromJsonText(json_text)}; });
}

mf_status mf_config_from_file(const char* path, mf_config** out) {
    if (mf_status st = requireArg(path, "path"); st != MF_OK) return st;
    if (mf_status st = requireArg(out, "out"); st != MF_OK) return st;
    return guarded([&] { *out = new mf_config{Config::fromFile(path)}; });
}

mf_status mf_config_apply_preset(mf_config* cfg, const char* preset) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(preset, "preset"); st != MF_OK) return st;
    return guarded([&] { cfg->cfg.applyPreset(preset); });
}

mf_status mf_config_set(mf_config* cfg, const char* key, const char* value) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(key, "key"); st != MF_OK) return st;
    if (mf_status st = requireArg(value, "value"); st != MF_OK) return st;
    return guarded([&] { cfg->cfg.setPath(key, value); });
}

mf_status mf_config_dump(const mf_config* cfg, char** json_out) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(json_out, "json_out"); st != MF_OK) return st;
    return guarded([&] { *json_out = copyString(cfg->cfg.toJsonText()); });
}

mf_status mf_config_scenario_slug(const mf_config* cfg, char** slug_out) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(slug_out, "slug_out"); st != MF_OK) return st;
    return guarded([&] { *slug_out = copyString(cfg->cfg.scenarioSlug()); });
}

void mf_config_destroy(mf_config* cfg) { delete cfg; }

/* --- simulation ------------------------------------------------------------ */

mf_status mf_sim_create(const mf_config* cfg, uint64_t seed, mf_sim** out) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(out, "out"); st != MF_OK) return st;
    return guarded([&] {
        cfg->cfg.validate();
        *out = new mf_sim{cfg->cfg, Simulator(cfg->cfg, seed)};
    });
}

void mf_sim_destroy(mf_sim* sim) { delete sim; }

int32_t mf_sim_vehicle_count(const mf_sim* sim) {
    return sim ? static_cast<int32_t>(sim->sim.vehicles().size()) : 0;
}

double mf_sim_time(const mf_sim* sim) { return sim ? sim->sim.time() : 0.0; }

mf_status mf_sim_vehicles(const mf_sim* sim, mf_vehicle_view* out, int32_t cap,
                          int32_t* n_out) {
    if (mf_status st = requireArg(sim, "sim"); st != MF_OK) return st;
    if (mf_status st = requireArg(n_out, "n_out"); st != MF_OK) return st;
    if (cap > 0 && !out) return failure(MF_ERR_CONFIG, "out must not be null when cap > 0");
    const auto& vs = sim->sim.vehicles();
    *n_out = static_cast<int32_t>(vs.size());
    int32_t n = std::min<int32_t>(cap, *n_out);
    for (int32_t i = 0; i < n; ++i) {
        const Vehicle& v = vs[static_cast<size_t>(i)];
        out[i] = mf_vehicle_view{v.id,
                                 v.cls == VehicleClass::Automated ? 2 : 1,
                                 v.lane,
                                 v.pos,
                                 v.speed,
                                 v.maxSpeed,
                                 v.length,
                                 v.laneChangeCount};
    }
    g_lastError.clear();
    return MF_OK;
}

mf_status mf_sim_step(mf_sim* sim, const int32_t* av_ids, const int32_t* av_actions,
                      int32_t n) {
    if (mf_status st = requireArg(sim, "sim"); st != MF_OK) return st;
    if (n > 0 && (!av_ids || !av_actions))
        return failure(MF_ERR_CONFIG, "av_ids/av_actions must not be null when n > 0");
    if (sim->dead)
        return failure(MF_ERR_RUNTIME, "simulation is unusable after a collision");
    return guarded([&] {
        std::map<int, Action> actions;
        for (int32_t i = 0; i < n; ++i) {
            if (av_actions[i] < 0 || av_actions[i] > 2)
                throw ConfigError("action must be 0 (left), 1 (right), or 2 (keep)");
            actions[av_ids[i]] = static_cast<Action>(av_actions[i]);
        }
        try {
            sim->sim.step(actions);
        } catch (const CollisionError&) {
            sim->dead = true;
            throw;
        }
    });
}

/* --- equilibrium -------------------------------------------------------------- */

mf_status mf_equilibrium_json(const mf_config* cfg, double rho1_vpkm, double rho2_vpkm,
                              double lambda, char** json_out) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(json_out, "json_out"); st != MF_OK) return st;
    return guarded([&] {
        *json_out = copyString(equilibriumJson(cfg->cfg, rho1_vpkm, rho2_vpkm, lambda));
    });
}

/* --- run drivers ---------------------------------------------------------------- */

mf_status mf_run_train(const mf_config* cfg, uint64_t seed, const char* out_root,
                       const char* resume_checkpoint, int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded([&] {
        runTrain(cfg->cfg, seed, out_root, resume_checkpoint ? resume_checkpoint : "",
                 logFor(verbose));
    });
}

mf_status mf_run_evaluate(const mf_config* cfg, uint64_t seed, const char* out_root,
                          const char* checkpoint, int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded([&] {
        runEvaluate(cfg->cfg, seed, out_root, checkpoint ? checkpoint : "", logFor(verbose));
    });
}

mf_status mf_run_baseline(const mf_config* cfg, uint64_t seed, const char* out_root,
                          int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded([&] { runBaseline(cfg->cfg, seed, out_root, logFor(verbose)); });
}

mf_status mf_run_compare(const mf_config* cfg, const char* runs_root, const char* out_root,
                         double lambda_override, int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(runs_root, "runs_root"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded([&] {
        runCompare(cfg->cfg, runs_root, out_root, lambda_override, logFor(verbose));
    });
}

mf_status mf_estimate_lambda(const mf_config* cfg, const char* runs_root,
                             const char* out_root, int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(runs_root, "runs_root"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded(
        [&] { runEstimateLambda(cfg->cfg, runs_root, out_root, logFor(verbose)); });
}

mf_status mf_lambda_regression(const mf_config* cfg, const char* runs_root,
                               const char* out_root, int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(runs_root, "runs_root"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded(
        [&] { runLambdaRegression(cfg->cfg, runs_root, out_root, logFor(verbose)); });
}

mf_status mf_run_matrix(const mf_config* cfg, uint64_t seed, const char* mode,
                        const char* out_root, int threads, int verbose) {
    if (mf_status st = requireArg(cfg, "cfg"); st != MF_OK) return st;
    if (mf_status st = requireArg(mode, "mode"); st != MF_OK) return st;
    if (mf_status st = requireArg(out_root, "out_root"); st != MF_OK) return st;
    return guarded([&] {
        int t = threads > 0 ? threads : threadsFromEnv();
        MatrixReport report = runMatrix(cfg->cfg, seed, mode, out_root, t, logFor(verbose));
        if (report.cellsFailed > 0)
            throw Error(std::to_string(report.cellsFailed) + " of " +
                        std::to_string(report.cellsTotal) +
                        " matrix cells failed; see matrix_report.json");
    });
}

} // extern "C"
