// Command-line front end. Talks to the library exclusively through the C API.
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixedflow/mixedflow.h"

namespace {

struct ConfigHandle {
    mf_config* c = nullptr;
    ~ConfigHandle() {
        if (c) mf_config_destroy(c);
    }
};

int exitCodeFor(mf_status st) {
    if (st == MF_OK) return 0;
    return st == MF_ERR_RUNTIME ? 3 : 2;
}

int fail(mf_status st) {
    std::fprintf(stderr, "error: %s\n", mf_last_error());
    return exitCodeFor(st);
}

struct CommonOpts {
    std::string configFile;
    std::string preset;
    std::string scenario;
    std::vector<std::string> sets;
    std::string out = "runs";
    uint64_t seed = 1;
    bool quiet = false;
};

void addCommon(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.configFile, "JSON configuration file");
    cmd->add_option("--preset", o.preset, "configuration preset: full or desk");
    cmd->add_option("--scenario", o.scenario,
                    "scenario slug like d40_p50 (density vpm/lane, AV share %)");
    cmd->add_option("--set", o.sets, "dotted config override, key=value (repeatable)");
    cmd->add_option("--seed", o.seed, "master random seed");
    cmd->add_option("--out", o.out, "artifact root directory");
    cmd->add_flag("--quiet", o.quiet, "suppress progress output");
}

bool parseNumber(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

// d<density>_p<percent> -> density vpm/lane and AV fraction
bool parseSlug(const std::string& slug, std::string& density, std::string& penetration) {
    if (slug.size() < 4 || slug[0] != 'd') return false;
    size_t sep = slug.find("_p");
    if (sep == std::string::npos || sep < 2 || sep + 2 >= slug.size()) return false;
    std::string d = slug.substr(1, sep - 1);
    std::string p = slug.substr(sep + 2);
    double dv, pv;
    if (!parseNumber(d, dv) || !parseNumber(p, pv)) return false;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", dv);
    density = buf;
    std::snprintf(buf, sizeof buf, "%.17g", pv / 100.0);
    penetration = buf;
    return true;
}

// 0 on success, shell exit code otherwise
int buildConfig(const CommonOpts& o, ConfigHandle& cfg) {
    mf_status st = o.configFile.empty() ? mf_config_create(&cfg.c)
                                        : mf_config_from_file(o.configFile.c_str(), &cfg.c);
    if (st != MF_OK) return fail(st);
    if (!o.preset.empty()) {
        if ((st = mf_config_apply_preset(cfg.c, o.preset.c_str())) != MF_OK) return fail(st);
    }
    if (!o.scenario.empty()) {
        std::string density, penetration;
        if (!parseSlug(o.scenario, density, penetration)) {
            std::fprintf(stderr, "error: bad --scenario '%s' (expected e.g. d40_p50)\n",
                         o.scenario.c_str());
            return 2;
        }
        if ((st = mf_config_set(cfg.c, "scenario.density_vpm_lane", density.c_str())) !=
            MF_OK)
            return fail(st);
        if ((st = mf_config_set(cfg.c, "scenario.av_penetration", penetration.c_str())) !=
            MF_OK)
            return fail(st);
    }
    for (const std::string& kv : o.sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            return 2;
        }
        std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if ((st = mf_config_set(cfg.c, key.c_str(), value.c_str())) != MF_OK) return fail(st);
    }
    return 0;
}

std::string jsonList(const std::vector<double>& v) {
    std::string out = "[";
    char buf[64];
    for (size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        if (i) out += ",";
        out += buf;
    }
    return out + "]";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixed-autonomy ring-road traffic laboratory"};
    app.require_subcommand(1);

    CommonOpts trainOpts, evalOpts, baseOpts, compareOpts, eqOpts, lambdaOpts, regOpts,
        matrixOpts, configOpts;

    auto* train = app.add_subcommand("train", "train the lane-change policy");
    addCommon(train, trainOpts);
    std::string resume;
    train->add_option("--resume", resume, "checkpoint to continue from");

    auto* evaluate = app.add_subcommand("evaluate", "run the trained policy");
    addCommon(evaluate, evalOpts);
    std::string checkpoint;
    evaluate->add_option("--checkpoint", checkpoint,
                         "checkpoint file (default <out>/<scenario>/train/checkpoint.mfq)");
    int logEvery = 0;
    evaluate->add_option("--log-every", logEvery, "trajectory decimation factor, ticks");

    auto* baseline = app.add_subcommand("baseline", "run the no-control reference");
    addCommon(baseline, baseOpts);
    int baseLogEvery = 0;
    baseline->add_option("--log-every", baseLogEvery, "trajectory decimation factor, ticks");

    auto* compare = app.add_subcommand("compare",
                                       "benchmark runs against the bargaining model");
    addCommon(compare, compareOpts);
    std::string compareRuns;
    compare->add_option("--runs", compareRuns, "run root to read (default --out)");
    double lambdaOverride = -1.0;
    compare->add_option("--lambda", lambdaOverride,
                        "fix the surplus split instead of estimating it");

    auto* equilibrium = app.add_subcommand("equilibrium", "solve one bargaining equilibrium");
    addCommon(equilibrium, eqOpts);
    double rho1 = 0, rho2 = 0, eqLambda = -1.0;
    equilibrium->add_option("--rho1", rho1, "class 1 (human) density, veh/km/lane")
        ->required();
    equilibrium->add_option("--rho2", rho2, "class 2 (automated) density, veh/km/lane")
        ->required();
    equilibrium->add_option("--lambda", eqLambda,
                            "surplus split factor (default: configured value)");

    auto* estLambda = app.add_subcommand("estimate-lambda",
                                         "fit the surplus split to measurements");
    addCommon(estLambda, lambdaOpts);
    std::string lambdaRuns;
    estLambda->add_option("--runs", lambdaRuns,
                          "run root or a single measurement CSV (default --out)");

    auto* regression = app.add_subcommand(
        "lambda-regression", "regress cooperation surplus on spatial-metric improvement");
    addCommon(regression, regOpts);
    std::string regRuns;
    regression->add_option("--runs", regRuns, "run root to read (default --out)");

    auto* matrix = app.add_subcommand("matrix", "run every scenario cell");
    addCommon(matrix, matrixOpts);
    std::string matrixMode = "all";
    matrix->add_option("--mode", matrixMode, "train, evaluate, baseline, or all");
    std::vector<double> densities, penetrations;
    matrix->add_option("--densities", densities, "density cells, vpm/lane");
    matrix->add_option("--penetrations", penetrations, "AV share cells, fraction");
    int threads = 0;
    matrix->add_option("--threads", threads, "worker pool size (default MIXEDFLOW_THREADS)");

    auto* config = app.add_subcommand("config", "configuration utilities");
    auto* configPrint = config->add_subcommand("print", "dump the effective configuration");
    addCommon(configPrint, configOpts);
    config->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    mf_status st = MF_OK;

    if (*train) {
        ConfigHandle cfg;
        if (int rc = buildConfig(trainOpts, cfg)) return rc;
        st = mf_run_train(cfg.c, trainOpts.seed, trainOpts.out.c_str(),
                          resume.empty() ? nullptr : resume.c_str(), !trainOpts.quiet);
    } else if (*evaluate) {
        ConfigHandle cfg;
        if (int rc = buildConfig(evalOpts, cfg)) return rc;
        if (logEvery > 0) {
            std::string v = std::to_string(logEvery);
            if ((st = mf_config_set(cfg.c, "evaluation.log_every", v.c_str())) != MF_OK)
                return fail(st);
        }
        st = mf_run_evaluate(cfg.c, evalOpts.seed, evalOpts.out.c_str(),
                             checkpoint.empty() ? nullptr : checkpoint.c_str(),
                             !evalOpts.quiet);
    } else if (*baseline) {
        ConfigHandle cfg;
        if (int rc = buildConfig(baseOpts, cfg)) return rc;
        if (baseLogEvery > 0) {
            std::string v = std::to_string(baseLogEvery);
            if ((st = mf_config_set(cfg.c, "evaluation.log_every", v.c_str())) != MF_OK)
                return fail(st);
        }
        st = mf_run_baseline(cfg.c, baseOpts.seed, baseOpts.out.c_str(), !baseOpts.quiet);
    } else if (*compare) {
        ConfigHandle cfg;
        if (int rc = buildConfig(compareOpts, cfg)) return rc;
        const std::string& runs = compareRuns.empty() ? compareOpts.out : compareRuns;
        st = mf_run_compare(cfg.c, runs.c_str(), compareOpts.out.c_str(), lambdaOverride,
                            !compareOpts.quiet);
    } else if (*equilibrium) {
        ConfigHandle cfg;
        if (int rc = buildConfig(eqOpts, cfg)) return rc;
        char* json = nullptr;
        st = mf_equilibrium_json(cfg.c, rho1, rho2, eqLambda, &json);
        if (st == MF_OK) {
            std::fputs(json, stdout);
            mf_string_free(json);
        }
    } else if (*estLambda) {
        ConfigHandle cfg;
        if (int rc = buildConfig(lambdaOpts, cfg)) return rc;
        const std::string& runs = lambdaRuns.empty() ? lambdaOpts.out : lambdaRuns;
        st = mf_estimate_lambda(cfg.c, runs.c_str(), lambdaOpts.out.c_str(),
                                !lambdaOpts.quiet);
    } else if (*regression) {
        ConfigHandle cfg;
        if (int rc = buildConfig(regOpts, cfg)) return rc;
        const std::string& runs = regRuns.empty() ? regOpts.out : regRuns;
        st = mf_lambda_regression(cfg.c, runs.c_str(), regOpts.out.c_str(), !regOpts.quiet);
    } else if (*matrix) {
        ConfigHandle cfg;
        if (int rc = buildConfig(matrixOpts, cfg)) return rc;
        if (!densities.empty()) {
            std::string v = jsonList(densities);
            if ((st = mf_config_set(cfg.c, "matrix.densities", v.c_str())) != MF_OK)
                return fail(st);
        }
        if (!penetrations.empty()) {
            std::string v = jsonList(penetrations);
            if ((st = mf_config_set(cfg.c, "matrix.penetrations", v.c_str())) != MF_OK)
                return fail(st);
        }
        st = mf_run_matrix(cfg.c, matrixOpts.seed, matrixMode.c_str(),
                           matrixOpts.out.c_str(), threads, !matrixOpts.quiet);
    } else if (*configPrint) {
        ConfigHandle cfg;
        if (int rc = buildConfig(configOpts, cfg)) return rc;
        char* json = nullptr;
        st = mf_config_dump(cfg.c, &json);
        if (st == MF_OK) {
            std::fputs(json, stdout);
            std::fputc('\n', stdout);
            mf_string_free(json);
        }
    }

    if (st != MF_OK) return fail(st);
    return 0;
}
