#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>
#include <unistd.h>

#include <json.hpp>

#include <mixedflow/mixedflow.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() / ("capi_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static inline int counter = 0;
};

std::string readFile(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string takeString(char* s) {
    REQUIRE(s != nullptr);
    std::string out = s;
    mf_string_free(s);
    return out;
}

// small scenario that trains and evaluates in seconds
std::string microJson() {
    json j;
    j["scenario"] = {{"density_vpm_lane", 25.0},
                     {"ring_length_m", 300.0},
                     {"n_lanes", 3},
                     {"av_penetration", 0.5},
                     {"loading_time_s", 20.0}};
    j["training"] = {{"episodes", 2}, {"warmup_episodes", 1}, {"episode_length_s", 80.0}};
    j["evaluation"] = {{"n_episodes", 1}, {"episode_length_s", 60.0}};
    j["dqn"] = {{"hidden", json::array({16})}, {"batch_size", 16}};
    j["matrix"] = {{"densities", json::array({25.0})},
                   {"penetrations", json::array({0.5})}};
    return j.dump();
}

struct ConfigHandle {
    mf_config* cfg = nullptr;
    explicit ConfigHandle(const std::string& text) {
        REQUIRE(mf_config_from_json(text.c_str(), &cfg) == MF_OK);
    }
    ConfigHandle() { REQUIRE(mf_config_create(&cfg) == MF_OK); }
    ~ConfigHandle() { mf_config_destroy(cfg); }
};

} // namespace

TEST_CASE("last error is empty until a call fails and clears on success") {
    CHECK(std::string(mf_last_error()).empty());

    CHECK(mf_config_create(nullptr) == MF_ERR_CONFIG);
    CHECK(!std::string(mf_last_error()).empty());

    mf_config* cfg = nullptr;
    REQUIRE(mf_config_create(&cfg) == MF_OK);
    CHECK(std::string(mf_last_error()).empty());
    mf_config_destroy(cfg);

    mf_string_free(nullptr); // must be a no-op
}

TEST_CASE("config handles create, dump, override, and reject bad input") {
    ConfigHandle h;

    char* text = nullptr;
    REQUIRE(mf_config_dump(h.cfg, &text) == MF_OK);
    json j = json::parse(takeString(text));
    CHECK(j["preset"] == "full");
    CHECK(j["scenario"]["density_vpm_lane"] == 40.0);
    CHECK(j["scenario"]["n_lanes"] == 3);

    char* slug = nullptr;
    REQUIRE(mf_config_scenario_slug(h.cfg, &slug) == MF_OK);
    CHECK(takeString(slug) == "d40_p50");

    REQUIRE(mf_config_set(h.cfg, "scenario.density_vpm_lane", "55") == MF_OK);
    REQUIRE(mf_config_scenario_slug(h.cfg, &slug) == MF_OK);
    CHECK(takeString(slug) == "d55_p50");

    REQUIRE(mf_config_set(h.cfg, "dqn.hidden", "[64,32]") == MF_OK);
    REQUIRE(mf_config_dump(h.cfg, &text) == MF_OK);
    j = json::parse(takeString(text));
    CHECK(j["dqn"]["hidden"] == json::array({64, 32}));

    CHECK(mf_config_set(h.cfg, "scenario.bogus", "1") == MF_ERR_CONFIG);
    CHECK(std::string(mf_last_error()).find("scenario.bogus") != std::string::npos);
    CHECK(mf_config_set(h.cfg, "nosuch.key", "1") == MF_ERR_CONFIG);
    CHECK(mf_config_set(h.cfg, "scenario.n_lanes", "\"three\"") == MF_ERR_CONFIG);
    CHECK(mf_config_set(h.cfg, nullptr, "1") == MF_ERR_CONFIG);

    // overrides are not validated until the config is used
    REQUIRE(mf_config_set(h.cfg, "scenario.dt_s", "-1") == MF_OK);
    mf_sim* sim = nullptr;
    CHECK(mf_sim_create(h.cfg, 1, &sim) == MF_ERR_CONFIG);
    CHECK(sim == nullptr);

    CHECK(mf_config_apply_preset(h.cfg, "desk") == MF_OK);
    REQUIRE(mf_config_dump(h.cfg, &text) == MF_OK);
    j = json::parse(takeString(text));
    CHECK(j["preset"] == "desk");
    CHECK(j["scenario"]["ring_length_m"] == 500.0);
    CHECK(j["training"]["episodes"] == 200);
    CHECK(mf_config_apply_preset(h.cfg, "pocket") == MF_ERR_CONFIG);

    mf_config* parsed = nullptr;
    CHECK(mf_config_from_json("{\"scenario\":{\"density_vpm_lane\":25}}", &parsed) == MF_OK);
    REQUIRE(mf_config_scenario_slug(parsed, &slug) == MF_OK);
    CHECK(takeString(slug) == "d25_p50");
    mf_config_destroy(parsed);

    parsed = nullptr;
    CHECK(mf_config_from_json("not json", &parsed) == MF_ERR_CONFIG);
    CHECK(mf_config_from_json("{\"bogus\":1}", &parsed) == MF_ERR_CONFIG);
    CHECK(mf_config_from_json(nullptr, &parsed) == MF_ERR_CONFIG);
    CHECK(mf_config_dump(nullptr, &text) == MF_ERR_CONFIG);
}

TEST_CASE("configs load from files") {
    TmpDir tmp;
    fs::path file = tmp.path / "cfg.json";
    {
        std::ofstream out(file);
        out << microJson();
    }
    mf_config* cfg = nullptr;
    REQUIRE(mf_config_from_file(file.string().c_str(), &cfg) == MF_OK);
    char* slug = nullptr;
    REQUIRE(mf_config_scenario_slug(cfg, &slug) == MF_OK);
    CHECK(takeString(slug) == "d25_p50");
    mf_config_destroy(cfg);

    CHECK(mf_config_from_file((tmp.path / "missing.json").string().c_str(), &cfg) ==
          MF_ERR_IO);
    CHECK(!std::string(mf_last_error()).empty());
}

TEST_CASE("simulations step and validate commands through the boundary") {
    ConfigHandle h(microJson());
    mf_sim* sim = nullptr;
    REQUIRE(mf_sim_create(h.cfg, 7, &sim) == MF_OK);

    CHECK(mf_sim_vehicle_count(sim) == 15);
    CHECK(mf_sim_time(sim) == 0.0);

    std::vector<mf_vehicle_view> views(15);
    int32_t n = 0;
    REQUIRE(mf_sim_vehicles(sim, views.data(), 15, &n) == MF_OK);
    REQUIRE(n == 15);
    int avCount = 0;
    int32_t someAv = -1, someHuman = -1;
    for (int i = 0; i < 15; ++i) {
        CHECK(views[i].id == i);
        CHECK((views[i].klass == 1 || views[i].klass == 2));
        CHECK(views[i].lane >= 0);
        CHECK(views[i].lane < 3);
        CHECK(views[i].pos_m >= 0.0);
        CHECK(views[i].pos_m < 300.0);
        CHECK(views[i].speed_mps == 0.0);
        CHECK(views[i].length_m == 5.0);
        CHECK(views[i].lane_changes == 0);
        if (views[i].klass == 2) {
            ++avCount;
            someAv = views[i].id;
        } else {
            someHuman = views[i].id;
        }
    }
    CHECK(avCount == 8);
    REQUIRE(someAv >= 0);
    REQUIRE(someHuman >= 0);

    // short buffers report the true fleet size
    std::vector<mf_vehicle_view> small(5);
    REQUIRE(mf_sim_vehicles(sim, small.data(), 5, &n) == MF_OK);
    CHECK(n == 15);
    CHECK(mf_sim_vehicles(sim, nullptr, 5, &n) == MF_ERR_CONFIG);
    CHECK(mf_sim_vehicles(sim, views.data(), 15, nullptr) == MF_ERR_CONFIG);

    REQUIRE(mf_sim_step(sim, nullptr, nullptr, 0) == MF_OK);
    CHECK(mf_sim_time(sim) == 0.5);

    int32_t ids[] = {someAv};
    int32_t keep[] = {MF_ACTION_KEEP_LANE};
    REQUIRE(mf_sim_step(sim, ids, keep, 1) == MF_OK);
    CHECK(mf_sim_time(sim) == 1.0);

    int32_t bad[] = {7};
    CHECK(mf_sim_step(sim, ids, bad, 1) == MF_ERR_CONFIG);
    CHECK(std::string(mf_last_error()).find("action") != std::string::npos);

    int32_t ghost[] = {9999};
    CHECK(mf_sim_step(sim, ghost, keep, 1) == MF_ERR_DOMAIN);

    int32_t human[] = {someHuman};
    CHECK(mf_sim_step(sim, human, keep, 1) == MF_ERR_DOMAIN);

    CHECK(mf_sim_step(sim, nullptr, keep, 1) == MF_ERR_CONFIG);
    CHECK(mf_sim_step(nullptr, nullptr, nullptr, 0) == MF_ERR_CONFIG);
    CHECK(mf_sim_vehicle_count(nullptr) == 0);
    CHECK(mf_sim_time(nullptr) == 0.0);

    // rejected commands must not advance the clock
    CHECK(mf_sim_time(sim) == 1.0);
    for (int t = 0; t < 10; ++t) REQUIRE(mf_sim_step(sim, nullptr, nullptr, 0) == MF_OK);
    CHECK(mf_sim_time(sim) == 6.0);

    mf_sim_destroy(sim);
    mf_sim_destroy(nullptr);
}

TEST_CASE("equilibrium solutions cross the boundary as json") {
    ConfigHandle h;

    char* text = nullptr;
    REQUIRE(mf_equilibrium_json(h.cfg, 20.0, 10.0, 0.3, &text) == MF_OK);
    json j = json::parse(takeString(text));
    CHECK(j["rho1_vpkm"] == 20.0);
    CHECK(j["rho2_vpkm"] == 10.0);
    CHECK(j["lambda"] == 0.3);
    CHECK((j["regime"] == "one_pipe" || j["regime"] == "two_pipe"));
    CHECK(j["u1_mps"].get<double>() > 0.0);
    CHECK(j["u2_mps"].get<double>() > 0.0);

    REQUIRE(mf_equilibrium_json(h.cfg, 20.0, 10.0, -1.0, &text) == MF_OK);
    j = json::parse(takeString(text));
    CHECK(j["lambda"] == 0.6484);

    CHECK(mf_equilibrium_json(h.cfg, 200.0, 100.0, 0.5, &text) == MF_ERR_DOMAIN);
    CHECK(!std::string(mf_last_error()).empty());
    CHECK(mf_equilibrium_json(h.cfg, 20.0, 10.0, 0.3, nullptr) == MF_ERR_CONFIG);
    CHECK(mf_equilibrium_json(nullptr, 20.0, 10.0, 0.3, &text) == MF_ERR_CONFIG);
}

TEST_CASE("run drivers write artifact trees and map failures to codes") {
    TmpDir tmp;
    std::string root = tmp.path.string();
    ConfigHandle h(microJson());

    REQUIRE(mf_run_train(h.cfg, 3, root.c_str(), nullptr, 0) == MF_OK);
    std::string checkpoint = root + "/d25_p50/train/checkpoint.mfq";
    REQUIRE(fs::exists(checkpoint));
    REQUIRE(fs::exists(root + "/d25_p50/train/reward_curve.csv"));

    REQUIRE(mf_run_baseline(h.cfg, 3, root.c_str(), 0) == MF_OK);
    REQUIRE(fs::exists(root + "/d25_p50/baseline/summary.json"));

    REQUIRE(mf_run_evaluate(h.cfg, 3, root.c_str(), nullptr, 0) == MF_OK);
    json evalSummary = json::parse(readFile(root + "/d25_p50/eval/summary.json"));
    CHECK(evalSummary["mode"] == "evaluate");
    CHECK(evalSummary["pareto"].is_array()); // baseline came first

    // checkpoint/scenario mismatch and missing checkpoint give distinct codes
    ConfigHandle dense(microJson());
    REQUIRE(mf_config_set(dense.cfg, "scenario.density_vpm_lane", "40") == MF_OK);
    CHECK(mf_run_evaluate(dense.cfg, 3, root.c_str(), checkpoint.c_str(), 0) ==
          MF_ERR_CONFIG);
    CHECK(std::string(mf_last_error()).find("different scenario") != std::string::npos);
    CHECK(mf_run_evaluate(dense.cfg, 3, root.c_str(), nullptr, 0) == MF_ERR_IO);

    REQUIRE(mf_run_compare(h.cfg, root.c_str(), root.c_str(), 0.5, 0) == MF_OK);
    json report = json::parse(readFile(root + "/compare/report.json"));
    CHECK(report["lambda"] == 0.5);
    CHECK(report["lambda_source"] == "override");

    CHECK(mf_lambda_regression(h.cfg, root.c_str(), root.c_str(), 0) == MF_ERR_DOMAIN);
    CHECK(mf_estimate_lambda(h.cfg, (root + "/none").c_str(), root.c_str(), 0) ==
          MF_ERR_CONFIG);

    // matrix: a bad mode is config, a failing cell surfaces as runtime
    CHECK(mf_run_matrix(h.cfg, 3, "nope", root.c_str(), 1, 0) == MF_ERR_CONFIG);
    TmpDir tmp2;
    REQUIRE(mf_run_matrix(h.cfg, 3, "baseline", tmp2.path.string().c_str(), 1, 0) == MF_OK);
    CHECK(fs::exists(tmp2.path / "matrix_report.json"));
    CHECK(fs::exists(tmp2.path / "d25_p50/baseline/summary.json"));

    ConfigHandle overfull(microJson());
    REQUIRE(mf_config_set(overfull.cfg, "matrix.densities", "[300]") == MF_OK);
    TmpDir tmp3;
    CHECK(mf_run_matrix(overfull.cfg, 3, "baseline", tmp3.path.string().c_str(), 1, 0) ==
          MF_ERR_RUNTIME);
    CHECK(std::string(mf_last_error()).find("matrix_report.json") != std::string::npos);

    CHECK(mf_run_train(nullptr, 3, root.c_str(), nullptr, 0) == MF_ERR_CONFIG);
    CHECK(mf_run_train(h.cfg, 3, nullptr, nullptr, 0) == MF_ERR_CONFIG);
    CHECK(mf_run_compare(h.cfg, nullptr, root.c_str(), 0.5, 0) == MF_ERR_CONFIG);
}
