#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "core/harness.hpp"

using namespace mixedflow;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    std::string path;
    TmpDir() {
        path = (fs::temp_directory_path() /
                ("harness_test_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++)))
                   .string();
        fs::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static inline int counter = 0;
};

// 15 vehicles on a short ring; one episode finishes in well under a second
Config microConfig() {
    Config cfg;
    cfg.scenario.densityVpmLane = 25.0; // 5 per lane at 300 m
    cfg.scenario.ringLengthM = 300.0;
    cfg.scenario.nLanes = 3;
    cfg.scenario.avPenetration = 0.5; // 8 of 15
    cfg.scenario.loadingTimeS = 20.0;
    cfg.evaluation.nEpisodes = 2;
    cfg.evaluation.episodeLengthS = 60.0;
    cfg.evaluation.logEvery = 1;
    cfg.training.episodes = 3;
    cfg.training.warmupEpisodes = 1;
    cfg.training.episodeLengthS = 80.0;
    cfg.dqn.hidden = {32, 16};
    cfg.dqn.batchSize = 32;
    cfg.metrics.edieDxM = 150.0; // two ring sections
    cfg.metrics.edieDtS = 8.0;   // five windows in [20, 60]
    cfg.matrix.densities = {25.0};
    cfg.matrix.penetrations = {0.5};
    return cfg;
}

std::pair<std::string, std::vector<std::vector<std::string>>> parseCsv(
    const std::string& text) {
    std::istringstream in(text);
    std::string line;
    REQUIRE(std::getline(in, line));
    std::pair<std::string, std::vector<std::vector<std::string>>> out;
    out.first = line;
    while (std::getline(in, line))
        if (!line.empty()) out.second.push_back(splitCsvLine(line));
    return out;
}

bool nanEq(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

// mirror of the digest so the hash chain itself is pinned
uint64_t replicaDigest(const Config& cfg, uint64_t seed, long ticks) {
    Simulator sim(cfg, seed);
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mixAll = [&]() {
        for (const auto& v : sim.vehicles()) {
            struct {
                int id;
                int lane;
                double pos;
                double speed;
            } rec{v.id, v.lane, v.pos, v.speed};
            h = splitmix64(h ^ fnv1a64(&rec, sizeof rec));
        }
    };
    mixAll();
    for (long t = 0; t < ticks; ++t) {
        std::map<int, Action> actions;
        for (int id : sim.automatedIds()) actions[id] = sim.rulePolicy(id);
        sim.step(actions);
        mixAll();
    }
    return h;
}

} // namespace

TEST_CASE("spatial csv round trip and validation") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<SpatialRow> rows = {
        {21.0, 0.25, 0.125, 1.0},
        {22.0, 0.0, nan, nan},
        {23.5, 0.6484, 0.7071067811865476, 1.0313067811865476},
    };
    std::string text = spatialCsv(rows);
    CHECK(text.rfind("t,B,H,M_t\n", 0) == 0);

    auto back = spatialFromCsv(text);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].t == rows[i].t);
        CHECK(back[i].benefit == rows[i].benefit);
        CHECK(nanEq(back[i].hellinger, rows[i].hellinger));
        CHECK(nanEq(back[i].metric, rows[i].metric));
    }

    CHECK(spatialFromCsv("t,B,H,M_t\r\n1,2,3,4\n").size() == 1); // CRLF tolerated
    CHECK_THROWS_AS(spatialFromCsv(""), IoError);
    CHECK_THROWS_AS(spatialFromCsv("a,b,c,d\n1,2,3,4\n"), IoError);
    CHECK_THROWS_AS(spatialFromCsv("t,B,H,M_t\n1,2,3\n"), IoError);
}

TEST_CASE("cell directories are named by scenario slug") {
    Config cfg;
    CHECK(cfg.scenarioSlug() == "d40_p50");
    CHECK(cellDir("/runs", cfg) == "/runs/d40_p50");

    cfg.scenario.densityVpmLane = 37.5;
    cfg.scenario.avPenetration = 0.25;
    CHECK(cellDir("out", cfg) == "out/d37.5_p25");

    cfg.scenario.avPenetration = 1.0 / 3.0;
    CHECK(cfg.scenarioSlug() == "d37.5_p33");
}

TEST_CASE("thread count comes from the environment") {
    unsetenv("MIXEDFLOW_THREADS");
    CHECK(threadsFromEnv() == 1);
    setenv("MIXEDFLOW_THREADS", "4", 1);
    CHECK(threadsFromEnv() == 4);
    setenv("MIXEDFLOW_THREADS", "abc", 1);
    CHECK_THROWS_AS(threadsFromEnv(), ConfigError);
    setenv("MIXEDFLOW_THREADS", "0", 1);
    CHECK_THROWS_AS(threadsFromEnv(), ConfigError);
    setenv("MIXEDFLOW_THREADS", "", 1);
    CHECK(threadsFromEnv() == 1);
    unsetenv("MIXEDFLOW_THREADS");
}

TEST_CASE("equilibrium json mirrors the solver") {
    Config cfg;
    auto [n1, n2] = nominalClasses(cfg);
    ScalingParams sc = scalingsFrom(cfg);

    json j = json::parse(equilibriumJson(cfg, 20.0, 10.0, 0.3));
    EquilibriumSolution eq = solveEquilibrium(20.0, 10.0, 0.3, n1, n2, sc);
    CHECK(j["rho1_vpkm"] == 20.0);
    CHECK(j["rho2_vpkm"] == 10.0);
    CHECK(j["lambda"] == 0.3);
    CHECK(j["regime"] == (eq.regime == Regime::TwoPipe ? "two_pipe" : "one_pipe"));
    CHECK(j["u_star_mps"].get<double>() == eq.uStar);
    CHECK(j["p1_min"].get<double>() == eq.p1Min);
    CHECK(j["p2_min"].get<double>() == eq.p2Min);
    CHECK(j["surplus"].get<double>() == eq.surplus);
    CHECK(j["p1"].get<double>() == eq.p1);
    CHECK(j["p2"].get<double>() == eq.p2);
    CHECK(j["u1_mps"].get<double>() == eq.u1);
    CHECK(j["u2_mps"].get<double>() == eq.u2);

    json jDef = json::parse(equilibriumJson(cfg, 20.0, 10.0, -1.0));
    CHECK(jDef["lambda"] == cfg.game.lambda);

    CHECK_THROWS_AS(equilibriumJson(cfg, 200.0, 100.0, 0.5), DomainError);
}

TEST_CASE("episode artifacts have the configured shapes") {
    Config cfg = microConfig();
    EpisodeArtifacts ep = runEpisode(cfg, nullptr, 77);

    CHECK(ep.log.ringLength == 300.0);
    CHECK(ep.log.nLanes == 3);
    CHECK(ep.log.dt == 0.5);
    CHECK(ep.log.loadingTime == 20.0);
    // one sample per vehicle at t=0 plus every one of the 120 ticks
    CHECK(ep.log.rows.size() == 121u * 15u);
    CHECK(ep.log.rows.front().t == 0.0);
    CHECK(ep.log.rows.back().t == 60.0);

    // one spatial sample per decision interval after loading
    REQUIRE(ep.spatial.size() == 40);
    CHECK(ep.spatial.front().t == 21.0);
    CHECK(ep.spatial.back().t == 60.0);
    bool metricConsistent = true;
    for (const auto& r : ep.spatial) {
        double want = cfg.metrics.spatialA1 * r.benefit + cfg.metrics.spatialA2 * r.hellinger;
        if (!nanEq(r.metric, want)) metricConsistent = false;
    }
    CHECK(metricConsistent);

    // two ring sections x five windows x three class rows
    REQUIRE(ep.edie.size() == 30);
    CHECK(ep.edie.front().t0 == 20.0);
    CHECK(ep.edie.back().t0 == 52.0);

    CHECK(std::isfinite(ep.settledSpeed[0]));
    CHECK(std::isfinite(ep.settledSpeed[1]));
    CHECK(ep.lcFreq[0] >= 0.0);
    CHECK(ep.lcFreq[1] >= 0.0);
    if (ep.tSettle) {
        CHECK(*ep.tSettle >= 20.5);
        CHECK(*ep.tSettle <= 60.0);
    }

    Config dec = cfg;
    dec.evaluation.logEvery = 3;
    EpisodeArtifacts ep3 = runEpisode(dec, nullptr, 77);
    CHECK(ep3.log.rows.size() == 41u * 15u); // t=0 plus ticks 3,6,...,120
}

TEST_CASE("episodes replay bit-identically for one seed") {
    Config cfg = microConfig();
    EpisodeArtifacts a = runEpisode(cfg, nullptr, 31);
    EpisodeArtifacts b = runEpisode(cfg, nullptr, 31);
    CHECK(a.log.toCsv() == b.log.toCsv());
    CHECK(edieCsv(a.edie) == edieCsv(b.edie));
    CHECK(spatialCsv(a.spatial) == spatialCsv(b.spatial));
    for (int c = 0; c < 2; ++c) {
        CHECK(formatDouble(a.settledSpeed[c]) == formatDouble(b.settledSpeed[c]));
        CHECK(a.lcFreq[c] == b.lcFreq[c]);
    }
    CHECK(a.tSettle == b.tSettle);

    EpisodeArtifacts c = runEpisode(cfg, nullptr, 32);
    CHECK(a.log.toCsv() != c.log.toCsv());
}

TEST_CASE("a zero q-network holds lanes under greedy control") {
    Config cfg = microConfig();
    QNetwork net = QNetwork::zeros({cfg.dqn.stateSize, 3});
    EpisodeArtifacts ep = runEpisode(cfg, &net, 123);

    CHECK(ep.lcFreq[1] == 0.0); // all-zero q ties break toward keeping the lane
    bool avChangedAfterLoading = false;
    for (const auto& r : ep.log.rows)
        if (r.classId == 2 && r.t > cfg.scenario.loadingTimeS && r.laneChanged)
            avChangedAfterLoading = true;
    CHECK(!avChangedAfterLoading);

    Config noAv = cfg;
    noAv.scenario.avPenetration = 0.0;
    CHECK_THROWS_AS(runEpisode(noAv, &net, 123), ConfigError);
}

TEST_CASE("simulation digest is deterministic and seed-sensitive") {
    Config cfg = microConfig();
    uint64_t d = simulationDigest(cfg, 7, 40);
    CHECK(simulationDigest(cfg, 7, 40) == d);
    CHECK(simulationDigest(cfg, 8, 40) != d);
    CHECK(simulationDigest(cfg, 7, 0) != d);
    CHECK(replicaDigest(cfg, 7, 40) == d);
}

TEST_CASE("lambda can be recovered from a measurement file") {
    TmpDir tmp;
    Config cfg;
    auto [n1, n2] = nominalClasses(cfg);
    ScalingParams sc = scalingsFrom(cfg);

    // noiseless measurements generated by the model itself at a known split
    std::vector<EdieRecord> recs;
    int region = 0;
    for (int r1 = 8; r1 <= 48; r1 += 8)
        for (int r2 = 8; r2 <= 48; r2 += 8) {
            auto [u1, u2] = predictedSpeeds(r1, r2, 0.37, n1, n2, sc);
            double q1 = 3.6 * r1 * u1, q2 = 3.6 * r2 * u2;
            double rho = r1 + r2;
            recs.push_back({region, 0.0, 1, q1, double(r1), u1});
            recs.push_back({region, 0.0, 2, q2, double(r2), u2});
            recs.push_back({region, 0.0, 0, q1 + q2, rho, (r1 * u1 + r2 * u2) / rho});
            ++region;
        }
    std::string file = tmp.path + "/measured.csv";
    writeTextFile(file, edieCsv(recs));

    runEstimateLambda(cfg, file, tmp.path, nullptr);
    json j = json::parse(readTextFile(tmp.path + "/lambda/lambda.json"));
    CHECK(std::abs(j["lambda"].get<double>() - 0.37) <= 0.01);
    CHECK(j["source"] == "estimated");
    CHECK(j["cells_used"].get<long>() == region);

    auto [header, rows] = parseCsv(readTextFile(tmp.path + "/lambda/lambda_loss.csv"));
    CHECK(header == "lambda,loss");
    CHECK(rows.size() == 51); // coarse scan at 0.02
    CHECK(fs::exists(tmp.path + "/lambda/lambda_loss.svg"));

    CHECK_THROWS_AS(runEstimateLambda(cfg, tmp.path + "/none", tmp.path, nullptr),
                    ConfigError);
}

TEST_CASE("lambda regression fits surplus against the spatial metric") {
    TmpDir tmp;
    Config cfg = microConfig();
    cfg.matrix.densities = {25.0, 40.0, 55.0};

    auto writeCell = [&](const std::string& slug, double mBase, double mDrl) {
        for (const char* mode : {"eval", "baseline"}) {
            std::string dir = tmp.path + "/" + slug + "/" + mode;
            ensureDir(dir);
            json s;
            s["spatial_metric_mean"] = std::string(mode) == "eval" ? mDrl : mBase;
            s["mean_speed_hv_mps"] = 10.0;
            s["mean_speed_av_mps"] = 12.0;
            writeTextFile(dir + "/summary.json", s.dump(2) + "\n");
            writeTextFile(dir + "/edie.csv", "region_id,t,class,q_vph,rho_vpkm,u_mps\n");
        }
    };
    writeCell("d25_p50", 0.30, 0.42);
    writeCell("d40_p50", 0.25, 0.56);
    writeCell("d55_p50", 0.20, 0.40);

    runLambdaRegression(cfg, tmp.path, tmp.path + "/out", nullptr);

    auto [header, rows] = parseCsv(readTextFile(tmp.path + "/out/regression/scatter.csv"));
    CHECK(header == "scenario,delta_m,surplus_pct,rho_total_vpkm");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0][0] == "d25_p50");
    CHECK(parseDouble(rows[0][1]) == 0.42 - 0.30);

    // the fit must match an ols run on the same (delta_m, surplus) inputs
    auto [n1, n2] = nominalClasses(cfg);
    ScalingParams sc = scalingsFrom(cfg);
    std::vector<double> xs = {0.42 - 0.30, 0.56 - 0.25, 0.40 - 0.20};
    std::vector<double> ys;
    for (double d : cfg.matrix.densities) {
        Config cell = cfg;
        cell.scenario.densityVpmLane = d;
        EquilibriumSolution eq =
            solveEquilibrium(cell.hvNominalDensityVpkm(), cell.avNominalDensityVpkm(),
                             cfg.game.lambda, n1, n2, sc);
        ys.push_back(100.0 * eq.surplus);
    }
    Regression expect = olsFit(xs, ys);
    json j = json::parse(readTextFile(tmp.path + "/out/regression/lambda_regression.json"));
    CHECK(j["slope"].get<double>() == doctest::Approx(expect.slope).epsilon(1e-12));
    CHECK(j["intercept"].get<double>() == doctest::Approx(expect.intercept).epsilon(1e-12));
    CHECK(j["r"].get<double>() == doctest::Approx(expect.r).epsilon(1e-12));
    CHECK(j["n"] == 3);
    CHECK(fs::exists(tmp.path + "/out/regression/regression.svg"));

    // fewer than three usable cells is not a fit
    TmpDir lone;
    Config one = microConfig();
    CHECK_THROWS_AS(runLambdaRegression(one, lone.path, lone.path + "/out", nullptr),
                    DomainError);
}

TEST_CASE("train, baseline, and evaluate write a consistent artifact tree") {
    TmpDir tmp;
    Config cfg = microConfig();
    const uint64_t seed = 99;
    std::ostringstream log;

    runTrain(cfg, seed, tmp.path, "", &log);
    std::string trainDir = tmp.path + "/d25_p50/train";
    REQUIRE(fs::exists(trainDir + "/checkpoint.mfq"));
    REQUIRE(fs::exists(trainDir + "/reward_curve.csv"));
    REQUIRE(fs::exists(trainDir + "/reward_curve.svg"));
    CHECK(log.str().find("train d25_p50 done:") != std::string::npos);

    auto curve = rewardCurveFromCsv(readTextFile(trainDir + "/reward_curve.csv"));
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].episode == 0);
    CHECK(curve[2].episode == 2);

    Checkpoint cp = loadCheckpoint(trainDir + "/checkpoint.mfq");
    CHECK(cp.scenarioHash == cfg.scenarioHash());
    CHECK(cp.episodesTrained == 3);
    CHECK(cp.net.sizes == std::vector<int>{200, 32, 16, 3});

    json trainManifest = json::parse(readTextFile(trainDir + "/manifest.json"));
    CHECK(trainManifest["mode"] == "train");
    CHECK(trainManifest["scenario"] == "d25_p50");
    CHECK(trainManifest["scenario_hash"] == hex64(cfg.scenarioHash()));
    CHECK(trainManifest["format_version"] == 1);
    CHECK(trainManifest["artifacts"] ==
          json::array({"checkpoint.mfq", "reward_curve.csv", "reward_curve.svg"}));

    // evaluating before any baseline exists leaves the verdicts open
    runEvaluate(cfg, seed, tmp.path, "", nullptr);
    std::string evalDir = tmp.path + "/d25_p50/eval";
    json evalSummary = json::parse(readTextFile(evalDir + "/summary.json"));
    CHECK(evalSummary["mode"] == "evaluate");
    CHECK(evalSummary["pareto"].is_null());

    runBaseline(cfg, seed, tmp.path, nullptr);
    std::string baseDir = tmp.path + "/d25_p50/baseline";
    json baseSummary = json::parse(readTextFile(baseDir + "/summary.json"));
    CHECK(baseSummary["mode"] == "baseline");
    CHECK(baseSummary["scenario"] == "d25_p50");
    CHECK(baseSummary["scenario_hash"] == hex64(cfg.scenarioHash()));
    CHECK(baseSummary["seed"] == seed);
    CHECK(baseSummary["episodes"] == 2);
    CHECK(baseSummary["loading_time_s"] == 20.0);
    CHECK(baseSummary["pareto"].is_null());
    double settleRate = baseSummary["settle_rate"].get<double>();
    CHECK(settleRate >= 0.0);
    CHECK(settleRate <= 1.0);

    REQUIRE(baseSummary["per_episode"].size() == 2);
    const json& ep0 = baseSummary["per_episode"][0];
    for (const char* k : {"episode", "seed", "t_settle", "u_hv_mps", "u_av_mps", "lc_freq_hv",
                          "lc_freq_av", "b_mean", "h_mean", "m_mean"})
        CHECK(ep0.contains(k));
    CHECK(ep0["episode"] == 0);
    CHECK(ep0["seed"].get<uint64_t>() == mixSeed(seed, kStreamEvalEnv, 0));

    json baseManifest = json::parse(readTextFile(baseDir + "/manifest.json"));
    CHECK(baseManifest["artifacts"] ==
          json::array({"edie.csv", "ep000_trajectory.csv", "ep001_trajectory.csv",
                       "spatial.csv", "spatial.svg", "summary.json"}));

    // the stored trajectory is the episode the derived seed produces
    EpisodeArtifacts ep = runEpisode(cfg, nullptr, mixSeed(seed, kStreamEvalEnv, 0));
    CHECK(readTextFile(baseDir + "/ep000_trajectory.csv") == ep.log.toCsv());

    auto pooledEdie = edieFromCsv(readTextFile(baseDir + "/edie.csv"));
    CHECK(pooledEdie.size() == 60); // 2 episodes x 30 records
    auto pooledSpatial = spatialFromCsv(readTextFile(baseDir + "/spatial.csv"));
    CHECK(pooledSpatial.size() == 80); // 2 episodes x 40 samples

    // a second evaluation sees the baseline and judges the verdicts
    runEvaluate(cfg, seed, tmp.path, "", nullptr);
    evalSummary = json::parse(readTextFile(evalDir + "/summary.json"));
    REQUIRE(evalSummary["pareto"].is_array());
    REQUIRE(evalSummary["pareto"].size() == 3);
    for (const auto& row : evalSummary["pareto"]) {
        CHECK(row.contains("tau"));
        CHECK(row["scenario_pass"] ==
              (row["hv_pass"].get<bool>() && row["av_pass"].get<bool>()));
    }

    // checkpoints trained elsewhere are rejected
    Config other = cfg;
    other.scenario.densityVpmLane = 40.0;
    CHECK_THROWS_AS(
        runEvaluate(other, seed, tmp.path, trainDir + "/checkpoint.mfq", nullptr),
        ConfigError);

    // resuming grows the same curve instead of restarting it
    Config longer = cfg;
    longer.training.episodes = 5;
    runTrain(longer, seed, tmp.path, trainDir + "/checkpoint.mfq", nullptr);
    curve = rewardCurveFromCsv(readTextFile(trainDir + "/reward_curve.csv"));
    REQUIRE(curve.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(curve[i].episode == i);
    cp = loadCheckpoint(trainDir + "/checkpoint.mfq");
    CHECK(cp.episodesTrained == 5);

    // nothing left to train
    CHECK_THROWS_AS(runTrain(longer, seed, tmp.path, trainDir + "/checkpoint.mfq", nullptr),
                    ConfigError);

    // ---- compare over the finished cell, with a pinned surplus split ----
    std::string cmpRoot = tmp.path + "/report";
    runCompare(cfg, tmp.path, cmpRoot, 0.5, nullptr);
    std::string cmpDir = cmpRoot + "/compare";

    json report = json::parse(readTextFile(cmpDir + "/report.json"));
    CHECK(report["lambda"] == 0.5);
    CHECK(report["lambda_source"] == "override");
    REQUIRE(report["cells"].size() == 1);
    CHECK(report["cells"][0] == "d25_p50");
    CHECK(report["warnings"].empty());
    CHECK(report["grid_cells"].get<long>() >= 1);
    CHECK(report["pareto"].size() == 3);
    CHECK(report["max_flow"].contains("0.5"));
    CHECK(report["max_flow"].contains("full_scale_reference"));

    json lamJson = json::parse(readTextFile(cmpDir + "/lambda.json"));
    CHECK(lamJson["lambda"] == 0.5);
    CHECK(lamJson["source"] == "override");

    json cmpManifest = json::parse(readTextFile(cmpDir + "/manifest.json"));
    CHECK(cmpManifest["mode"] == "compare");

    // every second-order column recombines first-order ones exactly
    auto [foHeader, foRows] = parseCsv(readTextFile(cmpDir + "/first_order.csv"));
    CHECK(foHeader ==
          "rho1_vpkm,rho2_vpkm,n1,n2,u1_sim_mps,u2_sim_mps,q1_sim_vph,q2_sim_vph,"
          "u1_base_mps,u2_base_mps,u_star_model_mps,u1_model_mps,u2_model_mps,"
          "q1_model_vph,q2_model_vph,q_total_model_vph,p1,p2,surplus,regime");
    auto [soHeader, soRows] = parseCsv(readTextFile(cmpDir + "/second_order.csv"));
    CHECK(soHeader == "rho1_vpkm,rho2_vpkm,du_sim_mps,du_model_mps,dq_sim_vph,dq_model_vph,"
                      "du1_vs_base_mps,du2_vs_base_mps");
    REQUIRE(!foRows.empty());
    REQUIRE(foRows.size() == soRows.size());

    auto [n1, n2] = nominalClasses(cfg);
    ScalingParams sc = scalingsFrom(cfg);
    for (size_t i = 0; i < foRows.size(); ++i) {
        const auto& f = foRows[i];
        REQUIRE(f.size() == 20);
        double rho1 = parseDouble(f[0]), rho2 = parseDouble(f[1]);
        double u1s = parseDouble(f[4]), u2s = parseDouble(f[5]);
        double q1s = parseDouble(f[6]), q2s = parseDouble(f[7]);
        double u1b = parseDouble(f[8]), u2b = parseDouble(f[9]);
        double uStar = parseDouble(f[10]);
        double u1m = parseDouble(f[11]), u2m = parseDouble(f[12]);
        double q1m = parseDouble(f[13]), q2m = parseDouble(f[14]);
        double qtm = parseDouble(f[15]);
        double p1 = parseDouble(f[16]), p2 = parseDouble(f[17]);
        double surplus = parseDouble(f[18]);
        const std::string& regime = f[19];
        REQUIRE((regime == "one_pipe" || regime == "two_pipe"));

        CHECK((parseLong(f[2]) > 0) == !std::isnan(u1s));
        CHECK((parseLong(f[3]) > 0) == !std::isnan(u2s));
        CHECK(nanEq(q1s, 3.6 * rho1 * u1s));
        CHECK(nanEq(q2s, 3.6 * rho2 * u2s));
        CHECK(q1m == 3.6 * rho1 * u1m);
        CHECK(q2m == 3.6 * rho2 * u2m);
        CHECK(qtm == q1m + q2m);

        EquilibriumSolution eq = solveEquilibrium(rho1, rho2, 0.5, n1, n2, sc);
        CHECK(eq.uStar == uStar);
        CHECK(eq.u1 == u1m);
        CHECK(eq.u2 == u2m);
        CHECK(eq.p1 == p1);
        CHECK(eq.p2 == p2);
        CHECK(eq.surplus == surplus);
        CHECK((eq.regime == Regime::TwoPipe) == (regime == "two_pipe"));
        if (regime == "two_pipe") {
            CHECK(p1 + p2 == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(u1m >= uStar - 1e-9);
            CHECK(u2m >= uStar - 1e-9);
            CHECK(surplus >= 0.0);
        }

        const auto& s = soRows[i];
        REQUIRE(s.size() == 8);
        CHECK(parseDouble(s[0]) == rho1);
        CHECK(parseDouble(s[1]) == rho2);
        CHECK(nanEq(parseDouble(s[2]), u1s - u2s));
        CHECK(parseDouble(s[3]) == u1m - u2m);
        CHECK(nanEq(parseDouble(s[4]), q1s - q2s));
        CHECK(parseDouble(s[5]) == q1m - q2m);
        CHECK(nanEq(parseDouble(s[6]), u1s - u1b));
        CHECK(nanEq(parseDouble(s[7]), u2s - u2b));
    }

    // pareto verdict table recomputes from its own speed columns
    auto [paHeader, paRows] = parseCsv(readTextFile(cmpDir + "/pareto.csv"));
    CHECK(paHeader ==
          "scenario,tau,u_hv_drl,u_av_drl,u_hv_base,u_av_base,hv_pass,av_pass,scenario_pass");
    REQUIRE(paRows.size() == 3);
    CHECK(parseDouble(paRows[0][1]) == 0.0);
    CHECK(parseDouble(paRows[1][1]) == 0.01);
    CHECK(parseDouble(paRows[2][1]) == 0.04);
    for (const auto& r : paRows) {
        REQUIRE(r.size() == 9);
        CHECK(r[0] == "d25_p50");
        double tau = parseDouble(r[1]);
        double uHvD = parseDouble(r[2]), uAvD = parseDouble(r[3]);
        double uHvB = parseDouble(r[4]), uAvB = parseDouble(r[5]);
        bool hv = !std::isfinite(uHvD) || !std::isfinite(uHvB) || uHvD >= uHvB - tau;
        bool av = !std::isfinite(uAvD) || !std::isfinite(uAvB) || uAvD >= uAvB - tau;
        CHECK(parseLong(r[6]) == (hv ? 1 : 0));
        CHECK(parseLong(r[7]) == (av ? 1 : 0));
        CHECK(parseLong(r[8]) == ((hv && av) ? 1 : 0));
    }

    // measured flow-density points: one per (region, window) triplet and mode
    auto [fpHeader, fpRows] = parseCsv(readTextFile(cmpDir + "/fd_points.csv"));
    CHECK(fpHeader == "scenario,mode,region_id,t,rho_vpkm,q_vph");
    CHECK(fpRows.size() == 40); // 20 pooled triplets per mode
    bool sawDrl = false, sawBase = false;
    for (const auto& r : fpRows) {
        if (r[1] == "drl") sawDrl = true;
        if (r[1] == "baseline") sawBase = true;
    }
    CHECK(sawDrl);
    CHECK(sawBase);

    // model curve rows satisfy the flow identity at their own split
    auto [fmHeader, fmRows] = parseCsv(readTextFile(cmpDir + "/fd_model.csv"));
    CHECK(fmHeader == "penetration,rho_vpkm,q_model_vph,q_onepipe_vph,u1_mps,u2_mps,regime");
    CHECK(fmRows.size() >= 100);
    bool fmConsistent = true;
    for (const auto& r : fmRows) {
        double pen = parseDouble(r[0]);
        double rho = parseDouble(r[1]);
        double q = parseDouble(r[2]);
        double u1 = parseDouble(r[4]), u2 = parseDouble(r[5]);
        if (q != 3.6 * ((1.0 - pen) * rho * u1 + pen * rho * u2)) fmConsistent = false;
        if (r[6] != "one_pipe" && r[6] != "two_pipe") fmConsistent = false;
    }
    CHECK(fmConsistent);

    CHECK(fs::exists(cmpDir + "/fd.svg"));
    CHECK(fs::exists(cmpDir + "/max_flow.json"));

    // a single cell cannot support the regression
    CHECK_THROWS_AS(runLambdaRegression(cfg, tmp.path, cmpRoot, nullptr), DomainError);

    // and an empty runs root cannot support the comparison
    TmpDir blank;
    CHECK_THROWS_AS(runCompare(cfg, blank.path, blank.path + "/report", 0.5, nullptr),
                    ConfigError);
}

TEST_CASE("matrix sweep records per-cell failures without aborting") {
    TmpDir tmp;
    Config cfg = microConfig();
    cfg.matrix.densities = {25.0, 300.0}; // the dense cell cannot be packed onto the ring

    MatrixReport report = runMatrix(cfg, 5, "all", tmp.path, 1, nullptr);
    CHECK(report.cellsTotal == 2);
    CHECK(report.cellsFailed == 1);
    REQUIRE(report.failures.size() == 1);
    CHECK(report.failures[0].rfind("d300_p50 train", 0) == 0);
    CHECK(report.compareRan);
    CHECK(!report.regressionRan);

    json j = json::parse(readTextFile(tmp.path + "/matrix_report.json"));
    CHECK(j["mode"] == "all");
    CHECK(j["threads"] == 1);
    CHECK(j["seed"] == 5);
    REQUIRE(j["cells"].size() == 2);
    std::map<std::string, json> bySlug;
    for (const auto& c : j["cells"]) bySlug[c["scenario"].get<std::string>()] = c;
    CHECK(bySlug["d25_p50"]["status"] == "ok");
    CHECK(bySlug["d300_p50"]["status"] == "failed");
    CHECK(bySlug["d300_p50"]["stage"] == "train");
    CHECK(j["compare"] == "ok");
    CHECK(j["regression"].get<std::string>().rfind("skipped", 0) == 0);

    // per-cell seeds derive from the slug, not the scheduling order
    CHECK(bySlug["d25_p50"]["seed"].get<uint64_t>() ==
          mixSeed(5, 0x4d545258, fnv1a64("d25_p50", 7)));

    // the surviving cell carries the full tree and judged verdicts
    json evalSummary = json::parse(readTextFile(tmp.path + "/d25_p50/eval/summary.json"));
    CHECK(evalSummary["pareto"].is_array());
    CHECK(fs::exists(tmp.path + "/d25_p50/train/checkpoint.mfq"));
    CHECK(fs::exists(tmp.path + "/d25_p50/baseline/summary.json"));
    CHECK(fs::exists(tmp.path + "/compare/report.json"));
    CHECK(!fs::exists(tmp.path + "/d300_p50/train/checkpoint.mfq"));
}
