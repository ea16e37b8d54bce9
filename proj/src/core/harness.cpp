#include "core/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace mixedflow {

namespace {

json jnum(double v) { return std::isfinite(v) ? json(v) : json(); }

double summaryNum(const json& s, const char* key) {
    if (!s.contains(key) || s[key].is_null())
        return std::numeric_limits<double>::quiet_NaN();
    return s[key].get<double>();
}

// Pareto verdicts against baseline speeds; NaN (absent class) passes vacuously.
json paretoRows(const Config& cfg, double u1d, double u2d, double u1b, double u2b) {
    json rows = json::array();
    for (double tau : cfg.metrics.paretoTaus) {
        bool p1 = !std::isfinite(u1d) || !std::isfinite(u1b) || u1d >= u1b - tau;
        bool p2 = !std::isfinite(u2d) || !std::isfinite(u2b) || u2d >= u2b - tau;
        json row;
        row["tau"] = tau;
        row["hv_pass"] = p1;
        row["av_pass"] = p2;
        row["scenario_pass"] = p1 && p2;
        rows.push_back(row);
    }
    return rows;
}

double meanFinite(const std::vector<double>& v) {
    double s = 0;
    long n = 0;
    for (double x : v)
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

int spatialCells(const Config& cfg) {
    if (cfg.metrics.spatialCellsPerLane > 0) return cfg.metrics.spatialCellsPerLane;
    return std::max(1, static_cast<int>(std::ceil(cfg.scenario.ringLengthM /
                                                  cfg.metrics.spatialCellM - 1e-9)));
}

std::map<int, Action> ruleActionsForAvs(const Simulator& sim) {
    std::map<int, Action> actions;
    for (int id : sim.automatedIds()) actions[id] = sim.rulePolicy(id);
    return actions;
}

std::map<int, Action> greedyActionsForAvs(const Simulator& sim, const QNetwork& net,
                                          const Config& cfg) {
    std::map<int, Action> actions;
    for (int id : sim.automatedIds()) {
        std::vector<float> obs = encodeObservation(sim, id, cfg);
        auto legal = legalActions(sim.vehicles()[id].lane, sim.nLanes());
        actions[id] = greedyAction(net.forward(std::span<const float>(obs)), legal);
    }
    return actions;
}

double meanFrontGap(const Simulator& sim) {
    const auto& vs = sim.vehicles();
    if (vs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0;
    for (size_t i = 0; i < vs.size(); ++i) {
        auto [lead, foll] = sim.neighborsInLane(static_cast<int>(i), vs[i].lane);
        (void)foll;
        s += lead.valid() ? lead.gap : sim.ringLength() - vs[i].length;
    }
    return s / static_cast<double>(vs.size());
}

void classMeanSpeeds(const Simulator& sim, double out[2]) {
    double sum[2] = {0, 0};
    long n[2] = {0, 0};
    for (const auto& v : sim.vehicles()) {
        int c = static_cast<int>(v.cls);
        sum[c] += v.speed;
        ++n[c];
    }
    for (int c = 0; c < 2; ++c)
        out[c] = n[c] ? sum[c] / n[c] : std::numeric_limits<double>::quiet_NaN();
}

SpatialRow sampleSpatial(const Simulator& sim, const Config& cfg) {
    SpatialRow row{};
    row.t = sim.time();
    PlatoonPolicy policy{cfg.metrics.platoonHeadwayS, cfg.metrics.platoonBufferM};
    row.benefit =
        platoonBenefit(sim.vehicles(), sim.ringLength(), sim.nLanes(), policy).benefit;
    int cells = spatialCells(cfg);
    auto hv = spatialDistribution(sim.vehicles(), VehicleClass::Human, sim.ringLength(),
                                  sim.nLanes(), cells);
    auto av = spatialDistribution(sim.vehicles(), VehicleClass::Automated, sim.ringLength(),
                                  sim.nLanes(), cells);
    row.hellinger = (hv.hasVehicles && av.hasVehicles)
                        ? hellinger2d(hv.cells, av.cells)
                        : std::numeric_limits<double>::quiet_NaN();
    row.metric = cfg.metrics.spatialA1 * row.benefit + cfg.metrics.spatialA2 * row.hellinger;
    return row;
}

// --- minimal SVG charts ------------------------------------------------------

struct Series {
    std::string label;
    std::string color;
    bool line = true;
    std::vector<std::pair<double, double>> pts;
};

std::string svgChart(const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series) {
    const double W = 760, H = 500, ml = 70, mr = 20, mt = 40, mb = 55;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.pts) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 1;
        xmax += 1;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 1;
        ymax += 1;
    }
    double xpad = 0.04 * (xmax - xmin), ypad = 0.06 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    std::ostringstream ss;
    ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    ss << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    ss << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
          "font-family=\"sans-serif\">"
       << title << "</text>\n";
    // axes
    ss << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
       << H - mb << "\" stroke=\"black\"/>\n";
    ss << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        double xv = xmin + (xmax - xmin) * k / 4.0;
        double yv = ymin + (ymax - ymin) * k / 4.0;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", xv);
        ss << "<line x1=\"" << px(xv) << "\" y1=\"" << H - mb << "\" x2=\"" << px(xv)
           << "\" y2=\"" << H - mb + 5 << "\" stroke=\"black\"/>\n";
        ss << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 20
           << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << buf
           << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.4g", yv);
        ss << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << ml << "\" y2=\""
           << py(yv) << "\" stroke=\"black\"/>\n";
        ss << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
           << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << buf
           << "</text>\n";
    }
    ss << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << xlabel
       << "</text>\n";
    ss << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
          "transform=\"rotate(-90 16 "
       << (mt + H - mb) / 2 << ")\">" << ylabel << "</text>\n";

    double ly = mt + 8;
    for (const auto& s : series) {
        if (s.line) {
            bool pen = false;
            ss << "<path d=\"";
            for (auto [x, y] : s.pts) {
                if (!std::isfinite(x) || !std::isfinite(y)) {
                    pen = false;
                    continue;
                }
                ss << (pen ? "L" : "M") << px(x) << " " << py(y) << " ";
                pen = true;
            }
            ss << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"/>\n";
        } else {
            for (auto [x, y] : s.pts) {
                if (!std::isfinite(x) || !std::isfinite(y)) continue;
                ss << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y)
                   << "\" r=\"2.5\" fill=\"" << s.color << "\" fill-opacity=\"0.7\"/>\n";
            }
        }
        ss << "<rect x=\"" << W - mr - 150 << "\" y=\"" << ly - 8
           << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n";
        ss << "<text x=\"" << W - mr - 135 << "\" y=\"" << ly + 1
           << "\" font-size=\"11\" font-family=\"sans-serif\">" << s.label << "</text>\n";
        ly += 16;
    }
    ss << "</svg>\n";
    return ss.str();
}

void writeManifest(const std::string& dir, const Config& cfg, const std::string& mode,
                   uint64_t seed, const std::vector<std::string>& artifacts) {
    json j;
    j["scenario"] = cfg.scenarioSlug();
    j["scenario_hash"] = hex64(cfg.scenarioHash());
    j["mode"] = mode;
    j["preset"] = cfg.preset;
    j["seed"] = seed;
    std::vector<std::string> files = artifacts;
    std::sort(files.begin(), files.end());
    j["artifacts"] = files;
    j["format_version"] = 1;
    writeTextFile(dir + "/manifest.json", j.dump(2) + "\n");
}

} // namespace

std::string spatialCsv(const std::vector<SpatialRow>& rows) {
    std::ostringstream ss;
    ss << "t,B,H,M_t\n";
    for (const auto& r : rows) {
        ss << formatDouble(r.t) << ',' << formatDouble(r.benefit) << ','
           << formatDouble(r.hellinger) << ',' << formatDouble(r.metric) << "\n";
    }
    return ss.str();
}

std::vector<SpatialRow> spatialFromCsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("spatial CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,B,H,M_t") throw IoError("spatial CSV has unexpected header: " + line);
    std::vector<SpatialRow> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = splitCsvLine(line);
        if (f.size() != 4) throw IoError("spatial CSV row has wrong arity");
        out.push_back(SpatialRow{parseDouble(f[0]), parseDouble(f[1]), parseDouble(f[2]),
                                 parseDouble(f[3])});
    }
    return out;
}

EpisodeArtifacts runEpisode(const Config& cfg, const QNetwork* net, uint64_t envSeed) {
    cfg.validate();
    Simulator sim(cfg, envSeed);
    if (net && sim.automatedIds().empty())
        throw ConfigError("policy evaluation requires at least one automated vehicle");

    const double dt = cfg.scenario.dtS;
    const int K = static_cast<int>(std::llround(cfg.dqn.decisionIntervalS / dt));
    const int loadTicks = static_cast<int>(std::llround(cfg.scenario.loadingTimeS / dt));
    const int postTicks = static_cast<int>(
        std::llround((cfg.evaluation.episodeLengthS - cfg.scenario.loadingTimeS) / dt));
    const int logEvery = cfg.evaluation.logEvery;

    EpisodeArtifacts out{};
    out.log.ringLength = sim.ringLength();
    out.log.nLanes = sim.nLanes();
    out.log.dt = dt;
    out.log.loadingTime = cfg.scenario.loadingTimeS;
    out.log.append(sim);

    long tick = 0;
    for (int t = 0; t < loadTicks; ++t) {
        sim.step(ruleActionsForAvs(sim));
        ++tick;
        if (tick % logEvery == 0) out.log.append(sim);
    }

    std::vector<double> neSpeed, neGap;
    std::vector<double> clsSpeed[2];
    for (int t = 0; t < postTicks; ++t) {
        std::map<int, Action> actions;
        if (net) {
            if (t % K == 0) actions = greedyActionsForAvs(sim, *net, cfg);
        } else {
            actions = ruleActionsForAvs(sim);
        }
        sim.step(actions);
        ++tick;
        if (tick % logEvery == 0) out.log.append(sim);

        double cm[2];
        classMeanSpeeds(sim, cm);
        clsSpeed[0].push_back(cm[0]);
        clsSpeed[1].push_back(cm[1]);
        double all = 0;
        long n = 0;
        for (const auto& v : sim.vehicles()) {
            all += v.speed;
            ++n;
        }
        neSpeed.push_back(n ? all / n : std::numeric_limits<double>::quiet_NaN());
        neGap.push_back(meanFrontGap(sim));

        if ((t + 1) % K == 0) out.spatial.push_back(sampleSpatial(sim, cfg));
    }

    if (!sim.vehicles().empty() && !neSpeed.empty()) {
        SettleCriteria crit{cfg.metrics.neSpeedStd, cfg.metrics.neSpacingStd,
                            cfg.metrics.neWindowS};
        out.tSettle = detectSettling(neSpeed, neGap, cfg.scenario.loadingTimeS + dt, dt, crit);
    }

    const double endT = cfg.evaluation.episodeLengthS;
    double winStart = std::max({cfg.scenario.loadingTimeS,
                                out.tSettle.value_or(cfg.scenario.loadingTimeS),
                                endT - cfg.metrics.paretoWindowS});
    for (int c = 0; c < 2; ++c) {
        double s = 0;
        long n = 0;
        for (size_t i = 0; i < clsSpeed[c].size(); ++i) {
            double t = cfg.scenario.loadingTimeS + (static_cast<double>(i) + 1) * dt;
            if (t + 1e-9 < winStart) continue;
            if (!std::isfinite(clsSpeed[c][i])) continue;
            s += clsSpeed[c][i];
            ++n;
        }
        out.settledSpeed[c] = n ? s / n : std::numeric_limits<double>::quiet_NaN();
        out.lcFreq[c] = laneChangeFrequency(out.log, c + 1, cfg.scenario.loadingTimeS);
    }

    out.edie = tileRing(out.log, cfg.metrics.edieDxM, cfg.metrics.edieDtS,
                        cfg.scenario.loadingTimeS, endT);
    return out;
}

uint64_t simulationDigest(const Config& cfg, uint64_t seed, long ticks) {
    Simulator sim(cfg, seed);
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mixVeh = [&h](const Vehicle& v) {
        struct {
            int id;
            int lane;
            double pos;
            double speed;
        } rec{v.id, v.lane, v.pos, v.speed};
        h = splitmix64(h ^ fnv1a64(&rec, sizeof rec));
    };
    for (const auto& v : sim.vehicles()) mixVeh(v);
    for (long t = 0; t < ticks; ++t) {
        sim.step(ruleActionsForAvs(sim));
        for (const auto& v : sim.vehicles()) mixVeh(v);
    }
    return h;
}

std::string cellDir(const std::string& root, const Config& cfg) {
    return root + "/" + cfg.scenarioSlug();
}

void runTrain(const Config& cfg, uint64_t seed, const std::string& outRoot,
              const std::string& resumeFrom, std::ostream* log) {
    cfg.validate();
    std::string dir = cellDir(outRoot, cfg) + "/train";
    ensureDir(dir);

    const QNetwork* resumeNet = nullptr;
    Checkpoint cp;
    int startEpisode = 0;
    std::vector<EpisodeRow> priorCurve;
    if (!resumeFrom.empty()) {
        cp = loadCheckpoint(resumeFrom);
        if (cp.scenarioHash != cfg.scenarioHash())
            throw ConfigError("resume checkpoint was trained on a different scenario (" +
                              hex64(cp.scenarioHash) + " vs " + hex64(cfg.scenarioHash()) + ")");
        startEpisode = static_cast<int>(cp.episodesTrained);
        if (startEpisode >= cfg.training.episodes)
            throw ConfigError("checkpoint already covers the configured episode count");
        resumeNet = &cp.net;
        fs::path sibling = fs::path(resumeFrom).parent_path() / "reward_curve.csv";
        if (fs::exists(sibling)) {
            for (const auto& row : rewardCurveFromCsv(readTextFile(sibling.string())))
                if (row.episode < startEpisode) priorCurve.push_back(row);
        }
    }

    ProgressFn progress;
    if (log) {
        progress = [log, &cfg](const TrainProgress& p) {
            if ((p.episode + 1) % 10 == 0 || p.episode + 1 == cfg.training.episodes)
                (*log) << "train " << cfg.scenarioSlug() << " episode " << p.episode + 1 << "/"
                       << p.episodes << " reward " << formatFixed(p.totalReward, 1) << " eps "
                       << formatFixed(p.epsilon, 3) << " grad_steps " << p.gradSteps
                       << (p.collisions ? " collisions " + std::to_string(p.collisions) : "")
                       << "\n";
        };
    }

    TrainResult result = trainPolicy(cfg, seed, progress, resumeNet, startEpisode);

    std::vector<EpisodeRow> curve = priorCurve;
    curve.insert(curve.end(), result.curve.begin(), result.curve.end());
    writeTextFile(dir + "/reward_curve.csv", rewardCurveCsv(curve));
    saveCheckpoint(dir + "/checkpoint.mfq", result.net, result.scenarioHash,
                   static_cast<uint32_t>(cfg.training.episodes));

    Series total{"total", "#888888", true, {}};
    Series smooth{"smoothed", "#c0392b", true, {}};
    for (const auto& r : curve) {
        total.pts.emplace_back(r.episode, r.totalReward);
        smooth.pts.emplace_back(r.episode, r.smoothedReward);
    }
    writeTextFile(dir + "/reward_curve.svg",
                  svgChart("training reward, " + cfg.scenarioSlug(), "episode", "reward",
                           {total, smooth}));
    writeManifest(dir, cfg, "train", seed,
                  {"checkpoint.mfq", "reward_curve.csv", "reward_curve.svg"});
    if (log)
        (*log) << "train " << cfg.scenarioSlug() << " done: " << result.gradSteps
               << " gradient steps, " << result.collisions << " collisions\n";
}

namespace {

void runEpisodeSet(const Config& cfg, const QNetwork* net, uint64_t seed,
                   const std::string& dir, const std::string& mode, std::ostream* log) {
    ensureDir(dir);
    std::vector<std::string> artifacts;
    std::vector<EdieRecord> allEdie;
    std::vector<SpatialRow> allSpatial;
    json perEpisode = json::array();
    std::vector<double> settles, uHv, uAv, lcHv, lcAv, bMeans, hMeans, mMeans;
    long settleCount = 0;

    for (int i = 0; i < cfg.evaluation.nEpisodes; ++i) {
        uint64_t envSeed = mixSeed(seed, kStreamEvalEnv, static_cast<uint64_t>(i));
        EpisodeArtifacts ep = runEpisode(cfg, net, envSeed);

        char name[48];
        std::snprintf(name, sizeof name, "ep%03d_trajectory.csv", i);
        writeTextFile(dir + "/" + name, ep.log.toCsv());
        artifacts.push_back(name);

        allEdie.insert(allEdie.end(), ep.edie.begin(), ep.edie.end());
        allSpatial.insert(allSpatial.end(), ep.spatial.begin(), ep.spatial.end());

        std::vector<double> b, h, m;
        for (const auto& r : ep.spatial) {
            b.push_back(r.benefit);
            h.push_back(r.hellinger);
            m.push_back(r.metric);
        }
        json e;
        e["episode"] = i;
        e["seed"] = envSeed;
        e["t_settle"] = ep.tSettle ? json(*ep.tSettle) : json();
        e["u_hv_mps"] = jnum(ep.settledSpeed[0]);
        e["u_av_mps"] = jnum(ep.settledSpeed[1]);
        e["lc_freq_hv"] = ep.lcFreq[0];
        e["lc_freq_av"] = ep.lcFreq[1];
        e["b_mean"] = jnum(meanFinite(b));
        e["h_mean"] = jnum(meanFinite(h));
        e["m_mean"] = jnum(meanFinite(m));
        perEpisode.push_back(e);

        if (ep.tSettle) {
            ++settleCount;
            settles.push_back(*ep.tSettle);
        }
        uHv.push_back(ep.settledSpeed[0]);
        uAv.push_back(ep.settledSpeed[1]);
        lcHv.push_back(ep.lcFreq[0]);
        lcAv.push_back(ep.lcFreq[1]);
        bMeans.push_back(meanFinite(b));
        hMeans.push_back(meanFinite(h));
        mMeans.push_back(meanFinite(m));
        if (log)
            (*log) << mode << " " << cfg.scenarioSlug() << " episode " << i + 1 << "/"
                   << cfg.evaluation.nEpisodes
                   << (ep.tSettle ? " settled at " + formatFixed(*ep.tSettle, 1) + "s"
                                  : " did not settle")
                   << "\n";
    }

    writeTextFile(dir + "/edie.csv", edieCsv(allEdie));
    artifacts.push_back("edie.csv");
    writeTextFile(dir + "/spatial.csv", spatialCsv(allSpatial));
    artifacts.push_back("spatial.csv");

    // mean M_t over episodes, by time
    std::map<double, std::pair<double, long>> mByT;
    for (const auto& r : allSpatial)
        if (std::isfinite(r.metric)) {
            auto& acc = mByT[r.t];
            acc.first += r.metric;
            ++acc.second;
        }
    Series mt{"mean M_t", "#2980b9", true, {}};
    for (const auto& [t, acc] : mByT) mt.pts.emplace_back(t, acc.first / acc.second);
    writeTextFile(dir + "/spatial.svg",
                  svgChart("spatial metric, " + cfg.scenarioSlug() + " (" + mode + ")",
                           "time (s)", "M_t", {mt}));
    artifacts.push_back("spatial.svg");

    double maxFlow = std::numeric_limits<double>::quiet_NaN();
    for (const auto& p : fundamentalDiagramPoints(allEdie))
        if (std::isfinite(p.qTotal) && !(p.qTotal <= maxFlow)) maxFlow = p.qTotal;

    json s;
    s["mode"] = mode;
    s["scenario"] = cfg.scenarioSlug();
    s["scenario_hash"] = hex64(cfg.scenarioHash());
    s["preset"] = cfg.preset;
    s["seed"] = seed;
    s["episodes"] = cfg.evaluation.nEpisodes;
    s["loading_time_s"] = cfg.scenario.loadingTimeS;
    s["episode_length_s"] = cfg.evaluation.episodeLengthS;
    s["settle_rate"] = cfg.evaluation.nEpisodes
                           ? static_cast<double>(settleCount) / cfg.evaluation.nEpisodes
                           : 0.0;
    s["t_settle_mean"] = jnum(meanFinite(settles));
    s["mean_speed_hv_mps"] = jnum(meanFinite(uHv));
    s["mean_speed_av_mps"] = jnum(meanFinite(uAv));
    s["lane_change_freq_hv"] = jnum(meanFinite(lcHv));
    s["lane_change_freq_av"] = jnum(meanFinite(lcAv));
    s["platoon_benefit_mean"] = jnum(meanFinite(bMeans));
    s["hellinger_mean"] = jnum(meanFinite(hMeans));
    s["spatial_metric_mean"] = jnum(meanFinite(mMeans));
    s["max_flow_vph"] = jnum(maxFlow);

    // verdicts need the paired baseline run; left null when it is not there yet
    json pareto;
    if (mode == "evaluate") {
        fs::path basePath = fs::path(dir).parent_path() / "baseline" / "summary.json";
        if (fs::exists(basePath)) {
            try {
                json bs = json::parse(readTextFile(basePath.string()));
                pareto = paretoRows(cfg, meanFinite(uHv), meanFinite(uAv),
                                    summaryNum(bs, "mean_speed_hv_mps"),
                                    summaryNum(bs, "mean_speed_av_mps"));
            } catch (const std::exception&) {
                pareto = json();
            }
        }
    }
    s["pareto"] = pareto;
    s["per_episode"] = perEpisode;
    writeTextFile(dir + "/summary.json", s.dump(2) + "\n");
    artifacts.push_back("summary.json");

    writeManifest(dir, cfg, mode, seed, artifacts);
}

} // namespace

void runEvaluate(const Config& cfg, uint64_t seed, const std::string& outRoot,
                 const std::string& checkpointPath, std::ostream* log) {
    std::string path = checkpointPath.empty()
                           ? cellDir(outRoot, cfg) + "/train/checkpoint.mfq"
                           : checkpointPath;
    Checkpoint cp = loadCheckpoint(path);
    if (cp.scenarioHash != cfg.scenarioHash())
        throw ConfigError("checkpoint was trained on a different scenario (" +
                          hex64(cp.scenarioHash) + " vs " + hex64(cfg.scenarioHash()) + ")");
    runEpisodeSet(cfg, &cp.net, seed, cellDir(outRoot, cfg) + "/eval", "evaluate", log);
}

void runBaseline(const Config& cfg, uint64_t seed, const std::string& outRoot,
                 std::ostream* log) {
    runEpisodeSet(cfg, nullptr, seed, cellDir(outRoot, cfg) + "/baseline", "baseline", log);
}

// --- compare -------------------------------------------------------------------

namespace {

struct CellData {
    Config cfg;
    std::string slug;
    json evalSummary, baseSummary;
    std::vector<EdieRecord> evalEdie, baseEdie;
};

std::vector<Config> compareCells(const Config& cfg) {
    std::vector<Config> cells = cfg.enumerateMatrix();
    bool found = false;
    for (const auto& c : cells)
        if (c.scenarioSlug() == cfg.scenarioSlug()) found = true;
    if (!found) cells.push_back(cfg);
    return cells;
}

std::vector<CellData> loadCells(const Config& cfg, const std::string& runsRoot,
                                std::vector<std::string>& warnings, bool needBaseline) {
    std::vector<CellData> cells;
    for (const Config& cellCfg : compareCells(cfg)) {
        std::string slug = cellCfg.scenarioSlug();
        std::string base = runsRoot + "/" + slug;
        CellData cd;
        cd.cfg = cellCfg;
        cd.slug = slug;
        try {
            cd.evalEdie = edieFromCsv(readTextFile(base + "/eval/edie.csv"));
            cd.evalSummary = json::parse(readTextFile(base + "/eval/summary.json"));
            if (needBaseline) {
                cd.baseEdie = edieFromCsv(readTextFile(base + "/baseline/edie.csv"));
                cd.baseSummary = json::parse(readTextFile(base + "/baseline/summary.json"));
            }
        } catch (const IoError& e) {
            warnings.push_back(slug + ": " + e.what());
            continue;
        } catch (const json::exception& e) {
            warnings.push_back(slug + ": bad summary JSON: " + e.what());
            continue;
        }
        cells.push_back(std::move(cd));
    }
    return cells;
}

void writeLambdaArtifacts(const std::string& dir, const LambdaEstimate& est) {
    std::ostringstream curve;
    curve << "lambda,loss\n";
    for (auto [lam, l] : est.lossCurve)
        curve << formatDouble(lam) << ',' << formatDouble(l) << "\n";
    writeTextFile(dir + "/lambda_loss.csv", curve.str());

    Series s{"loss", "#8e44ad", true, {}};
    for (auto [lam, l] : est.lossCurve) s.pts.emplace_back(lam, l);
    writeTextFile(dir + "/lambda_loss.svg",
                  svgChart("surplus-split fit", "lambda", "loss", {s}));

    json j;
    j["lambda"] = est.lambda;
    j["loss"] = est.loss;
    j["mae_hv_mps"] = est.mae1;
    j["mae_av_mps"] = est.mae2;
    j["mae_weighted_mps"] = est.maeWeighted;
    j["cells_used"] = est.cellsUsed;
    j["cells_skipped"] = est.cellsSkipped;
    j["source"] = "estimated";
    writeTextFile(dir + "/lambda.json", j.dump(2) + "\n");
}

} // namespace

void runEstimateLambda(const Config& cfg, const std::string& runsRoot,
                       const std::string& outRoot, std::ostream* log) {
    cfg.validate();
    std::vector<SpeedSample> samples;
    std::string sourceNote;
    if (fs::is_regular_file(runsRoot)) {
        // a single measurement CSV in the edie.csv format
        samples = speedSamplesFromRecords(edieFromCsv(readTextFile(runsRoot)));
        sourceNote = runsRoot;
    } else {
        std::vector<std::string> warnings;
        std::vector<CellData> cells = loadCells(cfg, runsRoot, warnings, false);
        if (cells.empty())
            throw ConfigError("no completed evaluation runs under " + runsRoot +
                              (warnings.empty() ? "" : " (" + warnings.front() + ")"));
        for (const auto& c : cells) {
            auto s = speedSamplesFromRecords(c.evalEdie);
            samples.insert(samples.end(), s.begin(), s.end());
        }
        sourceNote = std::to_string(cells.size()) + " scenario cells";
    }
    auto [n1, n2] = nominalClasses(cfg);
    LambdaEstimate est = estimateLambda(buildSpeedGrid(samples), n1, n2, scalingsFrom(cfg),
                                        cfg.game.w1, cfg.game.w2);
    std::string dir = outRoot + "/lambda";
    ensureDir(dir);
    writeLambdaArtifacts(dir, est);
    if (log)
        (*log) << "lambda estimate " << formatDouble(est.lambda) << " from " << est.cellsUsed
               << " grid cells (" << sourceNote << ")\n";
}

void runCompare(const Config& cfg, const std::string& runsRoot, const std::string& outRoot,
                double lambdaOverride, std::ostream* log) {
    cfg.validate();
    std::vector<std::string> warnings;
    std::vector<CellData> cells = loadCells(cfg, runsRoot, warnings, true);
    if (cells.empty())
        throw ConfigError("no completed scenario cells (eval + baseline) under " + runsRoot +
                          (warnings.empty() ? "" : " (" + warnings.front() + ")"));

    std::string dir = outRoot + "/compare";
    ensureDir(dir);
    std::vector<std::string> artifacts;

    auto [n1, n2] = nominalClasses(cfg);
    ScalingParams sc = scalingsFrom(cfg);

    // pooled measured speed grid from the policy runs
    std::vector<SpeedSample> samples;
    for (const auto& c : cells) {
        auto s = speedSamplesFromRecords(c.evalEdie);
        samples.insert(samples.end(), s.begin(), s.end());
    }
    SpeedGrid grid = buildSpeedGrid(samples);

    double lambda;
    if (lambdaOverride >= 0) {
        lambda = lambdaOverride;
        json j;
        j["lambda"] = lambda;
        j["source"] = "override";
        writeTextFile(dir + "/lambda.json", j.dump(2) + "\n");
        artifacts.push_back("lambda.json");
    } else {
        LambdaEstimate est = estimateLambda(grid, n1, n2, sc, cfg.game.w1, cfg.game.w2);
        lambda = est.lambda;
        writeLambdaArtifacts(dir, est);
        artifacts.push_back("lambda.json");
        artifacts.push_back("lambda_loss.csv");
        artifacts.push_back("lambda_loss.svg");
        if (log) (*log) << "compare: estimated lambda " << formatDouble(lambda) << "\n";
    }

    // baseline speeds on the same grid, for improvement columns
    std::vector<SpeedSample> baseSamples;
    for (const auto& c : cells) {
        auto s = speedSamplesFromRecords(c.baseEdie);
        baseSamples.insert(baseSamples.end(), s.begin(), s.end());
    }
    SpeedGrid baseGrid = buildSpeedGrid(baseSamples);

    // first- and second-order comparisons on observed grid cells; every
    // second-order column is an arithmetic combination of first-order ones
    std::ostringstream fo, so;
    fo << "rho1_vpkm,rho2_vpkm,n1,n2,u1_sim_mps,u2_sim_mps,q1_sim_vph,q2_sim_vph,"
          "u1_base_mps,u2_base_mps,u_star_model_mps,u1_model_mps,u2_model_mps,"
          "q1_model_vph,q2_model_vph,q_total_model_vph,p1,p2,surplus,regime\n";
    so << "rho1_vpkm,rho2_vpkm,du_sim_mps,du_model_mps,dq_sim_vph,dq_model_vph,"
          "du1_vs_base_mps,du2_vs_base_mps\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    long solverSkips = 0;
    for (const auto& [key, cell] : grid) {
        EquilibriumSolution eq;
        try {
            eq = solveEquilibrium(key.first, key.second, lambda, n1, n2, sc);
        } catch (const DomainError&) {
            ++solverSkips;
            continue;
        }
        double u1s = cell.has1() ? cell.meanU1() : nan;
        double u2s = cell.has2() ? cell.meanU2() : nan;
        double u1b = nan, u2b = nan;
        if (auto it = baseGrid.find(key); it != baseGrid.end()) {
            u1b = it->second.has1() ? it->second.meanU1() : nan;
            u2b = it->second.has2() ? it->second.meanU2() : nan;
        }
        double q1s = 3.6 * key.first * u1s, q2s = 3.6 * key.second * u2s;
        double q1m = 3.6 * key.first * eq.u1, q2m = 3.6 * key.second * eq.u2;
        fo << key.first << ',' << key.second << ',' << cell.n1 << ',' << cell.n2 << ','
           << formatDouble(u1s) << ',' << formatDouble(u2s) << ',' << formatDouble(q1s)
           << ',' << formatDouble(q2s) << ',' << formatDouble(u1b) << ','
           << formatDouble(u2b) << ',' << formatDouble(eq.uStar) << ','
           << formatDouble(eq.u1) << ',' << formatDouble(eq.u2) << ',' << formatDouble(q1m)
           << ',' << formatDouble(q2m) << ',' << formatDouble(q1m + q2m) << ','
           << formatDouble(eq.p1) << ',' << formatDouble(eq.p2) << ','
           << formatDouble(eq.surplus) << ','
           << (eq.regime == Regime::TwoPipe ? "two_pipe" : "one_pipe") << "\n";
        so << key.first << ',' << key.second << ',' << formatDouble(u1s - u2s) << ','
           << formatDouble(eq.u1 - eq.u2) << ',' << formatDouble(q1s - q2s) << ','
           << formatDouble(q1m - q2m) << ',' << formatDouble(u1s - u1b) << ','
           << formatDouble(u2s - u2b) << "\n";
    }
    writeTextFile(dir + "/first_order.csv", fo.str());
    writeTextFile(dir + "/second_order.csv", so.str());
    artifacts.push_back("first_order.csv");
    artifacts.push_back("second_order.csv");

    // Pareto verdicts from the paired summaries
    std::ostringstream pa;
    pa << "scenario,tau,u_hv_drl,u_av_drl,u_hv_base,u_av_base,hv_pass,av_pass,scenario_pass\n";
    json paretoReport = json::array();
    for (const auto& c : cells) {
        double u1d = summaryNum(c.evalSummary, "mean_speed_hv_mps");
        double u2d = summaryNum(c.evalSummary, "mean_speed_av_mps");
        double u1b = summaryNum(c.baseSummary, "mean_speed_hv_mps");
        double u2b = summaryNum(c.baseSummary, "mean_speed_av_mps");
        for (double tau : cfg.metrics.paretoTaus) {
            bool p1 = !std::isfinite(u1d) || !std::isfinite(u1b) || u1d >= u1b - tau;
            bool p2 = !std::isfinite(u2d) || !std::isfinite(u2b) || u2d >= u2b - tau;
            pa << c.slug << ',' << formatDouble(tau) << ',' << formatDouble(u1d) << ','
               << formatDouble(u2d) << ',' << formatDouble(u1b) << ',' << formatDouble(u2b)
               << ',' << (p1 ? 1 : 0) << ',' << (p2 ? 1 : 0) << ',' << (p1 && p2 ? 1 : 0)
               << "\n";
            json row;
            row["scenario"] = c.slug;
            row["tau"] = tau;
            row["hv_pass"] = p1;
            row["av_pass"] = p2;
            row["scenario_pass"] = p1 && p2;
            paretoReport.push_back(row);
        }
    }
    writeTextFile(dir + "/pareto.csv", pa.str());
    artifacts.push_back("pareto.csv");

    // fundamental diagram: measured points and model curves
    std::ostringstream fp;
    fp << "scenario,mode,region_id,t,rho_vpkm,q_vph\n";
    std::map<double, std::pair<double, double>> maxByPen; // pen -> (drl, base)
    for (const auto& c : cells) {
        auto addPoints = [&](const std::vector<EdieRecord>& recs, const char* mode,
                             double& best) {
            size_t k = 0;
            for (const auto& p : fundamentalDiagramPoints(recs)) {
                const EdieRecord& ref = recs[k * 3];
                fp << c.slug << ',' << mode << ',' << ref.regionId << ','
                   << formatDouble(ref.t0) << ',' << formatDouble(p.rhoTotal) << ','
                   << formatDouble(p.qTotal) << "\n";
                if (std::isfinite(p.qTotal) && p.qTotal > best) best = p.qTotal;
                ++k;
            }
        };
        auto [it, inserted] =
            maxByPen.try_emplace(c.cfg.scenario.avPenetration, -1e300, -1e300);
        auto& best = it->second;
        addPoints(c.evalEdie, "drl", best.first);
        addPoints(c.baseEdie, "baseline", best.second);
    }
    writeTextFile(dir + "/fd_points.csv", fp.str());
    artifacts.push_back("fd_points.csv");

    std::ostringstream fm;
    fm << "penetration,rho_vpkm,q_model_vph,q_onepipe_vph,u1_mps,u2_mps,regime\n";
    std::set<double> pens;
    for (const auto& c : cells) pens.insert(c.cfg.scenario.avPenetration);
    std::map<double, std::pair<double, double>> modelMaxByPen; // pen -> (split, one-pipe)
    std::vector<Series> fdSeries;
    const char* palette[] = {"#27ae60", "#e67e22", "#2980b9", "#8e44ad"};
    int colorIdx = 0;
    for (double pen : pens) {
        Series ms{"model p=" + formatFixed(pen, 2), palette[colorIdx % 4], true, {}};
        ++colorIdx;
        auto& best = modelMaxByPen[pen];
        best = {-1e300, -1e300};
        for (int rho = 1; rho < static_cast<int>(n1.jamDensity()); ++rho) {
            double rho1 = (1.0 - pen) * rho, rho2 = pen * rho;
            EquilibriumSolution eq;
            try {
                eq = solveEquilibrium(rho1, rho2, lambda, n1, n2, sc);
            } catch (const DomainError&) {
                continue;
            }
            double q = 3.6 * (rho1 * eq.u1 + rho2 * eq.u2);
            double q1p = 3.6 * rho * eq.uStar;
            fm << formatDouble(pen) << ',' << rho << ',' << formatDouble(q) << ','
               << formatDouble(q1p) << ',' << formatDouble(eq.u1) << ','
               << formatDouble(eq.u2) << ','
               << (eq.regime == Regime::TwoPipe ? "two_pipe" : "one_pipe") << "\n";
            best.first = std::max(best.first, q);
            best.second = std::max(best.second, q1p);
            ms.pts.emplace_back(rho, q);
        }
        fdSeries.push_back(std::move(ms));
    }
    writeTextFile(dir + "/fd_model.csv", fm.str());
    artifacts.push_back("fd_model.csv");

    Series drlPts{"drl", "#c0392b", false, {}};
    Series basePts{"baseline", "#7f8c8d", false, {}};
    for (const auto& c : cells) {
        for (const auto& p : fundamentalDiagramPoints(c.evalEdie))
            drlPts.pts.emplace_back(p.rhoTotal, p.qTotal);
        for (const auto& p : fundamentalDiagramPoints(c.baseEdie))
            basePts.pts.emplace_back(p.rhoTotal, p.qTotal);
    }
    fdSeries.push_back(std::move(basePts));
    fdSeries.push_back(std::move(drlPts));
    writeTextFile(dir + "/fd.svg", svgChart("fundamental diagram", "density (veh/km/lane)",
                                            "flow (veh/h/lane)", fdSeries));
    artifacts.push_back("fd.svg");

    json maxFlow;
    for (const auto& [pen, best] : maxByPen) {
        json row;
        row["drl_max_q_vph"] = jnum(best.first <= -1e299 ? NAN : best.first);
        row["baseline_max_q_vph"] = jnum(best.second <= -1e299 ? NAN : best.second);
        if (best.first > -1e299 && best.second > -1e299) {
            row["improvement_vph"] = best.first - best.second;
            row["improvement_pct"] =
                best.second != 0 ? 100.0 * (best.first - best.second) / best.second : 0.0;
        }
        auto it = modelMaxByPen.find(pen);
        if (it != modelMaxByPen.end() && it->second.first > -1e299) {
            row["model_split_max_q_vph"] = it->second.first;
            row["model_onepipe_max_q_vph"] = it->second.second;
            row["model_improvement_vph"] = it->second.first - it->second.second;
        }
        maxFlow[formatDouble(pen)] = row;
    }
    // published full-scale improvements, for orientation only
    maxFlow["full_scale_reference"] = {
        {"improvement_vph", {{"0.25", 90.0}, {"0.5", 130.0}, {"0.75", 98.0}}},
        {"note", "reference improvements from the full-scale configuration; "
                 "desk-preset numbers are not expected to match"}};
    writeTextFile(dir + "/max_flow.json", maxFlow.dump(2) + "\n");
    artifacts.push_back("max_flow.json");

    json report;
    report["lambda"] = lambda;
    report["lambda_source"] = lambdaOverride >= 0 ? "override" : "estimated";
    report["cells"] = json::array();
    for (const auto& c : cells) report["cells"].push_back(c.slug);
    report["warnings"] = warnings;
    report["grid_cells"] = static_cast<long>(grid.size());
    report["grid_cells_without_equilibrium"] = solverSkips;
    report["pareto"] = paretoReport;
    report["max_flow"] = maxFlow;
    writeTextFile(dir + "/report.json", report.dump(2) + "\n");
    artifacts.push_back("report.json");

    writeManifest(dir, cfg, "compare", 0, artifacts);
    if (log)
        (*log) << "compare: " << cells.size() << " scenario cells, " << grid.size()
               << " grid cells\n";
}

void runLambdaRegression(const Config& cfg, const std::string& runsRoot,
                         const std::string& outRoot, std::ostream* log) {
    cfg.validate();
    std::vector<std::string> warnings;
    std::vector<CellData> cells = loadCells(cfg, runsRoot, warnings, true);

    auto [n1, n2] = nominalClasses(cfg);
    ScalingParams sc = scalingsFrom(cfg);

    std::vector<double> xs, ys, rhos;
    std::vector<std::string> slugs;
    for (const auto& c : cells) {
        double mDrl = summaryNum(c.evalSummary, "spatial_metric_mean");
        double mBase = summaryNum(c.baseSummary, "spatial_metric_mean");
        if (!std::isfinite(mDrl) || !std::isfinite(mBase)) {
            warnings.push_back(c.slug + ": spatial metric unavailable");
            continue;
        }
        double surplus;
        try {
            EquilibriumSolution eq =
                solveEquilibrium(c.cfg.hvNominalDensityVpkm(), c.cfg.avNominalDensityVpkm(),
                                 cfg.game.lambda, n1, n2, sc);
            surplus = eq.surplus;
        } catch (const DomainError& e) {
            warnings.push_back(c.slug + ": " + e.what());
            continue;
        }
        xs.push_back(mDrl - mBase);
        ys.push_back(100.0 * surplus);
        rhos.push_back(c.cfg.hvNominalDensityVpkm() + c.cfg.avNominalDensityVpkm());
        slugs.push_back(c.slug);
    }
    if (xs.size() < 3)
        throw DomainError("lambda regression needs at least 3 completed scenario cells, got " +
                          std::to_string(xs.size()));

    Regression reg = olsFit(xs, ys);

    std::string dir = outRoot + "/regression";
    ensureDir(dir);
    std::ostringstream sc_;
    sc_ << "scenario,delta_m,surplus_pct,rho_total_vpkm\n";
    for (size_t i = 0; i < xs.size(); ++i)
        sc_ << slugs[i] << ',' << formatDouble(xs[i]) << ',' << formatDouble(ys[i]) << ','
            << formatDouble(rhos[i]) << "\n";
    writeTextFile(dir + "/scatter.csv", sc_.str());

    json j;
    j["slope"] = reg.slope;
    j["intercept"] = reg.intercept;
    j["r"] = reg.r;
    j["p_value"] = reg.pValue;
    j["n"] = reg.n;
    j["warnings"] = warnings;
    j["full_scale_reference"] = {{"slope", 2.34},
                                 {"intercept", 3.18},
                                 {"r", 0.53},
                                 {"note", "values from the full-scale configuration"}};
    writeTextFile(dir + "/lambda_regression.json", j.dump(2) + "\n");

    Series pts{"cells", "#2980b9", false, {}};
    for (size_t i = 0; i < xs.size(); ++i) pts.pts.emplace_back(xs[i], ys[i]);
    double x0 = *std::min_element(xs.begin(), xs.end());
    double x1 = *std::max_element(xs.begin(), xs.end());
    Series fit{"fit", "#c0392b", true, {}};
    fit.pts.emplace_back(x0, reg.intercept + reg.slope * x0);
    fit.pts.emplace_back(x1, reg.intercept + reg.slope * x1);
    writeTextFile(dir + "/regression.svg",
                  svgChart("surplus vs spatial-metric improvement", "delta M_t",
                           "surplus (%)", {pts, fit}));
    if (log)
        (*log) << "regression: slope " << formatDouble(reg.slope) << ", r "
               << formatDouble(reg.r) << ", p " << formatDouble(reg.pValue) << " (n=" << reg.n
               << ")\n";
}

std::string equilibriumJson(const Config& cfg, double rho1, double rho2, double lambda) {
    cfg.validate();
    if (lambda < 0) lambda = cfg.game.lambda;
    auto [n1, n2] = nominalClasses(cfg);
    EquilibriumSolution eq = solveEquilibrium(rho1, rho2, lambda, n1, n2, scalingsFrom(cfg));
    json j;
    j["rho1_vpkm"] = rho1;
    j["rho2_vpkm"] = rho2;
    j["lambda"] = lambda;
    j["regime"] = eq.regime == Regime::TwoPipe ? "two_pipe" : "one_pipe";
    j["u_star_mps"] = eq.uStar;
    j["p1_min"] = eq.p1Min;
    j["p2_min"] = eq.p2Min;
    j["surplus"] = eq.surplus;
    j["p1"] = eq.p1;
    j["p2"] = eq.p2;
    j["u1_mps"] = eq.u1;
    j["u2_mps"] = eq.u2;
    return j.dump(2) + "\n";
}

int threadsFromEnv() {
    const char* env = std::getenv("MIXEDFLOW_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1 || v > 1024)
        throw ConfigError("MIXEDFLOW_THREADS must be a positive integer");
    return static_cast<int>(v);
}

MatrixReport runMatrix(const Config& cfg, uint64_t seed, const std::string& mode,
                       const std::string& outRoot, int threads, std::ostream* log) {
    cfg.validate();
    if (mode != "train" && mode != "evaluate" && mode != "baseline" && mode != "all")
        throw ConfigError("matrix mode must be train, evaluate, baseline, or all");
    std::vector<Config> cells = cfg.enumerateMatrix();
    MatrixReport report;
    report.cellsTotal = static_cast<int>(cells.size());

    std::mutex mu;
    std::vector<json> cellRows(cells.size());
    std::atomic<size_t> next{0};
    threads = std::max(1, std::min<int>(threads, static_cast<int>(cells.size())));
    std::ostream* cellLog = threads == 1 ? log : nullptr;

    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Config& cell = cells[i];
            uint64_t cellSeed =
                mixSeed(seed, 0x4d545258, fnv1a64(cell.scenarioSlug().data(),
                                                  cell.scenarioSlug().size()));
            json row;
            row["scenario"] = cell.scenarioSlug();
            row["seed"] = cellSeed;
            std::string stage = "";
            try {
                if (mode == "train" || mode == "all") {
                    stage = "train";
                    runTrain(cell, cellSeed, outRoot, "", cellLog);
                }
                // baseline first so evaluation can fill in Pareto verdicts
                if (mode == "baseline" || mode == "all") {
                    stage = "baseline";
                    runBaseline(cell, cellSeed, outRoot, cellLog);
                }
                if (mode == "evaluate" || mode == "all") {
                    stage = "evaluate";
                    runEvaluate(cell, cellSeed, outRoot, "", cellLog);
                }
                row["status"] = "ok";
            } catch (const Error& e) {
                row["status"] = "failed";
                row["stage"] = stage;
                row["error"] = e.what();
                std::lock_guard<std::mutex> lock(mu);
                report.failures.push_back(cell.scenarioSlug() + " " + stage + ": " + e.what());
                ++report.cellsFailed;
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                cellRows[i] = row;
                if (log)
                    (*log) << "matrix cell " << cell.scenarioSlug() << ": "
                           << row["status"].get<std::string>() << "\n";
            }
        }
    };

    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    json j;
    j["mode"] = mode;
    j["seed"] = seed;
    j["threads"] = threads;
    j["cells"] = cellRows;

    int okCells = report.cellsTotal - report.cellsFailed;
    if (mode == "all" && okCells > 0) {
        try {
            runCompare(cfg, outRoot, outRoot, -1.0, log);
            report.compareRan = true;
            j["compare"] = "ok";
        } catch (const Error& e) {
            j["compare"] = std::string("failed: ") + e.what();
            report.failures.push_back(std::string("compare: ") + e.what());
        }
        if (okCells >= 3) {
            try {
                runLambdaRegression(cfg, outRoot, outRoot, log);
                report.regressionRan = true;
                j["regression"] = "ok";
            } catch (const Error& e) {
                j["regression"] = std::string("failed: ") + e.what();
                report.failures.push_back(std::string("regression: ") + e.what());
            }
        } else {
            j["regression"] = "skipped: fewer than 3 scenario cells";
        }
    }
    j["failures"] = report.failures;
    ensureDir(outRoot);
    writeTextFile(outRoot + "/matrix_report.json", j.dump(2) + "\n");
    if (log)
        (*log) << "matrix: " << okCells << "/" << report.cellsTotal << " cells ok"
               << (report.cellsFailed ? ", " + std::to_string(report.cellsFailed) + " failed"
                                      : "")
               << "\n";
    return report;
}

} // namespace mixedflow
