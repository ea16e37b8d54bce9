#include "core/config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace mixedflow {

namespace {

constexpr double kMetersPerMile = 1609.344;

void requireKnownKeys(const json& j, const std::string& section,
                      const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("unknown config key '" + (section.empty() ? it.key() : section + "." + it.key()) + "'");
    }
}

template <typename T> void fetch(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

void fetchRange(const json& j, const char* key, std::array<double, 2>& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 2)
        throw ConfigError(std::string("'") + key + "' must be a two-element array");
    out[0] = v[0].get<double>();
    out[1] = v[1].get<double>();
}

json scenarioJson(const Config::Scenario& s) {
    return json{{"density_vpm_lane", s.densityVpmLane}, {"av_penetration", s.avPenetration},
                {"ring_length_m", s.ringLengthM},       {"n_lanes", s.nLanes},
                {"dt_s", s.dtS},                        {"loading_time_s", s.loadingTimeS},
                {"sensing_radius_m", s.sensingRadiusM}};
}

json idmJson(const Config::Idm& p) {
    return json{{"a_max", p.aMax},
                {"b_comf", p.bComf},
                {"b_emergency", p.bEmergency},
                {"s0", p.s0},
                {"delta", p.delta},
                {"headway_hh", p.headwayHH},
                {"headway_ha", p.headwayHA},
                {"headway_aa", p.headwayAA},
                {"headway_ah", p.headwayAH},
                {"hv_speed_range", p.hvSpeedRange},
                {"av_speed_range", p.avSpeedRange},
                {"vehicle_length_m", p.vehicleLengthM}};
}

json laneChangeJson(const Config::LaneChange& p) {
    return json{{"politeness", p.politeness},
                {"incentive_threshold", p.incentiveThreshold},
                {"cooldown_s", p.cooldownS}};
}

json rewardJson(const Config::Reward& p) {
    return json{{"w_speed", p.wSpeed},
                {"w_lane_change", p.wLaneChange},
                {"collision_penalty", p.collisionPenalty}};
}

json dqnJson(const Config::Dqn& p) {
    return json{{"hidden", p.hidden},
                {"state_size", p.stateSize},
                {"max_neighbors", p.maxNeighbors},
                {"gamma", p.gamma},
                {"batch_size", p.batchSize},
                {"buffer_capacity", p.bufferCapacity},
                {"target_sync_steps", p.targetSyncSteps},
                {"decision_interval_s", p.decisionIntervalS},
                {"train_every_decisions", p.trainEveryDecisions},
                {"lr0", p.lr0},
                {"lr_decay", p.lrDecay},
                {"eps_start", p.epsStart},
                {"eps_end", p.epsEnd},
                {"eps_decay_episodes", p.epsDecayEpisodes}};
}

} // namespace

std::string Config::toJsonText() const {
    json j;
    j["preset"] = preset;
    j["scenario"] = scenarioJson(scenario);
    j["idm"] = idmJson(idm);
    j["lane_change"] = laneChangeJson(laneChange);
    j["reward"] = rewardJson(reward);
    j["dqn"] = dqnJson(dqn);
    j["training"] = {{"episodes", training.episodes},
                     {"warmup_episodes", training.warmupEpisodes},
                     {"episode_length_s", training.episodeLengthS},
                     {"smooth_window", training.smoothWindow}};
    j["evaluation"] = {{"n_episodes", evaluation.nEpisodes},
                       {"episode_length_s", evaluation.episodeLengthS},
                       {"log_every", evaluation.logEvery}};
    j["game"] = {{"a1", game.a1},
                 {"a2", game.a2},
                 {"b1", game.b1},
                 {"b2", game.b2},
                 {"w1", game.w1},
                 {"w2", game.w2},
                 {"lambda", game.lambda},
                 {"hv_nominal_umax", game.hvNominalUmax},
                 {"av_nominal_umax", game.avNominalUmax}};
    j["metrics"] = {{"edie_dx_m", metrics.edieDxM},
                    {"edie_dt_s", metrics.edieDtS},
                    {"ne_speed_std", metrics.neSpeedStd},
                    {"ne_spacing_std", metrics.neSpacingStd},
                    {"ne_window_s", metrics.neWindowS},
                    {"pareto_taus", metrics.paretoTaus},
                    {"pareto_window_s", metrics.paretoWindowS},
                    {"platoon_headway_s", metrics.platoonHeadwayS},
                    {"platoon_buffer_m", metrics.platoonBufferM},
                    {"spatial_cells_per_lane", metrics.spatialCellsPerLane},
                    {"spatial_cell_m", metrics.spatialCellM},
                    {"spatial_a1", metrics.spatialA1},
                    {"spatial_a2", metrics.spatialA2}};
    j["matrix"] = {{"densities", matrix.densities}, {"penetrations", matrix.penetrations}};
    return j.dump(2) + "\n";
}

namespace {
// Parse without the semantic validation pass, so partially-edited configs can
// round-trip (setPath validates only the final state).
Config parseConfigJson(const std::string& text);
} // namespace

Config Config::fromJsonText(const std::string& text) {
    Config c = parseConfigJson(text);
    c.validate();
    return c;
}

namespace {
Config parseConfigJson(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    requireKnownKeys(j, "", {"preset", "scenario", "idm", "lane_change", "reward", "dqn",
                             "training", "evaluation", "game", "metrics", "matrix"});
    Config c;
    if (j.contains("preset")) {
        c.applyPreset(j.at("preset").get<std::string>());
    }
    if (j.contains("scenario")) {
        const json& s = j["scenario"];
        requireKnownKeys(s, "scenario",
                         {"density_vpm_lane", "av_penetration", "ring_length_m", "n_lanes",
                          "dt_s", "loading_time_s", "sensing_radius_m"});
        fetch(s, "density_vpm_lane", c.scenario.densityVpmLane);
        fetch(s, "av_penetration", c.scenario.avPenetration);
        fetch(s, "ring_length_m", c.scenario.ringLengthM);
        fetch(s, "n_lanes", c.scenario.nLanes);
        fetch(s, "dt_s", c.scenario.dtS);
        fetch(s, "loading_time_s", c.scenario.loadingTimeS);
        fetch(s, "sensing_radius_m", c.scenario.sensingRadiusM);
    }
    if (j.contains("idm")) {
        const json& s = j["idm"];
        requireKnownKeys(s, "idm",
                         {"a_max", "b_comf", "b_emergency", "s0", "delta", "headway_hh",
                          "headway_ha", "headway_aa", "headway_ah", "hv_speed_range",
                          "av_speed_range", "vehicle_length_m"});
        fetch(s, "a_max", c.idm.aMax);
        fetch(s, "b_comf", c.idm.bComf);
        fetch(s, "b_emergency", c.idm.bEmergency);
        fetch(s, "s0", c.idm.s0);
        fetch(s, "delta", c.idm.delta);
        fetch(s, "headway_hh", c.idm.headwayHH);
        fetch(s, "headway_ha", c.idm.headwayHA);
        fetch(s, "headway_aa", c.idm.headwayAA);
        fetch(s, "headway_ah", c.idm.headwayAH);
        fetchRange(s, "hv_speed_range", c.idm.hvSpeedRange);
        fetchRange(s, "av_speed_range", c.idm.avSpeedRange);
        fetch(s, "vehicle_length_m", c.idm.vehicleLengthM);
    }
    if (j.contains("lane_change")) {
        const json& s = j["lane_change"];
        requireKnownKeys(s, "lane_change", {"politeness", "incentive_threshold", "cooldown_s"});
        fetch(s, "politeness", c.laneChange.politeness);
        fetch(s, "incentive_threshold", c.laneChange.incentiveThreshold);
        fetch(s, "cooldown_s", c.laneChange.cooldownS);
    }
    if (j.contains("reward")) {
        const json& s = j["reward"];
        requireKnownKeys(s, "reward", {"w_speed", "w_lane_change", "collision_penalty"});
        fetch(s, "w_speed", c.reward.wSpeed);
        fetch(s, "w_lane_change", c.reward.wLaneChange);
        fetch(s, "collision_penalty", c.reward.collisionPenalty);
    }
    if (j.contains("dqn")) {
        const json& s = j["dqn"];
        requireKnownKeys(s, "dqn",
                         {"hidden", "state_size", "max_neighbors", "gamma", "batch_size",
                          "buffer_capacity", "target_sync_steps", "decision_interval_s",
                          "train_every_decisions", "lr0", "lr_decay", "eps_start", "eps_end",
                          "eps_decay_episodes"});
        fetch(s, "hidden", c.dqn.hidden);
        fetch(s, "state_size", c.dqn.stateSize);
        fetch(s, "max_neighbors", c.dqn.maxNeighbors);
        fetch(s, "gamma", c.dqn.gamma);
        fetch(s, "batch_size", c.dqn.batchSize);
        fetch(s, "buffer_capacity", c.dqn.bufferCapacity);
        fetch(s, "target_sync_steps", c.dqn.targetSyncSteps);
        fetch(s, "decision_interval_s", c.dqn.decisionIntervalS);
        fetch(s, "train_every_decisions", c.dqn.trainEveryDecisions);
        fetch(s, "lr0", c.dqn.lr0);
        fetch(s, "lr_decay", c.dqn.lrDecay);
        fetch(s, "eps_start", c.dqn.epsStart);
        fetch(s, "eps_end", c.dqn.epsEnd);
        fetch(s, "eps_decay_episodes", c.dqn.epsDecayEpisodes);
    }
    if (j.contains("training")) {
        const json& s = j["training"];
        requireKnownKeys(s, "training",
                         {"episodes", "warmup_episodes", "episode_length_s", "smooth_window"});
        fetch(s, "episodes", c.training.episodes);
        fetch(s, "warmup_episodes", c.training.warmupEpisodes);
        fetch(s, "episode_length_s", c.training.episodeLengthS);
        fetch(s, "smooth_window", c.training.smoothWindow);
    }
    if (j.contains("evaluation")) {
        const json& s = j["evaluation"];
        requireKnownKeys(s, "evaluation", {"n_episodes", "episode_length_s", "log_every"});
        fetch(s, "n_episodes", c.evaluation.nEpisodes);
        fetch(s, "episode_length_s", c.evaluation.episodeLengthS);
        fetch(s, "log_every", c.evaluation.logEvery);
    }
    if (j.contains("game")) {
        const json& s = j["game"];
        requireKnownKeys(s, "game",
                         {"a1", "a2", "b1", "b2", "w1", "w2", "lambda", "hv_nominal_umax",
                          "av_nominal_umax"});
        fetch(s, "a1", c.game.a1);
        fetch(s, "a2", c.game.a2);
        fetch(s, "b1", c.game.b1);
        fetch(s, "b2", c.game.b2);
        fetch(s, "w1", c.game.w1);
        fetch(s, "w2", c.game.w2);
        fetch(s, "lambda", c.game.lambda);
        fetch(s, "hv_nominal_umax", c.game.hvNominalUmax);
        fetch(s, "av_nominal_umax", c.game.avNominalUmax);
    }
    if (j.contains("metrics")) {
        const json& s = j["metrics"];
        requireKnownKeys(s, "metrics",
                         {"edie_dx_m", "edie_dt_s", "ne_speed_std", "ne_spacing_std",
                          "ne_window_s", "pareto_taus", "pareto_window_s", "platoon_headway_s",
                          "platoon_buffer_m", "spatial_cells_per_lane", "spatial_cell_m",
                          "spatial_a1", "spatial_a2"});
        fetch(s, "edie_dx_m", c.metrics.edieDxM);
        fetch(s, "edie_dt_s", c.metrics.edieDtS);
        fetch(s, "ne_speed_std", c.metrics.neSpeedStd);
        fetch(s, "ne_spacing_std", c.metrics.neSpacingStd);
        fetch(s, "ne_window_s", c.metrics.neWindowS);
        fetch(s, "pareto_taus", c.metrics.paretoTaus);
        fetch(s, "pareto_window_s", c.metrics.paretoWindowS);
        fetch(s, "platoon_headway_s", c.metrics.platoonHeadwayS);
        fetch(s, "platoon_buffer_m", c.metrics.platoonBufferM);
        fetch(s, "spatial_cells_per_lane", c.metrics.spatialCellsPerLane);
        fetch(s, "spatial_cell_m", c.metrics.spatialCellM);
        fetch(s, "spatial_a1", c.metrics.spatialA1);
        fetch(s, "spatial_a2", c.metrics.spatialA2);
    }
    if (j.contains("matrix")) {
        const json& s = j["matrix"];
        requireKnownKeys(s, "matrix", {"densities", "penetrations"});
        fetch(s, "densities", c.matrix.densities);
        fetch(s, "penetrations", c.matrix.penetrations);
    }
    return c;
}
} // namespace

Config Config::fromFile(const std::string& path) {
    return fromJsonText(readTextFile(path));
}

void Config::setPath(const std::string& key, const std::string& value) {
    json j = json::parse(toJsonText());
    json* node = &j;
    std::string rest = key;
    std::string leaf;
    while (true) {
        size_t dot = rest.find('.');
        if (dot == std::string::npos) {
            leaf = rest;
            break;
        }
        std::string head = rest.substr(0, dot);
        if (!node->contains(head))
            throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[head];
        rest = rest.substr(dot + 1);
    }
    if (!node->is_object() || !node->contains(leaf))
        throw ConfigError("unknown config key '" + key + "'");
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value; // plain string
    (*node)[leaf] = parsed;
    *this = parseConfigJson(j.dump());
}

void Config::applyPreset(const std::string& name) {
    if (name == "full") {
        Config fresh;
        std::string keepPreset = "full";
        *this = fresh;
        preset = keepPreset;
        return;
    }
    if (name == "desk") {
        Config fresh;
        *this = fresh;
        preset = "desk";
        scenario.ringLengthM = 500.0;
        training.episodes = 200;
        training.episodeLengthS = 600.0;
        evaluation.episodeLengthS = 600.0;
        // slower annealing than a proportional shrink of the full schedule:
        // with a tenth of the data, late exploration is what keeps executed
        // lane changes in the replay buffer at all
        dqn.epsDecayEpisodes = 60.0;
        // a desk episode yields ~500 decision rounds; step on each of them
        dqn.trainEveryDecisions = 1;
        // roughly one target sync per episode; the full-scale interval would
        // leave the value function still ramping after 200 episodes
        dqn.targetSyncSteps = 250;
        // shorter credit horizon (~10 decisions). Q magnitudes scale with
        // 1/(1-gamma); at 0.99 the unit lane-change penalty sits three orders
        // of magnitude under the value scale, unresolvable in a 200-episode
        // budget. Lane-change consequences play out within seconds anyway.
        dqn.gamma = 0.9;
        matrix.densities = {25.0, 40.0};
        matrix.penetrations = {0.5};
        return;
    }
    throw ConfigError("unknown preset '" + name + "' (expected 'full' or 'desk')");
}

void Config::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
    if (!(scenario.densityVpmLane >= 0)) fail("scenario.density_vpm_lane must be >= 0");
    if (scenario.avPenetration < 0 || scenario.avPenetration > 1)
        fail("scenario.av_penetration must lie in [0,1]");
    if (scenario.ringLengthM <= 0) fail("scenario.ring_length_m must be positive");
    if (scenario.nLanes < 1) fail("scenario.n_lanes must be >= 1");
    if (scenario.dtS <= 0) fail("scenario.dt_s must be positive");
    if (scenario.loadingTimeS < 0) fail("scenario.loading_time_s must be >= 0");
    if (scenario.sensingRadiusM <= 0) fail("scenario.sensing_radius_m must be positive");
    if (idm.aMax <= 0 || idm.bComf <= 0 || idm.bEmergency <= 0) fail("idm accelerations must be positive");
    if (idm.s0 <= 0) fail("idm.s0 must be positive");
    if (idm.delta <= 0) fail("idm.delta must be positive");
    for (double h : {idm.headwayHH, idm.headwayHA, idm.headwayAA, idm.headwayAH})
        if (h <= 0) fail("idm headways must be positive");
    if (idm.hvSpeedRange[0] > idm.hvSpeedRange[1] || idm.hvSpeedRange[0] <= 0)
        fail("idm.hv_speed_range must be an increasing positive pair");
    if (idm.avSpeedRange[0] > idm.avSpeedRange[1] || idm.avSpeedRange[0] <= 0)
        fail("idm.av_speed_range must be an increasing positive pair");
    if (idm.vehicleLengthM <= 0) fail("idm.vehicle_length_m must be positive");
    if (laneChange.politeness < 0) fail("lane_change.politeness must be >= 0");
    if (laneChange.cooldownS < 0) fail("lane_change.cooldown_s must be >= 0");
    if (dqn.stateSize < 4) fail("dqn.state_size too small");
    if (dqn.maxNeighbors < 0) fail("dqn.max_neighbors must be >= 0");
    if (4 + 5 * dqn.maxNeighbors > dqn.stateSize)
        fail("dqn.state_size cannot hold max_neighbors blocks");
    for (int h : dqn.hidden)
        if (h < 1) fail("dqn.hidden sizes must be positive");
    if (dqn.gamma <= 0 || dqn.gamma >= 1) fail("dqn.gamma must lie in (0,1)");
    if (dqn.batchSize < 1) fail("dqn.batch_size must be >= 1");
    if (dqn.bufferCapacity < dqn.batchSize) fail("dqn.buffer_capacity must hold a batch");
    if (dqn.targetSyncSteps < 1) fail("dqn.target_sync_steps must be >= 1");
    if (dqn.decisionIntervalS < scenario.dtS)
        fail("dqn.decision_interval_s must be >= scenario.dt_s");
    if (dqn.trainEveryDecisions < 1) fail("dqn.train_every_decisions must be >= 1");
    if (dqn.lr0 <= 0 || dqn.lrDecay <= 0 || dqn.lrDecay > 1) fail("bad dqn learning-rate schedule");
    if (dqn.epsStart < dqn.epsEnd || dqn.epsEnd < 0 || dqn.epsStart > 1)
        fail("bad dqn epsilon schedule");
    if (dqn.epsDecayEpisodes <= 0) fail("dqn.eps_decay_episodes must be positive");
    if (training.episodes < 1) fail("training.episodes must be >= 1");
    if (training.warmupEpisodes < 0 || training.warmupEpisodes >= training.episodes)
        fail("training.warmup_episodes must lie in [0, episodes)");
    if (training.episodeLengthS <= scenario.loadingTimeS)
        fail("training.episode_length_s must exceed scenario.loading_time_s");
    if (training.smoothWindow < 1) fail("training.smooth_window must be >= 1");
    if (evaluation.nEpisodes < 1) fail("evaluation.n_episodes must be >= 1");
    if (evaluation.episodeLengthS <= scenario.loadingTimeS)
        fail("evaluation.episode_length_s must exceed scenario.loading_time_s");
    if (evaluation.logEvery < 1) fail("evaluation.log_every must be >= 1");
    for (double v : {game.a1, game.a2, game.b1, game.b2})
        if (v <= 0) fail("game scalings must be positive");
    if (game.w1 < 0 || game.w2 < 0 || game.w1 + game.w2 <= 0) fail("bad game class weights");
    if (game.lambda < 0 || game.lambda > 1) fail("game.lambda must lie in [0,1]");
    if (game.hvNominalUmax <= 0 || game.avNominalUmax <= 0) fail("game nominal speeds must be positive");
    if (metrics.edieDxM <= 0 || metrics.edieDtS <= 0) fail("edie region dims must be positive");
    if (metrics.neWindowS <= 0) fail("metrics.ne_window_s must be positive");
    if (metrics.neSpeedStd <= 0 || metrics.neSpacingStd <= 0) fail("ne thresholds must be positive");
    for (double t : metrics.paretoTaus)
        if (t < 0) fail("pareto taus must be >= 0");
    if (metrics.paretoWindowS <= 0) fail("metrics.pareto_window_s must be positive");
    if (metrics.platoonHeadwayS < 0 || metrics.platoonBufferM < 0) fail("bad platoon policy");
    if (metrics.spatialCellsPerLane < 0) fail("metrics.spatial_cells_per_lane must be >= 0");
    if (metrics.spatialCellsPerLane == 0 && metrics.spatialCellM <= 0)
        fail("metrics.spatial_cell_m must be positive");
    if (matrix.densities.empty() || matrix.penetrations.empty())
        fail("matrix lists must be non-empty");
    for (double d : matrix.densities)
        if (d <= 0) fail("matrix densities must be positive");
    for (double p : matrix.penetrations)
        if (p < 0 || p > 1) fail("matrix penetrations must lie in [0,1]");
    if (preset != "full" && preset != "desk") fail("preset must be 'full' or 'desk'");
}

double Config::densityVehPerM() const {
    return scenario.densityVpmLane / kMetersPerMile;
}

int Config::vehiclesPerLane() const {
    return static_cast<int>(std::llround(densityVehPerM() * scenario.ringLengthM));
}

int Config::totalVehicles() const { return vehiclesPerLane() * scenario.nLanes; }

int Config::avCount() const {
    return static_cast<int>(std::llround(scenario.avPenetration * totalVehicles()));
}

double Config::hvNominalDensityVpkm() const {
    return (1.0 - scenario.avPenetration) * densityVehPerM() * 1000.0;
}

double Config::avNominalDensityVpkm() const {
    return scenario.avPenetration * densityVehPerM() * 1000.0;
}

std::string Config::scenarioSlug() const {
    std::ostringstream ss;
    ss << "d";
    double d = scenario.densityVpmLane;
    if (d == std::floor(d))
        ss << static_cast<long>(d);
    else
        ss << formatDouble(d);
    ss << "_p" << static_cast<long>(std::llround(scenario.avPenetration * 100.0));
    return ss.str();
}

uint64_t Config::scenarioHash() const {
    // Everything that shapes dynamics or the observation/action contract.
    json j;
    j["scenario"] = scenarioJson(scenario);
    j["idm"] = idmJson(idm);
    j["lane_change"] = laneChangeJson(laneChange);
    j["reward"] = rewardJson(reward);
    j["dqn"] = dqnJson(dqn);
    std::string s = j.dump();
    return fnv1a64(s.data(), s.size());
}

std::vector<Config> Config::enumerateMatrix() const {
    std::vector<Config> out;
    for (double d : matrix.densities) {
        for (double p : matrix.penetrations) {
            Config c = *this;
            c.scenario.densityVpmLane = d;
            c.scenario.avPenetration = p;
            c.validate();
            out.push_back(std::move(c));
        }
    }
    return out;
}

} // namespace mixedflow
