#include "core/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace mixedflow {

namespace {

struct PendingStep {
    std::vector<float> obs;
    Action action = Action::KeepLane;
    bool requestedChange = false;
    double reward = 0;
    bool hasReward = false;
};

uint8_t actionMask(const std::array<bool, 3>& legal) {
    uint8_t m = 0;
    for (size_t a = 0; a < legal.size(); ++a)
        if (legal[a]) m = static_cast<uint8_t>(m | (1u << a));
    return m;
}

} // namespace

TrainResult trainPolicy(const Config& cfg, uint64_t seed, const ProgressFn& progress,
                        const QNetwork* resumeNet, int startEpisode) {
    cfg.validate();
    const int ticksPerRound =
        static_cast<int>(std::llround(cfg.dqn.decisionIntervalS / cfg.scenario.dtS));
    const int loadTicks =
        static_cast<int>(std::llround(cfg.scenario.loadingTimeS / cfg.scenario.dtS));
    const int postTicks = static_cast<int>(
        std::llround((cfg.training.episodeLengthS - cfg.scenario.loadingTimeS) /
                     cfg.scenario.dtS));
    const int rounds = postTicks / ticksPerRound;
    if (rounds < 1)
        throw ConfigError("training episode too short for a single decision round");

    std::vector<int> sizes;
    sizes.push_back(cfg.dqn.stateSize);
    for (int h : cfg.dqn.hidden) sizes.push_back(h);
    sizes.push_back(3);

    TrainResult result;
    result.scenarioHash = cfg.scenarioHash();
    if (resumeNet) {
        if (resumeNet->sizes != sizes)
            throw ConfigError("resume checkpoint layer sizes do not match the config");
        result.net = *resumeNet;
    } else {
        Rng initRng(mixSeed(seed, kStreamNet, 0));
        result.net = QNetwork::heInit(sizes, initRng);
    }
    QNetwork target = result.net;
    AdamState adam = AdamState::zerosLike(result.net);
    ReplayBuffer buffer(cfg.dqn.bufferCapacity);

    std::vector<double> totals; // for the smoothed column

    for (int episode = startEpisode; episode < cfg.training.episodes; ++episode) {
        const bool warmup = episode < cfg.training.warmupEpisodes;
        const double eps = warmup ? 1.0 : epsilonAt(cfg.dqn, episode);
        const double lr = cfg.dqn.lr0 * std::pow(cfg.dqn.lrDecay, episode);

        Simulator sim(cfg, mixSeed(seed, kStreamTrainEnv, static_cast<uint64_t>(episode)));
        if (sim.automatedIds().empty())
            throw ConfigError("training requires at least one automated vehicle");
        Rng agentRng(mixSeed(seed, kStreamAgent, static_cast<uint64_t>(episode)));

        const auto& avIds = sim.automatedIds();
        std::map<int, PendingStep> pending; // av id -> last decision awaiting s'
        double episodeReward = 0;
        bool crashed = false;
        int crashVehicle = -1;

        auto ruleActionsForAvs = [&]() {
            std::map<int, Action> actions;
            for (int id : avIds) actions[id] = sim.rulePolicy(id);
            return actions;
        };

        // loading phase: automated vehicles follow the rule policy
        for (int t = 0; t < loadTicks && !crashed; ++t) {
            try {
                sim.step(ruleActionsForAvs());
            } catch (const CollisionError& e) {
                throw InvariantError(std::string("collision during vehicle loading: ") +
                                     e.what());
            }
        }

        for (int round = 0; round < rounds && !crashed; ++round) {
            // one observation per vehicle serves as s' of the previous decision
            // and s of the next one
            std::map<int, Action> actions;
            for (int id : avIds) {
                std::vector<float> obsNow = encodeObservation(sim, id, cfg);
                auto legal = legalActions(sim.vehicles()[id].lane, sim.nLanes());
                auto it = pending.find(id);
                if (it != pending.end()) {
                    PendingStep& p = it->second;
                    buffer.push(Transition{std::move(p.obs), static_cast<int>(p.action),
                                           static_cast<float>(p.reward), obsNow, false,
                                           actionMask(legal)});
                    episodeReward += p.reward;
                    pending.erase(it);
                }
                Action a = selectAction(result.net, obsNow, legal, eps, agentRng);
                actions[id] = a;
                PendingStep p;
                p.obs = std::move(obsNow);
                p.action = a;
                p.requestedChange = a != Action::KeepLane;
                pending[id] = std::move(p);
            }

            std::map<int, double> speedSum;
            int ticksDone = 0;
            try {
                for (int t = 0; t < ticksPerRound; ++t) {
                    sim.step(t == 0 ? actions : std::map<int, Action>{});
                    for (int id : avIds) speedSum[id] += sim.vehicles()[id].speed;
                    ++ticksDone;
                }
            } catch (const CollisionError& e) {
                crashed = true;
                crashVehicle = e.followerId;
                ++result.collisions;
            }

            // reward: average speed over the round minus the lane-change cost.
            // The cost attaches to the chosen action, executed or not; if a
            // vetoed request were free, requesting constantly and letting the
            // safety check sort it out would be as good as keeping lane.
            for (int id : avIds) {
                PendingStep& p = pending[id];
                double meanSpeed = ticksDone > 0 ? speedSum[id] / ticksDone : 0.0;
                double cost = p.requestedChange ? cfg.reward.wLaneChange : 0.0;
                p.reward = cfg.reward.wSpeed * meanSpeed - cost;
                if (crashed && id == crashVehicle) p.reward = -cfg.reward.collisionPenalty;
                p.hasReward = true;
            }

            if (crashed) break;

            bool lastRound = round + 1 == rounds;
            if (lastRound) break; // flushed below

            if (!warmup && buffer.size() >= cfg.dqn.batchSize &&
                (round + 1) % cfg.dqn.trainEveryDecisions == 0) {
                auto batch = buffer.sample(cfg.dqn.batchSize, agentRng);
                dqnTrainStep(result.net, target, batch, cfg.dqn.gamma, adam, lr);
                ++result.gradSteps;
                if (result.firstTrainedEpisode < 0) result.firstTrainedEpisode = episode;
                if (result.gradSteps % cfg.dqn.targetSyncSteps == 0) target = result.net;
            }
        }

        // end-of-episode flush. Hitting the time limit is a truncation, not a
        // terminal state: those transitions keep bootstrapping from the final
        // observation. Only the crash transition is marked done; the other
        // agents' successor states are unobservable mid-crash, so they are
        // dropped rather than given fabricated targets.
        for (int id : avIds) {
            auto it = pending.find(id);
            if (it == pending.end() || !it->second.hasReward) continue;
            PendingStep& p = it->second;
            if (crashed && id != crashVehicle) continue;
            bool terminal = crashed && id == crashVehicle;
            std::vector<float> obsNext = terminal ? p.obs : encodeObservation(sim, id, cfg);
            uint8_t mask = terminal ? 0
                                    : actionMask(legalActions(sim.vehicles()[id].lane,
                                                              sim.nLanes()));
            buffer.push(Transition{std::move(p.obs), static_cast<int>(p.action),
                                   static_cast<float>(p.reward), std::move(obsNext), terminal,
                                   mask});
            episodeReward += p.reward;
        }
        pending.clear();

        totals.push_back(episodeReward);
        size_t win = std::min<size_t>(totals.size(), static_cast<size_t>(cfg.training.smoothWindow));
        double smooth = 0;
        for (size_t i = totals.size() - win; i < totals.size(); ++i) smooth += totals[i];
        smooth /= static_cast<double>(win);

        result.curve.push_back(EpisodeRow{episode, episodeReward, smooth, eps, lr, warmup});
        if (progress)
            progress(TrainProgress{episode, cfg.training.episodes, episodeReward, eps,
                                   result.gradSteps, result.collisions});
    }
    return result;
}

std::string rewardCurveCsv(const std::vector<EpisodeRow>& curve) {
    std::ostringstream ss;
    ss << "episode,total_reward,smoothed_reward,epsilon,lr,warmup\n";
    for (const auto& r : curve) {
        ss << r.episode << ',' << formatDouble(r.totalReward) << ','
           << formatDouble(r.smoothedReward) << ',' << formatDouble(r.epsilon) << ','
           << formatDouble(r.lr) << ',' << (r.warmup ? 1 : 0) << "\n";
    }
    return ss.str();
}

std::vector<EpisodeRow> rewardCurveFromCsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("reward curve CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "episode,total_reward,smoothed_reward,epsilon,lr,warmup")
        throw IoError("reward curve CSV has unexpected header: " + line);
    std::vector<EpisodeRow> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = splitCsvLine(line);
        if (f.size() != 6) throw IoError("reward curve CSV row has wrong arity");
        out.push_back(EpisodeRow{static_cast<int>(parseLong(f[0])), parseDouble(f[1]),
                                 parseDouble(f[2]), parseDouble(f[3]), parseDouble(f[4]),
                                 parseLong(f[5]) != 0});
    }
    return out;
}

} // namespace mixedflow
