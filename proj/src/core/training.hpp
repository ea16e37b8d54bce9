#pragma once

#include <functional>
#include <vector>

#include "core/agent.hpp"
#include "core/config.hpp"
#include "core/qnet.hpp"

namespace mixedflow {

struct EpisodeRow {
    int episode;
    double totalReward;
    double smoothedReward; // trailing mean over training.smooth_window episodes
    double epsilon;
    double lr;
    bool warmup;
};

struct TrainProgress {
    int episode;
    int episodes;
    double totalReward;
    double epsilon;
    long gradSteps;
    long collisions;
};
using ProgressFn = std::function<void(const TrainProgress&)>;

struct TrainResult {
    QNetwork net;
    std::vector<EpisodeRow> curve;
    long gradSteps = 0;
    long collisions = 0;
    int firstTrainedEpisode = -1; // first episode that took a gradient step
    uint64_t scenarioHash = 0;
};

// Full training run. Episode seeds derive from (seed, stream, episode), so a
// resumed run replays the same environments it would have seen uninterrupted.
// resumeNet/startEpisode continue a run from a checkpoint (optimizer state and
// replay buffer start fresh).
TrainResult trainPolicy(const Config& cfg, uint64_t seed, const ProgressFn& progress = nullptr,
                        const QNetwork* resumeNet = nullptr, int startEpisode = 0);

std::string rewardCurveCsv(const std::vector<EpisodeRow>& curve);
std::vector<EpisodeRow> rewardCurveFromCsv(const std::string& text);

} // namespace mixedflow
