#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/util.hpp"

namespace mixedflow {

// One replay sample. Observations are stored single-precision to keep the
// buffer small; all network math runs in double.
struct Transition {
    std::vector<float> s;
    int action;
    float reward;
    std::vector<float> s2;
    bool done;
    // bitmask of actions available in s2 (bit i = action i); 0 means all.
    // The bootstrap max runs over this set, mirroring masked action selection.
    uint8_t legal2 = 0;
};

// Fully connected ReLU network with an identity output layer.
struct QNetwork {
    std::vector<int> sizes;                // e.g. {200, 256, 128, 64, 3}
    std::vector<std::vector<double>> w;    // layer l: sizes[l+1] x sizes[l], row-major
    std::vector<std::vector<double>> b;

    static QNetwork heInit(const std::vector<int>& sizes, Rng& rng);
    static QNetwork zeros(const std::vector<int>& sizes);

    int inputSize() const { return sizes.front(); }
    int outputSize() const { return sizes.back(); }
    long paramCount() const;
    uint64_t paramFingerprint() const; // FNV over raw weight bytes

    std::vector<double> forward(std::span<const float> input) const;
    std::vector<double> forward(std::span<const double> input) const;
};

struct Gradients {
    std::vector<std::vector<double>> w, b;
    static Gradients zerosLike(const QNetwork& net);
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> mW, vW, mB, vB;
    static AdamState zerosLike(const QNetwork& net);
};

// Mean squared error on the taken-action outputs against one-step targets
// y = r + gamma * max_a Q_target(s') (y = r on terminal transitions).
double dqnLoss(const QNetwork& online, const QNetwork& target,
               std::span<const Transition* const> batch, double gamma);

// Analytic gradients of dqnLoss w.r.t. the online parameters.
Gradients dqnGradients(const QNetwork& online, const QNetwork& target,
                       std::span<const Transition* const> batch, double gamma,
                       double* lossOut = nullptr);

void adamStep(QNetwork& net, const Gradients& g, AdamState& adam, double lr);

// Gradient computation + Adam update; returns the batch loss. Throws
// InvariantError when the loss or a gradient turns non-finite.
double dqnTrainStep(QNetwork& online, const QNetwork& target,
                    std::span<const Transition* const> batch, double gamma, AdamState& adam,
                    double lr);

// --- checkpoint io -----------------------------------------------------------

struct Checkpoint {
    QNetwork net;
    uint64_t scenarioHash;
    uint32_t episodesTrained;
};

void saveCheckpoint(const std::string& path, const QNetwork& net, uint64_t scenarioHash,
                    uint32_t episodesTrained);
Checkpoint loadCheckpoint(const std::string& path);

} // namespace mixedflow
