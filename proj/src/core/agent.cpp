#include "core/agent.hpp"

#include <algorithm>
#include <cmath>

namespace mixedflow {

namespace {
constexpr double kSpeedNorm = 30.0; // top of the automated speed range
}

double epsilonAt(const Config::Dqn& p, int episode) {
    if (episode < 0) throw DomainError("epsilonAt: negative episode");
    return p.epsEnd +
           (p.epsStart - p.epsEnd) * std::exp(-static_cast<double>(episode) / p.epsDecayEpisodes);
}

std::vector<float> encodeObservation(const Simulator& sim, int vehIndex, const Config& cfg) {
    const auto& vehicles = sim.vehicles();
    if (vehIndex < 0 || vehIndex >= static_cast<int>(vehicles.size()))
        throw DomainError("encodeObservation: bad vehicle index");
    const Vehicle& ego = vehicles[vehIndex];
    const int lanes = sim.nLanes();
    const double laneDen = lanes > 1 ? static_cast<double>(lanes - 1) : 1.0;
    const double radius = cfg.scenario.sensingRadiusM;

    std::vector<float> obs(cfg.dqn.stateSize, 0.0f);
    double egoLane = ego.lane / laneDen;
    obs[0] = 0.0f; // own position in its own frame
    obs[1] = static_cast<float>(egoLane);
    obs[2] = static_cast<float>(ego.speed / kSpeedNorm);
    obs[3] = static_cast<float>(egoLane);

    auto sensed = sim.sense(vehIndex, radius);
    int slots = std::min<int>(cfg.dqn.maxNeighbors, static_cast<int>(sensed.size()));
    for (int k = 0; k < slots; ++k) {
        const Sensed& n = sensed[k];
        size_t base = 4 + static_cast<size_t>(k) * 5;
        obs[base + 0] = static_cast<float>(n.relPos / radius);
        obs[base + 1] = static_cast<float>(n.laneDelta / laneDen);
        obs[base + 2] = static_cast<float>(n.speed / kSpeedNorm);
        obs[base + 3] = static_cast<float>(n.lane / laneDen);
        obs[base + 4] = n.cls == VehicleClass::Human ? 1.0f : 2.0f;
    }
    return obs;
}

std::array<bool, 3> legalActions(int lane, int nLanes) {
    std::array<bool, 3> legal{};
    legal[static_cast<int>(Action::ChangeLeft)] = lane + 1 < nLanes;
    legal[static_cast<int>(Action::ChangeRight)] = lane - 1 >= 0;
    legal[static_cast<int>(Action::KeepLane)] = true;
    return legal;
}

Action greedyAction(const std::vector<double>& q, const std::array<bool, 3>& legal) {
    if (q.size() != 3) throw DomainError("greedyAction: expected 3 action values");
    int best = static_cast<int>(Action::KeepLane);
    double bestQ = q[best];
    for (int a = 0; a < 3; ++a) {
        if (!legal[a] || a == best) continue;
        if (q[a] > bestQ) { // strict: ties stay with KeepLane / lower index
            best = a;
            bestQ = q[a];
        }
    }
    return static_cast<Action>(best);
}

Action selectAction(const QNetwork& net, const std::vector<float>& obs,
                    const std::array<bool, 3>& legal, double epsilon, Rng& rng) {
    if (rng.uniform() < epsilon) {
        int nLegal = 0;
        for (bool b : legal) nLegal += b ? 1 : 0;
        uint64_t pick = rng.below(static_cast<uint64_t>(nLegal));
        for (int a = 0; a < 3; ++a) {
            if (!legal[a]) continue;
            if (pick == 0) return static_cast<Action>(a);
            --pick;
        }
        throw InvariantError("selectAction: exploration pick fell through");
    }
    return greedyAction(net.forward(std::span<const float>(obs)), legal);
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("replay buffer capacity must be positive");
    items_.reserve(std::min(capacity, 1 << 20));
}

void ReplayBuffer::push(Transition tr) {
    if (static_cast<int>(items_.size()) < capacity_) {
        items_.push_back(std::move(tr));
    } else {
        items_[next_] = std::move(tr);
        next_ = (next_ + 1) % items_.size();
    }
    ++pushed_;
}

std::vector<const Transition*> ReplayBuffer::sample(int n, Rng& rng) const {
    if (n < 1 || n > static_cast<int>(items_.size()))
        throw DomainError("replay sample size exceeds buffer contents");
    // partial Fisher-Yates over an index vector
    std::vector<int> idx(items_.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::vector<const Transition*> out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
        size_t j = k + static_cast<size_t>(rng.below(idx.size() - k));
        std::swap(idx[k], idx[j]);
        out.push_back(&items_[idx[k]]);
    }
    return out;
}

} // namespace mixedflow
