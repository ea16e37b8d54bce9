#pragma once

#include <array>
#include <vector>

#include "core/config.hpp"
#include "core/qnet.hpp"
#include "core/sim.hpp"

namespace mixedflow {

// epsilon(episode) = end + (start - end) * exp(-episode / decayEpisodes)
double epsilonAt(const Config::Dqn& p, int episode);

// Fixed-width observation: 4 ego slots, then up to maxNeighbors blocks of 5
// (nearest first), zero padding to stateSize. All features are normalized and
// positions are relative, so the encoding is translation invariant.
std::vector<float> encodeObservation(const Simulator& sim, int vehIndex, const Config& cfg);

// legal[a] for {ChangeLeft, ChangeRight, KeepLane}; lane 0 is rightmost.
std::array<bool, 3> legalActions(int lane, int nLanes);

// Greedy argmax over legal actions; exact ties prefer KeepLane, then the
// lower action index.
Action greedyAction(const std::vector<double>& q, const std::array<bool, 3>& legal);

// Epsilon-greedy on top of greedyAction; exploration picks uniformly among
// legal actions.
Action selectAction(const QNetwork& net, const std::vector<float>& obs,
                    const std::array<bool, 3>& legal, double epsilon, Rng& rng);

// Fixed-capacity overwrite-oldest transition store.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(int capacity);
    void push(Transition tr);
    long size() const { return static_cast<long>(items_.size()); }
    long pushed() const { return pushed_; }
    // Uniform sample without replacement; n must not exceed size().
    std::vector<const Transition*> sample(int n, Rng& rng) const;

  private:
    int capacity_;
    long pushed_ = 0;
    size_t next_ = 0;
    std::vector<Transition> items_;
};

} // namespace mixedflow
